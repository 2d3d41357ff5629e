//! The printer being simulated: module topology, plant configuration, and
//! the physical world state (hotend thermals, axis positions, switches).
//!
//! A printer is a main board plus a set of peripheral modules, each owning
//! one command identifier (board-to-module) and one status identifier
//! (module-to-board). The world holds ground truth; modules report it over
//! the bus and the board believes what it hears, which is exactly the gap
//! the attack toolkit exploits.

pub mod printer;
pub mod thermal;
pub mod wire;

pub use printer::{
    Diagnostic, MainBoardState, Peripheral, Printer, WorldEvent, SAFE_TEMP_MAX_C, SAFE_TEMP_MIN_C,
};
pub use thermal::{thermal_step, HotendState, ThermalParams};

use crate::bus::Tick;
use crate::frame::FrameId;

/// How long (in bit-times) the main board waits for registration responses
/// after broadcasting an enumeration request. Modules and diagnostic tooling
/// treat this as a protocol constant.
pub const REGISTRATION_WINDOW_TICKS: Tick = 5_000;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    #[must_use]
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    #[must_use]
    pub fn code(self) -> u8 {
        self.index() as u8
    }

    #[must_use]
    pub fn from_code(code: u8) -> Option<Axis> {
        match code {
            0 => Some(Axis::X),
            1 => Some(Axis::Y),
            2 => Some(Axis::Z),
            _ => None,
        }
    }

    #[must_use]
    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

/// Which way traffic flows on an identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Direction {
    Command,
    Status,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum ModuleKind {
    MainBoard,
    Hotend,
    MotionAxis(Axis),
    LimitSwitch(Axis),
    SafetyModule,
    CameraMonitor,
}

impl ModuleKind {
    /// One-byte module class carried in registration responses. Kind codes
    /// stay below 0x10; status opcodes start at 0x10, so the first payload
    /// byte always tells the two apart.
    #[must_use]
    pub fn kind_code(self) -> u8 {
        match self {
            ModuleKind::MainBoard => 0x00,
            ModuleKind::Hotend => 0x01,
            ModuleKind::MotionAxis(a) => 0x02 + a.code(),
            ModuleKind::LimitSwitch(a) => 0x05 + a.code(),
            ModuleKind::SafetyModule => 0x08,
            ModuleKind::CameraMonitor => 0x09,
        }
    }

    #[must_use]
    pub fn from_kind_code(code: u8) -> Option<ModuleKind> {
        match code {
            0x00 => Some(ModuleKind::MainBoard),
            0x01 => Some(ModuleKind::Hotend),
            0x02..=0x04 => Some(ModuleKind::MotionAxis(Axis::from_code(code - 0x02)?)),
            0x05..=0x07 => Some(ModuleKind::LimitSwitch(Axis::from_code(code - 0x05)?)),
            0x08 => Some(ModuleKind::SafetyModule),
            0x09 => Some(ModuleKind::CameraMonitor),
            _ => None,
        }
    }

    #[must_use]
    pub fn label(self) -> &'static str {
        match self {
            ModuleKind::MainBoard => "main_board",
            ModuleKind::Hotend => "hotend",
            ModuleKind::MotionAxis(Axis::X) => "motion_x",
            ModuleKind::MotionAxis(Axis::Y) => "motion_y",
            ModuleKind::MotionAxis(Axis::Z) => "motion_z",
            ModuleKind::LimitSwitch(Axis::X) => "limit_x",
            ModuleKind::LimitSwitch(Axis::Y) => "limit_y",
            ModuleKind::LimitSwitch(Axis::Z) => "limit_z",
            ModuleKind::SafetyModule => "safety",
            ModuleKind::CameraMonitor => "camera",
        }
    }
}

/// One module's bus addressing: commands arrive on `command_id`, status
/// reports leave on `status_id`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ModuleDescriptor {
    pub kind: ModuleKind,
    pub command_id: FrameId,
    pub status_id: FrameId,
}

/// The set of modules wired to one bus. The main board must be present;
/// identifiers and kinds must be unique.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    modules: Vec<ModuleDescriptor>,
}

impl Topology {
    #[must_use]
    pub fn new(modules: Vec<ModuleDescriptor>) -> Topology {
        let mut ids = std::collections::BTreeSet::new();
        let mut kinds = std::collections::BTreeSet::new();
        for m in &modules {
            assert!(ids.insert(m.command_id), "duplicate identifier {}", m.command_id);
            assert!(ids.insert(m.status_id), "duplicate identifier {}", m.status_id);
            assert!(kinds.insert(m.kind), "duplicate module kind {:?}", m.kind);
        }
        assert!(
            kinds.contains(&ModuleKind::MainBoard),
            "a topology needs a main board"
        );
        Topology { modules }
    }

    /// An eight-node desktop printer: main board, hotend, three motion
    /// axes, one limit switch per axis is overkill for a demo so only X
    /// carries one, a safety module (air filter relay plus kill switch),
    /// and a camera monitor. Command identifiers sit in the high-priority
    /// range; each module's status identifier is its command identifier
    /// plus one.
    #[must_use]
    pub fn default_printer() -> Topology {
        let m = |kind, cmd: u16, status: u16| ModuleDescriptor {
            kind,
            command_id: FrameId::new(cmd).expect("valid id"),
            status_id: FrameId::new(status).expect("valid id"),
        };
        Topology::new(vec![
            m(ModuleKind::MainBoard, 0x010, 0x011),
            m(ModuleKind::Hotend, 0x1A0, 0x1A1),
            m(ModuleKind::MotionAxis(Axis::X), 0x1B0, 0x1B1),
            m(ModuleKind::MotionAxis(Axis::Y), 0x1C0, 0x1C1),
            m(ModuleKind::MotionAxis(Axis::Z), 0x1D0, 0x1D1),
            m(ModuleKind::LimitSwitch(Axis::X), 0x1E0, 0x1E1),
            m(ModuleKind::SafetyModule, 0x1F0, 0x1F1),
            m(ModuleKind::CameraMonitor, 0x200, 0x201),
        ])
    }

    #[must_use]
    pub fn board(&self) -> &ModuleDescriptor {
        self.modules
            .iter()
            .find(|m| m.kind == ModuleKind::MainBoard)
            .expect("constructor guarantees a main board")
    }

    pub fn peripherals(&self) -> impl Iterator<Item = &ModuleDescriptor> {
        self.modules.iter().filter(|m| m.kind != ModuleKind::MainBoard)
    }

    #[must_use]
    pub fn modules(&self) -> &[ModuleDescriptor] {
        &self.modules
    }

    #[must_use]
    pub fn descriptor(&self, kind: ModuleKind) -> Option<&ModuleDescriptor> {
        self.modules.iter().find(|m| m.kind == kind)
    }

    /// Which module owns `id`, and in which direction it flows.
    #[must_use]
    pub fn id_role(&self, id: FrameId) -> Option<(ModuleKind, Direction)> {
        self.modules.iter().find_map(|m| {
            if m.command_id == id {
                Some((m.kind, Direction::Command))
            } else if m.status_id == id {
                Some((m.kind, Direction::Status))
            } else {
                None
            }
        })
    }

    #[must_use]
    pub fn status_ids(&self) -> Vec<FrameId> {
        self.peripherals().map(|m| m.status_id).collect()
    }

    #[must_use]
    pub fn command_ids(&self) -> Vec<FrameId> {
        self.modules.iter().map(|m| m.command_id).collect()
    }
}

/// Wall-clock-facing knobs. Periods are stored in bit-times so the whole
/// simulation shares one clock; the bitrate converts them to seconds for
/// physics and for trace timestamps.
#[derive(Clone, Debug)]
pub struct PlantConfig {
    /// Simulated wire speed in bits per second.
    pub bitrate: u32,
    /// Gap between periodic status frames, in bit-times.
    pub telemetry_period: Tick,
    /// Gap between physics integration steps, in bit-times.
    pub plant_step: Tick,
    /// How long the board waits for registration responses, in bit-times.
    pub registration_window: Tick,
    pub thermal: ThermalParams,
    /// Axis speed while homing, in steps per second.
    pub homing_rate: f64,
    /// Where each axis carriage sits at power-on, in steps from the
    /// physical minimum stop.
    pub initial_axis_position: f64,
    /// Physical travel of each axis, in steps.
    pub axis_travel: f64,
}

impl PlantConfig {
    /// Defaults scaled to a given bitrate: telemetry every 100 ms, physics
    /// every 10 ms.
    #[must_use]
    pub fn with_bitrate(bitrate: u32) -> PlantConfig {
        assert!(bitrate >= 1_000, "bitrate too low to be useful");
        PlantConfig {
            bitrate,
            telemetry_period: Tick::from(bitrate / 10),
            plant_step: Tick::from(bitrate / 100),
            registration_window: REGISTRATION_WINDOW_TICKS,
            thermal: ThermalParams::default(),
            homing_rate: 2_000.0,
            initial_axis_position: 400.0,
            axis_travel: 40_000.0,
        }
    }
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig::with_bitrate(500_000)
    }
}

#[must_use]
pub fn secs_to_ticks(secs: f64, bitrate: u32) -> Tick {
    (secs * f64::from(bitrate)).round() as Tick
}

#[must_use]
pub fn ticks_to_secs(ticks: Tick, bitrate: u32) -> f64 {
    ticks as f64 / f64::from(bitrate)
}

/// One axis of true mechanical state. Positions are in steps measured from
/// the physical minimum stop; the logical coordinate the board works in is
/// `true_position - origin_offset`, fixed at the end of a homing cycle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisWorld {
    pub true_position: f64,
    pub origin_offset: f64,
    pub homing: bool,
    pub calibrated: bool,
    pub at_min_stop: bool,
    pub at_max_stop: bool,
}

impl AxisWorld {
    #[must_use]
    pub fn logical_position(&self) -> f64 {
        self.true_position - self.origin_offset
    }
}

/// Ground truth the modules sense and actuate.
#[derive(Clone, Debug)]
pub struct PlantWorld {
    pub hotend: HotendState,
    pub axes: [AxisWorld; 3],
    pub air_filter_on: bool,
    pub kill_switch_pressed: bool,
}

impl PlantWorld {
    #[must_use]
    pub fn new(config: &PlantConfig) -> PlantWorld {
        let axis = AxisWorld {
            true_position: config.initial_axis_position,
            origin_offset: 0.0,
            homing: false,
            calibrated: false,
            at_min_stop: config.initial_axis_position <= 0.0,
            at_max_stop: config.initial_axis_position >= config.axis_travel,
        };
        PlantWorld {
            hotend: HotendState::new(config.thermal),
            axes: [axis; 3],
            air_filter_on: true,
            kill_switch_pressed: false,
        }
    }

    #[must_use]
    pub fn axis(&self, axis: Axis) -> &AxisWorld {
        &self.axes[axis.index()]
    }

    pub fn axis_mut(&mut self, axis: Axis) -> &mut AxisWorld {
        &mut self.axes[axis.index()]
    }

    /// Advances physics by `dt_secs`: hotend thermals, homing motion, and
    /// limit-stop flags.
    pub fn step(&mut self, dt_secs: f64, config: &PlantConfig) {
        self.hotend = thermal_step(&self.hotend, dt_secs);
        for axis in &mut self.axes {
            if axis.homing {
                axis.true_position -= config.homing_rate * dt_secs;
                if axis.true_position <= 0.0 {
                    axis.true_position = 0.0;
                }
            }
            axis.at_min_stop = axis.true_position <= 0.0;
            axis.at_max_stop = axis.true_position >= config.axis_travel;
        }
    }
}
