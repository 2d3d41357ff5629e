//! Line-oriented scenario files.
//!
//! A scenario drives one simulated print run: what the operator does, what
//! the world does, what an attacker does, and what must be true afterwards.
//! The format is plain text so scenarios can live in version control and be
//! diffed like any other fixture:
//!
//! ```text
//! # comments start with '#'
//! name = temperature_spoof
//! duration = 132          # seconds of simulated time
//! seed = 1                # attacker RNG seed
//! bitrate = 500000        # bits per second on the wire
//!
//! [setup]
//! at 1.0 hotend set_temp 200
//!
//! [world]
//! at 60.0 kill_switch
//!
//! [attack]
//! window 130.0 132.0 sensor_spoof temp=999 mult=5
//!
//! [assert]
//! at 129.5 board.displayed_temp within 200 2
//! at 130.25 board.fault == true
//! between 50 60 hotend.temp > 190
//! window 0 1 count 0x1A1 >= 9
//! ```
//!
//! Top-level keys come first, then any of the four sections in any order.
//! Module names: `board`, `hotend`, `motion_x`/`_y`/`_z`, `limit_x`,
//! `safety`, `camera`. Identifiers are written in hex (`0x1A1`) or as a
//! module role (`hotend.status`, `board.command`).

use printcan_core::bus::NodeState;
use printcan_core::frame::FrameId;
use printcan_core::plant::wire::Command;
use printcan_core::plant::{Axis, Direction, ModuleKind, Topology, WorldEvent};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

fn err(line: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse { line, msg: msg.into() }
}

/// A fully parsed scenario, still in wall-clock units. The runner converts
/// seconds to bit-times against `bitrate` when it builds the simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration_s: f64,
    pub seed: u64,
    pub bitrate: u32,
    pub setup: Vec<SetupStep>,
    pub world: Vec<WorldStep>,
    pub attacks: Vec<AttackStep>,
    pub asserts: Vec<AssertSpec>,
}

/// One operator action dispatched from the main board.
#[derive(Clone, Debug, PartialEq)]
pub struct SetupStep {
    pub at_s: f64,
    pub target: ModuleKind,
    pub command: Command,
}

/// One out-of-band physical event.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldStep {
    pub at_s: f64,
    pub event: WorldEvent,
}

/// One attack primitive armed for a time window.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackStep {
    pub start_s: f64,
    pub end_s: f64,
    pub spec: AttackSpec,
}

/// Attack parameters as written in the file; bitrate-dependent conversions
/// (periods to bit-times) happen in the runner.
#[derive(Clone, Debug, PartialEq)]
pub enum AttackSpec {
    Eavesdrop,
    Spoof { id: FrameId, payload: Vec<u8>, period_ms: f64 },
    Flood { id: FrameId },
    Block { ids: Vec<FrameId> },
    Replay { ids: Vec<FrameId> },
    BlockAndSpoof { commands: Vec<(ModuleKind, Command)> },
    SensorSpoof { celsius: f64, rate_multiplier: u32 },
}

/// When a state assertion samples the simulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum When {
    At(f64),
    End,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    /// `within <value> <tol>`: absolute difference at most `tol`.
    Within { tol: f64 },
}

/// Right-hand side of an assertion, typed so booleans and bus states never
/// silently compare as numbers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Expected {
    Number(f64),
    Truth(bool),
    Bus(NodeState),
}

/// Everything a scenario can observe about the running simulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Probe {
    BoardDisplayedTemp,
    BoardCommandedTarget,
    BoardFault,
    BoardDuplicateRegistrations,
    BoardRegistrationTimeouts,
    BoardMalformedStatuses,
    BoardRegisteredModules,
    HotendTemp,
    HotendTarget,
    HotendFan,
    HotendDuty,
    SafetyAirFilter,
    SafetyKillSwitch,
    AxisPosition(Axis),
    AxisTruePosition(Axis),
    AxisOriginOffset(Axis),
    AxisCalibrated(Axis),
    AxisHoming(Axis),
    LimitAtMin(Axis),
    LimitAtMax(Axis),
    Halted(ModuleKind),
    FirmwareTainted(ModuleKind),
    BusState(ModuleKind),
    MalformedCommands(ModuleKind),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssertSpec {
    /// 1-based line number in the scenario file, for failure messages.
    pub line: usize,
    /// The assertion as written, echoed verbatim in pass/fail output.
    pub source: String,
    pub kind: AssertKind,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AssertKind {
    /// Sample one probe at one instant.
    State { when: When, probe: Probe, op: CmpOp, expect: Expected },
    /// The condition must hold at every 100 ms sample point in `[from, to]`.
    Sweep { from_s: f64, to_s: f64, probe: Probe, op: CmpOp, expect: Expected },
    /// Count frames delivered with `id` in `[from, to)` and compare.
    DeliveryCount { from_s: f64, to_s: f64, id: FrameId, op: CmpOp, expect: u64 },
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Preamble,
    Setup,
    World,
    Attack,
    Assert,
}

pub fn module_kind(name: &str) -> Option<ModuleKind> {
    match name {
        "board" | "main_board" => Some(ModuleKind::MainBoard),
        "hotend" => Some(ModuleKind::Hotend),
        "motion_x" => Some(ModuleKind::MotionAxis(Axis::X)),
        "motion_y" => Some(ModuleKind::MotionAxis(Axis::Y)),
        "motion_z" => Some(ModuleKind::MotionAxis(Axis::Z)),
        "limit_x" => Some(ModuleKind::LimitSwitch(Axis::X)),
        "limit_y" => Some(ModuleKind::LimitSwitch(Axis::Y)),
        "limit_z" => Some(ModuleKind::LimitSwitch(Axis::Z)),
        "safety" => Some(ModuleKind::SafetyModule),
        "camera" => Some(ModuleKind::CameraMonitor),
        _ => None,
    }
}

#[must_use]
pub fn module_name(kind: ModuleKind) -> &'static str {
    match kind {
        ModuleKind::MainBoard => "board",
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

impl Scenario {
    /// Parses scenario text. Errors carry the offending 1-based line number.
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let topology = Topology::default_printer();
        let mut name: Option<String> = None;
        let mut duration_s: Option<f64> = None;
        let mut seed: u64 = 0;
        let mut bitrate: u32 = 500_000;
        let mut setup = Vec::new();
        let mut world = Vec::new();
        let mut attacks = Vec::new();
        let mut asserts = Vec::new();
        let mut section = Section::Preamble;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }

            if let Some(header) = line.strip_prefix('[') {
                let header = header
                    .strip_suffix(']')
                    .ok_or_else(|| err(line_no, "unterminated section header"))?;
                section = match header {
                    "setup" => Section::Setup,
                    "world" => Section::World,
                    "attack" => Section::Attack,
                    "assert" => Section::Assert,
                    other => return Err(err(line_no, format!("unknown section [{other}]"))),
                };
                continue;
            }

            match section {
                Section::Preamble => {
                    let (key, value) = line
                        .split_once('=')
                        .ok_or_else(|| err(line_no, "expected `key = value` before sections"))?;
                    let (key, value) = (key.trim(), value.trim());
                    match key {
                        "name" => {
                            if name.is_some() {
                                return Err(err(line_no, "duplicate `name`"));
                            }
                            if value.is_empty() {
                                return Err(err(line_no, "`name` must not be empty"));
                            }
                            name = Some(value.to_string());
                        }
                        "duration" => {
                            let d: f64 = value
                                .parse()
                                .map_err(|_| err(line_no, "`duration` must be seconds"))?;
                            if !(d > 0.0) {
                                return Err(err(line_no, "`duration` must be positive"));
                            }
                            duration_s = Some(d);
                        }
                        "seed" => {
                            seed = value
                                .parse()
                                .map_err(|_| err(line_no, "`seed` must be an unsigned integer"))?;
                        }
                        "bitrate" => {
                            bitrate = value
                                .parse()
                                .map_err(|_| err(line_no, "`bitrate` must be bits per second"))?;
                            if bitrate < 1_000 {
                                return Err(err(line_no, "`bitrate` must be at least 1000"));
                            }
                        }
                        other => return Err(err(line_no, format!("unknown key `{other}`"))),
                    }
                }
                Section::Setup => setup.push(parse_setup(line, line_no)?),
                Section::World => world.push(parse_world(line, line_no)?),
                Section::Attack => attacks.push(parse_attack(line, line_no, &topology)?),
                Section::Assert => asserts.push(parse_assert(line, line_no, &topology)?),
            }
        }

        let name = name.ok_or_else(|| ScenarioError::Invalid("missing `name = ...`".into()))?;
        let duration_s =
            duration_s.ok_or_else(|| ScenarioError::Invalid("missing `duration = ...`".into()))?;

        let scenario =
            Scenario { name, duration_s, seed, bitrate, setup, world, attacks, asserts };
        scenario.validate()?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let end = self.duration_s;
        for step in &self.setup {
            if step.at_s >= end {
                return Err(ScenarioError::Invalid(format!(
                    "setup step at {}s never runs: duration is {}s",
                    step.at_s, end
                )));
            }
        }
        for step in &self.world {
            if step.at_s >= end {
                return Err(ScenarioError::Invalid(format!(
                    "world event at {}s never runs: duration is {}s",
                    step.at_s, end
                )));
            }
        }
        for atk in &self.attacks {
            if atk.start_s >= end {
                return Err(ScenarioError::Invalid(format!(
                    "attack window starting at {}s never runs: duration is {}s",
                    atk.start_s, end
                )));
            }
        }
        for spec in &self.asserts {
            let latest = match &spec.kind {
                AssertKind::State { when: When::At(t), .. } => *t,
                AssertKind::State { when: When::End, .. } => end,
                AssertKind::Sweep { to_s, .. } => *to_s,
                AssertKind::DeliveryCount { to_s, .. } => *to_s,
            };
            if latest > end {
                return Err(ScenarioError::Invalid(format!(
                    "assertion on line {} samples at {}s, past the {}s duration",
                    spec.line, latest, end
                )));
            }
        }
        Ok(())
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn parse_secs(token: &str, line: usize, what: &str) -> Result<f64, ScenarioError> {
    let value: f64 =
        token.parse().map_err(|_| err(line, format!("{what} must be seconds, got `{token}`")))?;
    if value < 0.0 {
        return Err(err(line, format!("{what} must not be negative")));
    }
    Ok(value)
}

fn parse_setup(line: &str, line_no: usize) -> Result<SetupStep, ScenarioError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    match tokens.as_slice() {
        ["at", at, module, command, args @ ..] => {
            let at_s = parse_secs(at, line_no, "setup time")?;
            let target = module_kind(module)
                .ok_or_else(|| err(line_no, format!("unknown module `{module}`")))?;
            let command = build_command(target, command, args)
                .map_err(|msg| err(line_no, msg))?;
            Ok(SetupStep { at_s, target, command })
        }
        _ => Err(err(line_no, "expected `at <secs> <module> <command> [args...]`")),
    }
}

fn parse_world(line: &str, line_no: usize) -> Result<WorldStep, ScenarioError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    match tokens.as_slice() {
        ["at", at, "kill_switch"] => {
            let at_s = parse_secs(at, line_no, "event time")?;
            Ok(WorldStep { at_s, event: WorldEvent::PressKillSwitch })
        }
        ["at", _, other, ..] => Err(err(line_no, format!("unknown world event `{other}`"))),
        _ => Err(err(line_no, "expected `at <secs> kill_switch`")),
    }
}

/// Builds a wire command from its scenario spelling. Shared between `[setup]`
/// lines (space-separated args) and `block_and_spoof` items (colon-separated).
fn build_command(target: ModuleKind, name: &str, args: &[&str]) -> Result<Command, String> {
    let arity = |want: usize| -> Result<(), String> {
        if args.len() == want {
            Ok(())
        } else {
            Err(format!("`{name}` takes {want} argument(s), got {}", args.len()))
        }
    };
    let axis_of = || match target {
        ModuleKind::MotionAxis(axis) => Ok(axis),
        _ => Err(format!("`{name}` needs a motion module, not {}", module_name(target))),
    };
    match name {
        "enumerate" => {
            arity(0)?;
            Ok(Command::Enumerate)
        }
        "set_temp" => {
            arity(1)?;
            let celsius: f64 =
                args[0].parse().map_err(|_| format!("bad temperature `{}`", args[0]))?;
            Ok(Command::SetTargetTemp { celsius })
        }
        "set_fan" => {
            arity(1)?;
            Ok(Command::SetFan { on: parse_switch(args[0])? })
        }
        "move" => {
            arity(1)?;
            let steps: i32 =
                args[0].parse().map_err(|_| format!("bad step count `{}`", args[0]))?;
            Ok(Command::Move { axis: axis_of()?, steps })
        }
        "set_filter" => {
            arity(1)?;
            Ok(Command::SetFilter { on: parse_switch(args[0])? })
        }
        "kill_switch" => {
            arity(0)?;
            Ok(Command::KillSwitch)
        }
        "reflash" => {
            arity(1)?;
            Ok(Command::Reflash { digest: parse_hex_bytes(args[0])? })
        }
        "halt" => {
            arity(0)?;
            Ok(Command::Halt)
        }
        "home" => {
            arity(0)?;
            Ok(Command::Home { axis: axis_of()? })
        }
        "end_home" => {
            arity(0)?;
            Ok(Command::EndHome { axis: axis_of()? })
        }
        "set_pid" => {
            arity(3)?;
            let mut gains = [0.0f64; 3];
            for (slot, raw) in gains.iter_mut().zip(args) {
                *slot = raw.parse().map_err(|_| format!("bad gain `{raw}`"))?;
            }
            Ok(Command::SetPid { kp: gains[0], ki: gains[1], kd: gains[2] })
        }
        other => Err(format!("unknown command `{other}`")),
    }
}

fn parse_switch(token: &str) -> Result<bool, String> {
    match token {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => Err(format!("expected on/off, got `{other}`")),
    }
}

fn parse_hex_bytes(token: &str) -> Result<Vec<u8>, String> {
    if token.len() % 2 != 0 {
        return Err(format!("hex string `{token}` has odd length"));
    }
    (0..token.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&token[i..i + 2], 16)
                .map_err(|_| format!("bad hex byte in `{token}`"))
        })
        .collect()
}

/// Accepts `0x1A1`, a decimal number, or `module.status` / `module.command`.
fn parse_id(token: &str, topology: &Topology) -> Result<FrameId, String> {
    let raw = if let Some(hex) = token.strip_prefix("0x").or_else(|| token.strip_prefix("0X")) {
        u16::from_str_radix(hex, 16).map_err(|_| format!("bad hex identifier `{token}`"))?
    } else if token.chars().all(|c| c.is_ascii_digit()) {
        token.parse().map_err(|_| format!("bad identifier `{token}`"))?
    } else {
        let (module, role) = token
            .split_once('.')
            .ok_or_else(|| format!("expected hex id or module.role, got `{token}`"))?;
        let kind =
            module_kind(module).ok_or_else(|| format!("unknown module `{module}`"))?;
        let descriptor = topology
            .descriptor(kind)
            .ok_or_else(|| format!("module `{module}` is not on the bus"))?;
        return match role {
            "status" => Ok(descriptor.status_id),
            "command" | "cmd" => Ok(descriptor.command_id),
            other => Err(format!("unknown role `{other}`, want status or command")),
        };
    };
    FrameId::new(raw).ok_or_else(|| format!("identifier {raw:#X} exceeds the 11-bit range"))
}

/// Splits `key=value` tokens; returns (key, value).
fn split_kv(token: &str) -> Result<(&str, &str), String> {
    token.split_once('=').ok_or_else(|| format!("expected key=value, got `{token}`"))
}

fn parse_attack(
    line: &str,
    line_no: usize,
    topology: &Topology,
) -> Result<AttackStep, ScenarioError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let (start, end, primitive, args) = match tokens.as_slice() {
        ["window", start, end, primitive, args @ ..] => (*start, *end, *primitive, args),
        _ => return Err(err(line_no, "expected `window <start> <end> <primitive> [args...]`")),
    };
    let start_s = parse_secs(start, line_no, "window start")?;
    let end_s = parse_secs(end, line_no, "window end")?;
    if end_s <= start_s {
        return Err(err(line_no, "window end must be after its start"));
    }

    let fail = |msg: String| err(line_no, msg);
    let spec = match primitive {
        "eavesdrop" => {
            if !args.is_empty() {
                return Err(err(line_no, "`eavesdrop` takes no arguments"));
            }
            AttackSpec::Eavesdrop
        }
        "spoof" => {
            let mut id = None;
            let mut payload = Vec::new();
            let mut period_ms = None;
            for token in args {
                let (key, value) = split_kv(token).map_err(fail)?;
                match key {
                    "id" => id = Some(parse_id(value, topology).map_err(fail)?),
                    "payload" => {
                        payload = if value.is_empty() {
                            Vec::new()
                        } else {
                            value
                                .split(':')
                                .map(|b| {
                                    u8::from_str_radix(b, 16)
                                        .map_err(|_| fail(format!("bad payload byte `{b}`")))
                                })
                                .collect::<Result<_, _>>()?
                        }
                    }
                    "period_ms" => {
                        let p: f64 = value
                            .parse()
                            .map_err(|_| fail(format!("bad period `{value}`")))?;
                        if !(p > 0.0) {
                            return Err(err(line_no, "period must be positive"));
                        }
                        period_ms = Some(p);
                    }
                    other => return Err(err(line_no, format!("unknown spoof key `{other}`"))),
                }
            }
            if payload.len() > 8 {
                return Err(err(line_no, "payload longer than 8 bytes"));
            }
            AttackSpec::Spoof {
                id: id.ok_or_else(|| err(line_no, "`spoof` needs id=..."))?,
                payload,
                period_ms: period_ms.ok_or_else(|| err(line_no, "`spoof` needs period_ms=..."))?,
            }
        }
        "flood" => {
            let mut id = FrameId::new(0x000).expect("zero is a valid identifier");
            for token in args {
                let (key, value) = split_kv(token).map_err(fail)?;
                match key {
                    "id" => id = parse_id(value, topology).map_err(fail)?,
                    other => return Err(err(line_no, format!("unknown flood key `{other}`"))),
                }
            }
            AttackSpec::Flood { id }
        }
        "block" | "replay" => {
            let mut ids = Vec::new();
            for token in args {
                let (key, value) = split_kv(token).map_err(fail)?;
                match key {
                    "ids" => {
                        for part in value.split(',').filter(|p| !p.is_empty()) {
                            ids.push(parse_id(part, topology).map_err(fail)?);
                        }
                    }
                    other => {
                        return Err(err(line_no, format!("unknown {primitive} key `{other}`")))
                    }
                }
            }
            if primitive == "block" {
                if ids.is_empty() {
                    return Err(err(line_no, "`block` needs ids=..."));
                }
                AttackSpec::Block { ids }
            } else {
                AttackSpec::Replay { ids }
            }
        }
        "block_and_spoof" => {
            let mut commands = Vec::new();
            for token in args {
                let (key, value) = split_kv(token).map_err(fail)?;
                if key != "commands" {
                    return Err(err(line_no, format!("unknown block_and_spoof key `{key}`")));
                }
                for item in value.split(',').filter(|p| !p.is_empty()) {
                    commands.push(parse_forged_command(item, line_no)?);
                }
            }
            if commands.is_empty() {
                return Err(err(line_no, "`block_and_spoof` needs commands=..."));
            }
            AttackSpec::BlockAndSpoof { commands }
        }
        "sensor_spoof" => {
            let mut celsius = None;
            let mut rate_multiplier = 1u32;
            for token in args {
                let (key, value) = split_kv(token).map_err(fail)?;
                match key {
                    "temp" => {
                        celsius = Some(
                            value
                                .parse()
                                .map_err(|_| fail(format!("bad temperature `{value}`")))?,
                        );
                    }
                    "mult" => {
                        rate_multiplier = value
                            .parse()
                            .map_err(|_| fail(format!("bad multiplier `{value}`")))?;
                        if rate_multiplier == 0 {
                            return Err(err(line_no, "multiplier must be at least 1"));
                        }
                    }
                    other => {
                        return Err(err(line_no, format!("unknown sensor_spoof key `{other}`")))
                    }
                }
            }
            AttackSpec::SensorSpoof {
                celsius: celsius
                    .ok_or_else(|| err(line_no, "`sensor_spoof` needs temp=..."))?,
                rate_multiplier,
            }
        }
        other => return Err(err(line_no, format!("unknown attack primitive `{other}`"))),
    };
    Ok(AttackStep { start_s, end_s, spec })
}

/// One `module.command[:arg...]` item from a block_and_spoof command list.
fn parse_forged_command(item: &str, line_no: usize) -> Result<(ModuleKind, Command), ScenarioError> {
    let (module, rest) = item
        .split_once('.')
        .ok_or_else(|| err(line_no, format!("expected module.command, got `{item}`")))?;
    let kind =
        module_kind(module).ok_or_else(|| err(line_no, format!("unknown module `{module}`")))?;
    let mut parts = rest.split(':');
    let name = parts.next().unwrap_or_default();
    let args: Vec<&str> = parts.collect();
    let command = build_command(kind, name, &args).map_err(|msg| err(line_no, msg))?;
    Ok((kind, command))
}

fn parse_assert(
    line: &str,
    line_no: usize,
    topology: &Topology,
) -> Result<AssertSpec, ScenarioError> {
    let source = line.to_string();
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let kind = match tokens.as_slice() {
        ["at", when, probe, op, rest @ ..] => {
            let when = if *when == "end" {
                When::End
            } else {
                When::At(parse_secs(when, line_no, "assert time")?)
            };
            let probe = parse_probe(probe, line_no, topology)?;
            let (op, expect) = parse_comparison(op, rest, line_no)?;
            AssertKind::State { when, probe, op, expect }
        }
        ["between", from, to, probe, op, rest @ ..] => {
            let from_s = parse_secs(from, line_no, "sweep start")?;
            let to_s = parse_secs(to, line_no, "sweep end")?;
            if to_s <= from_s {
                return Err(err(line_no, "sweep end must be after its start"));
            }
            let probe = parse_probe(probe, line_no, topology)?;
            let (op, expect) = parse_comparison(op, rest, line_no)?;
            AssertKind::Sweep { from_s, to_s, probe, op, expect }
        }
        ["window", from, to, "count", id, op, count] => {
            let from_s = parse_secs(from, line_no, "window start")?;
            let to_s = parse_secs(to, line_no, "window end")?;
            if to_s <= from_s {
                return Err(err(line_no, "window end must be after its start"));
            }
            let id = parse_id(id, topology).map_err(|msg| err(line_no, msg))?;
            let op = parse_op(op, line_no)?;
            if matches!(op, CmpOp::Within { .. }) {
                return Err(err(line_no, "`within` does not apply to counts"));
            }
            let expect: u64 =
                count.parse().map_err(|_| err(line_no, format!("bad count `{count}`")))?;
            AssertKind::DeliveryCount { from_s, to_s, id, op, expect }
        }
        _ => {
            return Err(err(
                line_no,
                "expected `at <secs|end> <probe> <op> <value>`, `between <t0> <t1> ...`, \
                 or `window <t0> <t1> count <id> <op> <n>`",
            ))
        }
    };
    Ok(AssertSpec { line: line_no, source, kind })
}

fn parse_op(token: &str, line_no: usize) -> Result<CmpOp, ScenarioError> {
    Ok(match token {
        "==" => CmpOp::Eq,
        "!=" => CmpOp::Ne,
        "<" => CmpOp::Lt,
        "<=" => CmpOp::Le,
        ">" => CmpOp::Gt,
        ">=" => CmpOp::Ge,
        "within" => CmpOp::Within { tol: 0.0 },
        other => return Err(err(line_no, format!("unknown operator `{other}`"))),
    })
}

fn parse_comparison(
    op_token: &str,
    rest: &[&str],
    line_no: usize,
) -> Result<(CmpOp, Expected), ScenarioError> {
    let op = parse_op(op_token, line_no)?;
    if let CmpOp::Within { .. } = op {
        let [value, tol] = rest else {
            return Err(err(line_no, "`within` needs a value and a tolerance"));
        };
        let value: f64 =
            value.parse().map_err(|_| err(line_no, format!("bad value `{value}`")))?;
        let tol: f64 = tol.parse().map_err(|_| err(line_no, format!("bad tolerance `{tol}`")))?;
        if tol < 0.0 {
            return Err(err(line_no, "tolerance must not be negative"));
        }
        return Ok((CmpOp::Within { tol }, Expected::Number(value)));
    }
    let [value] = rest else {
        return Err(err(line_no, "expected exactly one value after the operator"));
    };
    let expect = match *value {
        "true" | "on" => Expected::Truth(true),
        "false" | "off" => Expected::Truth(false),
        "error_active" => Expected::Bus(NodeState::ErrorActive),
        "error_passive" => Expected::Bus(NodeState::ErrorPassive),
        "bus_off" => Expected::Bus(NodeState::BusOff),
        number => Expected::Number(
            number.parse().map_err(|_| err(line_no, format!("bad value `{number}`")))?,
        ),
    };
    if matches!(expect, Expected::Truth(_) | Expected::Bus(_))
        && !matches!(op, CmpOp::Eq | CmpOp::Ne)
    {
        return Err(err(line_no, "only == and != apply to non-numeric values"));
    }
    Ok((op, expect))
}

fn parse_probe(token: &str, line_no: usize, topology: &Topology) -> Result<Probe, ScenarioError> {
    let (module, field) = token
        .split_once('.')
        .ok_or_else(|| err(line_no, format!("expected module.field, got `{token}`")))?;
    let kind = module_kind(module)
        .ok_or_else(|| err(line_no, format!("unknown module `{module}`")))?;
    if topology.descriptor(kind).is_none() {
        return Err(err(line_no, format!("module `{module}` is not on the bus")));
    }

    if field == "bus_state" {
        return Ok(Probe::BusState(kind));
    }
    // Fields every peripheral answers; the board tracks its own set below.
    if kind != ModuleKind::MainBoard {
        match field {
            "halted" => return Ok(Probe::Halted(kind)),
            "firmware_tainted" => return Ok(Probe::FirmwareTainted(kind)),
            "malformed_commands" => return Ok(Probe::MalformedCommands(kind)),
            _ => {}
        }
    }

    let unknown = || err(line_no, format!("module `{module}` has no field `{field}`"));
    let probe = match kind {
        ModuleKind::MainBoard => match field {
            "displayed_temp" => Probe::BoardDisplayedTemp,
            "commanded_target" => Probe::BoardCommandedTarget,
            "fault" => Probe::BoardFault,
            "duplicate_registrations" => Probe::BoardDuplicateRegistrations,
            "registration_timeouts" => Probe::BoardRegistrationTimeouts,
            "malformed_statuses" => Probe::BoardMalformedStatuses,
            "registered_modules" => Probe::BoardRegisteredModules,
            _ => return Err(unknown()),
        },
        ModuleKind::Hotend => match field {
            "temp" => Probe::HotendTemp,
            "target" => Probe::HotendTarget,
            "fan" => Probe::HotendFan,
            "duty" => Probe::HotendDuty,
            _ => return Err(unknown()),
        },
        ModuleKind::SafetyModule => match field {
            "air_filter" => Probe::SafetyAirFilter,
            "kill_switch" => Probe::SafetyKillSwitch,
            _ => return Err(unknown()),
        },
        ModuleKind::MotionAxis(axis) => match field {
            "position" => Probe::AxisPosition(axis),
            "true_position" => Probe::AxisTruePosition(axis),
            "origin_offset" => Probe::AxisOriginOffset(axis),
            "calibrated" => Probe::AxisCalibrated(axis),
            "homing" => Probe::AxisHoming(axis),
            _ => return Err(unknown()),
        },
        ModuleKind::LimitSwitch(axis) => match field {
            "at_min" => Probe::LimitAtMin(axis),
            "at_max" => Probe::LimitAtMax(axis),
            _ => return Err(unknown()),
        },
        ModuleKind::CameraMonitor => return Err(unknown()),
    };
    Ok(probe)
}

/// Resolves a module-role pair against the default topology; used by tools
/// that print identifiers back to the operator.
#[must_use]
pub fn role_of(topology: &Topology, id: FrameId) -> Option<(ModuleKind, Direction)> {
    topology.id_role(id)
}
