//! Post-run impact reports.
//!
//! A report summarizes one simulation: how much traffic flowed, what the
//! attacker did, which class of asset each action touched, and whether the
//! scenario's assertions held. Reports serialize to JSON with stable key
//! ordering so identical runs produce identical bytes.

use printcan_core::attack::AttackExecution;
use printcan_core::frame::FrameId;
use printcan_core::plant::{Direction, ModuleKind, Topology};
use serde::Serialize;
use std::collections::BTreeMap;

/// What an attacker gains (or denies) by touching an identifier.
///
/// * `SafetyCritical`: heater, limit, safety, and broadcast command paths:
///   interference can damage hardware or people.
/// * `PrivateData`: motion geometry and panel readouts: the printed object
///   and job state can be reconstructed from these.
/// * `SecurityData`: the camera monitor: footage and firmware state used
///   to supervise the machine.
/// * `UnknownId`: traffic outside the stock topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetCategory {
    SafetyCritical,
    PrivateData,
    SecurityData,
    UnknownId,
}

impl AssetCategory {
    /// Higher wins when one action spans several identifiers.
    fn severity(self) -> u8 {
        match self {
            AssetCategory::SafetyCritical => 3,
            AssetCategory::SecurityData => 2,
            AssetCategory::PrivateData => 1,
            AssetCategory::UnknownId => 0,
        }
    }
}

/// Classifies one identifier against a topology.
#[must_use]
pub fn classify_id(topology: &Topology, id: FrameId) -> AssetCategory {
    let Some((kind, direction)) = topology.id_role(id) else {
        return AssetCategory::UnknownId;
    };
    match kind {
        ModuleKind::Hotend | ModuleKind::LimitSwitch(_) | ModuleKind::SafetyModule => {
            AssetCategory::SafetyCritical
        }
        // The board's command identifier carries broadcast halt and
        // enumeration; its status side is panel/job state.
        ModuleKind::MainBoard => match direction {
            Direction::Command => AssetCategory::SafetyCritical,
            Direction::Status => AssetCategory::PrivateData,
        },
        ModuleKind::MotionAxis(_) => AssetCategory::PrivateData,
        ModuleKind::CameraMonitor => AssetCategory::SecurityData,
    }
}

/// Classifies a whole attack execution: the worst category among its
/// resolved targets, with primitive-specific floors for actions that touch
/// the bus as a whole.
#[must_use]
pub fn classify_execution(topology: &Topology, execution: &AttackExecution) -> AssetCategory {
    let floor = match execution.primitive {
        // Reading everything leaks the job even when nothing is disturbed.
        "eavesdrop" => AssetCategory::PrivateData,
        // Saturating arbitration denies every path, safety included.
        "flood" => AssetCategory::SafetyCritical,
        "replay" => AssetCategory::PrivateData,
        _ => AssetCategory::UnknownId,
    };
    execution
        .targets
        .iter()
        .map(|&id| classify_id(topology, id))
        .chain(std::iter::once(floor))
        .max_by_key(|c| c.severity())
        .unwrap_or(AssetCategory::UnknownId)
}

/// One attack row in the report.
#[derive(Clone, Debug, Serialize)]
pub struct AttackRecord {
    pub primitive: String,
    /// Window bounds in seconds of simulated time.
    pub window_s: [f64; 2],
    /// Identifiers the attack resolved its aim to, formatted as hex.
    pub targets: Vec<String>,
    pub frames_sent: u64,
    pub asset_category: AssetCategory,
    /// Present when the attack under-delivered (for example, it was still
    /// waiting to infer an identifier when the window closed).
    pub note: Option<String>,
}

/// One assertion row in the report.
#[derive(Clone, Debug, Serialize)]
pub struct AssertionRecord {
    pub line: usize,
    pub text: String,
    pub passed: bool,
    /// Observed value or failure explanation.
    pub detail: String,
}

/// The complete post-run summary.
#[derive(Clone, Debug, Serialize)]
pub struct ImpactReport {
    pub scenario: String,
    pub seed: u64,
    pub bitrate: u32,
    pub duration_s: f64,
    pub frames_delivered: u64,
    /// Delivered frame counts keyed by zero-padded hex identifier.
    pub frames_by_id: BTreeMap<String, u64>,
    pub attacks: Vec<AttackRecord>,
    pub assertions: Vec<AssertionRecord>,
    pub passed: bool,
}

impl ImpactReport {
    /// Pretty JSON with a trailing newline, byte-stable for a given report.
    #[must_use]
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }
}

/// Formats an identifier the way reports and traces spell it.
#[must_use]
pub fn hex_id(id: FrameId) -> String {
    format!("0x{:03X}", id.raw())
}

/// Builds the attack rows for a finished run.
#[must_use]
pub fn attack_records(
    topology: &Topology,
    executions: &[AttackExecution],
    bitrate: u32,
) -> Vec<AttackRecord> {
    executions
        .iter()
        .map(|e| AttackRecord {
            primitive: e.primitive.to_string(),
            window_s: [
                e.window.start as f64 / f64::from(bitrate),
                e.window.end as f64 / f64::from(bitrate),
            ],
            targets: e.targets.iter().copied().map(hex_id).collect(),
            frames_sent: e.frames_sent,
            asset_category: classify_execution(topology, e),
            note: e.note.clone(),
        })
        .collect()
}
