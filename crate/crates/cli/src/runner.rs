//! Executes a parsed scenario against a fresh simulation.
//!
//! The runner owns the whole lifecycle: build the harness, schedule operator
//! steps and attacks, advance the bus while collecting every delivered frame,
//! sample the probes each assertion needs at exactly the right instants, and
//! fold everything into a trace plus an impact report. Two runs of the same
//! scenario with the same seed produce byte-identical output.

use crate::report::{attack_records, hex_id, AssertionRecord, ImpactReport};
use crate::scenario::{
    AssertKind, AttackSpec, CmpOp, Expected, Probe, Scenario, When,
};
use crate::trace::{render, TraceRecord};
use printcan_core::attack::{AttackKind, Window};
use printcan_core::bus::{BusEventKind, NodeState, Tick};
use printcan_core::frame::DataFrame;
use printcan_core::plant::{
    secs_to_ticks, Diagnostic, ModuleKind, PlantConfig, Topology,
};
use printcan_core::sim::Harness;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("attack frame rejected: {0}")]
    BadAttackFrame(String),
    #[error("probe {0} has no value: {1}")]
    BadProbe(String, String),
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub scenario: Scenario,
    /// Every frame delivered on the bus, in delivery order.
    pub records: Vec<TraceRecord>,
    pub assertions: Vec<AssertionRecord>,
    /// True when every assertion held.
    pub passed: bool,
    pub report: ImpactReport,
}

impl RunOutcome {
    /// The candump-format text for this run.
    #[must_use]
    pub fn trace_text(&self) -> String {
        render(&self.records, self.scenario.bitrate)
    }

    /// The report JSON for this run.
    #[must_use]
    pub fn report_json(&self) -> String {
        self.report.to_json()
    }
}

/// A probe reading, typed like the assertion grammar.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Evaluated {
    Number(f64),
    Truth(bool),
    Bus(NodeState),
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e12 {
        format!("{v:.0}")
    } else {
        format!("{v:.4}")
    }
}

fn describe(value: Evaluated) -> String {
    match value {
        Evaluated::Number(v) => fmt_num(v),
        Evaluated::Truth(b) => b.to_string(),
        Evaluated::Bus(NodeState::ErrorActive) => "error_active".into(),
        Evaluated::Bus(NodeState::ErrorPassive) => "error_passive".into(),
        Evaluated::Bus(NodeState::BusOff) => "bus_off".into(),
    }
}

fn describe_expected(op: CmpOp, expect: Expected) -> String {
    let op_text = match op {
        CmpOp::Eq => "==",
        CmpOp::Ne => "!=",
        CmpOp::Lt => "<",
        CmpOp::Le => "<=",
        CmpOp::Gt => ">",
        CmpOp::Ge => ">=",
        CmpOp::Within { tol } => return format!("within {} of {}", fmt_num(tol), expect_text(expect)),
    };
    format!("{op_text} {}", expect_text(expect))
}

fn expect_text(expect: Expected) -> String {
    match expect {
        Expected::Number(v) => fmt_num(v),
        Expected::Truth(b) => b.to_string(),
        Expected::Bus(NodeState::ErrorActive) => "error_active".into(),
        Expected::Bus(NodeState::ErrorPassive) => "error_passive".into(),
        Expected::Bus(NodeState::BusOff) => "bus_off".into(),
    }
}

fn compare(op: CmpOp, value: Evaluated, expect: Expected) -> Result<bool, String> {
    match (value, expect) {
        (Evaluated::Number(v), Expected::Number(e)) => Ok(match op {
            CmpOp::Eq => v == e,
            CmpOp::Ne => v != e,
            CmpOp::Lt => v < e,
            CmpOp::Le => v <= e,
            CmpOp::Gt => v > e,
            CmpOp::Ge => v >= e,
            CmpOp::Within { tol } => (v - e).abs() <= tol,
        }),
        (Evaluated::Truth(v), Expected::Truth(e)) => Ok(match op {
            CmpOp::Eq => v == e,
            CmpOp::Ne => v != e,
            _ => return Err("only == and != apply to booleans".into()),
        }),
        (Evaluated::Bus(v), Expected::Bus(e)) => Ok(match op {
            CmpOp::Eq => v == e,
            CmpOp::Ne => v != e,
            _ => return Err("only == and != apply to bus states".into()),
        }),
        (v, e) => Err(format!(
            "type mismatch: probe reads {}, assertion expects {}",
            describe(v),
            expect_text(e)
        )),
    }
}

fn probe_name(probe: Probe) -> String {
    format!("{probe:?}")
}

fn count_diagnostics(h: &Harness, pick: fn(&Diagnostic) -> bool) -> f64 {
    h.printer.board().diagnostics.iter().filter(|d| pick(d)).count() as f64
}

fn read_probe(h: &Harness, probe: Probe) -> Result<Evaluated, RunError> {
    let world = h.printer.world();
    let board = h.printer.board();
    let peripheral = |kind: ModuleKind| {
        h.printer
            .peripheral(kind)
            .ok_or_else(|| RunError::BadProbe(probe_name(probe), "module not on the bus".into()))
    };
    Ok(match probe {
        Probe::BoardDisplayedTemp => Evaluated::Number(board.displayed_temp_c),
        Probe::BoardCommandedTarget => Evaluated::Number(board.commanded_target_c),
        Probe::BoardFault => Evaluated::Truth(board.fault),
        Probe::BoardDuplicateRegistrations => Evaluated::Number(count_diagnostics(h, |d| {
            matches!(d, Diagnostic::DuplicateRegistration { .. })
        })),
        Probe::BoardRegistrationTimeouts => Evaluated::Number(count_diagnostics(h, |d| {
            matches!(d, Diagnostic::RegistrationTimeout { .. })
        })),
        Probe::BoardMalformedStatuses => Evaluated::Number(count_diagnostics(h, |d| {
            matches!(d, Diagnostic::MalformedStatus { .. })
        })),
        Probe::BoardRegisteredModules => Evaluated::Number(board.registered.len() as f64),
        Probe::HotendTemp => Evaluated::Number(world.hotend.temp_c),
        Probe::HotendTarget => Evaluated::Number(world.hotend.target_c),
        Probe::HotendFan => Evaluated::Truth(world.hotend.fan_on),
        Probe::HotendDuty => Evaluated::Number(world.hotend.duty),
        Probe::SafetyAirFilter => Evaluated::Truth(world.air_filter_on),
        Probe::SafetyKillSwitch => Evaluated::Truth(world.kill_switch_pressed),
        Probe::AxisPosition(axis) => Evaluated::Number(world.axis(axis).logical_position()),
        Probe::AxisTruePosition(axis) => Evaluated::Number(world.axis(axis).true_position),
        Probe::AxisOriginOffset(axis) => Evaluated::Number(world.axis(axis).origin_offset),
        Probe::AxisCalibrated(axis) => Evaluated::Truth(world.axis(axis).calibrated),
        Probe::AxisHoming(axis) => Evaluated::Truth(world.axis(axis).homing),
        Probe::LimitAtMin(axis) => Evaluated::Truth(world.axis(axis).at_min_stop),
        Probe::LimitAtMax(axis) => Evaluated::Truth(world.axis(axis).at_max_stop),
        Probe::Halted(kind) => Evaluated::Truth(peripheral(kind)?.halted),
        Probe::FirmwareTainted(kind) => Evaluated::Truth(peripheral(kind)?.firmware_tainted),
        Probe::MalformedCommands(kind) => {
            Evaluated::Number(f64::from(peripheral(kind)?.malformed_commands))
        }
        Probe::BusState(kind) => {
            let handle = if kind == ModuleKind::MainBoard {
                h.printer.board_handle()
            } else {
                peripheral(kind)?.handle
            };
            Evaluated::Bus(h.bus.node_state(handle))
        }
    })
}

/// Materializes an attack spec against a concrete bitrate.
fn attack_kind(spec: &AttackSpec, bitrate: u32) -> Result<AttackKind, RunError> {
    Ok(match spec {
        AttackSpec::Eavesdrop => AttackKind::Eavesdrop,
        AttackSpec::Spoof { id, payload, period_ms } => {
            let frame = DataFrame::data(*id, payload)
                .map_err(|e| RunError::BadAttackFrame(e.to_string()))?;
            let period = secs_to_ticks(period_ms / 1_000.0, bitrate).max(1);
            AttackKind::Spoof { frame, period }
        }
        AttackSpec::Flood { id } => AttackKind::Flood { id: *id },
        AttackSpec::Block { ids } => AttackKind::Block { ids: ids.clone() },
        AttackSpec::Replay { ids } => AttackKind::Replay { ids: ids.clone() },
        AttackSpec::BlockAndSpoof { commands } => {
            AttackKind::BlockAndSpoof { commands: commands.clone() }
        }
        AttackSpec::SensorSpoof { celsius, rate_multiplier } => AttackKind::SensorSpoof {
            kind: ModuleKind::Hotend,
            celsius: *celsius,
            rate_multiplier: *rate_multiplier,
        },
    })
}

/// Sweeps sample on a fixed 100 ms grid, dense enough to catch telemetry
/// beats without turning long soaks into millions of probe reads.
const SWEEP_STEP_S: f64 = 0.1;

/// One pending probe read: which assertion wants it, at which tick.
struct SampleJob {
    assert_index: usize,
}

/// Runs a scenario to completion.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutcome, RunError> {
    let topology = Topology::default_printer();
    let config = PlantConfig::with_bitrate(scenario.bitrate);
    let bitrate = scenario.bitrate;
    let end_tick = secs_to_ticks(scenario.duration_s, bitrate);

    let mut h = if scenario.attacks.is_empty() {
        Harness::new(topology.clone(), config)
    } else {
        Harness::with_attacker(topology.clone(), config, scenario.seed)
    };

    for step in &scenario.setup {
        h.printer.schedule_setup(
            secs_to_ticks(step.at_s, bitrate),
            step.target,
            step.command.clone(),
        );
    }
    for step in &scenario.world {
        h.printer.schedule_world_event(secs_to_ticks(step.at_s, bitrate), step.event);
    }
    if let Some(attacker) = h.attacker.as_mut() {
        for step in &scenario.attacks {
            let window = Window::new(
                secs_to_ticks(step.start_s, bitrate),
                secs_to_ticks(step.end_s, bitrate).min(end_tick).max(1),
            );
            attacker.schedule(window, attack_kind(&step.spec, bitrate)?);
        }
    }

    // Every instant any assertion wants to look at the simulation.
    let mut samples: BTreeMap<Tick, Vec<SampleJob>> = BTreeMap::new();
    for (index, spec) in scenario.asserts.iter().enumerate() {
        match &spec.kind {
            AssertKind::State { when, .. } => {
                let tick = match when {
                    When::At(secs) => secs_to_ticks(*secs, bitrate),
                    When::End => end_tick,
                };
                samples.entry(tick).or_default().push(SampleJob { assert_index: index });
            }
            AssertKind::Sweep { from_s, to_s, .. } => {
                let mut at = *from_s;
                while at < *to_s {
                    samples
                        .entry(secs_to_ticks(at, bitrate))
                        .or_default()
                        .push(SampleJob { assert_index: index });
                    at += SWEEP_STEP_S;
                }
                samples
                    .entry(secs_to_ticks(*to_s, bitrate))
                    .or_default()
                    .push(SampleJob { assert_index: index });
            }
            AssertKind::DeliveryCount { .. } => {}
        }
    }

    // Per-assertion fold state: pass flag, samples seen, failure detail.
    let mut passed_so_far = vec![true; scenario.asserts.len()];
    let mut samples_seen = vec![0u64; scenario.asserts.len()];
    let mut details: Vec<Option<String>> = vec![None; scenario.asserts.len()];

    let mut records: Vec<TraceRecord> = Vec::new();
    let collect = |records: &mut Vec<TraceRecord>, events: &[printcan_core::bus::BusEvent]| {
        for event in events {
            if event.kind == BusEventKind::FrameDelivered {
                let frame = event.frame.expect("delivered events carry their frame");
                records.push(TraceRecord { tick: event.time, frame });
            }
        }
    };

    for (&tick, jobs) in &samples {
        let events = h.run_until(tick);
        collect(&mut records, &events);
        for job in jobs {
            let spec = &scenario.asserts[job.assert_index];
            let (probe, op, expect) = match &spec.kind {
                AssertKind::State { probe, op, expect, .. } => (*probe, *op, *expect),
                AssertKind::Sweep { probe, op, expect, .. } => (*probe, *op, *expect),
                AssertKind::DeliveryCount { .. } => unreachable!("counts are not sampled"),
            };
            let value = read_probe(&h, probe)?;
            let ok = compare(op, value, expect).map_err(|msg| {
                RunError::BadProbe(probe_name(probe), msg)
            })?;
            samples_seen[job.assert_index] += 1;
            if ok {
                if details[job.assert_index].is_none() {
                    details[job.assert_index] = Some(format!("observed {}", describe(value)));
                }
            } else if passed_so_far[job.assert_index] {
                passed_so_far[job.assert_index] = false;
                details[job.assert_index] = Some(format!(
                    "at {}s observed {}, wanted {}",
                    fmt_num(tick as f64 / f64::from(bitrate)),
                    describe(value),
                    describe_expected(op, expect)
                ));
            }
        }
    }
    let events = h.run_until(end_tick);
    collect(&mut records, &events);

    // Delivery counts come from the finished trace.
    let mut assertions = Vec::with_capacity(scenario.asserts.len());
    let mut all_passed = true;
    for (index, spec) in scenario.asserts.iter().enumerate() {
        let (passed, detail) = match &spec.kind {
            AssertKind::DeliveryCount { from_s, to_s, id, op, expect } => {
                let from = secs_to_ticks(*from_s, bitrate);
                let to = secs_to_ticks(*to_s, bitrate);
                let count = records
                    .iter()
                    .filter(|r| r.tick >= from && r.tick < to && r.frame.id() == *id)
                    .count() as u64;
                let ok = match op {
                    CmpOp::Eq => count == *expect,
                    CmpOp::Ne => count != *expect,
                    CmpOp::Lt => count < *expect,
                    CmpOp::Le => count <= *expect,
                    CmpOp::Gt => count > *expect,
                    CmpOp::Ge => count >= *expect,
                    CmpOp::Within { .. } => unreachable!("rejected at parse time"),
                };
                (ok, format!("counted {count} frames of {}", hex_id(*id)))
            }
            AssertKind::State { .. } | AssertKind::Sweep { .. } => {
                let passed = passed_so_far[index];
                let fallback = || format!("sampled {} point(s)", samples_seen[index]);
                (passed, details[index].clone().unwrap_or_else(fallback))
            }
        };
        all_passed &= passed;
        assertions.push(AssertionRecord {
            line: spec.line,
            text: spec.source.clone(),
            passed,
            detail,
        });
    }

    // Impact summary.
    let mut frames_by_id: BTreeMap<String, u64> = BTreeMap::new();
    for record in &records {
        *frames_by_id.entry(hex_id(record.frame.id())).or_insert(0) += 1;
    }
    let executions = h.attacker.as_ref().map(|a| a.executions()).unwrap_or_default();
    let report = ImpactReport {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        bitrate,
        duration_s: scenario.duration_s,
        frames_delivered: records.len() as u64,
        frames_by_id,
        attacks: attack_records(&topology, &executions, bitrate),
        assertions: assertions.clone(),
        passed: all_passed,
    };

    Ok(RunOutcome {
        scenario: scenario.clone(),
        records,
        assertions,
        passed: all_passed,
        report,
    })
}

/// Convenience: parse text and run it, overriding the seed when given.
pub fn run_text(text: &str, seed_override: Option<u64>) -> anyhow::Result<RunOutcome> {
    let mut scenario = Scenario::parse(text)?;
    if let Some(seed) = seed_override {
        scenario.seed = seed;
    }
    Ok(run_scenario(&scenario)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(text: &str) -> RunOutcome {
        run_text(text, None).expect("scenario runs")
    }

    #[test]
    fn quiet_boot_passes_simple_assertions() {
        let outcome = run("
name = quiet_boot
duration = 1.0

[assert]
at end board.registered_modules == 7
at end board.fault == false
window 0 1 count 0x010 == 1
window 0.1 1.0 count 0x1A1 >= 8
");
        assert!(outcome.passed, "assertions: {:#?}", outcome.assertions);
        assert_eq!(outcome.report.frames_delivered as usize, outcome.records.len());
        assert!(outcome.report.attacks.is_empty(), "no attacker was scheduled");
        // Registration plus telemetry from seven modules lands in the log.
        assert!(outcome.records.len() > 60, "got {}", outcome.records.len());
    }

    #[test]
    fn failing_assertions_carry_observations() {
        let outcome = run("
name = wrong_guess
duration = 0.5

[assert]
at end board.registered_modules == 3
");
        assert!(!outcome.passed);
        assert!(!outcome.assertions[0].passed);
        assert!(
            outcome.assertions[0].detail.contains("observed 7"),
            "got: {}",
            outcome.assertions[0].detail
        );
        assert!(!outcome.report.passed);
    }

    #[test]
    fn sweeps_report_the_first_failing_instant() {
        let outcome = run("
name = sweep_fail
duration = 2.0

[setup]
at 0.5 hotend set_temp 100

[assert]
between 1.0 2.0 hotend.target == 0
");
        assert!(!outcome.passed);
        let detail = &outcome.assertions[0].detail;
        assert!(detail.contains("wanted == 0"), "got: {detail}");
    }

    #[test]
    fn attacks_show_up_in_the_report() {
        let outcome = run("
name = spy
duration = 1.0
seed = 5

[attack]
window 0.2 0.8 eavesdrop

[assert]
at end board.fault == false
");
        assert!(outcome.passed, "assertions: {:#?}", outcome.assertions);
        assert_eq!(outcome.report.attacks.len(), 1);
        let row = &outcome.report.attacks[0];
        assert_eq!(row.primitive, "eavesdrop");
        assert_eq!(row.window_s, [0.2, 0.8]);
        assert_eq!(row.frames_sent, 0, "eavesdropping never transmits");
    }

    #[test]
    fn identical_seeds_give_identical_outputs() {
        let text = "
name = twins
duration = 1.5
seed = 42

[attack]
window 0.3 1.2 flood

[assert]
at end board.registered_modules == 7
";
        let a = run(text);
        let b = run(text);
        assert_eq!(a.trace_text(), b.trace_text());
        assert_eq!(a.report_json(), b.report_json());
    }

    #[test]
    fn seed_override_replaces_the_file_seed() {
        let text = "name = s\nduration = 0.2\nseed = 1\n";
        let outcome = run_text(text, Some(99)).expect("runs");
        assert_eq!(outcome.scenario.seed, 99);
        assert_eq!(outcome.report.seed, 99);
    }

    #[test]
    fn trace_text_matches_the_collected_records() {
        let outcome = run("name = t\nduration = 0.3\n");
        let text = outcome.trace_text();
        let parsed = crate::trace::parse(&text).expect("own trace parses");
        assert_eq!(parsed.len(), outcome.records.len());
        for (p, r) in parsed.iter().zip(&outcome.records) {
            assert_eq!(p.id, r.frame.id().raw());
            assert_eq!(p.payload, r.frame.payload());
        }
    }
}
