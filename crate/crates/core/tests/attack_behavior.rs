//! Attacker-against-printer flows: each offensive primitive driven end to
//! end through the shared wire, with effects checked on the victim's true
//! world state, its operator display, and the traffic itself.

use printcan_core::attack::{infer_id_map, AttackKind, IdMap, Window};
use printcan_core::bus::{BusEvent, BusEventKind, NodeState};
use printcan_core::frame::{DataFrame, FrameId};
use printcan_core::plant::wire::{encode_status, Command, Status};
use printcan_core::plant::{secs_to_ticks, Axis, Diagnostic, ModuleKind, PlantConfig, Topology};
use printcan_core::sim::Harness;

fn ticks(secs: f64) -> u64 {
    secs_to_ticks(secs, PlantConfig::default().bitrate)
}

fn attacked(seed: u64) -> Harness {
    Harness::with_attacker(Topology::default_printer(), PlantConfig::default(), seed)
}

fn delivered(events: &[BusEvent]) -> Vec<(u64, DataFrame)> {
    events
        .iter()
        .filter(|e| e.kind == BusEventKind::FrameDelivered)
        .map(|e| (e.time, e.frame.expect("delivery carries a frame")))
        .collect()
}

fn status_id(h: &Harness, kind: ModuleKind) -> FrameId {
    h.printer.topology().descriptor(kind).unwrap().status_id
}

#[test]
fn eavesdropping_leaves_the_wire_byte_identical() {
    let end = ticks(2.0);

    let mut quiet = Harness::new(Topology::default_printer(), PlantConfig::default());
    quiet
        .printer
        .schedule_setup(ticks(0.5), ModuleKind::Hotend, Command::SetTargetTemp { celsius: 200.0 });
    let quiet_frames = delivered(&quiet.run_until(end));

    let mut spied = attacked(42);
    spied
        .printer
        .schedule_setup(ticks(0.5), ModuleKind::Hotend, Command::SetTargetTemp { celsius: 200.0 });
    spied
        .attacker
        .as_mut()
        .unwrap()
        .schedule(Window::new(0, end), AttackKind::Eavesdrop);
    let spied_frames = delivered(&spied.run_until(end));

    // A passive tap changes nothing: same frames, same order, same times.
    assert_eq!(quiet_frames, spied_frames);
    assert_eq!(
        quiet.printer.board().displayed_temp_c,
        spied.printer.board().displayed_temp_c
    );

    // And the tap saw everything that was delivered.
    let log = spied.attacker.as_ref().unwrap().log();
    let captured: Vec<(u64, DataFrame)> = log.records.clone();
    assert_eq!(captured, spied_frames, "capture is complete and exact");
}

#[test]
fn sensor_spoof_hijacks_the_display_and_trips_the_thermal_fault() {
    let mut h = attacked(1);
    h.printer
        .schedule_setup(ticks(0.5), ModuleKind::Hotend, Command::SetTargetTemp { celsius: 200.0 });
    h.attacker.as_mut().unwrap().schedule(
        Window::new(ticks(10.0), ticks(12.0)),
        AttackKind::SensorSpoof { kind: ModuleKind::Hotend, celsius: 999.0, rate_multiplier: 5 },
    );

    h.run_until(ticks(10.5));
    assert_eq!(h.printer.board().displayed_temp_c, 999.0, "operator sees the forged reading");
    assert!(h.printer.board().fault, "out-of-range reading latches the safety fault");
    let world = h.printer.world().hotend;
    assert!(
        (55.0..70.0).contains(&world.temp_c),
        "true temperature {} is unaffected by the forgery",
        world.temp_c
    );
    assert_eq!(world.target_c, 0.0, "fault response shut the heater down");
    assert!(h.printer.peripheral(ModuleKind::Hotend).unwrap().halted);
    assert_eq!(h.printer.board().commanded_target_c, 200.0, "operator intent unchanged");

    // After the window the genuine sensor is heard again (it was never
    // silenced), but the latched fault does not clear.
    h.run_until(ticks(12.5));
    assert!(h.printer.board().displayed_temp_c < 100.0, "display shows reality again");
    assert!(h.printer.board().fault, "fault latch survives");

    let execs = h.attacker.as_ref().unwrap().executions();
    assert_eq!(execs.len(), 1);
    assert_eq!(execs[0].primitive, "sensor_spoof");
    assert!(execs[0].frames_sent >= 90, "five-fold cadence over two seconds");
    assert!(execs[0].note.is_none(), "inference succeeded");
}

#[test]
fn targeted_block_silences_exactly_the_chosen_id() {
    let window = Window::new(ticks(1.0), ticks(3.0));
    let run = |kind: AttackKind| {
        let mut h = attacked(3);
        h.attacker.as_mut().unwrap().schedule(window, kind);
        let events = h.run_until(ticks(4.0));
        (delivered(&events), h)
    };

    let (baseline_frames, baseline) = run(AttackKind::Eavesdrop);
    let victim_id = status_id(&baseline, ModuleKind::SafetyModule);
    let (blocked_frames, blocked) = run(AttackKind::Block { ids: vec![victim_id] });

    let count = |frames: &[(u64, DataFrame)], id: FrameId, from: u64, to: u64| {
        frames.iter().filter(|(t, f)| (from..to).contains(t) && f.id() == id).count()
    };

    // The victim vanishes for the whole window...
    assert_eq!(count(&baseline_frames, victim_id, window.start, window.end), 20);
    assert_eq!(count(&blocked_frames, victim_id, window.start, window.end), 0);

    // ...while every other identifier is delivered exactly as often.
    let mut other_ids: Vec<FrameId> = baseline
        .printer
        .topology()
        .status_ids()
        .into_iter()
        .filter(|&id| id != victim_id)
        .collect();
    other_ids.push(baseline.printer.topology().board().command_id);
    for id in other_ids {
        assert_eq!(
            count(&baseline_frames, id, window.start, window.end),
            count(&blocked_frames, id, window.start, window.end),
            "collateral damage on {id}"
        );
    }

    // Thirty-two consecutive destroyed transmissions push the victim's
    // controller off the bus for good; it never recovers after the window.
    let victim_handle = blocked.printer.peripheral(ModuleKind::SafetyModule).unwrap().handle;
    assert_eq!(blocked.bus.node_state(victim_handle), NodeState::BusOff);
    assert_eq!(blocked.bus.counters(victim_handle).transmit_errors, 256);
    assert_eq!(count(&blocked_frames, victim_id, window.end, ticks(4.0)), 0);
    assert!(count(&baseline_frames, victim_id, window.end, ticks(4.0)) > 0);
}

#[test]
fn flood_starves_all_genuine_traffic_until_it_stops() {
    let mut h = attacked(5);
    let flood_id = FrameId::new(0x000).unwrap();
    let window = Window::new(ticks(1.0), ticks(2.0));
    h.attacker.as_mut().unwrap().schedule(window, AttackKind::Flood { id: flood_id });
    let frames = delivered(&h.run_until(ticks(2.2)));

    let in_window: Vec<&(u64, DataFrame)> =
        frames.iter().filter(|(t, _)| window.contains(*t)).collect();
    let flood_count = in_window.iter().filter(|(_, f)| f.id() == flood_id).count();
    let genuine_in_window = in_window.iter().filter(|(_, f)| f.id() != flood_id).count();
    assert_eq!(genuine_in_window, 0, "nothing but the flood gets through");
    assert!(
        (9_000..=9_500).contains(&flood_count),
        "minimum-length frames saturate the wire ({flood_count} in one second)"
    );

    // Within a handful of slots after the flood stops, the backlog starts
    // draining: highest-priority genuine frame first.
    let first_genuine_after = frames
        .iter()
        .find(|(t, f)| *t >= window.end && f.id() != flood_id)
        .map(|(t, _)| *t)
        .expect("genuine traffic resumes");
    assert!(
        first_genuine_after < window.end + 300,
        "recovery was immediate, got {first_genuine_after}"
    );
    let stragglers = frames
        .iter()
        .filter(|(t, f)| *t >= window.end + 300 && f.id() == flood_id)
        .count();
    assert_eq!(stragglers, 0, "remaining flood frames are aborted at the window edge");

    // Arbitration starvation destroys no frames, so nobody's controller
    // accumulated errors.
    for p in h.printer.peripherals() {
        assert_eq!(h.bus.node_state(p.handle), NodeState::ErrorActive);
    }
}

#[test]
fn replay_of_the_boot_capture_floods_the_board_with_duplicate_registrations() {
    let mut h = attacked(7);
    h.attacker
        .as_mut()
        .unwrap()
        .schedule(Window::new(ticks(2.0), ticks(2.5)), AttackKind::Replay { ids: Vec::new() });
    h.run_until(ticks(3.0));

    // Each replayed handshake answer re-arrives, and the replayed
    // enumeration broadcast provokes every module into answering afresh
    // (bit-identical answers queued at the same instant merge on the wire,
    // so the total lands between 7 and 14).
    let diags = &h.printer.board().diagnostics;
    let mut dup_ids = std::collections::BTreeSet::new();
    for d in diags {
        match d {
            Diagnostic::DuplicateRegistration { status_id, .. } => {
                dup_ids.insert(*status_id);
            }
            other => panic!("replayed well-formed traffic raised {other}"),
        }
    }
    let expected: std::collections::BTreeSet<FrameId> =
        h.printer.topology().peripherals().map(|m| m.status_id).collect();
    assert_eq!(dup_ids, expected, "every module's registration was confused");
    assert!(diags.len() >= 7, "saw only {} duplicate registrations", diags.len());
    assert!(!h.printer.board().fault, "stale ambient temperatures trip nothing");

    let execs = h.attacker.as_ref().unwrap().executions();
    assert_eq!(execs[0].primitive, "replay");
    assert!(execs[0].frames_sent >= 100, "the whole capture was re-sent");
}

#[test]
fn melt_and_hide_overheats_the_hotend_behind_a_normal_display() {
    let mut h = attacked(9);
    h.printer
        .schedule_setup(ticks(0.5), ModuleKind::Hotend, Command::SetTargetTemp { celsius: 200.0 });
    let end = ticks(165.0);
    let hotend_status = status_id(&h, ModuleKind::Hotend);
    {
        let attacker = h.attacker.as_mut().unwrap();
        // Step 1: take over the board's command channels and retarget the
        // heater far above what the operator asked for.
        attacker.schedule(
            Window::new(ticks(125.0), end),
            AttackKind::BlockAndSpoof {
                commands: vec![(ModuleKind::Hotend, Command::SetTargetTemp { celsius: 280.0 })],
            },
        );
        // Step 2: once the forged command has landed, silence the genuine
        // temperature reports.
        attacker.schedule(
            Window::new(ticks(125.2), end),
            AttackKind::Block { ids: vec![hotend_status] },
        );
        // Step 3: feed the display a plausible value near the old target.
        attacker.schedule(
            Window::new(ticks(125.3), end),
            AttackKind::SensorSpoof {
                kind: ModuleKind::Hotend,
                celsius: 199.5,
                rate_multiplier: 5,
            },
        );
    }
    h.run_until(ticks(164.9));

    let world = h.printer.world().hotend;
    assert!(
        world.temp_c > 250.0,
        "the hotend is physically overheating ({} degrees)",
        world.temp_c
    );
    assert_eq!(world.target_c, 280.0, "forged setpoint took effect");

    let shown = h.printer.board().displayed_temp_c;
    assert!(
        (195.0..=205.0).contains(&shown),
        "operator display reads a calm {shown} degrees"
    );
    assert!(!h.printer.board().fault, "nothing out of range was ever reported");
    assert_eq!(h.printer.board().commanded_target_c, 200.0, "board never asked for this");

    // Collateral: the genuine hotend controller was forced off the bus.
    let hotend_handle = h.printer.peripheral(ModuleKind::Hotend).unwrap().handle;
    assert_eq!(h.bus.node_state(hotend_handle), NodeState::BusOff);

    let execs = h.attacker.as_ref().unwrap().executions();
    assert_eq!(execs.len(), 3);
    assert!(execs.iter().all(|e| e.note.is_none()), "every stage resolved its targets");
    let forge = execs.iter().find(|e| e.primitive == "block_and_spoof").unwrap();
    assert_eq!(forge.frames_sent, 1, "one forged command was enough");
}

#[test]
fn spoofed_limit_switch_miscalibrates_homing() {
    let mut h = attacked(11);
    h.printer.schedule_setup(
        ticks(10.0),
        ModuleKind::MotionAxis(Axis::X),
        Command::Home { axis: Axis::X },
    );
    let fake_limit = DataFrame::data(
        status_id(&h, ModuleKind::LimitSwitch(Axis::X)),
        &encode_status(&Status::Limit { axis: Axis::X, at_min: true, at_max: false }),
    )
    .unwrap();
    h.attacker.as_mut().unwrap().schedule(
        Window::new(ticks(10.04), ticks(10.06)),
        // Period longer than the window: exactly one forged frame.
        AttackKind::Spoof { frame: fake_limit, period: ticks(1.0) },
    );
    h.run_until(ticks(11.0));

    let x = h.printer.world().axis(Axis::X);
    assert!(x.calibrated, "the board believed the forged switch report");
    assert!(!x.homing, "homing ended early");
    assert!(!x.at_min_stop, "the carriage never physically reached the stop");
    assert!(
        (250.0..350.0).contains(&x.origin_offset),
        "origin is off by roughly 300 steps (got {})",
        x.origin_offset
    );
    assert!(x.logical_position().abs() < 1e-9, "the board thinks the axis is homed at zero");

    let execs = h.attacker.as_ref().unwrap().executions();
    assert_eq!(execs[0].primitive, "spoof");
    assert_eq!(execs[0].frames_sent, 1);
}

#[test]
fn identifier_inference_on_live_traffic_matches_ground_truth() {
    let mut h = attacked(13);
    h.printer
        .schedule_setup(ticks(0.5), ModuleKind::Hotend, Command::SetTargetTemp { celsius: 60.0 });
    h.attacker
        .as_mut()
        .unwrap()
        .schedule(Window::new(0, ticks(3.0)), AttackKind::Eavesdrop);
    h.run_until(ticks(3.0));

    let inferred = infer_id_map(h.attacker.as_ref().unwrap().log()).expect("boot was captured");
    let truth = IdMap::ground_truth(h.printer.topology());
    assert_eq!(inferred.entries, truth.entries);
    assert!(inferred.entries.values().all(|e| (e.confidence - 1.0).abs() < f64::EPSILON));
}

#[test]
fn same_seed_reruns_are_bit_identical_under_attack() {
    let run = || {
        let mut h = attacked(21);
        h.printer
            .schedule_setup(ticks(0.5), ModuleKind::Hotend, Command::SetTargetTemp { celsius: 200.0 });
        h.attacker.as_mut().unwrap().schedule(
            Window::new(ticks(1.0), ticks(2.0)),
            AttackKind::SensorSpoof { kind: ModuleKind::Hotend, celsius: 999.0, rate_multiplier: 5 },
        );
        let frames = delivered(&h.run_until(ticks(2.5)));
        (frames, h.printer.board().displayed_temp_c, h.printer.board().fault)
    };
    assert_eq!(run(), run());
}
