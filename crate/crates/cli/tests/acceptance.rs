//! Acceptance suite: one test per release criterion, each printing a single
//! PASS/FAIL verdict line. Run with `cargo test --test acceptance -- --nocapture`
//! to see every line; a failing criterion also fails its test.

use printcan::runner::{run_scenario, RunOutcome};
use printcan::scenario::Scenario;
use printcan_core::attack::{infer_id_map, AttackKind, Attacker, IdMap, Window};
use printcan_core::bus::{BusEvent, BusEventKind, Tick, VirtualBus, INTERFRAME_BITS};
use printcan_core::node::AcceptanceFilter;
use printcan_core::frame::{
    compute_crc15, decode_frame, encode_frame, Bit, BitStream, DataFrame, FrameId,
};
use printcan_core::plant::wire::Command;
use printcan_core::plant::{secs_to_ticks, ModuleKind, PlantConfig, Topology, WorldEvent};
use printcan_core::sim::Harness;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

/// The last ten bits of an encoded frame (CRC delimiter, ACK pair, and end
/// marker) are transmitted without stuffing.
const UNSTUFFED_TAIL_BITS: usize = 10;

const BITRATE: u32 = 500_000;

fn ticks(secs: f64) -> Tick {
    secs_to_ticks(secs, BITRATE)
}

fn fid(raw: u16) -> FrameId {
    FrameId::new(raw).expect("valid id")
}

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load_scenario(file: &str) -> Scenario {
    let path = scenario_dir().join(file);
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    Scenario::parse(&text).unwrap_or_else(|e| panic!("parsing {file}: {e}"))
}

/// Prints the verdict line for one criterion, then enforces it.
fn verdict(number: u32, what: &str, ok: bool, detail: &str) {
    let state = if ok { "PASS" } else { "FAIL" };
    println!("criterion {number:02} ({what}): {state}");
    assert!(ok, "criterion {number:02} ({what}) failed: {detail}");
}

fn assertion_row<'a>(
    outcome: &'a RunOutcome,
    needle: &str,
) -> &'a printcan::report::AssertionRecord {
    outcome
        .assertions
        .iter()
        .find(|a| a.text.contains(needle))
        .unwrap_or_else(|| panic!("scenario has no assertion containing `{needle}`"))
}

fn delivered(events: &[BusEvent]) -> Vec<(Tick, DataFrame)> {
    events
        .iter()
        .filter(|e| e.kind == BusEventKind::FrameDelivered)
        .map(|e| (e.time, e.frame.expect("delivered events carry frames")))
        .collect()
}

// ---------------------------------------------------------------------------
// 01: the bundled display-hijack scenario
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_temperature_display_hijack() {
    let scenario = load_scenario("temperature_spoof.scn");
    let started = Instant::now();
    let outcome = run_scenario(&scenario).expect("scenario runs");
    let elapsed = started.elapsed();

    let steady = assertion_row(&outcome, "at 129.95 board.displayed_temp within 200 2");
    let display = assertion_row(&outcome, "at 130.25 board.displayed_temp == 999");
    let fault = assertion_row(&outcome, "at 130.25 board.fault == true");
    let metal = assertion_row(&outcome, "at 130.25 hotend.temp within 200 5");

    let ok = outcome.passed
        && steady.passed
        && display.passed
        && fault.passed
        && metal.passed
        && elapsed < Duration::from_secs(2);
    verdict(
        1,
        "hotend steady at 200, forged 999 hijacks display and latches fault \
         within 0.3 s while the metal stays in [195, 205]; runtime under 2 s",
        ok,
        &format!(
            "passed={} steady={} display={} fault={} metal={} elapsed={elapsed:?}\n{:#?}",
            outcome.passed, steady.passed, display.passed, fault.passed, metal.passed,
            outcome.assertions
        ),
    );
}

// ---------------------------------------------------------------------------
// 02: arbitration delivers pending sets in ascending identifier order
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_arbitration_orders_random_pending_sets() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0217);
    let mut failures = Vec::new();

    for trial in 0..1_000u32 {
        let size = rng.gen_range(2..=8usize);
        let mut ids = BTreeSet::new();
        while ids.len() < size {
            ids.insert(rng.gen_range(0..=0x7FEu16));
        }
        let expected: Vec<u16> = ids.iter().copied().collect();

        let mut bus = VirtualBus::new();
        let nodes: Vec<_> = (0..8).map(|_| bus.attach(AcceptanceFilter::promiscuous())).collect();
        // Queue in shuffled order so node index never correlates with id.
        let mut order: Vec<u16> = expected.clone();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for (node, raw) in nodes.iter().zip(&order) {
            let frame = DataFrame::data(fid(*raw), &raw.to_be_bytes()).expect("frame");
            bus.queue_tx(*node, frame).expect("healthy node queues");
        }

        let mut got = Vec::new();
        for _ in 0..200 {
            for event in bus.step() {
                if event.kind == BusEventKind::FrameDelivered {
                    got.push(event.frame.expect("frame").id().raw());
                }
            }
            if got.len() == size {
                break;
            }
        }
        if got != expected {
            failures.push(format!("trial {trial}: expected {expected:?}, got {got:?}"));
        }
    }
    let elapsed = started.elapsed();

    let ok = failures.is_empty() && elapsed < Duration::from_secs(5);
    verdict(
        2,
        "1000 random pending sets of 2..=8 frames always deliver in ascending \
         identifier order; runtime under 5 s",
        ok,
        &format!("{} failures, elapsed={elapsed:?}: {:?}", failures.len(), failures.first()),
    );
}

// ---------------------------------------------------------------------------
// 03: codec roundtrip, stuffing invariant, and bit-flip detection
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_codec_roundtrip_stuffing_and_bit_flips() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0318);
    let mut roundtrip_failures = 0u32;
    let mut stuffing_violations = 0u32;

    for _ in 0..10_000u32 {
        let id = fid(rng.gen_range(0..=0x7FFu16));
        let frame = if rng.gen_bool(0.15) {
            DataFrame::remote(id, rng.gen_range(0..=8)).expect("remote frame")
        } else {
            let len = rng.gen_range(0..=8usize);
            let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            DataFrame::data(id, &payload).expect("data frame")
        };

        let image = encode_frame(&frame);
        match decode_frame(&image) {
            Ok(back) if back == frame => {}
            _ => roundtrip_failures += 1,
        }

        // The stuffed region (everything before the fixed-form tail) must
        // never contain six identical consecutive levels.
        let stuffed = &image.as_slice()[..image.len() - UNSTUFFED_TAIL_BITS];
        if stuffed.windows(6).any(|w| w.iter().all(|&b| b == w[0])) {
            stuffing_violations += 1;
        }
    }

    // Golden frame: every single-bit corruption of the stuffed region must
    // be rejected by the decoder.
    let golden = DataFrame::data(fid(0x1A1), &[0x10, 0xC8, 0x42, 0x00]).expect("frame");
    let image = encode_frame(&golden);
    let mut undetected_flips = Vec::new();
    for index in 0..image.len() - UNSTUFFED_TAIL_BITS {
        let mut corrupted = image.clone();
        corrupted.flip(index);
        if decode_frame(&corrupted).is_ok() {
            undetected_flips.push(index);
        }
    }
    let elapsed = started.elapsed();

    let ok = roundtrip_failures == 0
        && stuffing_violations == 0
        && undetected_flips.is_empty()
        && elapsed < Duration::from_secs(10);
    verdict(
        3,
        "10000 random frames roundtrip exactly, stuffed regions never hold six \
         equal bits, every single-bit flip of a golden frame is rejected; \
         runtime under 10 s",
        ok,
        &format!(
            "roundtrip_failures={roundtrip_failures} stuffing_violations={stuffing_violations} \
             undetected_flips={undetected_flips:?} elapsed={elapsed:?}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 04: CRC-15 against an independent bit-serial shift register
// ---------------------------------------------------------------------------

/// Textbook serial CRC: shift one bit at a time through a 15-bit register
/// with polynomial 0x4599, no tables, no byte chunking.
fn crc15_bit_serial(bits: &BitStream) -> u16 {
    let mut crc: u16 = 0;
    for bit in bits.iter() {
        let din = u16::from(bit.logical());
        let crc_next = din ^ ((crc >> 14) & 1);
        crc = (crc << 1) & 0x7FFF;
        if crc_next == 1 {
            crc ^= 0x4599;
        }
    }
    crc
}

#[test]
fn criterion_04_crc_matches_bit_serial_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0419);
    let mut mismatches = 0u32;
    for _ in 0..10_000u32 {
        let len = rng.gen_range(0..=200usize);
        let mut bits = BitStream::with_capacity(len);
        for _ in 0..len {
            bits.push(Bit::from_logical(rng.gen_bool(0.5)));
        }
        if compute_crc15(&bits) != crc15_bit_serial(&bits) {
            mismatches += 1;
        }
    }
    verdict(
        4,
        "table-driven CRC-15 equals a bit-serial shift register on 10000 \
         random bit streams",
        mismatches == 0,
        &format!("{mismatches} mismatches"),
    );
}

// ---------------------------------------------------------------------------
// 05: priority-zero flood starves everything, recovery is immediate
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_flood_starves_bus_and_releases_instantly() {
    const FLOOD_STEPS: u64 = 10_000;

    let mut bus = VirtualBus::new();
    let victim = bus.attach(AcceptanceFilter::promiscuous());
    let _bystander = bus.attach(AcceptanceFilter::promiscuous());
    let mut attacker = Attacker::attach(&mut bus, 0x0520, 50_000);

    let victim_frame = DataFrame::data(fid(0x100), &[0xAA]).expect("frame");
    bus.queue_tx(victim, victim_frame).expect("queues");

    // Every flood frame is identical, so every flood slot has one length.
    let flood_frame = DataFrame::data(fid(0x000), &[]).expect("frame");
    let slot = encode_frame(&flood_frame).len() as Tick + INTERFRAME_BITS;
    let flood_end = FLOOD_STEPS * slot;
    attacker.schedule(Window::new(0, flood_end), AttackKind::Flood { id: fid(0x000) });

    let mut steps = 0u64;
    let mut nonzero_deliveries = 0u64;
    let mut flood_deliveries = 0u64;
    while bus.now() < flood_end {
        attacker.service(&mut bus);
        for event in bus.step() {
            if event.kind == BusEventKind::FrameDelivered {
                let id = event.frame.expect("frame").id().raw();
                if id == 0 {
                    flood_deliveries += 1;
                } else {
                    nonzero_deliveries += 1;
                }
            }
        }
        steps += 1;
    }

    // Window closed: one service pass retires the attacker's leftovers,
    // and the very next bus step must belong to the starved victim.
    attacker.service(&mut bus);
    let first_after = delivered(&bus.step());
    let victim_delivered_immediately =
        first_after.len() == 1 && first_after[0].1 == victim_frame;

    let ok = steps == FLOOD_STEPS
        && nonzero_deliveries == 0
        && flood_deliveries == FLOOD_STEPS
        && victim_delivered_immediately;
    verdict(
        5,
        "10000 flood steps at id 0x000 deliver nothing but the flood; the \
         victim frame lands exactly one step after the flood ends",
        ok,
        &format!(
            "steps={steps} nonzero={nonzero_deliveries} flood={flood_deliveries} \
             first_after={first_after:?}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 06: eavesdropping is lossless and invisible
// ---------------------------------------------------------------------------

fn quiet_run(seconds: f64) -> Vec<(Tick, DataFrame)> {
    let mut h = Harness::new(Topology::default_printer(), PlantConfig::default());
    h.printer.schedule_setup(
        ticks(0.5),
        ModuleKind::Hotend,
        Command::SetTargetTemp { celsius: 60.0 },
    );
    delivered(&h.run_until(ticks(seconds)))
}

#[test]
fn criterion_06_eavesdropping_is_lossless_and_invisible() {
    let seconds = 2.5;
    let baseline = quiet_run(seconds);

    let mut h = Harness::with_attacker(Topology::default_printer(), PlantConfig::default(), 6);
    h.printer.schedule_setup(
        ticks(0.5),
        ModuleKind::Hotend,
        Command::SetTargetTemp { celsius: 60.0 },
    );
    h.attacker
        .as_mut()
        .expect("attacker attached")
        .schedule(Window::new(0, ticks(seconds)), AttackKind::Eavesdrop);
    let spied = delivered(&h.run_until(ticks(seconds)));
    let log = h.attacker.as_ref().expect("attacker attached").log().records.clone();

    let ok = log == spied && spied == baseline;
    verdict(
        6,
        "the eavesdropper's traffic log equals the delivery sequence frame for \
         frame, and that sequence is identical to a run with no attacker",
        ok,
        &format!(
            "log={} spied={} baseline={} log==spied: {} spied==baseline: {}",
            log.len(),
            spied.len(),
            baseline.len(),
            log == spied,
            spied == baseline
        ),
    );
}

// ---------------------------------------------------------------------------
// 07: blocking the board's command id suppresses the halt and nothing else
// ---------------------------------------------------------------------------

struct HaltRun {
    delivered_by_id: BTreeMap<u16, u64>,
    destroyed_board_cmd_in_window: u64,
    delivered_board_cmd_in_window: u64,
    fault: bool,
    any_halted: bool,
}

fn halt_scenario(block: bool) -> HaltRun {
    let topology = Topology::default_printer();
    let board_cmd = topology.board().command_id;
    let window = (ticks(4.5), ticks(8.0));

    let mut h = if block {
        Harness::with_attacker(topology, PlantConfig::default(), 7)
    } else {
        Harness::new(topology, PlantConfig::default())
    };
    h.printer.schedule_setup(
        ticks(1.0),
        ModuleKind::Hotend,
        Command::SetTargetTemp { celsius: 60.0 },
    );
    h.printer.schedule_world_event(ticks(5.0), WorldEvent::PressKillSwitch);
    if let Some(attacker) = h.attacker.as_mut() {
        attacker.schedule(
            Window::new(window.0, window.1),
            AttackKind::Block { ids: vec![board_cmd] },
        );
    }
    let events = h.run_until(ticks(8.0));

    let mut delivered_by_id = BTreeMap::new();
    let mut destroyed_board_cmd_in_window = 0;
    let mut delivered_board_cmd_in_window = 0;
    for event in &events {
        match event.kind {
            BusEventKind::FrameDelivered => {
                let frame = event.frame.expect("frame");
                *delivered_by_id.entry(frame.id().raw()).or_insert(0) += 1;
                if frame.id() == board_cmd && event.time >= window.0 && event.time < window.1 {
                    delivered_board_cmd_in_window += 1;
                }
            }
            BusEventKind::FrameDestroyed => {
                if let Some(frame) = event.frame {
                    if frame.id() == board_cmd && event.time >= window.0 && event.time < window.1
                    {
                        destroyed_board_cmd_in_window += 1;
                    }
                }
            }
            _ => {}
        }
    }
    HaltRun {
        delivered_by_id,
        destroyed_board_cmd_in_window,
        delivered_board_cmd_in_window,
        fault: h.printer.board().fault,
        any_halted: h.printer.peripherals().iter().any(|p| p.halted),
    }
}

#[test]
fn criterion_07_blocking_the_halt_changes_nothing_else() {
    let baseline = halt_scenario(false);
    let blocked = halt_scenario(true);

    let attempts =
        blocked.destroyed_board_cmd_in_window + blocked.delivered_board_cmd_in_window;
    let destroyed_fraction = if attempts == 0 {
        0.0
    } else {
        blocked.destroyed_board_cmd_in_window as f64 / attempts as f64
    };

    // Delivery counts for every identifier except the blocked one must be
    // untouched by the attack.
    let board_cmd = Topology::default_printer().board().command_id.raw();
    let mut others_baseline = baseline.delivered_by_id.clone();
    others_baseline.remove(&board_cmd);
    let mut others_blocked = blocked.delivered_by_id.clone();
    others_blocked.remove(&board_cmd);

    let ok = attempts > 0
        && destroyed_fraction >= 0.99
        && blocked.delivered_board_cmd_in_window == 0
        && others_baseline == others_blocked
        && baseline.fault
        && blocked.fault
        && baseline.any_halted
        && !blocked.any_halted;
    verdict(
        7,
        "blocking the board's command identifier during the kill-switch \
         scenario destroys 100% of halt attempts and changes no other \
         identifier's delivery count",
        ok,
        &format!(
            "attempts={attempts} destroyed_fraction={destroyed_fraction:.3} \
             delivered_in_window={} others_equal={} fault(base/blocked)={}/{} \
             halted(base/blocked)={}/{}",
            blocked.delivered_board_cmd_in_window,
            others_baseline == others_blocked,
            baseline.fault,
            blocked.fault,
            baseline.any_halted,
            blocked.any_halted
        ),
    );
}

// ---------------------------------------------------------------------------
// 08: melt-and-hide, plain and with the air purifier disabled
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_melt_and_hide_scenarios_hold() {
    let plain = run_scenario(&load_scenario("melt_and_hide.scn")).expect("scenario runs");
    let overheated = assertion_row(&plain, "hotend.temp > 250");
    let displayed = assertion_row(&plain, "at 165.5 board.displayed_temp within 200 5");
    let no_fault = assertion_row(&plain, "at 165.5 board.fault == false");
    let fan_off = assertion_row(&plain, "hotend.fan == false");

    let filtered =
        run_scenario(&load_scenario("melt_hide_air_filter.scn")).expect("scenario runs");
    let filter_off = assertion_row(&filtered, "at end safety.air_filter == false");

    let ok = plain.passed
        && overheated.passed
        && displayed.passed
        && no_fault.passed
        && fan_off.passed
        && filtered.passed
        && filter_off.passed;
    verdict(
        8,
        "block + forged 280 C target + fan off drive the metal past 250 C while \
         a spoofed readback keeps the display in [195, 205] with no fault; the \
         air-purifier variant also ends with filtration off",
        ok,
        &format!(
            "plain={} overheated={} displayed={} no_fault={} fan_off={} \
             filtered={} filter_off={}",
            plain.passed,
            overheated.passed,
            displayed.passed,
            no_fault.passed,
            fan_off.passed,
            filtered.passed,
            filter_off.passed
        ),
    );
}

// ---------------------------------------------------------------------------
// 09: identifier inference from a boot capture
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_inferred_id_map_matches_ground_truth() {
    let mut h = Harness::with_attacker(Topology::default_printer(), PlantConfig::default(), 13);
    h.printer.schedule_setup(
        ticks(0.5),
        ModuleKind::Hotend,
        Command::SetTargetTemp { celsius: 60.0 },
    );
    h.attacker
        .as_mut()
        .expect("attacker attached")
        .schedule(Window::new(0, ticks(3.0)), AttackKind::Eavesdrop);
    h.run_until(ticks(3.0));

    let inferred =
        infer_id_map(h.attacker.as_ref().expect("attacker attached").log()).expect("inference");
    let truth = IdMap::ground_truth(h.printer.topology());
    let entries_match = inferred.entries == truth.entries;
    let all_certain =
        inferred.entries.values().all(|e| (e.confidence - 1.0).abs() < f64::EPSILON);

    verdict(
        9,
        "the identifier map inferred from a live boot capture equals ground \
         truth with confidence 1.0 on every entry",
        entries_match && all_certain,
        &format!(
            "entries_match={entries_match} all_certain={all_certain} \
             inferred={} truth={}",
            inferred.entries.len(),
            truth.entries.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 10: the CLI reproduces itself byte for byte
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_cli_runs_are_byte_identical() {
    let bin = env!("CARGO_BIN_EXE_printcan");
    let scenario = scenario_dir().join("temperature_spoof.scn");
    let out_dir = std::env::temp_dir().join(format!("printcan-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&out_dir).expect("temp dir");

    let run = |tag: &str| {
        let trace = out_dir.join(format!("trace-{tag}.log"));
        let report = out_dir.join(format!("report-{tag}.json"));
        let output = std::process::Command::new(bin)
            .arg("run")
            .arg(&scenario)
            .arg("--trace")
            .arg(&trace)
            .arg("--report")
            .arg(&report)
            .arg("--quiet")
            .output()
            .expect("binary runs");
        assert!(
            output.status.success(),
            "run {tag} failed:\n{}\n{}",
            String::from_utf8_lossy(&output.stdout),
            String::from_utf8_lossy(&output.stderr)
        );
        (
            std::fs::read(&trace).expect("trace file"),
            std::fs::read(&report).expect("report file"),
        )
    };

    let (trace_a, report_a) = run("a");
    let (trace_b, report_b) = run("b");
    let _ = std::fs::remove_dir_all(&out_dir);

    let traces_match = trace_a == trace_b;
    let reports_match = report_a == report_b;
    let nonempty = !trace_a.is_empty() && !report_a.is_empty();
    let report_passed = String::from_utf8_lossy(&report_a).contains("\"passed\": true");

    verdict(
        10,
        "two CLI runs of the same scenario and seed write byte-identical trace \
         and report files",
        traces_match && reports_match && nonempty && report_passed,
        &format!(
            "traces_match={traces_match} reports_match={reports_match} \
             trace_bytes={} report_bytes={} report_passed={report_passed}",
            trace_a.len(),
            report_a.len()
        ),
    );
}
