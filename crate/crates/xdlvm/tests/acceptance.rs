//! One test per acceptance criterion. Each prints a single PASS or FAIL
//! line (visible under --nocapture) and fails the build on any miss.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use xdlvm::platform::{
    classify_rgb, observation_space_size, LiquidSample, Platform, Vessel, VesselRole, Volume,
};
use xdlvm::runtime::TraceSink;
use xdlvm::turing::fixtures::{
    adder_initial, adder_sum, binary_adder, busy_beaver_3, busy_beaver_initial,
};
use xdlvm::turing::{
    oracle_run, oracle_trace, run_compiled, AlphabetSymbol, Move, OracleEnd, TmConfiguration,
    TmRule, TmSpec,
};
use xdlvm::{check, parse_document, ColourClass, ExecutionConfig};

fn criterion(number: u32, what: &str, body: impl FnOnce() + std::panic::UnwindSafe) {
    match std::panic::catch_unwind(body) {
        Ok(()) => println!("criterion {number}: PASS - {what}"),
        Err(payload) => {
            println!("criterion {number}: FAIL - {what}");
            std::panic::resume_unwind(payload);
        }
    }
}

fn generous() -> ExecutionConfig {
    ExecutionConfig {
        max_steps: 50_000,
        ..ExecutionConfig::default()
    }
}

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn criterion_1_adder_end_to_end() {
    criterion(1, "5 + 3 on the compiled adder leaves 00001000 and halts", || {
        let spec = binary_adder();
        let run = run_compiled(&spec, &adder_initial(5, 3), &generous()).unwrap();
        assert!(run.halted, "adder should halt");
        assert!(!run.errored && !run.capped);
        assert_eq!(run.final_config.tape_string(), "00001000");
        assert_eq!(run.final_config.state, spec.halt);
    });
}

#[test]
fn criterion_2_adder_exhaustive() {
    criterion(2, "all 64 three-bit additions come out right", || {
        let spec = binary_adder();
        let config = ExecutionConfig {
            max_steps: 50_000,
            trace_sink: TraceSink::Discard,
        };
        for a in 0..=7u8 {
            for b in 0..=7u8 {
                let run = run_compiled(&spec, &adder_initial(a, b), &config).unwrap();
                assert!(!run.capped, "({a},{b}) ran out of budget");
                if a == 0 && b == 0 {
                    // Nothing to add and no sum bit to stop the purge on:
                    // the machine walks off the right end and the bounds
                    // guard raises ERROR over an already-correct tape.
                    assert!(run.errored, "(0,0) should end on the bounds guard");
                } else {
                    assert!(run.halted, "({a},{b}) should halt");
                }
                let sum = adder_sum(&run.final_config.tape)
                    .unwrap_or_else(|| panic!("({a},{b}) left junk outside the sum cells"));
                assert_eq!(sum, (a + b) as u32, "({a},{b})");
            }
        }
    });
}

#[test]
fn criterion_3_busy_beaver() {
    criterion(3, "the three-state busy beaver writes six marks in 14 transitions", || {
        let spec = busy_beaver_3();
        let initial = busy_beaver_initial();
        let run = run_compiled(&spec, &initial, &generous()).unwrap();
        let oracle = oracle_run(&spec, &initial, 1_000).unwrap();
        assert!(run.halted && oracle.halted);
        assert_eq!(run.final_config, oracle.final_config);
        assert_eq!(oracle.transitions, 14);
        assert_eq!(run.configs.len() as u64 - 1, oracle.transitions);
        let tape = run.final_config.tape_string();
        let longest_run = tape
            .split('0')
            .map(|chunk| chunk.len())
            .max()
            .unwrap_or(0);
        assert_eq!(longest_run, 6, "tape {tape}");
        assert!(tape.contains("111111"));
    });
}

/// Seeded 2- or 3-state binary machine with a roughly 90% dense rule
/// table; about a fifth of the transitions jump straight to halt.
fn random_machine(seed: u64) -> TmSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state_count = rng.gen_range(2..=3usize);
    let states: Vec<String> = ["A", "B", "C"][..state_count]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let symbols = ["0", "1"];
    let mut rules = Vec::new();
    for state in &states {
        for read in symbols {
            if rng.gen_bool(0.9) {
                let next = if rng.gen_bool(0.2) {
                    "H".to_string()
                } else {
                    states[rng.gen_range(0..state_count)].clone()
                };
                rules.push(TmRule {
                    state: state.clone(),
                    read: read.to_string(),
                    write: symbols[rng.gen_range(0..2)].to_string(),
                    direction: if rng.gen_bool(0.5) { Move::L } else { Move::R },
                    next,
                });
            }
        }
    }
    TmSpec {
        states,
        halt: "H".to_string(),
        alphabet: vec![
            AlphabetSymbol {
                symbol: "0".to_string(),
                colour: ColourClass::White,
            },
            AlphabetSymbol {
                symbol: "1".to_string(),
                colour: ColourClass::Orange,
            },
        ],
        blank: "0".to_string(),
        rules,
        initial_state: "A".to_string(),
        initial_head: rng.gen_range(1..=8),
    }
}

/// Compares a compiled run against the reference interpreter: the decoded
/// deck must match the oracle configuration for configuration, and when
/// both sides ended on their own the endings must agree.
fn assert_tracks_oracle(label: &str, spec: &TmSpec, initial: &TmConfiguration) {
    let (oracle_configs, end) = oracle_trace(spec, initial, 100);
    let config = ExecutionConfig {
        max_steps: 12_000,
        trace_sink: TraceSink::Memory,
    };
    let run = run_compiled(spec, initial, &config)
        .unwrap_or_else(|e| panic!("{label}: compiled run failed: {e}"));
    let shared = oracle_configs.len().min(run.configs.len());
    for (step, (ours, theirs)) in run.configs[..shared]
        .iter()
        .zip(&oracle_configs[..shared])
        .enumerate()
    {
        assert_eq!(ours, theirs, "{label}: configurations diverge at step {step}");
    }
    match end {
        OracleEnd::Halted => {
            assert!(run.halted, "{label}: oracle halted, deck did not");
            assert_eq!(run.configs.len(), oracle_configs.len(), "{label}");
        }
        OracleEnd::Failed(_) => {
            assert!(run.errored, "{label}: oracle jammed, deck did not");
            assert_eq!(run.configs.len(), oracle_configs.len(), "{label}");
        }
        OracleEnd::CapReached => {
            assert!(
                run.configs.len() >= oracle_configs.len() || run.capped,
                "{label}: deck stopped early with no cap"
            );
        }
    }
}

#[test]
fn criterion_4_oracle_equivalence() {
    criterion(4, "compiled decks track the reference interpreter step for step", || {
        assert_tracks_oracle("busy_beaver_3", &busy_beaver_3(), &busy_beaver_initial());
        assert_tracks_oracle("binary_adder", &binary_adder(), &adder_initial(5, 3));
        for seed in 0..50u64 {
            let spec = random_machine(seed);
            let initial = spec.blank_configuration(8);
            assert_tracks_oracle(&format!("random machine {seed}"), &spec, &initial);
        }
    });
}

#[test]
fn criterion_5_conditional_execution() {
    criterion(5, "the quench branch runs on red and is skipped on clear", || {
        let dir = fixtures_dir();
        let doc_text = std::fs::read_to_string(dir.join("quench.xdl")).unwrap();
        let doc = parse_document(&doc_text).unwrap();
        let run_on = |platform_file: &str| {
            let text = std::fs::read_to_string(dir.join(platform_file)).unwrap();
            let mut platform = xdlvm::platform::platform_from_json(&text).unwrap();
            assert!(check(&doc, &platform).is_empty(), "{platform_file}");
            xdlvm::run(&doc, &mut platform, &ExecutionConfig::default()).unwrap()
        };
        let executed = |trace: &xdlvm::Trace, name: &str| -> Vec<bool> {
            trace
                .events
                .iter()
                .filter(|e| e.step_name == name)
                .map(|e| e.executed)
                .collect()
        };

        let red = run_on("quench_red.json").trace;
        assert_eq!(executed(&red, "Quench"), vec![true]);
        assert_eq!(executed(&red, "Transfer"), vec![true, false], "red: quench pours, collection skipped");

        let clear = run_on("quench_clear.json").trace;
        assert_eq!(executed(&clear, "Quench"), vec![false]);
        assert_eq!(executed(&clear, "Transfer"), vec![true], "clear: only the collection transfer");
        assert_eq!(clear.events.iter().filter(|e| e.step_name == "Stir").count(), 0);
    });
}

#[test]
fn criterion_6_observation_space() {
    criterion(6, "8 head positions and 10 five-way vials give 78,125,000 states", || {
        assert_eq!(observation_space_size(8, 10, 5).unwrap(), 78_125_000);
    });
}

#[test]
fn criterion_7_noise_robustness() {
    criterion(7, "sigma 15 misreads a pure colour at most once in 10,000 looks", || {
        let mut platform = Platform::new(15.0, 0x5EED);
        let pure = [
            ColourClass::White,
            ColourClass::Orange,
            ColourClass::Blue,
            ColourClass::Green,
        ];
        for colour in pure {
            let rgb = colour.reference_rgb().unwrap();
            assert_eq!(classify_rgb(rgb), colour);
            let mut vessel = Vessel::new(format!("pure_{}", colour.name()), VesselRole::Generic, None);
            vessel
                .contents
                .push(LiquidSample::new(colour.name(), Volume::from_ml(5.0).unwrap(), rgb));
            platform.add_vessel(vessel).unwrap();
        }
        for colour in pure {
            let id = format!("pure_{}", colour.name());
            let mut wrong = 0u32;
            let mut refused = 0u32;
            for _ in 0..10_000 {
                match platform.observe_colour(&id).unwrap() {
                    c if c == colour => {}
                    ColourClass::Unknown => refused += 1,
                    _ => wrong += 1,
                }
            }
            assert!(wrong <= 1, "{id} misread {wrong} times");
            // A refusal is not a wrong answer, but it should stay rare.
            assert!(refused < 200, "{id} refused {refused} times");
        }
    });
}

fn transfer_platform(seed: u64) -> Platform {
    let mut platform = Platform::new(4.0, seed);
    let cap = Some(Volume::from_ml(40.0).unwrap());
    for id in ["a", "b", "c"] {
        platform.add_vessel(Vessel::new(id, VesselRole::Generic, cap)).unwrap();
    }
    let mut primed = Vessel::new("d", VesselRole::Generic, cap);
    primed.contents.push(LiquidSample::new(
        "starter",
        Volume::from_ml(12.0).unwrap(),
        [230, 140, 30],
    ));
    platform.add_vessel(primed).unwrap();
    platform.add_vessel(Vessel::new("waste", VesselRole::Waste, None)).unwrap();
    for colour in [ColourClass::Orange, ColourClass::Blue] {
        let mut stock = Vessel::new(
            format!("stock_{}", colour.name()),
            VesselRole::Stock(colour),
            None,
        );
        stock.contents.push(LiquidSample::new(
            colour.name(),
            Volume::from_ml(10.0).unwrap(),
            colour.reference_rgb().unwrap(),
        ));
        platform.add_vessel(stock).unwrap();
    }
    platform
}

fn held_microlitres(platform: &Platform) -> u64 {
    platform
        .vessels()
        .filter(|v| !matches!(v.role, VesselRole::Stock(_)))
        .map(|v| v.total_volume().as_microlitres())
        .sum()
}

/// Runs one seeded script of transfers and observations; refusals (over
/// capacity, empty source, pouring into a stock) leave the deck alone.
fn transfer_script(seed: u64) -> (Platform, Vec<ColourClass>, u32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut platform = transfer_platform(seed);
    let ids = ["a", "b", "c", "d", "waste", "stock_orange", "stock_blue"];
    let mut readings = Vec::new();
    let mut refused = 0u32;
    for _ in 0..40 {
        let from = ids[rng.gen_range(0..ids.len())];
        let to = ids[rng.gen_range(0..ids.len())];
        let microlitres = rng.gen_range(1..=3_000u64);
        let volume = Volume::from_ml(microlitres as f64 / 1000.0).unwrap();
        if from == to || platform.transfer(from, to, volume).is_err() {
            refused += 1;
        }
        if rng.gen_bool(0.5) {
            readings.push(platform.observe_colour("d").unwrap());
        }
    }
    (platform, readings, refused)
}

#[test]
fn criterion_8_conservation_and_determinism() {
    criterion(8, "transfers never create or lose a microlitre and replay bit for bit", || {
        for seed in 0..100u64 {
            let initial_held = held_microlitres(&transfer_platform(seed));
            let (platform, readings, _) = transfer_script(seed);
            let dispensed: u64 = platform.dispensed().values().map(|v| v.as_microlitres()).sum();
            assert_eq!(
                held_microlitres(&platform),
                initial_held + dispensed,
                "seed {seed} drifted"
            );
            let (replay, replay_readings, _) = transfer_script(seed);
            assert_eq!(platform, replay, "seed {seed} replay diverged");
            assert_eq!(readings, replay_readings, "seed {seed} readings diverged");
        }
    });
}

#[test]
fn criterion_9_non_termination_guard() {
    criterion(9, "a runaway machine trips the bounds guard instead of spinning", || {
        let spec = TmSpec {
            states: vec!["A".to_string()],
            halt: "H".to_string(),
            alphabet: vec![
                AlphabetSymbol {
                    symbol: "0".to_string(),
                    colour: ColourClass::White,
                },
                AlphabetSymbol {
                    symbol: "1".to_string(),
                    colour: ColourClass::Orange,
                },
            ],
            blank: "0".to_string(),
            rules: vec![TmRule {
                state: "A".to_string(),
                read: "0".to_string(),
                write: "0".to_string(),
                direction: Move::R,
                next: "A".to_string(),
            }],
            initial_state: "A".to_string(),
            initial_head: 1,
        };
        let run = run_compiled(&spec, &spec.blank_configuration(4), &generous()).unwrap();
        assert!(run.errored, "bounds guard should raise ERROR");
        assert!(!run.halted && !run.capped);
        assert_eq!(run.configs.len(), 4, "three moves fit on four cells");

        // With room to keep walking, the reference interpreter just runs
        // into the cap and reports an unfinished machine.
        let roomy = spec.blank_configuration(200);
        let outcome = oracle_run(&spec, &roomy, 100).unwrap();
        assert!(!outcome.halted);
        assert_eq!(outcome.transitions, 100);
    });
}
