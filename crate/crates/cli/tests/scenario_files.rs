use std::path::PathBuf;

use hmpcc_cli::{CliError, ScenarioFile};
use hmpcc_core::dynamics::DynamicsModel;
use proptest::prelude::*;

fn shipped(name: &str) -> ScenarioFile {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name);
    ScenarioFile::load(&path).unwrap()
}

const SHIPPED: [&str; 3] = ["convex_di.toml", "wall_gap.toml", "crowd_unicycle.toml"];

#[test]
fn convex_sample_has_six_double_integrators() {
    let file = shipped("convex_di.toml");
    for seed in 1..=10 {
        let s = file.resolve(seed).unwrap();
        assert_eq!(s.model, DynamicsModel::DoubleIntegrator);
        assert_eq!(s.robots.len(), 6);
        assert!(s.humans.is_empty());
        assert_eq!(s.steps(), 100);
    }
}

#[test]
fn every_shipped_scenario_resolves() {
    for name in SHIPPED {
        let file = shipped(name);
        for &seed in &file.run.seeds {
            file.resolve(seed)
                .unwrap_or_else(|e| panic!("{name} seed {seed}: {e}"));
        }
    }
}

#[test]
fn empty_file_is_a_parse_error() {
    let err = ScenarioFile::parse("").unwrap_err();
    assert!(matches!(err, CliError::Parse(_)), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn duplicate_key_is_named() {
    let text =
        shipped("convex_di.toml")
            .to_toml()
            .replacen("[robots]\n", "[robots]\ncount = 3\n", 1);
    let err = ScenarioFile::parse(&text).unwrap_err().to_string();
    assert!(err.contains("count"), "{err}");
}

#[test]
fn conflicting_sections_are_invalid() {
    let text = shipped("convex_di.toml").to_toml().replacen(
        "[robots]\n",
        "[robots]\nstates = [[1.0, 1.0, 0.0, 0.0]]\n",
        1,
    );
    let err = ScenarioFile::parse(&text).unwrap_err();
    assert!(matches!(err, CliError::Invalid(_)), "{err}");
}

#[test]
fn bad_values_are_invalid() {
    let base = shipped("convex_di.toml").to_toml();
    for (from, to) in [
        ("alpha = 0.1", "alpha = 1.5"),
        ("horizon = 10", "horizon = 0"),
    ] {
        assert!(base.contains(from), "{from}");
        let err = ScenarioFile::parse(&base.replacen(from, to, 1)).unwrap_err();
        assert!(matches!(err, CliError::Invalid(_)), "{to}: {err}");
    }
}

fn round_trip(file: &ScenarioFile, seed: u64) {
    let s = file.resolve(seed).unwrap();
    let text = ScenarioFile::from_scenario(&s).to_toml();
    let back = ScenarioFile::parse(&text).unwrap().resolve(seed).unwrap();
    assert_eq!(back, s, "{text}");
}

#[test]
fn shipped_scenarios_round_trip() {
    for name in SHIPPED {
        let file = shipped(name);
        for seed in 1..=3 {
            round_trip(&file, seed);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn randomized_scenarios_round_trip(
        which in 0usize..3,
        seed in 0u64..1000,
        horizon in 1usize..20,
        alpha in 0.01f64..0.5,
        duration in 0.5f64..20.0,
        humans in 0usize..5,
    ) {
        let mut file = shipped(SHIPPED[which]);
        file.controller.mpc.horizon = horizon;
        file.controller.mpc.alpha = alpha;
        file.run.duration = duration;
        file.humans.agents.clear();
        file.humans.count = humans;
        round_trip(&file, seed);
    }
}
