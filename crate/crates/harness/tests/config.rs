//! Config parsing and validation.

use std::path::Path;

use proptest::prelude::*;
use tvsaddle_harness::config::{ExperimentConfig, ModeName};
use tvsaddle_harness::HarnessError;

const BASE: &str = r#"
scenario = "quad-toy"

[sweep]
rates = [0.01, 0.02, 0.04]
modes = ["plain", "compensated"]
seeds = 2

[integrator]
kappa = 2.0
dt = 0.005
horizon_scaled = 2.0

[output]
dir = "out"
"#;

fn parse(text: &str) -> Result<ExperimentConfig, HarnessError> {
    ExperimentConfig::parse(text, Path::new("/tmp/configs"))
}

#[test]
fn base_config_parses_with_defaults() {
    let cfg = parse(BASE).unwrap();
    assert_eq!(cfg.sweep.modes, vec![ModeName::Plain, ModeName::Compensated]);
    assert_eq!(cfg.integrator.stride, 1);
    assert_eq!(cfg.channel.noise_refinement, 1);
    assert_eq!(cfg.output_dir(), Path::new("/tmp/configs/out"));
    assert_eq!(cfg.horizon(0.02), 100.0);
    assert_eq!(cfg.noise_substeps(0.04), 4);
}

#[test]
fn unknown_key_reports_line_and_column() {
    let text = BASE.replace("seeds = 2", "seeds = 2\nsedes = 3");
    match parse(&text) {
        Err(HarnessError::Config { line, column, .. }) => {
            assert_eq!(line, 8);
            assert_eq!(column, 1);
        }
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn invalid_combinations_are_rejected() {
    let cases = [
        BASE.replace("rates = [0.01, 0.02, 0.04]", "rates = []"),
        BASE.replace("seeds = 2", "seeds = 0"),
        BASE.replace("horizon_scaled = 2.0", "horizon_scaled = 2.0\nhorizon = 1.0"),
        BASE.replace("horizon_scaled = 2.0", ""),
        BASE.replace("dt = 0.005", "dt = 0.05"),
        BASE.replace("rates = [0.01, 0.02, 0.04]", "rates = [0.01, 0.015]"),
        BASE.replace("scenario = \"quad-toy\"", "scenario = \"num-multinode\""),
    ];
    for text in cases {
        let err = parse(&text).unwrap_err();
        assert!(err.is_config(), "{err}");
    }
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["quad_toy.toml", "num_3node.toml", "jamming_2x2.toml", "num_multinode.toml"] {
        let cfg = ExperimentConfig::load(&dir.join(name)).unwrap();
        let scenario = cfg.build_scenario().unwrap();
        for a in &cfg.sweep.rates {
            cfg.channel(&scenario, *a).unwrap();
        }
    }
}

proptest! {
    #[test]
    fn discretization_limit_is_enforced(dt in 1e-4f64..0.05, kappa in 0.1f64..5.0) {
        let text = BASE
            .replace("dt = 0.005", &format!("dt = {dt:?}"))
            .replace("kappa = 2.0", &format!("kappa = {kappa:?}"));
        let ok = dt * kappa.max(0.04) <= 1e-2;
        prop_assert_eq!(parse(&text).is_ok(), ok);
    }

    #[test]
    fn non_positive_rates_are_rejected(a in -1.0f64..=0.0) {
        let text = BASE.replace("rates = [0.01, 0.02, 0.04]", &format!("rates = [{a:?}]"));
        prop_assert!(parse(&text).is_err());
    }
}
