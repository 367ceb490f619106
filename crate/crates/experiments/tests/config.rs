use msp_experiments::config::{
    BiasSettings, ExperimentConfig, MonteCarloSettings, Observation, OptimizerSettings, SystemSpec,
};
use msp_experiments::ExperimentKind;
use proptest::prelude::*;

fn system() -> impl Strategy<Value = SystemSpec> {
    prop_oneof![
        (-0.9f64..0.9, proptest::option::of((-2.0f64..2.0, -2.0f64..2.0)))
            .prop_map(|(a, m)| SystemSpec::Benchmark { a, input_map: m.map(|(x, y)| [x, y]) }),
        Just(SystemSpec::Jordan),
        (-0.5f64..0.5, proptest::option::of(0.0f64..1.0)).prop_map(|(a, dv)| SystemSpec::Matrices {
            a: vec![vec![a, 0.1], vec![0.0, a]],
            b: None,
            b_w: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            c: vec![vec![1.0, 0.0]],
            d_v: dv.map(|d| vec![vec![d]]),
        }),
        (0.0f64..0.99, 0.0f64..0.99, 0.0f64..1.0, 0.0f64..1.0, any::<bool>()).prop_map(
            |(mu, lambda, sigma_w, sigma_v, full)| SystemSpec::Koopman {
                mu,
                lambda,
                sigma_w,
                sigma_v,
                observe: if full { Observation::Full } else { Observation::Q },
            }
        ),
    ]
}

fn config() -> impl Strategy<Value = ExperimentConfig> {
    (
        prop::sample::select(ExperimentKind::ALL.to_vec()),
        any::<u64>(),
        1usize..5000,
        prop::collection::btree_set(1usize..10_000, 1..6),
        prop::collection::btree_set(1usize..40, 1..4),
        system(),
        (1e-4f64..1.0, 1usize..100_000, proptest::option::of(1usize..64), 1.0f64..1e6),
    )
        .prop_map(|(kind, seed, replicas, sizes, horizons, system, (step, iters, workers, clip))| {
            ExperimentConfig {
                kind,
                seed,
                replicas,
                dataset_sizes: sizes.into_iter().collect(),
                horizons: horizons.into_iter().collect(),
                clip,
                output: None,
                workers,
                system,
                optimizer: OptimizerSettings {
                    step_size: step,
                    max_iters: iters,
                    ..OptimizerSettings::default()
                },
                monte_carlo: MonteCarloSettings::default(),
                bias: BiasSettings::default(),
            }
        })
}

proptest! {
    #[test]
    fn serialization_round_trips(cfg in config()) {
        let text = cfg.to_toml_string();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_toml_string(), text);
    }

    #[test]
    fn parsing_never_panics(text in "\\PC{0,200}") {
        let _ = ExperimentConfig::from_toml_str(&text);
    }
}

#[test]
fn shipped_configs_validate() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for dir in [root.clone(), root.join("acceptance")] {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                ExperimentConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                seen += 1;
            }
        }
    }
    assert!(seen >= 20);
}
