//! Replays the checked-in fuzz corpus through the parser entry points on
//! stable, with the same round-trip assertions the fuzz targets make.

use std::path::Path;

use msp_experiments::records::{read_csv, write_csv};
use msp_experiments::ExperimentConfig;

fn corpus(target: &str) -> Vec<Vec<u8>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut seeds: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| std::fs::read(e.unwrap().path()).unwrap())
        .collect();
    seeds.sort();
    assert!(!seeds.is_empty());
    seeds
}

#[test]
fn config_seeds_parse_and_round_trip() {
    for seed in corpus("config_parse") {
        let cfg = ExperimentConfig::from_toml_str(std::str::from_utf8(&seed).unwrap()).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }
}

#[test]
fn record_seeds_parse_and_round_trip() {
    for seed in corpus("records_parse") {
        let records = read_csv(seed.as_slice()).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &records).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), records);
    }
}
