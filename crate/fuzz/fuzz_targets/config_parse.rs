#![no_main]

use libfuzzer_sys::fuzz_target;
use msp_experiments::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::from_toml_str(text) {
        // Anything accepted must survive a round trip.
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).expect("round trip");
        assert_eq!(again, cfg);
    }
});
