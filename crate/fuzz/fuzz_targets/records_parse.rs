#![no_main]

use libfuzzer_sys::fuzz_target;
use msp_experiments::records::{read_csv, write_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = read_csv(data) {
        let mut buf = Vec::new();
        write_csv(&mut buf, &records).expect("in-memory write");
        let again = read_csv(buf.as_slice()).expect("re-read");
        assert_eq!(again.len(), records.len());
    }
});
