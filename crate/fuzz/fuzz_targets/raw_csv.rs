#![no_main]

use latent_bandit::report::{aggregate, parse_raw, write_agg, write_raw};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rows) = parse_raw(text) {
        assert_eq!(parse_raw(&write_raw(&rows)).expect("written CSV parses"), rows);
        let _ = write_agg(&aggregate(&rows));
    }
});
