#![no_main]

use latent_bandit::dump::{read_environment, write_environment};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(bundle) = read_environment(text) {
        let clusters = bundle.clusters.as_ref().map(|(m, r)| (m, *r));
        let written = write_environment(&bundle.env, clusters);
        let again = read_environment(&written).expect("written dump parses");
        assert_eq!(again, bundle);
    }
});
