#![no_main]

use latent_bandit::dump::{read_agent, write_agent};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(agent) = read_agent(text) {
        let written = write_agent(&agent);
        let again = read_agent(&written).expect("written checkpoint parses");
        assert_eq!(write_agent(&again), written);
    }
});
