#![no_main]

use libfuzzer_sys::fuzz_target;
use waldorf::pipeline::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        let back = RunConfig::parse(&cfg.render()).expect("rendered config parses");
        assert_eq!(back.render(), cfg.render());
    }
});
