#![no_main]

use libfuzzer_sys::fuzz_target;
use uip_core::scenario::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ScenarioConfig::from_json(s) {
        let _ = cfg.validate();
        let _ = cfg.echo();
    }
});
