#![no_main]

use libfuzzer_sys::fuzz_target;
use uip_core::underlay::WorldEvent;

fuzz_target!(|data: &[u8]| {
    if let Ok(ev) = serde_json::from_slice::<WorldEvent>(data) {
        let text = serde_json::to_string(&ev).unwrap();
        assert_eq!(serde_json::from_str::<WorldEvent>(&text).unwrap(), ev);
    }
});
