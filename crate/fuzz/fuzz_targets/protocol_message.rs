#![no_main]

use libfuzzer_sys::fuzz_target;
use uip_core::routing::ProtocolMessage;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(m) = ProtocolMessage::from_json(s) {
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(ProtocolMessage::from_json(&text).unwrap(), m);
    }
});
