#![no_main]

use libfuzzer_sys::fuzz_target;
use uip_core::identity::NodeId;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(id) = s.parse::<NodeId>() {
        let text = format!("{}:{}", id.bit_len(), id.to_hex());
        assert_eq!(text.parse::<NodeId>().unwrap(), id);
        assert_eq!(NodeId::from_bit_str(&id.bits_string()).unwrap(), id);
    }
    if let Ok(id) = NodeId::from_bit_str(s) {
        assert_eq!(id.bits_string(), s);
    }
});
