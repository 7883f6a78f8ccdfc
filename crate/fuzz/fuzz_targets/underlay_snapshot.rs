#![no_main]

use libfuzzer_sys::fuzz_target;
use uip_core::underlay::{Underlay, UnderlaySnapshot};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let Ok(snap) = UnderlaySnapshot::from_json(s) else { return };
    if snap.nodes.len() > 4096 {
        return;
    }
    if let Ok(u) = Underlay::from_snapshot(&snap) {
        let again = u.snapshot().to_json();
        let back = Underlay::from_snapshot(&UnderlaySnapshot::from_json(&again).unwrap()).unwrap();
        assert_eq!(back.snapshot().to_json(), again);
    }
});
