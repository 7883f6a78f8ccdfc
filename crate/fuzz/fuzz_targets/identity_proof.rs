#![no_main]

use libfuzzer_sys::fuzz_target;
use uip_core::identity::{verify_identity_proof, IdentityProof, NodeId};

fuzz_target!(|data: &[u8]| {
    if let Some(p) = IdentityProof::decode(data) {
        assert_eq!(p.encode(), data);
        let id = NodeId::from_bytes(&[0u8; 32], 64).unwrap();
        let _ = verify_identity_proof(&id, &p);
    }
});
