#![no_main]

use histmatch::gp::GpEmulator;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(em) = GpEmulator::from_bytes(data) {
        // a decoded emulator must predict and re-encode to the same bytes
        let x = em.training().inputs()[0].clone();
        let _ = em.predict(&x);
        assert_eq!(em.to_bytes(), data);
    }
});
