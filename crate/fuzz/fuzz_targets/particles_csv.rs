#![no_main]

use histmatch::io::{read_particles_csv, read_training_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((names, rows)) = read_particles_csv(data) {
        assert!(rows.iter().all(|r| r.len() == names.len()));
    }
    let _ = read_training_csv(data);
});
