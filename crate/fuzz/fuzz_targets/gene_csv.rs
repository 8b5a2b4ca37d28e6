#![no_main]

use histmatch::models::gene::GeneData;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = GeneData::read_csv(data);
});
