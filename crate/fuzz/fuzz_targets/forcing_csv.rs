#![no_main]

use histmatch::models::rrm::read_hydrology_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((forcing, flow)) = read_hydrology_csv(data) {
        if let Some(flow) = flow {
            assert_eq!(flow.len(), forcing.len());
        }
    }
});
