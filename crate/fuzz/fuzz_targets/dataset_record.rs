#![no_main]

use functok::trajectory::read_dataset;
use functok::vocab::scan_functional_surfaces;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: &str| {
    if let Ok(records) = read_dataset(input) {
        for r in records {
            assert_eq!(scan_functional_surfaces(&r.trajectory_text), r.functional_kinds);
        }
    }
});
