#![no_main]

use functok::policy::PolicyParameters;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: &str| {
    if let Ok(p) = PolicyParameters::from_checkpoint(input) {
        let again = PolicyParameters::from_checkpoint(&p.to_checkpoint()).unwrap();
        assert_eq!(again, p);
    }
});
