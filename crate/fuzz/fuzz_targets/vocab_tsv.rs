#![no_main]

use functok::Vocabulary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: &str| {
    if let Ok(v) = Vocabulary::from_tsv(input) {
        let again = Vocabulary::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(again, v);
    }
});
