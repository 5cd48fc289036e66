#![no_main]

use functok::corpus::{parse_corpus, read_corpus, read_parsed_corpus};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: &str| {
    if let Ok(records) = read_corpus(input) {
        let (kept, report) = parse_corpus(&records, 1).unwrap();
        assert_eq!(report.retained + report.dropped, records.len());
        assert_eq!(kept.len(), report.retained);
    }
    let _ = read_parsed_corpus(input);
});
