#![no_main]

use functok::corpus::{map_operation, scan_snippet};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|code: &str| {
    let ops = scan_snippet(code);
    let mut end = 0;
    for op in &ops {
        let (s, e) = op.source_span;
        assert!(end <= s && s < e && e <= code.len());
        assert!(code.is_char_boundary(s) && code.is_char_boundary(e));
        assert_eq!(map_operation(&op.pattern_id).unwrap(), op.mapped_kind);
        end = e;
    }
    assert_eq!(ops, scan_snippet(code));
});
