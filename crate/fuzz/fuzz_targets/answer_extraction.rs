#![no_main]

use functok::reward::{
    answers_match, check_format, composite_reward, extract_answer, parse_number, ModelOutput,
    RewardConfig,
};
use libfuzzer_sys::fuzz_target;

// Input is `text NUL gold`.
fuzz_target!(|input: &str| {
    let (text, gold) = input.split_once('\0').unwrap_or((input, ""));
    if let Some(v) = parse_number(gold) {
        assert!(v.is_finite());
    }
    let out = ModelOutput::from_text(text);
    let b = composite_reward(&out, gold, &RewardConfig::default());
    assert!(b.total.is_finite());
    if b.r_func == 1 {
        assert_eq!(b.r_acc, 1);
    }
    if check_format(&out) == 1 {
        assert!(extract_answer(text).is_some());
    }
    if let Some(a) = extract_answer(text) {
        assert_eq!(b.r_acc == 1, answers_match(a, gold));
    }
});
