#![no_main]

use functok::harness::cli::{read_output_lines, score_lines};
use functok::reward::RewardConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: &str| {
    if let Ok(lines) = read_output_lines(input) {
        if let Ok(scores) = score_lines(&lines, &RewardConfig::default()) {
            assert_eq!(scores.len(), lines.len());
        }
    }
});
