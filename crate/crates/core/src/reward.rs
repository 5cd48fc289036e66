//! Five-term composite reward.
//!
//! `total = λ_acc·r_acc + λ_func·r_func + λ_fmt·r_fmt − λ_len·p_len − λ_spam·p_spam`
//!
//! The functional-usage reward is gated on a correct answer, and both
//! penalties are piecewise-linear ramps that saturate at their caps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{ANSWER_CLOSE, ANSWER_OPEN};
use crate::vocab::{count_functional_surfaces, TokenId, Vocabulary};

/// Tolerance for numeric answer equivalence.
pub const NUMERIC_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub lambda_acc: f64,
    pub lambda_func: f64,
    pub lambda_fmt: f64,
    pub lambda_len: f64,
    pub lambda_spam: f64,
    pub l_max: usize,
    pub len_buffer: usize,
    pub len_penalty_cap: f64,
    pub tau_spam: usize,
    pub spam_penalty_cap: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda_acc: 1.0,
            lambda_func: 0.2,
            lambda_fmt: 0.1,
            lambda_len: 1.0,
            lambda_spam: 1.0,
            l_max: 512,
            len_buffer: 128,
            len_penalty_cap: 0.5,
            tau_spam: 8,
            spam_penalty_cap: 0.5,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_acc", self.lambda_acc),
            ("lambda_func", self.lambda_func),
            ("lambda_fmt", self.lambda_fmt),
            ("lambda_len", self.lambda_len),
            ("lambda_spam", self.lambda_spam),
            ("len_penalty_cap", self.len_penalty_cap),
            ("spam_penalty_cap", self.spam_penalty_cap),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        for (name, n) in [
            ("l_max", self.l_max),
            ("len_buffer", self.len_buffer),
            ("tau_spam", self.tau_spam),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Upper bound of `total` over all outputs.
    pub fn max_total(&self) -> f64 {
        self.lambda_acc + self.lambda_func + self.lambda_fmt
    }
}

/// What the reward sees of a sampled output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub rendered_text: String,
    pub n_func: usize,
    pub length: usize,
}

impl ModelOutput {
    pub fn from_tokens(vocab: &Vocabulary, tokens: &[TokenId]) -> Result<Self> {
        Ok(ModelOutput {
            rendered_text: vocab.decode(tokens)?,
            n_func: vocab.functional_positions(tokens)?.len(),
            length: tokens.len(),
        })
    }

    /// Counts whitespace tokens and functional surfaces in `text`.
    pub fn from_text(text: &str) -> Self {
        ModelOutput {
            rendered_text: text.to_string(),
            n_func: count_functional_surfaces(text),
            length: text.split_whitespace().count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: u8,
    pub r_func: u8,
    pub r_fmt: u8,
    pub p_len: f64,
    pub p_spam: f64,
    pub total: f64,
}

/// Body of the first `<answer>…</answer>` pair.
pub fn extract_answer(text: &str) -> Option<&str> {
    let open = text.find(ANSWER_OPEN)? + ANSWER_OPEN.len();
    let close = text[open..].find(ANSWER_CLOSE)?;
    Some(&text[open..open + close])
}

fn parse_integer(s: &str) -> Option<f64> {
    let digits = s.strip_prefix(['-', '+']).unwrap_or(s);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn parse_decimal(s: &str) -> Option<f64> {
    let body = s.strip_prefix(['-', '+']).unwrap_or(s);
    let (int, frac) = body.split_once('.')?;
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    let ok = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if !ok(int) || !ok(frac) {
        return None;
    }
    s.parse().ok()
}

/// Parses an integer, a decimal (`0.5`, `-.25`) or a fraction (`3/4`).
pub fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    let v = if let Some((num, den)) = s.split_once('/') {
        let num = parse_integer(num.trim())?;
        let den = parse_integer(den.trim())?;
        if den == 0.0 {
            return None;
        }
        num / den
    } else {
        parse_integer(s).or_else(|| parse_decimal(s))?
    };
    v.is_finite().then_some(v)
}

/// Answers are equal byte-for-byte after trimming, or numerically.
pub fn answers_match(answer: &str, gold: &str) -> bool {
    let (a, g) = (answer.trim(), gold.trim());
    if a == g {
        return true;
    }
    match (parse_number(a), parse_number(g)) {
        (Some(x), Some(y)) => (x - y).abs() <= NUMERIC_TOLERANCE,
        _ => false,
    }
}

pub fn check_accuracy(output: &ModelOutput, gold: &str) -> u8 {
    extract_answer(&output.rendered_text).is_some_and(|a| answers_match(a, gold)) as u8
}

/// Exactly one well-nested envelope with a non-blank body.
pub fn check_format(output: &ModelOutput) -> u8 {
    let text = &output.rendered_text;
    if text.matches(ANSWER_OPEN).count() != 1 || text.matches(ANSWER_CLOSE).count() != 1 {
        return 0;
    }
    extract_answer(text).is_some_and(|body| !body.trim().is_empty()) as u8
}

pub fn functional_usage_reward(n_func: usize, r_acc: u8) -> u8 {
    (n_func >= 1 && r_acc == 1) as u8
}

pub fn length_penalty(length: usize, cfg: &RewardConfig) -> f64 {
    if length <= cfg.l_max {
        return 0.0;
    }
    let ramp = cfg.len_penalty_cap * (length - cfg.l_max) as f64 / cfg.len_buffer as f64;
    ramp.min(cfg.len_penalty_cap)
}

pub fn spam_penalty(n_func: usize, cfg: &RewardConfig) -> f64 {
    if n_func <= cfg.tau_spam {
        return 0.0;
    }
    let ramp = cfg.spam_penalty_cap * (n_func - cfg.tau_spam) as f64 / cfg.tau_spam as f64;
    ramp.min(cfg.spam_penalty_cap)
}

pub fn composite_reward(output: &ModelOutput, gold: &str, cfg: &RewardConfig) -> RewardBreakdown {
    let r_acc = check_accuracy(output, gold);
    let r_func = functional_usage_reward(output.n_func, r_acc);
    let r_fmt = check_format(output);
    let p_len = length_penalty(output.length, cfg);
    let p_spam = spam_penalty(output.n_func, cfg);
    let total = cfg.lambda_acc * r_acc as f64
        + cfg.lambda_func * r_func as f64
        + cfg.lambda_fmt * r_fmt as f64
        - cfg.lambda_len * p_len
        - cfg.lambda_spam * p_spam;
    RewardBreakdown {
        r_acc,
        r_func,
        r_fmt,
        p_len,
        p_spam,
        total,
    }
}
