//! Bigram softmax token policy.
//!
//! The policy is a dense `|V|×|V|` logit table; row `u` holds the logits of
//! the next token given that the previous token was `u`. Log-probabilities
//! are computed with max-subtracted log-sum-exp, and gradients of weighted
//! log-likelihoods are exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Anything that can produce a next-token distribution from the previous token.
pub trait TokenPolicy {
    fn vocab_size(&self) -> usize;
    fn next_token_distribution(&self, prev: TokenId) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    vocab_size: usize,
    bos: TokenId,
    logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLogProb {
    pub total: f64,
    pub per_token: Vec<f64>,
}

impl SequenceLogProb {
    pub fn from_per_token(per_token: Vec<f64>) -> Self {
        SequenceLogProb {
            total: per_token.iter().sum(),
            per_token,
        }
    }
}

/// Gradient with respect to the logit table.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient {
    vocab_size: usize,
    d_logits: Vec<f64>,
}

impl PolicyGradient {
    pub fn zeros(vocab_size: usize) -> Self {
        PolicyGradient {
            vocab_size,
            d_logits: vec![0.0; vocab_size * vocab_size],
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn from_entries(vocab_size: usize, d_logits: Vec<f64>) -> Result<Self> {
        if d_logits.len() != vocab_size * vocab_size {
            return Err(Error::LengthMismatch {
                what: "gradient table",
                expected: vocab_size * vocab_size,
                got: d_logits.len(),
            });
        }
        Ok(PolicyGradient {
            vocab_size,
            d_logits,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.d_logits[row * self.vocab_size + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d_logits
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &PolicyGradient, scale: f64) {
        debug_assert_eq!(self.vocab_size, other.vocab_size);
        for (a, b) in self.d_logits.iter_mut().zip(&other.d_logits) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.d_logits.iter_mut().for_each(|x| *x *= s);
    }

    pub fn l1_norm(&self) -> f64 {
        self.d_logits.iter().map(|x| x.abs()).sum()
    }

    /// L1 mass of the given columns.
    pub fn column_l1(&self, cols: impl IntoIterator<Item = usize>) -> f64 {
        let v = self.vocab_size;
        cols.into_iter()
            .map(|c| (0..v).map(|r| self.d_logits[r * v + c].abs()).sum::<f64>())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.d_logits.iter().all(|x| x.is_finite())
    }
}

/// Log-softmax of a row, max-subtracted.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Context token for each generated position: the last prompt token (or
/// `bos` for an empty prompt), then the previous generated token.
pub fn contexts_for(bos: TokenId, prompt: &[TokenId], generated: &[TokenId]) -> Vec<TokenId> {
    let first = prompt.last().copied().unwrap_or(bos);
    std::iter::once(first)
        .chain(generated.iter().copied())
        .take(generated.len())
        .collect()
}

pub const CHECKPOINT_MAGIC: &str = "functok-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

impl PolicyParameters {
    /// All-zero logits, i.e. the uniform policy.
    pub fn zeros(vocab_size: usize, bos: TokenId) -> Result<Self> {
        Self::from_logits(vocab_size, bos, vec![0.0; vocab_size * vocab_size])
    }

    pub fn from_logits(vocab_size: usize, bos: TokenId, logits: Vec<f64>) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::Config("vocab_size must be >= 1".into()));
        }
        if logits.len() != vocab_size * vocab_size {
            return Err(Error::LengthMismatch {
                what: "logit table",
                expected: vocab_size * vocab_size,
                got: logits.len(),
            });
        }
        if bos.0 >= vocab_size {
            return Err(Error::OutOfRange {
                id: bos.0,
                size: vocab_size,
            });
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("logit table contains non-finite entries".into()));
        }
        Ok(PolicyParameters {
            vocab_size,
            bos,
            logits,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn check(&self, id: TokenId) -> Result<()> {
        if id.0 < self.vocab_size {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                id: id.0,
                size: self.vocab_size,
            })
        }
    }

    pub fn row(&self, prev: TokenId) -> Result<&[f64]> {
        self.check(prev)?;
        let v = self.vocab_size;
        Ok(&self.logits[prev.0 * v..(prev.0 + 1) * v])
    }

    pub fn log_distribution(&self, prev: TokenId) -> Result<Vec<f64>> {
        Ok(log_softmax(self.row(prev)?))
    }

    /// Per-step log-probabilities of `targets` under explicit contexts.
    pub fn step_logprobs(&self, contexts: &[TokenId], targets: &[TokenId]) -> Result<Vec<f64>> {
        if contexts.len() != targets.len() {
            return Err(Error::LengthMismatch {
                what: "contexts",
                expected: targets.len(),
                got: contexts.len(),
            });
        }
        contexts
            .iter()
            .zip(targets)
            .map(|(&u, &v)| {
                self.check(v)?;
                Ok(self.log_distribution(u)?[v.0])
            })
            .collect()
    }

    pub fn sequence_logprob(
        &self,
        prompt: &[TokenId],
        generated: &[TokenId],
    ) -> Result<SequenceLogProb> {
        if generated.is_empty() {
            return Err(Error::EmptyGeneration);
        }
        for &t in prompt {
            self.check(t)?;
        }
        let contexts = contexts_for(self.bos, prompt, generated);
        Ok(SequenceLogProb::from_per_token(
            self.step_logprobs(&contexts, generated)?,
        ))
    }

    /// Draws one token from row `prev`.
    pub fn sample_next<R: Rng + ?Sized>(&self, prev: TokenId, rng: &mut R) -> Result<TokenId> {
        let p = self.next_token_distribution(prev)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return Ok(TokenId(i));
            }
        }
        // u landed in the rounding gap above the last partial sum.
        Ok(TokenId(p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)))
    }

    /// Ancestral sampling until `stop` (included) or `max_len` tokens.
    pub fn sample_rollout(
        &self,
        prompt: &[TokenId],
        max_len: usize,
        stop: TokenId,
        rng_seed: u64,
    ) -> Result<Vec<TokenId>> {
        if max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut prev = prompt.last().copied().unwrap_or(self.bos);
        let mut out = Vec::with_capacity(max_len);
        while out.len() < max_len {
            let t = self.sample_next(prev, &mut rng)?;
            out.push(t);
            if t == stop {
                break;
            }
            prev = t;
        }
        Ok(out)
    }

    /// Adds `Σ_t w_t · ∇ log π(target_t | context_t)` into `grad`.
    pub fn accumulate_gradient(
        &self,
        contexts: &[TokenId],
        targets: &[TokenId],
        weights: &[f64],
        grad: &mut PolicyGradient,
    ) -> Result<()> {
        if contexts.len() != targets.len() {
            return Err(Error::LengthMismatch {
                what: "contexts",
                expected: targets.len(),
                got: contexts.len(),
            });
        }
        if weights.len() != targets.len() {
            return Err(Error::LengthMismatch {
                what: "weights",
                expected: targets.len(),
                got: weights.len(),
            });
        }
        let v = self.vocab_size;
        for ((&u, &y), &w) in contexts.iter().zip(targets).zip(weights) {
            self.check(y)?;
            if w == 0.0 {
                continue;
            }
            let p = softmax(self.row(u)?);
            let row = &mut grad.d_logits[u.0 * v..(u.0 + 1) * v];
            for (g, pj) in row.iter_mut().zip(&p) {
                *g -= w * pj;
            }
            row[y.0] += w;
        }
        Ok(())
    }

    pub fn logprob_gradient(
        &self,
        prompt: &[TokenId],
        generated: &[TokenId],
        per_token_weights: &[f64],
    ) -> Result<PolicyGradient> {
        let contexts = contexts_for(self.bos, prompt, generated);
        let mut grad = PolicyGradient::zeros(self.vocab_size);
        self.accumulate_gradient(&contexts, generated, per_token_weights, &mut grad)?;
        Ok(grad)
    }

    /// Plain gradient-descent step: `θ ← θ − lr · grad`.
    pub fn descend(&mut self, grad: &PolicyGradient, lr: f64) {
        debug_assert_eq!(grad.vocab_size, self.vocab_size);
        for (x, g) in self.logits.iter_mut().zip(&grad.d_logits) {
            *x -= lr * g;
        }
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = format!(
            "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nvocab_size {}\nbos {}\n",
            self.vocab_size, self.bos
        );
        for row in self.logits.chunks(self.vocab_size) {
            let line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_checkpoint(input: &str) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let mut header = |key: &str| -> Result<String> {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("missing `{key}` header")))?;
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| Error::parse(n + 1, format!("expected `{key} <value>`")))
        };
        let version = header(CHECKPOINT_MAGIC)?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(Error::parse(1, format!("unsupported version `{version}`")));
        }
        let vocab_size: usize = header("vocab_size")?
            .parse()
            .map_err(|_| Error::parse(2, "bad vocab_size"))?;
        let bos: usize = header("bos")?
            .parse()
            .map_err(|_| Error::parse(3, "bad bos"))?;
        if vocab_size == 0 || vocab_size > 1 << 16 {
            return Err(Error::parse(2, "vocab_size out of supported range"));
        }
        let mut logits = Vec::with_capacity(vocab_size * vocab_size);
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let before = logits.len();
            for tok in line.split_whitespace() {
                let x: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(n + 1, format!("bad number `{tok}`")))?;
                logits.push(x);
            }
            if logits.len() - before != vocab_size {
                return Err(Error::parse(n + 1, "row has wrong number of entries"));
            }
            if logits.len() > vocab_size * vocab_size {
                return Err(Error::parse(n + 1, "too many rows"));
            }
        }
        Self::from_logits(vocab_size, TokenId(bos), logits)
    }
}

impl TokenPolicy for PolicyParameters {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_distribution(&self, prev: TokenId) -> Result<Vec<f64>> {
        Ok(softmax(self.row(prev)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[usize]) -> Vec<TokenId> {
        xs.iter().map(|&x| TokenId(x)).collect()
    }

    #[test]
    fn distributions() {
        let p = PolicyParameters::zeros(8, TokenId(0)).unwrap();
        let d = p.next_token_distribution(TokenId(3)).unwrap();
        assert!(d.iter().all(|&x| (x - 0.125).abs() < 1e-15));

        let mut logits = vec![0.0; 64];
        logits[2 * 8 + 5] = 20.0;
        let p = PolicyParameters::from_logits(8, TokenId(0), logits).unwrap();
        assert!(p.next_token_distribution(TokenId(2)).unwrap()[5] > 0.999);
        assert!(p.next_token_distribution(TokenId(8)).is_err());
    }

    #[test]
    fn brute_force_softmax() {
        let row = [0.3, -1.2, 2.5, 0.0, 7.1, -3.3];
        let mut logits = vec![0.0; 36];
        logits[6..12].copy_from_slice(&row);
        let p = PolicyParameters::from_logits(6, TokenId(0), logits).unwrap();
        let d = p.next_token_distribution(TokenId(1)).unwrap();
        let z: f64 = row.iter().map(|x: &f64| x.exp()).sum();
        for (a, x) in d.iter().zip(row) {
            assert!((a - x.exp() / z).abs() < 1e-12);
        }
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sequence_logprobs() {
        let p = PolicyParameters::zeros(8, TokenId(0)).unwrap();
        let lp = p.sequence_logprob(&ids(&[1]), &ids(&[2, 3, 4])).unwrap();
        assert!((lp.total + 3.0 * 8f64.ln()).abs() < 1e-12);
        assert!(matches!(p.sequence_logprob(&ids(&[1]), &[]), Err(Error::EmptyGeneration)));

        // Deterministic chain 1 -> 2 -> 3.
        let mut logits = vec![-1e3; 16];
        logits[4 + 2] = 0.0;
        logits[2 * 4 + 3] = 0.0;
        let p = PolicyParameters::from_logits(4, TokenId(0), logits).unwrap();
        assert!(p.sequence_logprob(&ids(&[1]), &ids(&[2, 3])).unwrap().total.abs() < 1e-12);
    }

    #[test]
    fn hand_chained_fixture() {
        let logits: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).sin()).collect();
        let p = PolicyParameters::from_logits(3, TokenId(0), logits.clone()).unwrap();
        let prompt = ids(&[2]);
        let gen = ids(&[0, 1, 1]);
        let step = |u: usize, v: usize| {
            let r = &logits[u * 3..u * 3 + 3];
            r[v] - r.iter().map(|x| x.exp()).sum::<f64>().ln()
        };
        let expected = [step(2, 0), step(0, 1), step(1, 1)];
        let lp = p.sequence_logprob(&prompt, &gen).unwrap();
        for (a, b) in lp.per_token.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((lp.total - expected.iter().sum::<f64>()).abs() < 1e-12);
        // Empty prompt falls back to bos.
        let lp = p.sequence_logprob(&[], &ids(&[1])).unwrap();
        assert!((lp.total - step(0, 1)).abs() < 1e-12);
    }

    #[test]
    fn rollouts() {
        let stop = TokenId(3);
        let mut logits = vec![-50.0; 16];
        logits[3] = 50.0;
        let p = PolicyParameters::from_logits(4, TokenId(0), logits).unwrap();
        assert_eq!(p.sample_rollout(&ids(&[0]), 10, stop, 1).unwrap(), vec![stop]);

        let mut logits = vec![0.0; 16];
        for u in 0..4 {
            logits[u * 4 + 3] = -1e4;
        }
        let p = PolicyParameters::from_logits(4, TokenId(0), logits).unwrap();
        let r = p.sample_rollout(&ids(&[0]), 5, stop, 2).unwrap();
        assert_eq!(r.len(), 5);
        assert!(!r.contains(&stop));
        assert_eq!(r, p.sample_rollout(&ids(&[0]), 5, stop, 2).unwrap());
        assert!(p.sample_rollout(&[], 0, stop, 2).is_err());
    }

    #[test]
    fn two_token_gradient() {
        let p = PolicyParameters::zeros(2, TokenId(0)).unwrap();
        let g = p.logprob_gradient(&ids(&[0]), &ids(&[0]), &[1.0]).unwrap();
        assert_eq!((g.get(0, 0), g.get(0, 1)), (0.5, -0.5));
        assert_eq!((g.get(1, 0), g.get(1, 1)), (0.0, 0.0));
        let g = p.logprob_gradient(&ids(&[0]), &ids(&[1, 0]), &[0.0, 0.0]).unwrap();
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
        assert!(p.logprob_gradient(&ids(&[0]), &ids(&[1]), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let logits: Vec<f64> = (0..25).map(|i| (i as f64).cos() * 1e-3 + 1e-300).collect();
        let p = PolicyParameters::from_logits(5, TokenId(2), logits).unwrap();
        let text = p.to_checkpoint();
        assert!(text.starts_with("functok-policy 1\nvocab_size 5\nbos 2\n"));
        assert_eq!(PolicyParameters::from_checkpoint(&text).unwrap(), p);
        assert!(PolicyParameters::from_checkpoint("functok-policy 2\n").is_err());
        assert!(PolicyParameters::from_checkpoint("functok-policy 1\nvocab_size 2\nbos 0\n0 0\n0\n").is_err());
        assert!(PolicyParameters::from_checkpoint("functok-policy 1\nvocab_size 1\nbos 0\nNaN\n").is_err());
    }
}
