//! Group-relative policy optimization and its functional-token anchored
//! variant.
//!
//! All losses are computed against a [`PolicyParameters`] snapshot and
//! return an exact gradient with respect to its logit table. Old and
//! reference log-probabilities stored on each rollout are constants
//! (stop-gradient).
//!
//! Two forms of the group objective are available:
//!
//! * `standard-clip` (default): per-token PPO-style clipped surrogate against
//!   the old policy, averaged over tokens, then over the group, plus
//!   `β · KL(π_θ ‖ π_ref)`.
//! * `paper-literal`: `−(1/G) Σ_i (π_θ(o_i)/π_ref(o_i))^β Â_i + β · KL`,
//!   with the sequence ratio evaluated in the log domain.
//!
//! The anchored objective adds `α · (1/|M|) Σ_{t∈M} L_token(t)` where `M` is
//! the union of functional-token positions across the group and `L_token` is
//! the clipped surrogate at a single position.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyGradient, PolicyParameters};
use crate::trajectory::DatasetRecord;
use crate::vocab::{count_functional_surfaces, TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrpoForm {
    StandardClip,
    PaperLiteral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub anchor_alpha: f64,
    pub advantage_eps: f64,
    pub grpo_form: GrpoForm,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            clip_eps: 0.2,
            kl_beta: 0.01,
            anchor_alpha: 0.5,
            advantage_eps: 1e-8,
            grpo_form: GrpoForm::StandardClip,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config(format!("clip_eps must be in (0, 1), got {}", self.clip_eps)));
        }
        for (name, x) in [
            ("kl_beta", self.kl_beta),
            ("anchor_alpha", self.anchor_alpha),
            ("advantage_eps", self.advantage_eps),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {x}")));
            }
        }
        Ok(())
    }
}

/// One sampled output with its behaviour-policy snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<TokenId>,
    /// Conditioning token for each entry of `tokens`.
    pub contexts: Vec<TokenId>,
    pub logprobs_old: Vec<f64>,
    pub logprobs_ref: Vec<f64>,
    pub reward: f64,
    pub m_func: Vec<usize>,
}

impl Rollout {
    pub fn new(
        vocab: &Vocabulary,
        tokens: Vec<TokenId>,
        contexts: Vec<TokenId>,
        logprobs_old: Vec<f64>,
        logprobs_ref: Vec<f64>,
        reward: f64,
    ) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyGeneration);
        }
        for (what, n) in [
            ("contexts", contexts.len()),
            ("logprobs_old", logprobs_old.len()),
            ("logprobs_ref", logprobs_ref.len()),
        ] {
            if n != tokens.len() {
                return Err(Error::LengthMismatch {
                    what,
                    expected: tokens.len(),
                    got: n,
                });
            }
        }
        let m_func = vocab.functional_positions(&tokens)?;
        Ok(Rollout {
            tokens,
            contexts,
            logprobs_old,
            logprobs_ref,
            reward,
            m_func,
        })
    }

    /// Builds a rollout whose old and reference snapshots are taken from the
    /// given policies.
    pub fn from_policies(
        vocab: &Vocabulary,
        tokens: Vec<TokenId>,
        contexts: Vec<TokenId>,
        old: &PolicyParameters,
        reference: &PolicyParameters,
        reward: f64,
    ) -> Result<Self> {
        let lo = old.step_logprobs(&contexts, &tokens)?;
        let lr = reference.step_logprobs(&contexts, &tokens)?;
        Self::new(vocab, tokens, contexts, lo, lr, reward)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub query_id: String,
    pub rollouts: Vec<Rollout>,
}

impl RolloutGroup {
    pub fn new(query_id: impl Into<String>, rollouts: Vec<Rollout>) -> Result<Self> {
        if rollouts.len() < 2 {
            return Err(Error::GroupTooSmall(rollouts.len()));
        }
        Ok(RolloutGroup {
            query_id: query_id.into(),
            rollouts,
        })
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.reward).collect()
    }

    pub fn functional_count(&self) -> usize {
        self.rollouts.iter().map(|r| r.m_func.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss_total: f64,
    pub loss_grpo: f64,
    pub loss_anchor: f64,
    pub kl_value: f64,
    pub grad: PolicyGradient,
    /// `None` when the gradient is identically zero.
    pub grad_share_func: Option<f64>,
}

/// Standardized group advantages with population standard deviation.
pub fn group_advantages(rewards: &[f64], advantage_eps: f64) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::GroupTooSmall(g));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / (std + advantage_eps)).collect())
}

/// Per-token KL terms `r − ln r − 1` with `r = π_ref/π_θ`, and their
/// derivatives with respect to the current log-probability.
fn kl_terms<'a>(current: &'a [f64], reference: &'a [f64]) -> impl Iterator<Item = (f64, f64)> + 'a {
    current.iter().zip(reference).map(|(lc, lr)| {
        let d = lr - lc;
        let em1 = d.exp_m1();
        ((em1 - d).max(0.0), -em1)
    })
}

/// Mean over tokens of `r − ln r − 1`, `r = exp(logp_ref − logp_current)`.
pub fn kl_estimate(logprobs_current: &[f64], logprobs_ref: &[f64]) -> Result<f64> {
    if logprobs_current.len() != logprobs_ref.len() {
        return Err(Error::LengthMismatch {
            what: "reference log-probs",
            expected: logprobs_current.len(),
            got: logprobs_ref.len(),
        });
    }
    if logprobs_current.is_empty() {
        return Err(Error::EmptyGeneration);
    }
    let sum: f64 = kl_terms(logprobs_current, logprobs_ref).map(|(k, _)| k).sum();
    Ok(sum / logprobs_current.len() as f64)
}

/// Token-level clipped surrogate `−min(ρÂ, clip(ρ, 1−ε, 1+ε)Â)` and its
/// derivative with respect to `logp_current`. The derivative is zero
/// whenever the clipped branch is the active one.
pub fn clipped_token_loss(logp_current: f64, logp_old: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let ratio = (logp_current - logp_old).exp();
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (-unclipped, -unclipped)
    } else {
        (-clipped, 0.0)
    }
}

/// Functional-position share of the gradient's L1 mass, or `None` for a
/// zero gradient.
pub fn gradient_share_diagnostic(grad: &PolicyGradient, vocab: &Vocabulary) -> Option<f64> {
    let total = grad.l1_norm();
    if total == 0.0 {
        return None;
    }
    let func = grad.column_l1(vocab.functional_ids().map(TokenId::index));
    Some((func / total).clamp(0.0, 1.0))
}

struct GroupTerms {
    loss_surrogate: f64,
    kl_value: f64,
    grad: PolicyGradient,
}

fn group_terms(
    params: &PolicyParameters,
    group: &RolloutGroup,
    advantages: &[f64],
    cfg: &RlConfig,
) -> Result<GroupTerms> {
    let g = group.rollouts.len() as f64;
    let beta = cfg.kl_beta;
    let mut loss_surrogate = 0.0;
    let mut kl_value = 0.0;
    let mut grad = PolicyGradient::zeros(params.vocab_size());
    for (r, &adv) in group.rollouts.iter().zip(advantages) {
        let cur = params.step_logprobs(&r.contexts, &r.tokens)?;
        let t = cur.len() as f64;
        let mut weights = vec![0.0; cur.len()];
        let mut kl_sum = 0.0;
        for (w, (k, dk)) in weights.iter_mut().zip(kl_terms(&cur, &r.logprobs_ref)) {
            kl_sum += k;
            *w = beta * dk / (g * t);
        }
        kl_value += kl_sum / t / g;
        match cfg.grpo_form {
            GrpoForm::StandardClip => {
                let mut s = 0.0;
                for (i, w) in weights.iter_mut().enumerate() {
                    let (v, dv) = clipped_token_loss(cur[i], r.logprobs_old[i], adv, cfg.clip_eps);
                    s += v;
                    *w += dv / (g * t);
                }
                loss_surrogate += s / t / g;
            }
            GrpoForm::PaperLiteral => {
                let log_ratio: f64 = cur.iter().zip(&r.logprobs_ref).map(|(c, f)| c - f).sum();
                let seq = (beta * log_ratio).exp();
                loss_surrogate -= seq * adv / g;
                for w in weights.iter_mut() {
                    *w -= adv * seq * beta / g;
                }
            }
        }
        params.accumulate_gradient(&r.contexts, &r.tokens, &weights, &mut grad)?;
    }
    Ok(GroupTerms {
        loss_surrogate,
        kl_value,
        grad,
    })
}

/// Group objective without the anchor.
pub fn grpo_loss(
    params: &PolicyParameters,
    vocab: &Vocabulary,
    group: &RolloutGroup,
    cfg: &RlConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    let advantages = group_advantages(&group.rewards(), cfg.advantage_eps)?;
    let terms = group_terms(params, group, &advantages, cfg)?;
    let loss_grpo = terms.loss_surrogate + cfg.kl_beta * terms.kl_value;
    Ok(LossReport {
        loss_total: loss_grpo,
        loss_grpo,
        loss_anchor: 0.0,
        kl_value: terms.kl_value,
        grad_share_func: gradient_share_diagnostic(&terms.grad, vocab),
        grad: terms.grad,
    })
}

/// Clipped surrogate restricted to one rollout's functional positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTerm {
    /// Sum of `L_token` over the functional positions.
    pub loss_sum: f64,
    pub count: usize,
    /// Gradient of `loss_sum`.
    pub grad: PolicyGradient,
}

impl AnchorTerm {
    /// Mean token loss, zero for a rollout without functional tokens.
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.loss_sum / self.count as f64
        }
    }

    /// Gradient of [`AnchorTerm::mean`].
    pub fn mean_grad(&self) -> PolicyGradient {
        let mut g = self.grad.clone();
        if self.count > 0 {
            g.scale(1.0 / self.count as f64);
        }
        g
    }
}

pub fn anchored_token_loss(
    params: &PolicyParameters,
    rollout: &Rollout,
    advantage: f64,
    cfg: &RlConfig,
) -> Result<AnchorTerm> {
    let mut grad = PolicyGradient::zeros(params.vocab_size());
    if rollout.m_func.is_empty() {
        return Ok(AnchorTerm {
            loss_sum: 0.0,
            count: 0,
            grad,
        });
    }
    let mut contexts = Vec::with_capacity(rollout.m_func.len());
    let mut targets = Vec::with_capacity(rollout.m_func.len());
    let mut old = Vec::with_capacity(rollout.m_func.len());
    for &t in &rollout.m_func {
        contexts.push(rollout.contexts[t]);
        targets.push(rollout.tokens[t]);
        old.push(rollout.logprobs_old[t]);
    }
    let cur = params.step_logprobs(&contexts, &targets)?;
    let mut loss_sum = 0.0;
    let mut weights = Vec::with_capacity(cur.len());
    for (lc, lo) in cur.iter().zip(&old) {
        let (v, dv) = clipped_token_loss(*lc, *lo, advantage, cfg.clip_eps);
        loss_sum += v;
        weights.push(dv);
    }
    params.accumulate_gradient(&contexts, &targets, &weights, &mut grad)?;
    Ok(AnchorTerm {
        loss_sum,
        count: rollout.m_func.len(),
        grad,
    })
}

/// Group objective plus the functional-token anchor, normalized by the
/// number of functional positions across the whole group.
pub fn la_grpo_loss(
    params: &PolicyParameters,
    vocab: &Vocabulary,
    group: &RolloutGroup,
    cfg: &RlConfig,
) -> Result<LossReport> {
    let base = grpo_loss(params, vocab, group, cfg)?;
    let n_func = group.functional_count();
    if cfg.anchor_alpha == 0.0 || n_func == 0 {
        return Ok(base);
    }
    let advantages = group_advantages(&group.rewards(), cfg.advantage_eps)?;
    let mut anchor_sum = 0.0;
    let mut anchor_grad = PolicyGradient::zeros(base.grad.vocab_size());
    for (r, &adv) in group.rollouts.iter().zip(&advantages) {
        let term = anchored_token_loss(params, r, adv, cfg)?;
        anchor_sum += term.loss_sum;
        anchor_grad.add_scaled(&term.grad, 1.0);
    }
    let loss_anchor = anchor_sum / n_func as f64;
    let mut grad = base.grad;
    grad.add_scaled(&anchor_grad, cfg.anchor_alpha / n_func as f64);
    Ok(LossReport {
        loss_total: base.loss_grpo + cfg.anchor_alpha * loss_anchor,
        loss_grpo: base.loss_grpo,
        loss_anchor,
        kl_value: base.kl_value,
        grad_share_func: gradient_share_diagnostic(&grad, vocab),
        grad,
    })
}

/// Token counts of one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceCounts {
    pub total: usize,
    pub functional: usize,
}

impl SequenceCounts {
    pub fn from_tokens(vocab: &Vocabulary, tokens: &[TokenId]) -> Result<Self> {
        Ok(SequenceCounts {
            total: tokens.len(),
            functional: vocab.functional_positions(tokens)?.len(),
        })
    }

    pub fn from_text(text: &str) -> Self {
        SequenceCounts {
            total: text.split_whitespace().count(),
            functional: count_functional_surfaces(text),
        }
    }

    pub fn from_record(record: &DatasetRecord) -> Self {
        Self::from_text(&record.trajectory_text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityStats {
    pub mean_total_tokens: f64,
    pub mean_func_tokens: f64,
    pub ratio: f64,
}

/// Mean total and functional token counts and their ratio.
pub fn sparsity_stats(counts: &[SequenceCounts]) -> Result<SparsityStats> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("sparsity_stats needs at least one sequence"));
    }
    let n = counts.len() as f64;
    let total: usize = counts.iter().map(|c| c.total).sum();
    let func: usize = counts.iter().map(|c| c.functional).sum();
    let mean_total_tokens = total as f64 / n;
    let mean_func_tokens = func as f64 / n;
    let ratio = if total == 0 {
        0.0
    } else {
        func as f64 / total as f64
    };
    Ok(SparsityStats {
        mean_total_tokens,
        mean_func_tokens,
        ratio,
    })
}
