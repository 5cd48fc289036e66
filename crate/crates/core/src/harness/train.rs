//! Seeded training loop for SFT, GRPO and the anchored variant on the hint
//! task.
//!
//! Every random draw derives from the configured seed: task selection uses
//! one ChaCha stream, and each rollout gets its own stream keyed by
//! `(seed, step, task slot, group index)`. Runs are therefore reproducible
//! bit-for-bit, and the metrics log is byte-identical across runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{grpo_loss, la_grpo_loss, LossReport, Rollout, RolloutGroup, RlConfig};
use crate::policy::{PolicyGradient, PolicyParameters};
use crate::reward::{composite_reward, RewardBreakdown, RewardConfig};
use crate::trajectory::CeMask;

use super::task::{Episode, HintWorld, SyntheticTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Sft,
    Grpo,
    LaGrpo,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sft" => Ok(Objective::Sft),
            "grpo" => Ok(Objective::Grpo),
            "la-grpo" => Ok(Objective::LaGrpo),
            other => Err(Error::Config(format!("unknown objective `{other}`"))),
        }
    }
}

/// Reward settings scaled to the hint task, where an ideal answer is three
/// generated tokens long and uses one functional token.
pub fn hint_task_reward() -> RewardConfig {
    RewardConfig {
        l_max: 4,
        len_buffer: 4,
        tau_spam: 2,
        ..RewardConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub steps: usize,
    pub group_size: usize,
    /// Groups (one task each) per optimization step.
    pub tasks_per_step: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub max_len: usize,
    /// Gradient steps taken on each sampled batch; the old-policy snapshot
    /// is refreshed once per batch.
    pub updates_per_batch: usize,
    /// Held-out episodes sampled for the final evaluation.
    pub eval_episodes: usize,
    pub n_answers: usize,
    pub sft_mask: CeMask,
    pub reward: RewardConfig,
    pub rl: RlConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::LaGrpo,
            steps: 2000,
            group_size: 16,
            tasks_per_step: 20,
            learning_rate: 10.0,
            seed: 0,
            max_len: 8,
            updates_per_batch: 1,
            eval_episodes: 500,
            n_answers: 4,
            sft_mask: CeMask::AllTokens,
            reward: hint_task_reward(),
            rl: RlConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("steps", self.steps),
            ("tasks_per_step", self.tasks_per_step),
            ("max_len", self.max_len),
            ("updates_per_batch", self.updates_per_batch),
            ("eval_episodes", self.eval_episodes),
        ];
        for (name, n) in positive {
            if n == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be >= 2".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        self.reward.validate()?;
        self.rl.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss_total: f64,
    pub loss_grpo: f64,
    pub loss_anchor: f64,
    pub kl: f64,
    pub grad_share_func: Option<f64>,
    pub mean_reward: f64,
    pub mean_n_func: f64,
    pub mean_length: f64,
    pub accuracy: f64,
    pub invocation_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub accuracy: f64,
    /// Fraction of episodes with at least one functional token.
    pub invocation_rate: f64,
    /// Fraction of episodes that emitted the task's required functional token.
    pub reveal_rate: f64,
    pub mean_n_func: f64,
    pub mean_length: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub params: PolicyParameters,
    pub eval: EvalSummary,
}

impl TrainOutcome {
    pub fn metrics_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.metrics {
            out.push_str(&serde_json::to_string(row).expect("metrics serialize"));
            out.push('\n');
        }
        out
    }
}

/// Mixes seed components into a stream seed (splitmix64 finalizer).
pub fn stream_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

const EVAL_STREAM: u64 = 0xE7A1;

#[derive(Default)]
struct EpisodeStats {
    n: usize,
    reward: f64,
    n_func: usize,
    length: usize,
    correct: usize,
    invoked: usize,
    revealed: usize,
}

impl EpisodeStats {
    fn add(&mut self, b: &RewardBreakdown, ep: &Episode, n_func: usize) {
        self.n += 1;
        self.reward += b.total;
        self.n_func += n_func;
        self.length += ep.generated.len();
        self.correct += b.r_acc as usize;
        self.invoked += (n_func > 0) as usize;
        self.revealed += ep.revealed() as usize;
    }

    fn mean(&self, x: f64) -> f64 {
        x / self.n as f64
    }

    fn summary(&self) -> EvalSummary {
        EvalSummary {
            episodes: self.n,
            accuracy: self.mean(self.correct as f64),
            invocation_rate: self.mean(self.invoked as f64),
            reveal_rate: self.mean(self.revealed as f64),
            mean_n_func: self.mean(self.n_func as f64),
            mean_length: self.mean(self.length as f64),
            mean_reward: self.mean(self.reward),
        }
    }
}

fn score(
    world: &HintWorld,
    task: &SyntheticTask,
    ep: &Episode,
    cfg: &RewardConfig,
) -> Result<(RewardBreakdown, usize)> {
    let out = ep.output(&world.vocab)?;
    Ok((composite_reward(&out, &task.gold_answer_text, cfg), out.n_func))
}

/// Samples one held-out episode per task drawn from the evaluation stream.
pub fn evaluate(
    world: &HintWorld,
    params: &PolicyParameters,
    cfg: &TrainConfig,
) -> Result<EvalSummary> {
    let mut task_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, EVAL_STREAM]));
    let mut stats = EpisodeStats::default();
    for i in 0..cfg.eval_episodes {
        let task = world.sample_task(&mut task_rng);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed, EVAL_STREAM, i as u64]));
        let ep = world.sample_episode(params, &task, cfg.max_len, &mut rng)?;
        let (b, n_func) = score(world, &task, &ep, &cfg.reward)?;
        stats.add(&b, &ep, n_func);
    }
    Ok(stats.summary())
}

fn sft_gradient(
    world: &HintWorld,
    params: &PolicyParameters,
    tasks: &[SyntheticTask],
    mask: CeMask,
) -> Result<(f64, PolicyGradient)> {
    let mut contexts = Vec::new();
    let mut targets = Vec::new();
    for task in tasks {
        let demo = world.demonstration(task)?;
        for (&c, &t) in demo.contexts.iter().zip(&demo.generated) {
            if mask == CeMask::AllTokens || world.vocab.is_functional(t) {
                contexts.push(c);
                targets.push(t);
            }
        }
    }
    if targets.is_empty() {
        return Err(Error::EmptyMask);
    }
    let lp = params.step_logprobs(&contexts, &targets)?;
    let n = targets.len() as f64;
    let loss = -lp.iter().sum::<f64>() / n;
    let mut grad = PolicyGradient::zeros(params.vocab_size());
    params.accumulate_gradient(&contexts, &targets, &vec![-1.0 / n; targets.len()], &mut grad)?;
    Ok((loss, grad))
}

fn batch_loss(
    world: &HintWorld,
    params: &PolicyParameters,
    groups: &[RolloutGroup],
    cfg: &TrainConfig,
) -> Result<(LossReport, PolicyGradient)> {
    let mut sum = LossReport {
        loss_total: 0.0,
        loss_grpo: 0.0,
        loss_anchor: 0.0,
        kl_value: 0.0,
        grad: PolicyGradient::zeros(params.vocab_size()),
        grad_share_func: None,
    };
    let k = groups.len() as f64;
    for group in groups {
        let rep = match cfg.objective {
            Objective::LaGrpo => la_grpo_loss(params, &world.vocab, group, &cfg.rl)?,
            _ => grpo_loss(params, &world.vocab, group, &cfg.rl)?,
        };
        sum.loss_total += rep.loss_total / k;
        sum.loss_grpo += rep.loss_grpo / k;
        sum.loss_anchor += rep.loss_anchor / k;
        sum.kl_value += rep.kl_value / k;
        sum.grad.add_scaled(&rep.grad, 1.0 / k);
    }
    sum.grad_share_func = crate::objectives::gradient_share_diagnostic(&sum.grad, &world.vocab);
    let grad = sum.grad.clone();
    Ok((sum, grad))
}

/// Trains on `tasks` and evaluates the final policy on held-out draws.
pub fn run_training(cfg: &TrainConfig, tasks: &[SyntheticTask]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::EmptyInput("run_training needs at least one task"));
    }
    let world = HintWorld::new(cfg.n_answers)?;
    let reference = world.initial_policy();
    let mut params = reference.clone();
    let mut task_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[cfg.seed]));
    let mut metrics = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch: Vec<&SyntheticTask> = (0..cfg.tasks_per_step)
            .map(|_| &tasks[task_rng.gen_range(0..tasks.len())])
            .collect();
        let old = params.clone();
        let mut stats = EpisodeStats::default();
        let mut groups = Vec::with_capacity(batch.len());
        for (slot, task) in batch.iter().enumerate() {
            let mut rollouts = Vec::with_capacity(cfg.group_size);
            for g in 0..cfg.group_size {
                let seed = stream_seed(&[cfg.seed, step as u64, slot as u64, g as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let ep = world.sample_episode(&old, task, cfg.max_len, &mut rng)?;
                let (b, n_func) = score(&world, task, &ep, &cfg.reward)?;
                stats.add(&b, &ep, n_func);
                if cfg.objective != Objective::Sft {
                    rollouts.push(Rollout::from_policies(
                        &world.vocab,
                        ep.generated,
                        ep.contexts,
                        &old,
                        &reference,
                        b.total,
                    )?);
                }
            }
            if cfg.objective != Objective::Sft {
                groups.push(RolloutGroup::new(format!("{step}:{slot}"), rollouts)?);
            }
        }

        let mut report = None;
        for _ in 0..cfg.updates_per_batch {
            let (rep, grad) = if cfg.objective == Objective::Sft {
                let owned: Vec<SyntheticTask> = batch.iter().map(|t| (*t).clone()).collect();
                let (loss, grad) = sft_gradient(&world, &params, &owned, cfg.sft_mask)?;
                let rep = LossReport {
                    loss_total: loss,
                    loss_grpo: 0.0,
                    loss_anchor: 0.0,
                    kl_value: 0.0,
                    grad_share_func: crate::objectives::gradient_share_diagnostic(&grad, &world.vocab),
                    grad: grad.clone(),
                };
                (rep, grad)
            } else {
                batch_loss(&world, &params, &groups, cfg)?
            };
            params.descend(&grad, cfg.learning_rate);
            report.get_or_insert(rep);
        }
        let rep = report.expect("updates_per_batch >= 1");
        let s = stats.summary();
        metrics.push(MetricsRow {
            step,
            loss_total: rep.loss_total,
            loss_grpo: rep.loss_grpo,
            loss_anchor: rep.loss_anchor,
            kl: rep.kl_value,
            grad_share_func: rep.grad_share_func,
            mean_reward: s.mean_reward,
            mean_n_func: s.mean_n_func,
            mean_length: s.mean_length,
            accuracy: s.accuracy,
            invocation_rate: s.invocation_rate,
        });
    }

    let eval = evaluate(&world, &params, cfg)?;
    Ok(TrainOutcome {
        metrics,
        params,
        eval,
    })
}
