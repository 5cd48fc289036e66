//! Reward-penalty ablation: one training run per configuration, all sharing
//! the base seed so task draws and rollout streams line up.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::RewardConfig;

use super::task::SyntheticTask;
use super::train::{run_training, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardTerm {
    Fmt,
    Len,
    Spam,
}

impl RewardTerm {
    pub const ALL: [RewardTerm; 3] = [RewardTerm::Fmt, RewardTerm::Len, RewardTerm::Spam];

    pub fn as_str(self) -> &'static str {
        match self {
            RewardTerm::Fmt => "fmt",
            RewardTerm::Len => "len",
            RewardTerm::Spam => "spam",
        }
    }

    /// Zeroes the term's weight.
    pub fn disable(self, cfg: &mut RewardConfig) {
        match self {
            RewardTerm::Fmt => cfg.lambda_fmt = 0.0,
            RewardTerm::Len => cfg.lambda_len = 0.0,
            RewardTerm::Spam => cfg.lambda_spam = 0.0,
        }
    }
}

impl std::str::FromStr for RewardTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RewardTerm::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown reward term `{s}` (expected fmt, len or spam)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `full` or `no-<term>`.
    pub config: String,
    pub disabled: Option<RewardTerm>,
    pub accuracy: f64,
    pub invocation_rate: f64,
    /// Per-episode means over every rollout sampled during training.
    pub train_mean_n_func: f64,
    pub train_mean_length: f64,
    /// Per-episode means over the held-out evaluation episodes.
    pub eval_mean_n_func: f64,
    pub eval_mean_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, disabled: Option<RewardTerm>) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.disabled == disabled)
    }
}

/// Runs the full objective, then one run per disabled term.
pub fn run_ablation(
    base: &TrainConfig,
    disable: &BTreeSet<RewardTerm>,
    tasks: &[SyntheticTask],
) -> Result<AblationReport> {
    let configs = std::iter::once(None).chain(disable.iter().copied().map(Some));
    let mut rows = Vec::new();
    for disabled in configs {
        let mut cfg = base.clone();
        if let Some(term) = disabled {
            term.disable(&mut cfg.reward);
        }
        let out = run_training(&cfg, tasks)?;
        let n = out.metrics.len() as f64;
        rows.push(AblationRow {
            config: disabled.map_or("full".to_string(), |t| format!("no-{}", t.as_str())),
            disabled,
            accuracy: out.eval.accuracy,
            invocation_rate: out.eval.invocation_rate,
            train_mean_n_func: out.metrics.iter().map(|m| m.mean_n_func).sum::<f64>() / n,
            train_mean_length: out.metrics.iter().map(|m| m.mean_length).sum::<f64>() / n,
            eval_mean_n_func: out.eval.mean_n_func,
            eval_mean_length: out.eval.mean_length,
        });
    }
    Ok(AblationReport {
        seed: base.seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::task::HintWorld;

    #[test]
    fn disable_nothing_is_the_base_run() {
        let world = HintWorld::new(4).unwrap();
        let cfg = TrainConfig {
            steps: 20,
            eval_episodes: 50,
            seed: 5,
            ..Default::default()
        };
        let rep = run_ablation(&cfg, &BTreeSet::new(), &world.all_tasks()).unwrap();
        assert_eq!(rep.rows.len(), 1);
        let base = run_training(&cfg, &world.all_tasks()).unwrap();
        assert_eq!(rep.rows[0].accuracy, base.eval.accuracy);
        assert_eq!(rep.rows[0].eval_mean_length, base.eval.mean_length);
    }

    #[test]
    fn term_names() {
        for t in RewardTerm::ALL {
            assert_eq!(t.as_str().parse::<RewardTerm>().unwrap(), t);
        }
        assert!("acc".parse::<RewardTerm>().is_err());
    }
}
