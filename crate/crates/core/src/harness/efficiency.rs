//! Per-query token accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::SequenceCounts;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyCounters {
    pub queries: usize,
    pub all_tokens_mean: f64,
    pub func_tokens_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_latency_mean: Option<f64>,
}

/// Means over one output per query. Sums are taken in integers, so a fixture
/// whose totals divide evenly reproduces its means exactly.
pub fn efficiency_report(outputs: &[SequenceCounts]) -> Result<EfficiencyCounters> {
    if outputs.is_empty() {
        return Err(Error::EmptyInput("efficiency_report needs at least one output"));
    }
    let n = outputs.len();
    let total: usize = outputs.iter().map(|c| c.total).sum();
    let func: usize = outputs.iter().map(|c| c.functional).sum();
    Ok(EfficiencyCounters {
        queries: n,
        all_tokens_mean: total as f64 / n as f64,
        func_tokens_mean: func as f64 / n as f64,
        wall_latency_mean: None,
    })
}

/// Attaches a mean wall-clock latency in seconds.
pub fn with_latencies(mut counters: EfficiencyCounters, latencies: &[f64]) -> Result<EfficiencyCounters> {
    if latencies.len() != counters.queries {
        return Err(Error::LengthMismatch {
            what: "latencies",
            expected: counters.queries,
            got: latencies.len(),
        });
    }
    counters.wall_latency_mean = Some(latencies.iter().sum::<f64>() / latencies.len() as f64);
    Ok(counters)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(total: usize, functional: usize) -> SequenceCounts {
        SequenceCounts { total, functional }
    }

    #[test]
    fn small_cases() {
        let r = efficiency_report(&[c(10, 1)]).unwrap();
        assert_eq!((r.all_tokens_mean, r.func_tokens_mean), (10.0, 1.0));
        let r = efficiency_report(&[c(3, 0), c(5, 0)]).unwrap();
        assert_eq!(r.func_tokens_mean, 0.0);
        assert!(efficiency_report(&[]).is_err());
        assert!(with_latencies(r, &[1.0]).is_err());
        assert_eq!(with_latencies(r, &[1.0, 2.0]).unwrap().wall_latency_mean, Some(1.5));
    }
}
