//! Unbiased pass@k estimation.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{PassAtKReport, SampleCounts};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("k must be >= 1")]
    ZeroK,
    #[error("k = {k} exceeds n = {n}")]
    KExceedsN { n: usize, k: usize },
    #[error("c = {c} exceeds n = {n}")]
    CExceedsN { n: usize, c: usize },
    #[error("problem {task_id}: {source}")]
    Problem {
        task_id: String,
        #[source]
        source: Box<MetricsError>,
    },
    #[error("no k values requested")]
    NoK,
}

/// `1 - C(n-c, k) / C(n, k)`, evaluated as `1 - prod_{i=0}^{k-1} (n-c-i)/(n-i)`.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if k > n {
        return Err(MetricsError::KExceedsN { n, k });
    }
    if c > n {
        return Err(MetricsError::CExceedsN { n, c });
    }
    if n - c < k {
        return Ok(1.0);
    }
    if k == 1 {
        return Ok(c as f64 / n as f64);
    }
    let miss = (0..k).fold(1.0_f64, |acc, i| acc * ((n - c - i) as f64 / (n - i) as f64));
    Ok(1.0 - miss)
}

/// Averages the per-problem estimate for every requested k.
pub fn aggregate_report(
    per_problem: &BTreeMap<String, SampleCounts>,
    k_values: &[usize],
) -> Result<PassAtKReport, MetricsError> {
    if k_values.is_empty() {
        return Err(MetricsError::NoK);
    }
    let mut estimates = BTreeMap::new();
    for &k in k_values {
        let mut sum = 0.0;
        for (task_id, counts) in per_problem {
            sum += pass_at_k(counts.n, counts.c, k).map_err(|e| MetricsError::Problem {
                task_id: task_id.clone(),
                source: Box::new(e),
            })?;
        }
        let mean = if per_problem.is_empty() {
            0.0
        } else {
            sum / per_problem.len() as f64
        };
        estimates.insert(k, mean);
    }
    Ok(PassAtKReport {
        per_problem: per_problem.clone(),
        k_values: k_values.to_vec(),
        estimates,
    })
}
