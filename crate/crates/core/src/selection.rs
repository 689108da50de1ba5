//! Information criteria for choosing the number of mixture clusters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mixtures::{MixtureFit, MixtureSpec};

/// Free parameters: per-cluster family parameters plus `L − 1` weights.
pub fn parameter_count(spec: &MixtureSpec) -> usize {
    let per_cluster: usize = spec.components.iter().map(|c| c.family.parameter_count()).sum();
    spec.clusters * per_cluster + spec.clusters - 1
}

/// `Σ_i Σ_l γ ln γ` over a row-major responsibility matrix, with `0 ln 0 = 0`.
/// Always non-positive.
pub fn entropy(responsibilities: &[f64]) -> f64 {
    responsibilities
        .iter()
        .filter(|&&g| g > 0.0)
        .map(|&g| g * g.ln())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub clusters: usize,
    /// Hard-assignment complete-data log-likelihood.
    pub log_q: f64,
    /// Expected complete-data log-likelihood plus log-prior from EM.
    pub soft_q: f64,
    pub lambda: usize,
    pub n: usize,
    /// Signed entropy `Σ γ ln γ` (≤ 0).
    pub entropy: f64,
    pub bic: f64,
    pub aic: f64,
    pub clc: f64,
    pub icl: f64,
}

impl MetricReport {
    /// Build a report from raw quantities. The entropy penalty enters CLC and
    /// ICL through its magnitude, so uncertain assignments are penalized.
    pub fn new(clusters: usize, log_q: f64, soft_q: f64, lambda: usize, n: usize, entropy: f64) -> Self {
        let penalty = 2.0 * entropy.abs();
        let bic = lambda as f64 * (n as f64).ln() - 2.0 * log_q;
        Self {
            clusters,
            log_q,
            soft_q,
            lambda,
            n,
            entropy,
            bic,
            aic: 2.0 * lambda as f64 - 2.0 * log_q,
            clc: penalty - 2.0 * log_q,
            icl: bic + penalty,
        }
    }

    pub fn value(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::Ml => self.log_q,
            Criterion::Bic => self.bic,
            Criterion::Aic => self.aic,
            Criterion::Clc => self.clc,
            Criterion::Icl => self.icl,
        }
    }
}

pub fn metrics(fit: &MixtureFit) -> MetricReport {
    MetricReport::new(
        fit.clusters(),
        fit.hard_log_likelihood(),
        fit.q,
        parameter_count(&fit.spec),
        fit.n(),
        entropy(&fit.responsibilities),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Ml,
    Bic,
    Aic,
    Clc,
    Icl,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [Criterion::Ml, Criterion::Bic, Criterion::Aic, Criterion::Clc, Criterion::Icl];
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Ml => "ml",
            Criterion::Bic => "bic",
            Criterion::Aic => "aic",
            Criterion::Clc => "clc",
            Criterion::Icl => "icl",
        })
    }
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown criterion {s:?}"))
    }
}

/// Cluster count preferred by `criterion`: lowest value, or highest `log_q`
/// for ML. Ties go to the smaller count.
pub fn select(reports: &[MetricReport], criterion: Criterion) -> Option<usize> {
    let mut sorted: Vec<&MetricReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.clusters);
    let mut best: Option<&MetricReport> = None;
    for r in sorted {
        let better = match best {
            None => true,
            Some(b) => match criterion {
                Criterion::Ml => r.value(criterion) > b.value(criterion),
                _ => r.value(criterion) < b.value(criterion),
            },
        };
        if better {
            best = Some(r);
        }
    }
    best.map(|r| r.clusters)
}
