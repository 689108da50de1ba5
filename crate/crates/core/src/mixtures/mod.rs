//! MAP-EM for finite mixtures with a Dirichlet prior on the weights.
//!
//! A mixture is described by a [`MixtureSpec`]: a cluster count and a list of
//! components, each reading one or more columns of a [`Dataset`] through a
//! likelihood [`Family`]. Components multiply, so every cluster's density is
//! the product of its component densities.

mod families;
mod optimize;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use families::{
    check_support, log_dirichlet, log_pdf, log_pdf_gradient, Family, FamilyParams, KAPPA_MAX, PARAM_MAX,
};
use families::{covariance_floor, ComponentData};

/// Relative convergence threshold on the EM objective.
pub const EM_TOL: f64 = 1e-6;
pub const EM_MAX_ITERS: usize = 300;
/// Clusters with total responsibility below this fraction of N are empty.
pub const EMPTY_CLUSTER_FRACTION: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixtureError {
    #[error("{family} sample {value} is outside the support")]
    Support { family: &'static str, value: f64 },
    #[error("invalid mixture configuration: {0}")]
    Config(String),
    #[error("cluster {cluster} is empty (total responsibility {mass})")]
    EmptyCluster { cluster: usize, mass: f64 },
    #[error("EM objective became non-finite")]
    NonFinite,
    #[error("all {restarts} restarts of the {families} mixture degenerated: {last}")]
    AllRestartsDegenerate {
        families: String,
        restarts: usize,
        last: Box<MixtureError>,
    },
}

/// Column-oriented sample matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    n: usize,
}

impl Dataset {
    pub fn new(columns: Vec<Vec<f64>>) -> Result<Self, MixtureError> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(MixtureError::Config("dataset columns differ in length".into()));
        }
        Ok(Self { columns, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.columns[k]
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize, cols: &[usize]) -> Vec<f64> {
        cols.iter().map(|&c| self.columns[c][i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Dataset columns read by this component, in family order.
    pub columns: Vec<usize>,
    pub family: Family,
}

impl Component {
    pub fn new(family: Family, columns: Vec<usize>) -> Self {
        Self { columns, family }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub clusters: usize,
    pub components: Vec<Component>,
    pub dirichlet_alpha: Vec<f64>,
}

impl MixtureSpec {
    /// Spec with the same Dirichlet concentration on every cluster.
    pub fn new(clusters: usize, components: Vec<Component>, alpha: f64) -> Result<Self, MixtureError> {
        let spec = Self {
            clusters,
            components,
            dirichlet_alpha: vec![alpha; clusters],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), MixtureError> {
        if !(1..=2).contains(&self.clusters) {
            return Err(MixtureError::Config(format!("cluster count must be 1 or 2, got {}", self.clusters)));
        }
        if self.components.is_empty() {
            return Err(MixtureError::Config("mixture has no components".into()));
        }
        for c in &self.components {
            if c.columns.len() != c.family.dim() {
                return Err(MixtureError::Config(format!(
                    "{} component needs {} columns, got {}",
                    c.family.name(),
                    c.family.dim(),
                    c.columns.len()
                )));
            }
        }
        if self.dirichlet_alpha.len() != self.clusters || self.dirichlet_alpha.iter().any(|&a| !(a >= 1.0)) {
            return Err(MixtureError::Config(format!(
                "need one Dirichlet concentration >= 1 per cluster, got {:?}",
                self.dirichlet_alpha
            )));
        }
        Ok(())
    }

    /// Family names joined with `×`, used in error messages.
    pub fn family_names(&self) -> String {
        self.components.iter().map(|c| c.family.name()).collect::<Vec<_>>().join("×")
    }

    /// Log density of one sample under a cluster's parameters (product of
    /// component densities).
    pub fn log_likelihood(&self, params: &[FamilyParams], data: &Dataset, i: usize) -> Result<f64, MixtureError> {
        let mut out = 0.0;
        for (c, p) in self.components.iter().zip(params) {
            out += log_pdf(p, &data.row(i, &c.columns))?;
        }
        Ok(out)
    }
}

/// Result of fitting one mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub spec: MixtureSpec,
    /// `params[l][c]`: parameters of component `c` in cluster `l`.
    pub params: Vec<Vec<FamilyParams>>,
    pub weights: Vec<f64>,
    /// Row-major `N × L` responsibilities.
    pub responsibilities: Vec<f64>,
    /// Row-major `N × L` values of `ln π_l + ln p(x_i | θ_l)`.
    pub log_joint: Vec<f64>,
    /// Log posterior (mixture log-likelihood plus Dirichlet log-prior) after
    /// each E-step.
    pub trace: Vec<f64>,
    /// Expected complete-data log-likelihood plus the Dirichlet log-prior at
    /// the final parameters.
    pub q: f64,
    pub converged: bool,
    pub restart_id: usize,
    /// Rows whose likelihood vanished under every cluster.
    pub flagged_rows: usize,
}

impl MixtureFit {
    pub fn n(&self) -> usize {
        self.responsibilities.len() / self.spec.clusters
    }

    pub fn clusters(&self) -> usize {
        self.spec.clusters
    }

    pub fn gamma(&self, i: usize, l: usize) -> f64 {
        self.responsibilities[i * self.spec.clusters + l]
    }

    /// Responsibilities of one cluster as a column.
    pub fn gamma_column(&self, l: usize) -> Vec<f64> {
        let k = self.spec.clusters;
        (0..self.n()).map(|i| self.responsibilities[i * k + l]).collect()
    }

    /// Final value of the EM objective.
    pub fn log_posterior(&self) -> f64 {
        *self.trace.last().unwrap_or(&f64::NEG_INFINITY)
    }

    /// Complete-data log-likelihood with every sample hard-assigned to its
    /// most responsible cluster (no prior term).
    pub fn hard_log_likelihood(&self) -> f64 {
        let k = self.spec.clusters;
        (0..self.n())
            .map(|i| {
                let row = &self.responsibilities[i * k..(i + 1) * k];
                let best = argmax(row);
                self.log_joint[i * k + best]
            })
            .sum()
    }

    /// Responsibility-weighted mean of a data column per cluster.
    pub fn cluster_means(&self, data: &Dataset, column: usize) -> Vec<f64> {
        let col = data.column(column);
        (0..self.spec.clusters)
            .map(|l| {
                let g = self.gamma_column(l);
                let s0: f64 = g.iter().sum();
                g.iter().zip(col).map(|(a, b)| a * b).sum::<f64>() / s0
            })
            .collect()
    }

    pub fn dump(&self) -> FitDump {
        FitDump {
            families: self.spec.components.iter().map(|c| c.family).collect(),
            clusters: self.spec.clusters,
            params: self.params.clone(),
            weights: self.weights.clone(),
            trace: self.trace.clone(),
            q: self.q,
            converged: self.converged,
            restart_id: self.restart_id,
        }
    }
}

/// Serializable summary of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDump {
    pub families: Vec<Family>,
    pub clusters: usize,
    pub params: Vec<Vec<FamilyParams>>,
    pub weights: Vec<f64>,
    pub trace: Vec<f64>,
    pub q: f64,
    pub converged: bool,
    pub restart_id: usize,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (l, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = l;
        }
    }
    best
}

/// Output of an E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    pub responsibilities: Vec<f64>,
    pub log_joint: Vec<f64>,
    /// `Σ_i ln Σ_l π_l p(x_i | θ_l)`.
    pub log_likelihood: f64,
    pub flagged_rows: usize,
}

struct Prepared {
    components: Vec<ComponentData>,
    n: usize,
}

impl Prepared {
    fn new(spec: &MixtureSpec, data: &Dataset) -> Result<Self, MixtureError> {
        spec.validate()?;
        for c in &spec.components {
            if let Some(&bad) = c.columns.iter().find(|&&k| k >= data.column_count()) {
                return Err(MixtureError::Config(format!("column {bad} is out of range")));
            }
        }
        let components = spec
            .components
            .iter()
            .map(|c| {
                let cols: Vec<&[f64]> = c.columns.iter().map(|&k| data.column(k)).collect();
                ComponentData::new(c.family, &cols, covariance_floor(&cols))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { components, n: data.n() })
    }

    fn e_step(&self, params: &[Vec<FamilyParams>], weights: &[f64]) -> Result<EStep, MixtureError> {
        let k = weights.len();
        let n = self.n;
        let mut log_joint = vec![0.0; n * k];
        let mut column = vec![0.0; n];
        for l in 0..k {
            column.fill(weights[l].ln());
            for (data, p) in self.components.iter().zip(&params[l]) {
                data.accumulate_log_pdf(p, &mut column)?;
            }
            for i in 0..n {
                log_joint[i * k + l] = column[i];
            }
        }
        let (responsibilities, log_likelihood, flagged_rows) = normalize_log_joint(&log_joint, k);
        Ok(EStep {
            responsibilities,
            log_joint,
            log_likelihood,
            flagged_rows,
        })
    }

    fn m_step(
        &self,
        gamma: &[f64],
        k: usize,
        current: Option<&[Vec<FamilyParams>]>,
    ) -> Result<Vec<Vec<FamilyParams>>, MixtureError> {
        let n = self.n;
        (0..k)
            .map(|l| {
                let w: Vec<f64> = (0..n).map(|i| gamma[i * k + l]).collect();
                let mass: f64 = w.iter().sum();
                if !(mass >= EMPTY_CLUSTER_FRACTION * n as f64) || mass == 0.0 {
                    return Err(MixtureError::EmptyCluster { cluster: l, mass });
                }
                self.components
                    .iter()
                    .enumerate()
                    .map(|(c, data)| data.m_step(&w, current.map(|p| &p[l][c])))
                    .collect()
            })
            .collect()
    }
}

/// Row-wise log-sum-exp normalization. Rows where every entry is `-∞` become
/// uniform and are counted.
fn normalize_log_joint(log_joint: &[f64], k: usize) -> (Vec<f64>, f64, usize) {
    let mut gamma = vec![0.0; log_joint.len()];
    let mut total = 0.0;
    let mut flagged = 0;
    for (row, out) in log_joint.chunks(k).zip(gamma.chunks_mut(k)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY || max.is_nan() {
            out.fill(1.0 / k as f64);
            flagged += 1;
            total = f64::NEG_INFINITY;
            continue;
        }
        let mut s = 0.0;
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - max).exp();
            s += *o;
        }
        for o in out.iter_mut() {
            *o /= s;
        }
        total += max + s.ln();
    }
    (gamma, total, flagged)
}

/// Responsibilities for the given parameters and weights.
pub fn e_step(
    spec: &MixtureSpec,
    data: &Dataset,
    params: &[Vec<FamilyParams>],
    weights: &[f64],
) -> Result<EStep, MixtureError> {
    if params.len() != spec.clusters || weights.len() != spec.clusters {
        return Err(MixtureError::Config("need one parameter set and weight per cluster".into()));
    }
    Prepared::new(spec, data)?.e_step(params, weights)
}

/// MAP weight update under a Dirichlet prior. With every concentration equal
/// to one this is bit-for-bit the maximum-likelihood update `Σγ / N`.
pub fn m_step_weights(responsibilities: &[f64], alpha: &[f64], n: usize) -> Vec<f64> {
    let k = alpha.len();
    let mut sums = vec![0.0; k];
    for row in responsibilities.chunks(k) {
        for (s, g) in sums.iter_mut().zip(row) {
            *s += g;
        }
    }
    let denom = (n as f64 - k as f64) + alpha.iter().sum::<f64>();
    sums.iter().zip(alpha).map(|(s, a)| ((a - 1.0) + s) / denom).collect()
}

/// Weighted parameter update for every cluster and component.
pub fn m_step_params(
    spec: &MixtureSpec,
    data: &Dataset,
    responsibilities: &[f64],
) -> Result<Vec<Vec<FamilyParams>>, MixtureError> {
    if responsibilities.len() != data.n() * spec.clusters {
        return Err(MixtureError::Config("responsibility matrix has the wrong shape".into()));
    }
    Prepared::new(spec, data)?.m_step(responsibilities, spec.clusters, None)
}

fn expected_complete(gamma: &[f64], log_joint: &[f64]) -> f64 {
    gamma
        .iter()
        .zip(log_joint)
        .map(|(&g, &lj)| if g == 0.0 { 0.0 } else { g * lj })
        .sum()
}

/// Hard initial responsibilities: restart 0 splits at the median of the first
/// feature column, later restarts assign each sample to the nearest of `k`
/// randomly drawn samples.
fn initial_responsibilities(spec: &MixtureSpec, data: &Dataset, restart: usize, seed: u64) -> Vec<f64> {
    let n = data.n();
    let k = spec.clusters;
    if k == 1 {
        return vec![1.0; n];
    }
    let mut gamma = vec![0.0; n * k];
    if restart == 0 {
        let col = data.column(spec.components[0].columns[0]);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
        for (rank, &i) in order.iter().enumerate() {
            let l = (rank * k / n).min(k - 1);
            gamma[i * k + l] = 1.0;
        }
        return gamma;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    let columns: Vec<usize> = spec.components.iter().flat_map(|c| c.columns.iter().copied()).collect();
    let scales: Vec<f64> = columns
        .iter()
        .map(|&c| {
            let col = data.column(c);
            let m = col.iter().sum::<f64>() / n as f64;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
            if sd > 0.0 { 1.0 / sd } else { 1.0 }
        })
        .collect();
    let centers: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let dist = |c: usize| -> f64 {
            columns
                .iter()
                .zip(&scales)
                .map(|(&col, s)| {
                    let d = (data.column(col)[i] - data.column(col)[c]) * s;
                    d * d
                })
                .sum()
        };
        let mut best = 0;
        let mut best_d = dist(centers[0]);
        for (l, &c) in centers.iter().enumerate().skip(1) {
            let d = dist(c);
            if d < best_d {
                best = l;
                best_d = d;
            }
        }
        gamma[i * k + best] = 1.0;
        counts[best] += 1;
    }
    if counts.contains(&0) {
        // Coincident centres: fall back to a random assignment.
        gamma.fill(0.0);
        for i in 0..n {
            gamma[i * k + rng.random_range(0..k)] = 1.0;
        }
    }
    gamma
}

fn run_restart(
    prepared: &Prepared,
    spec: &MixtureSpec,
    data: &Dataset,
    restart: usize,
    seed: u64,
) -> Result<MixtureFit, MixtureError> {
    let n = data.n();
    let k = spec.clusters;
    let alpha = &spec.dirichlet_alpha;
    let mut gamma = initial_responsibilities(spec, data, restart, seed);
    let mut params = prepared.m_step(&gamma, k, None)?;
    let mut weights = m_step_weights(&gamma, alpha, n);
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut last;
    loop {
        last = prepared.e_step(&params, &weights)?;
        let objective = last.log_likelihood + log_dirichlet(&weights, alpha);
        if !objective.is_finite() {
            return Err(MixtureError::NonFinite);
        }
        gamma.clone_from(&last.responsibilities);
        if let Some(&prev) = trace.last() {
            if (objective - prev).abs() < EM_TOL * (1.0 + objective.abs()) {
                trace.push(objective);
                converged = true;
                break;
            }
        }
        trace.push(objective);
        if trace.len() >= EM_MAX_ITERS {
            break;
        }
        params = prepared.m_step(&gamma, k, Some(&params))?;
        weights = m_step_weights(&gamma, alpha, n);
    }
    let q = expected_complete(&last.responsibilities, &last.log_joint) + log_dirichlet(&weights, alpha);
    Ok(MixtureFit {
        spec: spec.clone(),
        params,
        weights,
        responsibilities: last.responsibilities,
        log_joint: last.log_joint,
        trace,
        q,
        converged,
        restart_id: restart,
        flagged_rows: last.flagged_rows,
    })
}

/// Fit a mixture by MAP-EM, keeping the best of `restarts` initializations.
pub fn fit(data: &Dataset, spec: &MixtureSpec, seed: u64, restarts: usize) -> Result<MixtureFit, MixtureError> {
    if restarts == 0 {
        return Err(MixtureError::Config("restarts must be positive".into()));
    }
    if data.n() < spec.clusters {
        return Err(MixtureError::Config(format!(
            "{} samples cannot support {} clusters",
            data.n(),
            spec.clusters
        )));
    }
    let prepared = Prepared::new(spec, data)?;
    // A single cluster has only one initialization.
    let restarts_used = if spec.clusters == 1 { 1 } else { restarts };
    let results: Vec<Result<MixtureFit, MixtureError>> = (0..restarts_used)
        .into_par_iter()
        .map(|r| run_restart(&prepared, spec, data, r, seed))
        .collect();
    let mut best: Option<MixtureFit> = None;
    let mut last_err = None;
    for result in results {
        match result {
            Ok(f) => {
                if best.as_ref().is_none_or(|b| f.log_posterior() > b.log_posterior()) {
                    best = Some(f);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| MixtureError::AllRestartsDegenerate {
        families: spec.family_names(),
        restarts: restarts_used,
        last: Box::new(last_err.expect("at least one restart ran")),
    })
}

/// Reorder clusters so the first has the highest mean temperature; ties go
/// to the larger weight.
pub fn resolve_labels(fit: &MixtureFit, temperature_means: &[f64]) -> MixtureFit {
    let k = fit.spec.clusters;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        temperature_means[b]
            .total_cmp(&temperature_means[a])
            .then(fit.weights[b].total_cmp(&fit.weights[a]))
            .then(a.cmp(&b))
    });
    let permute_rows = |m: &[f64]| -> Vec<f64> {
        m.chunks(k).flat_map(|row| order.iter().map(move |&l| row[l])).collect()
    };
    let mut out = fit.clone();
    out.params = order.iter().map(|&l| fit.params[l].clone()).collect();
    out.weights = order.iter().map(|&l| fit.weights[l]).collect();
    out.spec.dirichlet_alpha = order.iter().map(|&l| fit.spec.dirichlet_alpha[l]).collect();
    out.responsibilities = permute_rows(&fit.responsibilities);
    out.log_joint = permute_rows(&fit.log_joint);
    out
}

#[cfg(test)]
mod tests;
