//! Likelihood families: densities, parameter gradients and weighted
//! maximum-likelihood updates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::optimize;
use super::MixtureError;
use crate::numerics::{bessel_ratio_unchecked, ln_bessel, ln_gamma, psi, BesselOrder, LN_2PI, MIN_ARG};

/// Upper clamp for positive parameters.
pub const PARAM_MAX: f64 = 1e8;
/// Upper clamp for the von Mises concentration.
pub const KAPPA_MAX: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gamma,
    BivariateGamma,
    VonMises,
    Beta,
    /// Multivariate normal over `dim` features.
    Gaussian { dim: usize },
}

impl Family {
    /// Number of feature columns consumed per sample.
    pub fn dim(&self) -> usize {
        match self {
            Family::Gamma | Family::VonMises | Family::Beta => 1,
            Family::BivariateGamma => 2,
            Family::Gaussian { dim } => *dim,
        }
    }

    /// Free parameters per cluster.
    pub fn parameter_count(&self) -> usize {
        match self {
            Family::Gamma | Family::VonMises | Family::Beta => 2,
            Family::BivariateGamma => 3,
            Family::Gaussian { dim } => dim + dim * (dim + 1) / 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Gamma => "gamma",
            Family::BivariateGamma => "bivariate_gamma",
            Family::VonMises => "von_mises",
            Family::Beta => "beta",
            Family::Gaussian { .. } => "gaussian",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilyParams {
    /// Shape `alpha`, scale `beta`.
    Gamma { alpha: f64, beta: f64 },
    /// Shape `alpha` and rate `beta` of the first coordinate; shape `a` of the
    /// second given the first.
    BivariateGamma { alpha: f64, beta: f64, a: f64 },
    VonMises { mu: f64, kappa: f64 },
    Beta { alpha: f64, beta: f64 },
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
}

impl FamilyParams {
    pub fn family(&self) -> Family {
        match self {
            FamilyParams::Gamma { .. } => Family::Gamma,
            FamilyParams::BivariateGamma { .. } => Family::BivariateGamma,
            FamilyParams::VonMises { .. } => Family::VonMises,
            FamilyParams::Beta { .. } => Family::Beta,
            FamilyParams::Gaussian { mean, .. } => Family::Gaussian { dim: mean.len() },
        }
    }

    /// Flat parameter vector in the order used by [`log_pdf_gradient`].
    /// Gaussian covariances contribute their upper triangle row by row.
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            FamilyParams::Gamma { alpha, beta } | FamilyParams::Beta { alpha, beta } => vec![*alpha, *beta],
            FamilyParams::BivariateGamma { alpha, beta, a } => vec![*alpha, *beta, *a],
            FamilyParams::VonMises { mu, kappa } => vec![*mu, *kappa],
            FamilyParams::Gaussian { mean, cov } => {
                let mut out = mean.clone();
                for (i, row) in cov.iter().enumerate() {
                    out.extend_from_slice(&row[i..]);
                }
                out
            }
        }
    }

    /// Inverse of [`FamilyParams::to_vec`].
    pub fn from_vec(family: Family, v: &[f64]) -> Result<Self, MixtureError> {
        if v.len() != family.parameter_count() {
            return Err(MixtureError::Config(format!(
                "{} expects {} parameters, got {}",
                family.name(),
                family.parameter_count(),
                v.len()
            )));
        }
        Ok(match family {
            Family::Gamma => FamilyParams::Gamma { alpha: v[0], beta: v[1] },
            Family::Beta => FamilyParams::Beta { alpha: v[0], beta: v[1] },
            Family::BivariateGamma => FamilyParams::BivariateGamma {
                alpha: v[0],
                beta: v[1],
                a: v[2],
            },
            Family::VonMises => FamilyParams::VonMises { mu: v[0], kappa: v[1] },
            Family::Gaussian { dim } => {
                let mean = v[..dim].to_vec();
                let mut cov = vec![vec![0.0; dim]; dim];
                let mut k = dim;
                for i in 0..dim {
                    for j in i..dim {
                        cov[i][j] = v[k];
                        cov[j][i] = v[k];
                        k += 1;
                    }
                }
                FamilyParams::Gaussian { mean, cov }
            }
        })
    }

    /// Location summary used for reporting.
    pub fn mean(&self) -> Vec<f64> {
        match self {
            FamilyParams::Gamma { alpha, beta } => vec![alpha * beta],
            FamilyParams::BivariateGamma { alpha, beta, a } => vec![alpha / beta, a * beta / (alpha - 1.0).max(MIN_ARG)],
            FamilyParams::VonMises { mu, .. } => vec![*mu],
            FamilyParams::Beta { alpha, beta } => vec![alpha / (alpha + beta)],
            FamilyParams::Gaussian { mean, .. } => mean.clone(),
        }
    }
}

fn support_error(family: Family, value: f64) -> MixtureError {
    MixtureError::Support {
        family: family.name(),
        value,
    }
}

/// Check that a sample lies in the family's support.
pub fn check_support(family: Family, x: &[f64]) -> Result<(), MixtureError> {
    if x.len() != family.dim() {
        return Err(MixtureError::Config(format!(
            "{} expects {} values per sample, got {}",
            family.name(),
            family.dim(),
            x.len()
        )));
    }
    match x.iter().find(|&&v| !in_support(family, v)) {
        Some(&v) => Err(support_error(family, v)),
        None => Ok(()),
    }
}

fn in_support(family: Family, v: f64) -> bool {
    match family {
        Family::Gamma | Family::BivariateGamma => v > 0.0 && v.is_finite(),
        Family::Beta => v > 0.0 && v < 1.0,
        Family::VonMises | Family::Gaussian { .. } => v.is_finite(),
    }
}

fn check_params(params: &FamilyParams) -> Result<(), MixtureError> {
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(MixtureError::Config(format!("{name} must be positive and finite, got {v}")))
        }
    };
    match params {
        FamilyParams::Gamma { alpha, beta } | FamilyParams::Beta { alpha, beta } => {
            positive("alpha", *alpha)?;
            positive("beta", *beta)
        }
        FamilyParams::BivariateGamma { alpha, beta, a } => {
            positive("alpha", *alpha)?;
            positive("beta", *beta)?;
            positive("a", *a)
        }
        FamilyParams::VonMises { mu, kappa } => {
            if !mu.is_finite() {
                return Err(MixtureError::Config(format!("mu must be finite, got {mu}")));
            }
            positive("kappa", *kappa)
        }
        FamilyParams::Gaussian { mean, cov } => {
            if cov.len() != mean.len() || cov.iter().any(|r| r.len() != mean.len()) {
                return Err(MixtureError::Config("covariance shape does not match mean".into()));
            }
            Ok(())
        }
    }
}

pub(crate) struct GaussianFactor {
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianFactor {
    pub(crate) fn new(mean: &[f64], cov: &[Vec<f64>]) -> Result<Self, MixtureError> {
        let d = mean.len();
        let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
        let chol = m
            .cholesky()
            .ok_or_else(|| MixtureError::Config("covariance is not positive definite".into()))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        Ok(Self {
            mean: DVector::from_column_slice(mean),
            chol_l: l,
            log_norm: -0.5 * d as f64 * LN_2PI - 0.5 * log_det,
        })
    }

    pub(crate) fn log_pdf(&self, x: &[f64]) -> f64 {
        let r = DVector::from_column_slice(x) - &self.mean;
        let z = self
            .chol_l
            .solve_lower_triangular(&r)
            .expect("cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

/// Log density of a single sample.
pub fn log_pdf(params: &FamilyParams, x: &[f64]) -> Result<f64, MixtureError> {
    let family = params.family();
    check_support(family, x)?;
    check_params(params)?;
    Ok(match *params {
        FamilyParams::Gamma { alpha, beta } => {
            let x = x[0];
            (alpha - 1.0) * x.ln() - x / beta - alpha * beta.ln() - ln_gamma(alpha)
        }
        FamilyParams::BivariateGamma { alpha, beta, a } => {
            let (x, y) = (x[0], x[1]);
            alpha * beta.ln() + (alpha + a - 1.0) * x.ln() + (a - 1.0) * y.ln() - beta * x - x * y
                - ln_gamma(alpha)
                - ln_gamma(a)
        }
        FamilyParams::VonMises { mu, kappa } => {
            kappa * (x[0] - mu).cos() - LN_2PI - ln_bessel(BesselOrder::Zero, kappa)
        }
        FamilyParams::Beta { alpha, beta } => {
            let x = x[0];
            (alpha - 1.0) * x.ln() + (beta - 1.0) * (-x).ln_1p() - crate::numerics::ln_beta(alpha, beta)
        }
        FamilyParams::Gaussian { ref mean, ref cov } => GaussianFactor::new(mean, cov)?.log_pdf(x),
    })
}

/// Gradient of [`log_pdf`] with respect to the parameters, in the order of
/// [`FamilyParams::to_vec`].
pub fn log_pdf_gradient(params: &FamilyParams, x: &[f64]) -> Result<Vec<f64>, MixtureError> {
    let family = params.family();
    check_support(family, x)?;
    check_params(params)?;
    Ok(match *params {
        FamilyParams::Gamma { alpha, beta } => {
            let x = x[0];
            vec![x.ln() - beta.ln() - psi(alpha), (x / beta - alpha) / beta]
        }
        FamilyParams::BivariateGamma { alpha, beta, a } => {
            let (x, y) = (x[0], x[1]);
            vec![beta.ln() + x.ln() - psi(alpha), alpha / beta - x, x.ln() + y.ln() - psi(a)]
        }
        FamilyParams::VonMises { mu, kappa } => {
            let d = x[0] - mu;
            vec![kappa * d.sin(), d.cos() - bessel_ratio_unchecked(kappa)]
        }
        FamilyParams::Beta { alpha, beta } => {
            let x = x[0];
            let both = psi(alpha + beta);
            vec![x.ln() - psi(alpha) + both, (-x).ln_1p() - psi(beta) + both]
        }
        FamilyParams::Gaussian { ref mean, ref cov } => {
            let d = mean.len();
            let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
            let inv = m
                .try_inverse()
                .ok_or_else(|| MixtureError::Config("covariance is singular".into()))?;
            let r = DVector::from_fn(d, |i, _| x[i] - mean[i]);
            let w = &inv * r;
            let g = (&w * w.transpose() - &inv) * 0.5;
            let mut out: Vec<f64> = w.iter().copied().collect();
            for i in 0..d {
                for j in i..d {
                    out.push(if i == j { g[(i, j)] } else { 2.0 * g[(i, j)] });
                }
            }
            out
        }
    })
}

/// Log density of the Dirichlet distribution at `pi`, with `0 · ln 0 = 0`.
pub fn log_dirichlet(pi: &[f64], alpha: &[f64]) -> f64 {
    if pi.len() <= 1 {
        return 0.0;
    }
    let total: f64 = alpha.iter().sum();
    let mut out = ln_gamma(total) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
    for (&p, &a) in pi.iter().zip(alpha) {
        if a != 1.0 {
            out += (a - 1.0) * p.ln();
        }
    }
    out
}

/// Feature columns for one mixture component with the per-sample transforms
/// each family needs precomputed.
#[derive(Debug, Clone)]
pub(crate) enum ComponentData {
    Gamma { x: Vec<f64>, lx: Vec<f64> },
    BivariateGamma { x: Vec<f64>, y: Vec<f64>, lx: Vec<f64>, ly: Vec<f64> },
    VonMises { cos: Vec<f64>, sin: Vec<f64> },
    Beta { x: Vec<f64>, lx: Vec<f64>, l1x: Vec<f64> },
    Gaussian { cols: Vec<Vec<f64>>, floor: f64 },
}

fn weighted_sum(w: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn weighted_moments(w: &[f64], x: &[f64], s0: f64) -> (f64, f64) {
    let m = weighted_sum(w, x) / s0;
    let var = w.iter().zip(x).map(|(g, v)| g * (v - m) * (v - m)).sum::<f64>() / s0;
    (m, var)
}

fn log_bounds(n: usize, upper: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (vec![MIN_ARG.ln(); n], upper.iter().map(|u| u.ln()).collect())
}

fn clamp_param(v: f64, hi: f64) -> f64 {
    if v.is_nan() {
        1.0
    } else {
        v.clamp(MIN_ARG, hi)
    }
}

/// Run the log-space ascent from whichever start scores higher.
fn ascend<F>(objective: F, starts: &[Vec<f64>], upper: &[f64]) -> Vec<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (lower_log, upper_log) = log_bounds(upper.len(), upper);
    let log_objective = |theta: &[f64]| {
        let p: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
        let (v, g) = objective(&p);
        (v, g.iter().zip(&p).map(|(gi, pi)| gi * pi).collect::<Vec<_>>())
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in starts {
        let theta: Vec<f64> = s.iter().zip(upper).map(|(&v, &hi)| clamp_param(v, hi).ln()).collect();
        let (v, _) = log_objective(&theta);
        if v.is_finite() && best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((theta, v));
        }
    }
    let start = best.map(|(t, _)| t).unwrap_or_else(|| vec![0.0; upper.len()]);
    let (theta, _) = optimize::maximize(log_objective, &start, &lower_log, &upper_log);
    theta
        .iter()
        .zip(lower_log.iter().zip(&upper_log))
        .zip(upper)
        .map(|((&t, (&lo, &hi_log)), &hi)| {
            // Map the box edges back exactly.
            if t >= hi_log {
                hi
            } else if t <= lo {
                MIN_ARG
            } else {
                t.exp()
            }
        })
        .collect()
}

impl ComponentData {
    pub(crate) fn new(family: Family, cols: &[&[f64]], gaussian_floor: f64) -> Result<Self, MixtureError> {
        if cols.len() != family.dim() {
            return Err(MixtureError::Config(format!(
                "{} expects {} columns, got {}",
                family.name(),
                family.dim(),
                cols.len()
            )));
        }
        for c in cols {
            if let Some(&v) = c.iter().find(|&&v| !in_support(family, v)) {
                return Err(support_error(family, v));
            }
        }
        Ok(match family {
            Family::Gamma => Self::Gamma {
                x: cols[0].to_vec(),
                lx: cols[0].iter().map(|v| v.ln()).collect(),
            },
            Family::BivariateGamma => Self::BivariateGamma {
                x: cols[0].to_vec(),
                y: cols[1].to_vec(),
                lx: cols[0].iter().map(|v| v.ln()).collect(),
                ly: cols[1].iter().map(|v| v.ln()).collect(),
            },
            Family::VonMises => Self::VonMises {
                cos: cols[0].iter().map(|v| v.cos()).collect(),
                sin: cols[0].iter().map(|v| v.sin()).collect(),
            },
            Family::Beta => Self::Beta {
                x: cols[0].to_vec(),
                lx: cols[0].iter().map(|v| v.ln()).collect(),
                l1x: cols[0].iter().map(|v| (-v).ln_1p()).collect(),
            },
            Family::Gaussian { .. } => Self::Gaussian {
                cols: cols.iter().map(|c| c.to_vec()).collect(),
                floor: gaussian_floor,
            },
        })
    }

    /// Add `log p(x_i | params)` to `out[i]` for every sample.
    pub(crate) fn accumulate_log_pdf(&self, params: &FamilyParams, out: &mut [f64]) -> Result<(), MixtureError> {
        check_params(params)?;
        match (self, params) {
            (Self::Gamma { x, lx }, &FamilyParams::Gamma { alpha, beta }) => {
                let c = -alpha * beta.ln() - ln_gamma(alpha);
                for (o, (x, lx)) in out.iter_mut().zip(x.iter().zip(lx)) {
                    *o += (alpha - 1.0) * lx - x / beta + c;
                }
            }
            (Self::BivariateGamma { x, y, lx, ly }, &FamilyParams::BivariateGamma { alpha, beta, a }) => {
                let c = alpha * beta.ln() - ln_gamma(alpha) - ln_gamma(a);
                for i in 0..out.len() {
                    out[i] += (alpha + a - 1.0) * lx[i] + (a - 1.0) * ly[i] - beta * x[i] - x[i] * y[i] + c;
                }
            }
            (Self::VonMises { cos, sin }, &FamilyParams::VonMises { mu, kappa }) => {
                let (cm, sm) = (mu.cos(), mu.sin());
                let c = -LN_2PI - ln_bessel(BesselOrder::Zero, kappa);
                for (o, (co, si)) in out.iter_mut().zip(cos.iter().zip(sin)) {
                    *o += kappa * (co * cm + si * sm) + c;
                }
            }
            (Self::Beta { lx, l1x, .. }, &FamilyParams::Beta { alpha, beta }) => {
                let c = -crate::numerics::ln_beta(alpha, beta);
                for (o, (lx, l1x)) in out.iter_mut().zip(lx.iter().zip(l1x)) {
                    *o += (alpha - 1.0) * lx + (beta - 1.0) * l1x + c;
                }
            }
            (Self::Gaussian { cols, .. }, FamilyParams::Gaussian { mean, cov }) => {
                let factor = GaussianFactor::new(mean, cov)?;
                let mut x = vec![0.0; cols.len()];
                for (i, o) in out.iter_mut().enumerate() {
                    for (k, c) in cols.iter().enumerate() {
                        x[k] = c[i];
                    }
                    *o += factor.log_pdf(&x);
                }
            }
            _ => return Err(MixtureError::Config("parameters do not match component family".into())),
        }
        Ok(())
    }

    /// Maximize the `w`-weighted log-likelihood. `current` (if any) is used
    /// as a candidate starting point, so the result never scores below it.
    pub(crate) fn m_step(&self, w: &[f64], current: Option<&FamilyParams>) -> Result<FamilyParams, MixtureError> {
        let s0: f64 = w.iter().sum();
        if !(s0 > 0.0) {
            return Err(MixtureError::Config("component weights sum to zero".into()));
        }
        let cur = current.map(|p| p.to_vec());
        match self {
            Self::Gamma { x, lx } => {
                let m_lx = weighted_sum(w, lx) / s0;
                let (m, var) = weighted_moments(w, x, s0);
                let objective = |p: &[f64]| {
                    let (a, b) = (p[0], p[1]);
                    let v = (a - 1.0) * m_lx - m / b - a * b.ln() - ln_gamma(a);
                    (v, vec![m_lx - b.ln() - psi(a), (m / b - a) / b])
                };
                let mom = vec![m * m / var, var / m];
                let starts: Vec<Vec<f64>> = cur.into_iter().chain(std::iter::once(mom)).collect();
                let p = ascend(objective, &starts, &[PARAM_MAX, PARAM_MAX]);
                Ok(FamilyParams::Gamma { alpha: p[0], beta: p[1] })
            }
            Self::BivariateGamma { x, y, lx, ly } => {
                let m_lx = weighted_sum(w, lx) / s0;
                let m_ly = weighted_sum(w, ly) / s0;
                let (m, var) = weighted_moments(w, x, s0);
                let m_xy = w.iter().zip(x.iter().zip(y)).map(|(g, (a, b))| g * a * b).sum::<f64>() / s0;
                let objective = |p: &[f64]| {
                    let (al, be, a) = (p[0], p[1], p[2]);
                    let v = al * be.ln() + (al + a - 1.0) * m_lx + (a - 1.0) * m_ly - be * m - m_xy
                        - ln_gamma(al)
                        - ln_gamma(a);
                    (v, vec![be.ln() + m_lx - psi(al), al / be - m, m_lx + m_ly - psi(a)])
                };
                let mom = vec![m * m / var, m / var, m_xy];
                let starts: Vec<Vec<f64>> = cur.into_iter().chain(std::iter::once(mom)).collect();
                let p = ascend(objective, &starts, &[PARAM_MAX; 3]);
                Ok(FamilyParams::BivariateGamma {
                    alpha: p[0],
                    beta: p[1],
                    a: p[2],
                })
            }
            Self::VonMises { cos, sin } => {
                let c = weighted_sum(w, cos) / s0;
                let s = weighted_sum(w, sin) / s0;
                let mu = s.atan2(c);
                let rbar = c.hypot(s).min(1.0);
                let objective = |p: &[f64]| {
                    let k = p[0];
                    (k * rbar - ln_bessel(BesselOrder::Zero, k), vec![rbar - bessel_ratio_unchecked(k)])
                };
                let approx = if rbar < 1.0 {
                    rbar * (2.0 - rbar * rbar) / (1.0 - rbar * rbar)
                } else {
                    KAPPA_MAX
                };
                let starts: Vec<Vec<f64>> =
                    cur.map(|v| vec![v[1]]).into_iter().chain(std::iter::once(vec![approx])).collect();
                let p = ascend(objective, &starts, &[KAPPA_MAX]);
                Ok(FamilyParams::VonMises { mu, kappa: p[0] })
            }
            Self::Beta { x, lx, l1x } => {
                let m_lx = weighted_sum(w, lx) / s0;
                let m_l1x = weighted_sum(w, l1x) / s0;
                let (m, var) = weighted_moments(w, x, s0);
                let objective = |p: &[f64]| {
                    let (a, b) = (p[0], p[1]);
                    let both = psi(a + b);
                    let v = (a - 1.0) * m_lx + (b - 1.0) * m_l1x - crate::numerics::ln_beta(a, b);
                    (v, vec![m_lx - psi(a) + both, m_l1x - psi(b) + both])
                };
                let common = m * (1.0 - m) / var - 1.0;
                let mom = if common > 0.0 {
                    vec![m * common, (1.0 - m) * common]
                } else {
                    vec![1.0, 1.0]
                };
                let starts: Vec<Vec<f64>> = cur.into_iter().chain(std::iter::once(mom)).collect();
                let p = ascend(objective, &starts, &[PARAM_MAX, PARAM_MAX]);
                Ok(FamilyParams::Beta { alpha: p[0], beta: p[1] })
            }
            Self::Gaussian { cols, floor } => Ok(gaussian_m_step(cols, w, s0, *floor)),
        }
    }
}

/// Weighted mean and covariance with eigenvalues floored at `floor`.
pub(crate) fn gaussian_m_step(cols: &[Vec<f64>], w: &[f64], s0: f64, floor: f64) -> FamilyParams {
    let d = cols.len();
    let mean: Vec<f64> = cols.iter().map(|c| weighted_sum(w, c) / s0).collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for a in 0..d {
        for b in a..d {
            let v = w
                .iter()
                .enumerate()
                .map(|(i, g)| g * (cols[a][i] - mean[a]) * (cols[b][i] - mean[b]))
                .sum::<f64>()
                / s0;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = cov.clone().symmetric_eigen();
    let cov = if eig.eigenvalues.iter().any(|&l| l < floor) {
        let floored = eig.eigenvalues.map(|l| l.max(floor));
        let q = &eig.eigenvectors;
        let mut out = q * DMatrix::from_diagonal(&floored) * q.transpose();
        // Restore exact symmetry lost to rounding.
        for a in 0..d {
            for b in a + 1..d {
                let s = 0.5 * (out[(a, b)] + out[(b, a)]);
                out[(a, b)] = s;
                out[(b, a)] = s;
            }
        }
        out
    } else {
        cov
    };
    FamilyParams::Gaussian {
        mean,
        cov: (0..d).map(|a| (0..d).map(|b| cov[(a, b)]).collect()).collect(),
    }
}

/// Eigenvalue floor for Gaussian covariances: a fraction of the average
/// per-dimension variance of the whole data set.
pub(crate) fn covariance_floor(cols: &[&[f64]]) -> f64 {
    let mut total = 0.0;
    for c in cols {
        let n = c.len() as f64;
        let m = c.iter().sum::<f64>() / n;
        total += c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    }
    let avg = total / cols.len().max(1) as f64;
    (1e-6 * avg).max(MIN_ARG)
}
