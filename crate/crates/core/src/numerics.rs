//! Special functions and small numerical kernels used by the likelihood families.
//!
//! Log-gamma and digamma are evaluated with a Stirling series plus upward
//! recurrence; near the roots of ln Γ at 1 and 2 a zeta-coefficient Taylor
//! series keeps the relative error bounded. Modified Bessel functions of order
//! 0 and 1 use the power series for small arguments and the Hankel asymptotic
//! expansion in the log domain for large ones.

use std::f64::consts::PI;

use thiserror::Error;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Smallest admissible value for every positivity-constrained parameter.
pub const MIN_ARG: f64 = 1e-8;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Argument above which the Bessel functions switch to the asymptotic path.
const BESSEL_ASYMPTOTIC_FROM: f64 = 50.0;

// ζ(k) − 1 for k = 2..=31.
const ZETA_MINUS_ONE: [f64; 30] = [
    0.644_934_066_848_226_4,
    0.202_056_903_159_594_3,
    0.082_323_233_711_138_19,
    0.036_927_755_143_369_93,
    0.017_343_061_984_449_14,
    0.008_349_277_381_922_827,
    0.004_077_356_197_944_339,
    0.002_008_392_826_082_214,
    0.000_994_575_127_818_085_3,
    0.000_494_188_604_119_464_6,
    0.000_246_086_553_308_048_3,
    0.000_122_713_347_578_489_1,
    6.124_813_505_870_483e-5,
    3.058_823_630_702_049e-5,
    1.528_225_940_865_187e-5,
    7.637_197_637_899_762e-6,
    3.817_293_264_999_84e-6,
    1.908_212_716_553_939e-6,
    9.539_620_338_727_961e-7,
    4.769_329_867_878_065e-7,
    2.384_505_027_277_33e-7,
    1.192_199_259_653_111e-7,
    5.960_818_905_125_948e-8,
    2.980_350_351_465_228e-8,
    1.490_155_482_836_504e-8,
    7.450_711_789_835_429e-9,
    3.725_334_024_788_457e-9,
    1.862_659_723_513_049e-9,
    9.313_274_324_196_682e-10,
    4.656_629_065_033_784e-10,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{function} is undefined for argument {arg}")]
    Domain { function: &'static str, arg: f64 },
    #[error("invalid special-function configuration: {0}")]
    Config(String),
}

/// Truncation and domain-guard settings for the special functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecialFnConfig {
    /// Maximum number of power-series terms for the Bessel functions.
    pub series_terms: usize,
    /// Smallest admissible κ, α, β, ...
    pub min_arg: f64,
}

impl Default for SpecialFnConfig {
    fn default() -> Self {
        Self {
            series_terms: 200,
            min_arg: MIN_ARG,
        }
    }
}

impl SpecialFnConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        if self.series_terms < 20 {
            return Err(NumericsError::Config(format!(
                "series_terms must be at least 20, got {}",
                self.series_terms
            )));
        }
        if !(self.min_arg > 0.0) {
            return Err(NumericsError::Config(format!(
                "min_arg must be positive, got {}",
                self.min_arg
            )));
        }
        Ok(())
    }

    /// Clamp a positivity-constrained parameter into `[min_arg, ∞)`.
    pub fn clamp_positive(&self, x: f64) -> f64 {
        if x.is_nan() {
            self.min_arg
        } else {
            x.max(self.min_arg)
        }
    }
}

/// Order of the modified Bessel function of the first kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BesselOrder {
    Zero,
    One,
}

impl BesselOrder {
    fn nu(self) -> f64 {
        match self {
            BesselOrder::Zero => 0.0,
            BesselOrder::One => 1.0,
        }
    }
}

fn check_positive(function: &'static str, x: f64) -> Result<(), NumericsError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(NumericsError::Domain { function, arg: x })
    }
}

/// ln Γ(x) for x > 0.
pub fn log_gamma(x: f64) -> Result<f64, NumericsError> {
    check_positive("log_gamma", x)?;
    Ok(ln_gamma(x))
}

/// Unchecked ln Γ(x); the caller guarantees x > 0.
pub(crate) fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        return ln_gamma(x + 1.0) - x.ln();
    }
    if x < 1.5 {
        let z = x - 1.0;
        return -z.ln_1p() + z * (1.0 - EULER_GAMMA) + zeta_series(z);
    }
    if x < 2.5 {
        let w = x - 2.0;
        return w * (1.0 - EULER_GAMMA) + zeta_series(w);
    }
    if x < 10.0 {
        let mut y = x;
        let mut prod = 1.0;
        while y < 10.0 {
            prod *= y;
            y += 1.0;
        }
        return stirling(y) - prod.ln();
    }
    stirling(x)
}

// Σ_{k≥2} (−1)^k (ζ(k) − 1) z^k / k, valid for |z| ≤ 0.5.
fn zeta_series(z: f64) -> f64 {
    let mut sum = 0.0;
    let mut pow = z;
    for (i, c) in ZETA_MINUS_ONE.iter().enumerate() {
        let k = (i + 2) as f64;
        // pow = (−1)^(k−1) z^k
        pow *= -z;
        sum += c * pow / k;
    }
    -sum
}

fn stirling(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 360.0
                    + inv2
                        * (1.0 / 1260.0
                            + inv2
                                * (-1.0 / 1680.0
                                    + inv2
                                        * (1.0 / 1188.0
                                            + inv2 * (-691.0 / 360_360.0 + inv2 / 156.0))))));
    (x - 0.5) * x.ln() - x + 0.5 * LN_2PI + series
}

/// ψ(x) = Γ′(x)/Γ(x) for x > 0.
pub fn digamma(x: f64) -> Result<f64, NumericsError> {
    check_positive("digamma", x)?;
    Ok(psi(x))
}

pub(crate) fn psi(x: f64) -> f64 {
    let mut y = x;
    let mut shift = 0.0;
    while y < 10.0 {
        shift += 1.0 / y;
        y += 1.0;
    }
    let inv2 = 1.0 / (y * y);
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32_760.0 - inv2 / 12.0))))));
    y.ln() - 0.5 / y - tail - shift
}

/// ln B(α, β).
pub(crate) fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Modified Bessel function of the first kind, I₀(κ) or I₁(κ).
///
/// Overflows to `+∞` for κ beyond roughly 713; use [`log_bessel_i`] there.
pub fn bessel_i(order: BesselOrder, kappa: f64) -> Result<f64, NumericsError> {
    bessel_i_with(order, kappa, &SpecialFnConfig::default())
}

pub fn bessel_i_with(
    order: BesselOrder,
    kappa: f64,
    cfg: &SpecialFnConfig,
) -> Result<f64, NumericsError> {
    check_positive("bessel_i", kappa)?;
    if kappa <= BESSEL_ASYMPTOTIC_FROM {
        Ok(bessel_series(order, kappa, cfg.series_terms))
    } else {
        Ok(log_bessel_asymptotic(order, kappa).exp())
    }
}

/// ln I₀(κ) or ln I₁(κ), finite for every finite κ > 0.
pub fn log_bessel_i(order: BesselOrder, kappa: f64) -> Result<f64, NumericsError> {
    check_positive("log_bessel_i", kappa)?;
    Ok(ln_bessel(order, kappa))
}

pub(crate) fn ln_bessel(order: BesselOrder, kappa: f64) -> f64 {
    if kappa <= BESSEL_ASYMPTOTIC_FROM {
        bessel_series(order, kappa, SpecialFnConfig::default().series_terms).ln()
    } else {
        log_bessel_asymptotic(order, kappa)
    }
}

/// A(κ) = I₁(κ)/I₀(κ), the derivative of ln I₀.
pub fn bessel_ratio(kappa: f64) -> Result<f64, NumericsError> {
    check_positive("bessel_ratio", kappa)?;
    Ok(bessel_ratio_unchecked(kappa))
}

pub(crate) fn bessel_ratio_unchecked(kappa: f64) -> f64 {
    if kappa <= BESSEL_ASYMPTOTIC_FROM {
        let terms = SpecialFnConfig::default().series_terms;
        bessel_series(BesselOrder::One, kappa, terms) / bessel_series(BesselOrder::Zero, kappa, terms)
    } else {
        (log_bessel_asymptotic(BesselOrder::One, kappa)
            - log_bessel_asymptotic(BesselOrder::Zero, kappa))
        .exp()
    }
}

fn bessel_series(order: BesselOrder, kappa: f64, max_terms: usize) -> f64 {
    let nu = order.nu();
    let q = 0.25 * kappa * kappa;
    let mut term = match order {
        BesselOrder::Zero => 1.0,
        BesselOrder::One => 0.5 * kappa,
    };
    let mut sum = term;
    for n in 1..max_terms {
        let n = n as f64;
        term *= q / (n * (n + nu));
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn log_bessel_asymptotic(order: BesselOrder, kappa: f64) -> f64 {
    let mu = 4.0 * order.nu() * order.nu();
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..60 {
        let odd = (2 * j - 1) as f64;
        let next = -term * (mu - odd * odd) / (j as f64 * 8.0 * kappa);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    kappa - 0.5 * (2.0 * PI * kappa).ln() + sum.ln()
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_gradient<F, E>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>, E>
where
    F: Fn(&[f64]) -> Result<f64, E>,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe)?;
        probe[i] = orig - h;
        let down = f(&probe)?;
        probe[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}
