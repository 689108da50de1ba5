//! Dense optical flow: 2×2 finite-difference derivatives and the
//! posterior-weighted Lucas–Kanade solver.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::imaging::{Frame, Grid, SegmentationMask};

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("shape mismatch: {what} is {found:?}, expected {expected:?}")]
    ShapeMismatch {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid flow configuration: {0}")]
    Config(String),
    #[error("layer weights sum to {sum} at ({row}, {col}), expected 1")]
    WeightSum { row: usize, col: usize, sum: f64 },
    #[error("weight {value} at ({row}, {col}) is outside [0, 1]")]
    WeightRange { row: usize, col: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeStack {
    pub ix: Grid,
    pub iy: Grid,
    pub it: Grid,
    pub sigma: f64,
}

impl DerivativeStack {
    pub fn shape(&self) -> (usize, usize) {
        self.ix.shape()
    }
}

/// Velocity field in pixels per frame. `u` runs along columns, `v` along rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Grid,
    pub v: Grid,
}

impl FlowField {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            u: Grid::filled(rows, cols, 0.0),
            v: Grid::filled(rows, cols, 0.0),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.u.shape()
    }

    pub fn vector(&self, i: usize, j: usize) -> (f64, f64) {
        (self.u.get(i, j), self.v.get(i, j))
    }

    pub fn magnitude(&self, i: usize, j: usize) -> f64 {
        self.u.get(i, j).hypot(self.v.get(i, j))
    }

    /// Angle with the `atan2(u, v)` argument order.
    pub fn angle(&self, i: usize, j: usize) -> f64 {
        self.u.get(i, j).atan2(self.v.get(i, j))
    }
}

/// Inverse of the polar convention used by [`FlowField::angle`].
pub fn from_polar(magnitude: f64, angle: f64) -> (f64, f64) {
    (magnitude * angle.sin(), magnitude * angle.cos())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlkConfig {
    /// Half-width `w`; the window spans `2w + 1` pixels per side.
    pub half_width: usize,
    pub tau: f64,
    pub sigma: f64,
}

impl Default for WlkConfig {
    fn default() -> Self {
        Self {
            half_width: 8,
            tau: 1e-8,
            sigma: 1.0,
        }
    }
}

impl WlkConfig {
    pub fn window_size(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if self.half_width == 0 {
            return Err(FlowError::Config("window half-width must be positive".into()));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(FlowError::Config(format!("tau must be >= 0, got {}", self.tau)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(FlowError::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Per-layer flow together with the number of pixels that fell back to zero
/// because their normal matrix was singular.
#[derive(Debug, Clone, PartialEq)]
pub struct WlkOutput {
    pub fields: Vec<FlowField>,
    pub singular_pixels: usize,
}

fn check_shape(what: &str, expected: (usize, usize), found: (usize, usize)) -> Result<(), FlowError> {
    if expected != found {
        return Err(FlowError::ShapeMismatch {
            what: what.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Map both frames onto a shared [0, 255] intensity scale using the union of
/// their masked temperature ranges. Unmasked pixels become 0.
pub fn to_intensity(
    prev: (&Frame, &SegmentationMask),
    next: (&Frame, &SegmentationMask),
) -> Result<(Grid, Grid), FlowError> {
    let shape = prev.0.shape();
    check_shape("previous mask", shape, prev.1.shape())?;
    check_shape("next frame", shape, next.0.shape())?;
    check_shape("next mask", shape, next.1.shape())?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (frame, mask) in [prev, next] {
        for (&t, &m) in frame.temperatures().as_slice().iter().zip(mask.as_slice()) {
            if m {
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
    }
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let convert = |(frame, mask): (&Frame, &SegmentationMask)| {
        let (rows, cols) = frame.shape();
        Grid::from_fn(rows, cols, |i, j| {
            if mask.get(i, j) {
                (frame.temperatures().get(i, j) - lo) * scale
            } else {
                0.0
            }
        })
    };
    Ok((convert(prev), convert(next)))
}

/// 2×2 block derivatives with replicate padding on the last row and column.
pub fn derivatives(prev: &Grid, next: &Grid, sigma: f64) -> Result<DerivativeStack, FlowError> {
    check_shape("next intensity", prev.shape(), next.shape())?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(FlowError::Config(format!("sigma must be > 0, got {sigma}")));
    }
    let (rows, cols) = prev.shape();
    let mut ix = Grid::filled(rows, cols, 0.0);
    let mut iy = Grid::filled(rows, cols, 0.0);
    let mut it = Grid::filled(rows, cols, 0.0);
    for i in 0..rows {
        let i1 = (i + 1).min(rows - 1);
        for j in 0..cols {
            let j1 = (j + 1).min(cols - 1);
            let (a, b, c, d) = (prev.get(i, j), prev.get(i, j1), prev.get(i1, j), prev.get(i1, j1));
            ix.set(i, j, (b - a) + (d - c));
            iy.set(i, j, (c - a) + (d - b));
            let next_sum = next.get(i, j) + next.get(i, j1) + next.get(i1, j) + next.get(i1, j1);
            it.set(i, j, sigma * ((a + b + c + d) - next_sum));
        }
    }
    Ok(DerivativeStack { ix, iy, it, sigma })
}

/// Solve the 2×2 weighted ridge system `(X Γ Xᵀ + τI) v = X Γ y` for one
/// window. Each sample is `(weight, ix, iy, y)`. Returns `None` when the
/// system is singular.
pub fn solve_window(samples: impl IntoIterator<Item = (f64, f64, f64, f64)>, tau: f64) -> Option<(f64, f64)> {
    let (mut sxx, mut sxy, mut syy, mut bx, mut by) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (w, gx, gy, y) in samples {
        sxx += w * gx * gx;
        sxy += w * gx * gy;
        syy += w * gy * gy;
        bx += w * gx * y;
        by += w * gy * y;
    }
    let a = sxx + tau;
    let d = syy + tau;
    let det = a * d - sxy * sxy;
    let trace = a + d;
    if !(det > f64::EPSILON * trace * trace) {
        return None;
    }
    Some(((d * bx - sxy * by) / det, (a * by - sxy * bx) / det))
}

/// The derivative kernels scale a true displacement by `-2σ` in the solved
/// vector (spatial kernels sum two differences, the temporal kernel sums four
/// samples with opposite sign); this undoes that fixed gain.
pub fn kernel_gain(sigma: f64) -> f64 {
    -1.0 / (2.0 * sigma)
}

/// Weighted Lucas–Kanade solve, one field per weight grid. Weights of pixels
/// outside `mask` are treated as zero and unmasked pixels get zero flow.
pub fn wlk_solve(
    deriv: &DerivativeStack,
    weights: &[Grid],
    mask: &SegmentationMask,
    cfg: &WlkConfig,
) -> Result<WlkOutput, FlowError> {
    cfg.validate()?;
    let shape = deriv.shape();
    check_shape("mask", shape, mask.shape())?;
    for (l, g) in weights.iter().enumerate() {
        check_shape(&format!("weights of layer {}", l + 1), shape, g.shape())?;
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let value = g.get(i, j);
                if mask.get(i, j) && !(0.0..=1.0).contains(&value) {
                    return Err(FlowError::WeightRange { row: i, col: j, value });
                }
            }
        }
    }
    let (rows, cols) = shape;
    let w = cfg.half_width;
    let gain = kernel_gain(deriv.sigma);
    let mut fields = Vec::with_capacity(weights.len());
    let mut singular_pixels = 0;
    for gamma in weights {
        let solved: Vec<(f64, f64, bool)> = (0..rows * cols)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k / cols, k % cols);
                if !mask.get(i, j) {
                    return (0.0, 0.0, false);
                }
                let (r0, r1) = (i.saturating_sub(w), (i + w).min(rows - 1));
                let (c0, c1) = (j.saturating_sub(w), (j + w).min(cols - 1));
                let samples = (r0..=r1).flat_map(|a| (c0..=c1).map(move |b| (a, b))).filter_map(|(a, b)| {
                    mask.get(a, b).then(|| {
                        (gamma.get(a, b), deriv.ix.get(a, b), deriv.iy.get(a, b), -deriv.it.get(a, b))
                    })
                });
                match solve_window(samples, cfg.tau) {
                    Some((u, v)) => (gain * u, gain * v, false),
                    None => (0.0, 0.0, true),
                }
            })
            .collect();
        let mut field = FlowField::zeros(rows, cols);
        for (k, &(u, v, singular)) in solved.iter().enumerate() {
            field.u.as_mut_slice()[k] = u;
            field.v.as_mut_slice()[k] = v;
            singular_pixels += singular as usize;
        }
        fields.push(field);
    }
    Ok(WlkOutput {
        fields,
        singular_pixels,
    })
}

/// Posterior-weighted average of per-layer fields. Weights must sum to one on
/// every masked pixel; unmasked pixels get zero flow.
pub fn merge_layers(
    fields: &[FlowField],
    weights: &[Grid],
    mask: &SegmentationMask,
) -> Result<FlowField, FlowError> {
    if fields.len() != weights.len() || fields.is_empty() {
        return Err(FlowError::Config(format!(
            "{} fields but {} weight grids",
            fields.len(),
            weights.len()
        )));
    }
    let shape = mask.shape();
    for (f, g) in fields.iter().zip(weights) {
        check_shape("layer field", shape, f.shape())?;
        check_shape("layer weights", shape, g.shape())?;
    }
    let (rows, cols) = shape;
    let mut out = FlowField::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            if !mask.get(i, j) {
                continue;
            }
            let sum: f64 = weights.iter().map(|g| g.get(i, j)).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(FlowError::WeightSum { row: i, col: j, sum });
            }
            let (mut u, mut v) = (0.0, 0.0);
            for (f, g) in fields.iter().zip(weights) {
                let gamma = g.get(i, j);
                u += gamma * f.u.get(i, j);
                v += gamma * f.v.get(i, j);
            }
            out.u.set(i, j, u);
            out.v.set(i, j, v);
        }
    }
    Ok(out)
}

/// CSV with one `i,j,u,v` line per masked pixel.
pub fn flow_to_csv(field: &FlowField, mask: &SegmentationMask) -> String {
    let mut out = String::from("i,j,u,v\n");
    for (i, j) in mask.pixels() {
        let (u, v) = field.vector(i, j);
        let _ = writeln!(out, "{i},{j},{u},{v}");
    }
    out
}
