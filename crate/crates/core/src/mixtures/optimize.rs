//! Small box-constrained quasi-Newton ascent used by the non-Gaussian
//! M-steps. Parameters are optimized in log space.

/// Stopping threshold on the projected gradient norm.
pub const GRAD_TOL: f64 = 1e-7;
pub const MAX_ITERS: usize = 500;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// Largest move in log space per iteration.
const MAX_LOG_STEP: f64 = 4.0;

/// Maximize `f` over `theta` inside the box `[lower, upper]`.
///
/// `f` returns the objective value and its gradient with respect to `theta`.
/// Only steps that do not decrease the objective are accepted, so the result
/// is never worse than the (clamped) starting point.
pub fn maximize<F>(f: F, start: &[f64], lower: &[f64], upper: &[f64]) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let n = start.len();
    let clamp = |theta: &mut [f64]| {
        for k in 0..n {
            theta[k] = theta[k].clamp(lower[k], upper[k]);
        }
    };
    let mut theta = start.to_vec();
    clamp(&mut theta);
    let (mut value, mut grad) = f(&theta);
    if !value.is_finite() {
        return (theta, value);
    }
    let mut h = identity(n);
    let mut fresh = true;

    for _ in 0..MAX_ITERS {
        let free = projected(&grad, &theta, lower, upper);
        if norm(&free) < GRAD_TOL {
            break;
        }
        let mut dir = mat_vec(&h, &free);
        for k in 0..n {
            if free[k] == 0.0 {
                dir[k] = 0.0;
            }
        }
        if dot(&dir, &free) <= 0.0 {
            h = identity(n);
            dir = free.clone();
        }
        let longest = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if longest > MAX_LOG_STEP {
            dir.iter_mut().for_each(|d| *d *= MAX_LOG_STEP / longest);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut trial: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            clamp(&mut trial);
            let moved: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let predicted = dot(&grad, &moved).max(0.0);
            let (v, g) = f(&trial);
            if v.is_finite() && v >= value + ARMIJO * predicted {
                accepted = Some((trial, moved, v, g));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, s, v, g)) = accepted else {
            if fresh {
                break;
            }
            // Retry from steepest ascent before giving up.
            h = identity(n);
            fresh = true;
            continue;
        };
        // BFGS update of the inverse Hessian of -f.
        let y: Vec<f64> = grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            h = bfgs_update(&h, &s, &y, sy);
            fresh = false;
        }
        let improved = v > value;
        theta = trial;
        value = v;
        grad = g;
        if !improved && norm(&s) == 0.0 {
            break;
        }
    }
    (theta, value)
}

fn projected(grad: &[f64], theta: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    grad.iter()
        .enumerate()
        .map(|(k, &g)| {
            if (theta[k] <= lower[k] && g < 0.0) || (theta[k] >= upper[k] && g > 0.0) {
                0.0
            } else {
                g
            }
        })
        .collect()
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

fn bfgs_update(h: &[Vec<f64>], s: &[f64], y: &[f64], sy: f64) -> Vec<Vec<f64>> {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    let mut out = h.to_vec();
    for i in 0..n {
        for j in 0..n {
            out[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concave_quadratic() {
        let f = |t: &[f64]| {
            let (a, b) = (t[0] - 1.0, t[1] + 2.0);
            (-(a * a + 10.0 * b * b + a * b), vec![-(2.0 * a + b), -(20.0 * b + a)])
        };
        let (theta, _) = maximize(f, &[5.0, 5.0], &[-10.0, -10.0], &[10.0, 10.0]);
        assert!((theta[0] - 1.0).abs() < 1e-7 && (theta[1] + 2.0).abs() < 1e-7);
    }

    #[test]
    fn respects_bounds() {
        let f = |t: &[f64]| (t[0], vec![1.0]);
        let (theta, v) = maximize(f, &[0.0], &[-1.0], &[3.0]);
        assert_eq!(theta, vec![3.0]);
        assert_eq!(v, 3.0);
    }
}
