use super::*;
use crate::numerics::{finite_diff_gradient, psi};
use proptest::prelude::*;
use rand_distr::{Distribution, Gamma as GammaDist, Normal};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

#[test]
fn log_pdf_examples() {
    let g = FamilyParams::Gamma { alpha: 1.0, beta: 1.0 };
    assert!(close(log_pdf(&g, &[1.0]).unwrap(), -1.0, 1e-15));
    let b = FamilyParams::Beta { alpha: 1.0, beta: 1.0 };
    assert!(log_pdf(&b, &[0.5]).unwrap().abs() < 1e-15);
    let b = FamilyParams::Beta { alpha: 2.0, beta: 2.0 };
    assert!(close(log_pdf(&b, &[0.5]).unwrap(), 1.5f64.ln(), 1e-14));
    let bg = FamilyParams::BivariateGamma { alpha: 1.0, beta: 1.0, a: 1.0 };
    assert!(close(log_pdf(&bg, &[1.0, 1.0]).unwrap(), -2.0, 1e-15));
    let vm = FamilyParams::VonMises { mu: 0.0, kappa: 1.0 };
    assert!(close(log_pdf(&vm, &[0.0]).unwrap(), -1.073_791_424_916_524_1, 1e-14));
    let mean = vec![0.3, -1.2];
    let gauss = FamilyParams::Gaussian {
        mean: mean.clone(),
        cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    };
    assert!(close(log_pdf(&gauss, &mean).unwrap(), -(2.0 * std::f64::consts::PI).ln(), 1e-15));
}

#[test]
fn support_violations() {
    let b = FamilyParams::Beta { alpha: 2.0, beta: 2.0 };
    assert!(matches!(log_pdf(&b, &[1.0]), Err(MixtureError::Support { .. })));
    assert!(matches!(log_pdf(&b, &[0.0]), Err(MixtureError::Support { .. })));
    let g = FamilyParams::Gamma { alpha: 2.0, beta: 2.0 };
    assert!(matches!(log_pdf(&g, &[0.0]), Err(MixtureError::Support { .. })));
    assert!(matches!(log_pdf_gradient(&g, &[-1.0]), Err(MixtureError::Support { .. })));
}

#[test]
fn gradient_examples() {
    let g = FamilyParams::Gamma { alpha: 1.0, beta: 1.0 };
    assert_eq!(log_pdf_gradient(&g, &[1.0]).unwrap()[1], 0.0);
    let vm = FamilyParams::VonMises { mu: 0.0, kappa: 2.0 };
    assert_eq!(log_pdf_gradient(&vm, &[0.0]).unwrap()[0], 0.0);
    let b = FamilyParams::Beta { alpha: 2.0, beta: 2.0 };
    let grad = log_pdf_gradient(&b, &[0.3]).unwrap();
    // ln 0.3 − ψ(2) + ψ(4), from mpmath.
    assert!(close(grad[0], -0.370_639_470_992_602_7, 1e-13));
    assert!(close(grad[0], 0.3f64.ln() - psi(2.0) + psi(4.0), 1e-15));
    let fd = finite_diff_gradient(
        |p: &[f64]| log_pdf(&FamilyParams::Beta { alpha: p[0], beta: p[1] }, &[0.3]),
        &[2.0, 2.0],
        1e-6,
    )
    .unwrap();
    assert!((fd[0] - grad[0]).abs() < 1e-5);
}

fn fd_check(params: &FamilyParams, x: &[f64]) -> Result<(), TestCaseError> {
    let family = params.family();
    let analytic = log_pdf_gradient(params, x).unwrap();
    let fd = finite_diff_gradient(
        |v: &[f64]| log_pdf(&FamilyParams::from_vec(family, v)?, x),
        &params.to_vec(),
        1e-6,
    )
    .unwrap();
    for (a, f) in analytic.iter().zip(&fd) {
        prop_assert!((a - f).abs() <= 1e-4 * a.abs().max(1.0), "{:?} at {:?}: {} vs {}", params, x, a, f);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gamma_gradient(alpha in 0.2f64..20.0, beta in 0.1f64..10.0, x in 0.01f64..30.0) {
        fd_check(&FamilyParams::Gamma { alpha, beta }, &[x])?;
    }

    #[test]
    fn bivariate_gamma_gradient(alpha in 0.2f64..20.0, beta in 0.1f64..10.0, a in 0.2f64..20.0, x in 0.01f64..10.0, y in 0.01f64..10.0) {
        fd_check(&FamilyParams::BivariateGamma { alpha, beta, a }, &[x, y])?;
    }

    #[test]
    fn von_mises_gradient(mu in -3.0f64..3.0, kappa in 0.05f64..100.0, x in -3.14f64..3.14) {
        fd_check(&FamilyParams::VonMises { mu, kappa }, &[x])?;
    }

    #[test]
    fn beta_gradient(alpha in 0.2f64..20.0, beta in 0.2f64..20.0, x in 0.01f64..0.99) {
        fd_check(&FamilyParams::Beta { alpha, beta }, &[x])?;
    }

    #[test]
    fn gaussian_gradient(m0 in -3.0f64..3.0, m1 in -3.0f64..3.0, s0 in 0.5f64..3.0, s1 in 0.5f64..3.0, rho in -0.8f64..0.8, x0 in -4.0f64..4.0, x1 in -4.0f64..4.0) {
        let c = rho * s0 * s1;
        fd_check(&FamilyParams::Gaussian { mean: vec![m0, m1], cov: vec![vec![s0 * s0, c], vec![c, s1 * s1]] }, &[x0, x1])?;
    }

    #[test]
    fn weights_map_reduces_to_ml(g in proptest::collection::vec(0.0f64..=1.0, 1..200)) {
        let rows: Vec<f64> = g.iter().flat_map(|&a| [a, 1.0 - a]).collect();
        let n = g.len();
        let map = m_step_weights(&rows, &[1.0, 1.0], n);
        let mut sums = [0.0f64; 2];
        for r in rows.chunks(2) {
            sums[0] += r[0];
            sums[1] += r[1];
        }
        prop_assert_eq!(map[0].to_bits(), (sums[0] / n as f64).to_bits());
        prop_assert_eq!(map[1].to_bits(), (sums[1] / n as f64).to_bits());
    }
}

#[test]
fn weight_update_examples() {
    let mut rows = vec![];
    for i in 0..10 {
        rows.extend_from_slice(if i < 6 { &[1.0, 0.0] } else { &[0.0, 1.0] });
    }
    let ml = m_step_weights(&rows, &[1.0, 1.0], 10);
    assert_eq!(ml, vec![0.6, 0.4]);
    let map = m_step_weights(&rows, &[2.0, 2.0], 10);
    assert!((map[0] - 7.0 / 12.0).abs() < 1e-15 && (map[1] - 5.0 / 12.0).abs() < 1e-15);
    assert_eq!(m_step_weights(&[1.0; 5], &[1.0], 5), vec![1.0]);
}

fn gaussian_spec(clusters: usize, dim: usize) -> MixtureSpec {
    MixtureSpec::new(
        clusters,
        vec![Component::new(Family::Gaussian { dim }, (0..dim).collect())],
        1.0,
    )
    .unwrap()
}

#[test]
fn e_step_examples() {
    let data = Dataset::new(vec![vec![0.1, 0.5, 2.0]]).unwrap();
    let spec = gaussian_spec(1, 1);
    let p = FamilyParams::Gaussian {
        mean: vec![0.0],
        cov: vec![vec![1.0]],
    };
    let e = e_step(&spec, &data, &[vec![p.clone()]], &[1.0]).unwrap();
    assert_eq!(e.responsibilities, vec![1.0; 3]);

    let spec = gaussian_spec(2, 1);
    let e = e_step(&spec, &data, &[vec![p.clone()], vec![p.clone()]], &[0.5, 0.5]).unwrap();
    assert!(e.responsibilities.iter().all(|&g| g == 0.5));
    let e = e_step(&spec, &data, &[vec![p.clone()], vec![p]], &[0.9, 0.1]).unwrap();
    for r in e.responsibilities.chunks(2) {
        assert!((r[0] - 0.9).abs() < 1e-15 && (r[1] - 0.1).abs() < 1e-15);
    }
}

#[test]
fn vanished_rows_become_uniform() {
    let (gamma, total, flagged) = normalize_log_joint(&[f64::NEG_INFINITY, f64::NEG_INFINITY, -1.0, -2.0], 2);
    assert_eq!(flagged, 1);
    assert_eq!(&gamma[..2], &[0.5, 0.5]);
    assert_eq!(total, f64::NEG_INFINITY);
}

#[test]
fn gaussian_m_step_floor() {
    let data = Dataset::new(vec![vec![0.0, 2.0], vec![0.0, 2.0]]).unwrap();
    let params = m_step_params(&gaussian_spec(1, 2), &data, &[1.0, 1.0]).unwrap();
    let FamilyParams::Gaussian { mean, cov } = &params[0][0] else { panic!() };
    assert_eq!(mean, &vec![1.0, 1.0]);
    // Eigenvalues 2 and 0; the zero is lifted to 1e-6 of the unit variance.
    let m = nalgebra::DMatrix::from_fn(2, 2, |i, j| cov[i][j]);
    let eig = m.clone().symmetric_eigen();
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    assert!((ev[0] - 1e-6).abs() < 1e-12 && (ev[1] - 2.0).abs() < 1e-12);
    assert!(m.cholesky().is_some());
    assert!((cov[0][1] - 1.0).abs() < 1e-6);
}

fn sample_gamma(shape: f64, scale: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = GammaDist::new(shape, scale).unwrap();
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

#[test]
fn gamma_m_step_matches_grid_search() {
    let x = sample_gamma(3.0, 2.0, 10_000, 7);
    let data = Dataset::new(vec![x.clone()]).unwrap();
    let spec = MixtureSpec::new(1, vec![Component::new(Family::Gamma, vec![0])], 1.0).unwrap();
    let params = m_step_params(&spec, &data, &vec![1.0; x.len()]).unwrap();
    let FamilyParams::Gamma { alpha, beta } = params[0][0] else { panic!() };

    let ll = |a: f64, b: f64| x.iter().map(|&v| log_pdf(&FamilyParams::Gamma { alpha: a, beta: b }, &[v]).unwrap()).sum::<f64>();
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..=60 {
        for j in 0..=60 {
            let a = 2.0 + i as f64 * 0.04;
            let b = 1.2 + j as f64 * 0.03;
            let v = ll(a, b);
            if v > best.0 {
                best = (v, a, b);
            }
        }
    }
    assert!((alpha - best.1).abs() <= 0.1 * best.1, "{alpha} vs {}", best.1);
    assert!((beta - best.2).abs() <= 0.1 * best.2, "{beta} vs {}", best.2);
    assert!(ll(alpha, beta) >= best.0);
}

#[test]
fn von_mises_degenerate_concentration() {
    let data = Dataset::new(vec![vec![0.7; 50]]).unwrap();
    let spec = MixtureSpec::new(1, vec![Component::new(Family::VonMises, vec![0])], 1.0).unwrap();
    let params = m_step_params(&spec, &data, &[1.0; 50]).unwrap();
    let FamilyParams::VonMises { mu, kappa } = params[0][0] else { panic!() };
    assert!((mu - 0.7).abs() < 1e-12);
    assert_eq!(kappa, KAPPA_MAX);
}

fn two_gaussians(n: usize, sep: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|i| a.sample(&mut rng) + if i % 2 == 0 { 0.0 } else { sep }).collect()
}

#[test]
fn recovers_separated_gaussians() {
    let data = Dataset::new(vec![two_gaussians(2000, 10.0, 3)]).unwrap();
    let f = fit(&data, &gaussian_spec(2, 1), 11, 3).unwrap();
    let mut means: Vec<f64> = f.params.iter().map(|p| p[0].mean()[0]).collect();
    means.sort_by(f64::total_cmp);
    assert!(means[0].abs() < 0.15 && (means[1] - 10.0).abs() < 0.15, "{means:?}");
    assert!(f.converged);
    for w in f.trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-9);
    }
}

#[test]
fn single_gaussian_mean_is_sample_mean() {
    let x = two_gaussians(501, 3.0, 5);
    let data = Dataset::new(vec![x.clone()]).unwrap();
    let f = fit(&data, &gaussian_spec(1, 1), 0, 4).unwrap();
    let FamilyParams::Gaussian { mean, .. } = &f.params[0][0] else { panic!() };
    assert_eq!(mean[0], x.iter().sum::<f64>() / x.len() as f64);
}

#[test]
fn beta_fit_on_clamped_data_stays_finite() {
    let mut x: Vec<f64> = (0..400).map(|i| (i as f64 / 399.0).clamp(1e-6, 1.0 - 1e-6)).collect();
    x.extend(std::iter::repeat_n(1e-6, 100));
    let data = Dataset::new(vec![x]).unwrap();
    let spec = MixtureSpec::new(2, vec![Component::new(Family::Beta, vec![0])], 1.0).unwrap();
    let f = fit(&data, &spec, 1, 3).unwrap();
    assert!(f.trace.iter().all(|q| q.is_finite()));
    assert!(f.q.is_finite());
}

#[test]
fn composite_likelihood_is_additive() {
    let x = sample_gamma(2.0, 1.0, 200, 1);
    let angles: Vec<f64> = x.iter().map(|v| (v * 1.3).sin() * 3.0).collect();
    let data = Dataset::new(vec![x, angles]).unwrap();
    let spec = MixtureSpec::new(
        2,
        vec![Component::new(Family::Gamma, vec![0]), Component::new(Family::VonMises, vec![1])],
        1.0,
    )
    .unwrap();
    let f = fit(&data, &spec, 2, 2).unwrap();
    for i in 0..data.n() {
        for l in 0..2 {
            let total = spec.log_likelihood(&f.params[l], &data, i).unwrap();
            let parts: f64 = spec
                .components
                .iter()
                .zip(&f.params[l])
                .map(|(c, p)| log_pdf(p, &data.row(i, &c.columns)).unwrap())
                .sum();
            assert_eq!(total, parts);
            let lj = f.log_joint[i * 2 + l] - f.weights[l].ln();
            assert!((lj - total).abs() < 1e-9 * (1.0 + total.abs()));
        }
    }
}

#[test]
fn simplex_invariants() {
    let data = Dataset::new(vec![two_gaussians(300, 4.0, 9)]).unwrap();
    let f = fit(&data, &gaussian_spec(2, 1), 3, 3).unwrap();
    assert!((f.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for r in f.responsibilities.chunks(2) {
        assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn all_restarts_degenerate_names_family() {
    let data = Dataset::new(vec![vec![1.0, 1.0, 1.0]]).unwrap();
    let spec = MixtureSpec::new(2, vec![Component::new(Family::Gamma, vec![0])], 1.0).unwrap();
    match fit(&data, &spec, 0, 2) {
        Err(e @ MixtureError::AllRestartsDegenerate { .. }) => assert!(e.to_string().contains("gamma")),
        Ok(f) => {
            // Identical samples can still be split; then both clusters must agree.
            assert!(f.trace.iter().all(|q| q.is_finite()));
        }
        Err(e) => panic!("unexpected error {e}"),
    }
}

fn toy_fit(means: [f64; 2], weights: [f64; 2]) -> MixtureFit {
    let data = Dataset::new(vec![two_gaussians(100, 5.0, 1)]).unwrap();
    let mut f = fit(&data, &gaussian_spec(2, 1), 0, 1).unwrap();
    f.weights = weights.to_vec();
    f.params[0][0] = FamilyParams::Gaussian {
        mean: vec![means[0]],
        cov: vec![vec![1.0]],
    };
    f.params[1][0] = FamilyParams::Gaussian {
        mean: vec![means[1]],
        cov: vec![vec![1.0]],
    };
    f
}

#[test]
fn label_resolution() {
    let f = toy_fit([250.0, 280.0], [0.5, 0.5]);
    let r = resolve_labels(&f, &[250.0, 280.0]);
    assert_eq!(r.params[0][0].mean(), vec![280.0]);
    assert_eq!(r.params[1][0].mean(), vec![250.0]);
    assert_eq!(r.gamma(3, 0), f.gamma(3, 1));
    assert_eq!(r.q, f.q);
    let again = resolve_labels(&r, &[280.0, 250.0]);
    assert_eq!(again, r);

    let f = toy_fit([1.0, 2.0], [0.3, 0.7]);
    let r = resolve_labels(&f, &[270.0, 270.0]);
    assert_eq!(r.weights, vec![0.7, 0.3]);
}

#[test]
fn bivariate_gamma_likelihood_is_normalized() {
    // X ~ Gamma(shape α, rate β), Y | X ~ Gamma(shape a, rate X): integrate on a grid.
    let p = FamilyParams::BivariateGamma { alpha: 3.0, beta: 2.0, a: 2.0 };
    let h = 0.01;
    let mut total = 0.0;
    for i in 1..1500 {
        for j in 1..3000 {
            let (x, y) = (i as f64 * h, j as f64 * h);
            total += log_pdf(&p, &[x, y]).unwrap().exp() * h * h;
        }
    }
    assert!((total - 1.0).abs() < 2e-2, "{total}");
}
