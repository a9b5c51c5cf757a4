mod common;

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use qengine::engine::EngineParams;
use qengine::sideband::*;
use qengine::thermo::PhononDistribution;
use qengine::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn physical_basis() -> &'static ResponseBasis {
    static BASIS: OnceLock<ResponseBasis> = OnceLock::new();
    BASIS.get_or_init(|| {
        let times: Vec<f64> = (0..50).map(|k| 2.0 * k as f64).collect();
        response_curves(4, &times, &EngineParams::default()).unwrap()
    })
}

fn synthetic_basis(rng: &mut ChaCha8Rng, samples: usize, k: usize) -> ResponseBasis {
    let times: Vec<f64> = (0..samples).map(|t| t as f64).collect();
    let curves = DMatrix::from_fn(samples, k, |_, _| rng.random_range(0.0..1.0));
    ResponseBasis::from_curves(times, curves, SidebandModel::Collective).unwrap()
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| -rng.random_range(1e-9f64..1.0).ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// First-order optimality on the simplex: equal gradients on the support,
/// no smaller gradient off it.
fn kkt_violation(basis: &ResponseBasis, signal: &[f64], p: &[f64], tikhonov: f64) -> f64 {
    let a = basis.curves();
    let pv = DVector::from_column_slice(p);
    let r = a * &pv - DVector::from_column_slice(signal);
    let g = a.transpose() * r + pv * tikhonov;
    let support: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 1e-9).collect();
    let mu = support.iter().map(|&i| g[i]).sum::<f64>() / support.len() as f64;
    let scale = 1.0 + g.amax();
    let on = support.iter().map(|&i| (g[i] - mu).abs()).fold(0.0, f64::max);
    let off = (0..p.len())
        .filter(|i| !support.contains(i))
        .map(|i| (mu - g[i]).max(0.0))
        .fold(0.0, f64::max);
    on.max(off) / scale
}

#[test]
fn physical_curves_are_probabilities() {
    let b = physical_basis();
    assert_eq!(b.nmax(), 4);
    assert!(b.curves().iter().all(|&v| (-1e-9..=1.0 + 1e-9).contains(&v)));
    assert!(b.curves().row(0).iter().all(|&v| v.abs() < 1e-12));
    // higher Fock states respond faster at early times
    let early = b.curves().row(2);
    assert!(early[1] > early[0]);
}

#[test]
fn physical_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let b = physical_basis();
    for _ in 0..10 {
        let p = random_simplex(&mut rng, 5);
        let signal = simulate_signal(&PhononDistribution::new(p.clone()).unwrap(), b).unwrap();
        let fit = fit_populations(&signal, b, None).unwrap();
        let err = fit.dist.probs().iter().zip(&p).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err:e}");
        assert!(fit.residual < 1e-8);
    }
}

#[test]
fn reduced_chi_square_uses_sigma() {
    let b = physical_basis();
    let signal = b.curve(1);
    let fit = fit_populations(&signal, b, Some(0.01)).unwrap();
    assert!(fit.reduced_chi2.unwrap() < 1e-6);
    assert!(fit_populations(&signal, b, Some(0.0)).is_err());
    assert!(fit_populations(&signal, b, None).unwrap().reduced_chi2.is_none());
}

#[test]
fn degenerate_basis_is_ill_posed() {
    let times: Vec<f64> = (0..20).map(|t| t as f64).collect();
    let col: Vec<f64> = times.iter().map(|t| (0.1 * t).sin().powi(2)).collect();
    let curves = DMatrix::from_fn(20, 3, |i, j| if j == 2 { 0.0 } else { col[i] });
    let b = ResponseBasis::from_curves(times, curves, SidebandModel::Collective).unwrap();
    let err = fit_populations(&col, &b, None).unwrap_err();
    assert!(matches!(err, Error::IllPosedFit { .. }), "{err}");
}

#[test]
fn tikhonov_spreads_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = synthetic_basis(&mut rng, 30, 4);
    let signal = b.curve(2);
    let plain = fit_populations(&signal, &b, None).unwrap();
    let opts = FitOptions {
        tikhonov: 10.0,
        ..FitOptions::default()
    };
    let smooth = fit_populations_with(&signal, &b, &opts).unwrap();
    assert!(plain.dist.probs()[2] > 1.0 - 1e-9);
    assert!(smooth.dist.probs()[2] < plain.dist.probs()[2]);
    assert!(kkt_violation(&b, &signal, smooth.dist.probs(), 10.0) < 1e-9);
    let bad = FitOptions {
        tikhonov: -1.0,
        ..FitOptions::default()
    };
    assert!(fit_populations_with(&signal, &b, &bad).is_err());
}

#[test]
fn non_finite_samples_are_rejected() {
    let b = physical_basis();
    let mut signal = b.curve(0);
    signal[3] = f64::NAN;
    assert!(fit_populations(&signal, b, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn fit_satisfies_simplex_optimality(seed in any::<u64>(), k in 2usize..8, m in 10usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = synthetic_basis(&mut rng, m, k);
        let signal: Vec<f64> = (0..m).map(|_| rng.random_range(-0.5..1.5)).collect();
        let fit = fit_populations(&signal, &b, None).unwrap();
        let p = fit.dist.probs();
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(kkt_violation(&b, &signal, p, 0.0) < 1e-8);
    }

    #[test]
    fn fit_recovers_convex_combinations(seed in any::<u64>(), k in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = synthetic_basis(&mut rng, 40, k);
        let truth = random_simplex(&mut rng, k);
        let signal = simulate_signal(&PhononDistribution::new(truth.clone()).unwrap(), &b).unwrap();
        let fit = fit_populations(&signal, &b, None).unwrap();
        for (x, y) in fit.dist.probs().iter().zip(&truth) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }
}
