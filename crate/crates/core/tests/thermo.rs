mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use qengine::opalg::{number, Operator, C64};
use qengine::thermo::*;
use qengine::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{brute_force_ergotropy, max_abs, random_density, random_hermitian, random_unitary, real};

fn bell(phase: f64) -> DMatrix<C64> {
    let mut psi = DMatrix::zeros(4, 1);
    psi[(0, 0)] = real(1.0 / 2f64.sqrt());
    psi[(3, 0)] = C64::from_polar(1.0 / 2f64.sqrt(), phase);
    &psi * psi.adjoint()
}

#[test]
fn fock_state_ergotropy_is_its_energy() {
    for n in 0..5 {
        let mut rho = DMatrix::zeros(5, 5);
        rho[(n, n)] = real(1.0);
        let w = ergotropy(&rho, &number(5).unwrap()).unwrap();
        assert!((w - n as f64).abs() < 1e-12);
    }
}

#[test]
fn thermal_states_are_passive() {
    for nbar in [0.0, 0.13, 1.0, 4.0] {
        let d = PhononDistribution::thermal(nbar, 10).unwrap();
        let rho = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(10, d.probs().iter().map(|&p| real(p))));
        assert!(ergotropy(&rho, &number(10).unwrap()).unwrap().abs() < 1e-12);
        assert_eq!(ergotropy_diagonal(&d), 0.0);
    }
}

#[test]
fn diagonal_ergotropy_hand_value() {
    // P = (0.1, 0.2, 0.7): energy 1.6, passive 0.7·0 + 0.2·1 + 0.1·2 = 0.4
    let d = PhononDistribution::new(vec![0.1, 0.2, 0.7]).unwrap();
    assert!((ergotropy_diagonal(&d) - 1.2).abs() < 1e-15);
    assert!((d.mean() - 1.6).abs() < 1e-15);
}

#[test]
fn concurrence_reference_states() {
    for phase in [0.0, 0.4, 3.0] {
        assert!((concurrence(&bell(phase)).unwrap() - 1.0).abs() < 1e-9);
        assert!((ms_fidelity(&bell(phase)).unwrap() - 1.0).abs() < 1e-12);
    }
    let mut ss = DMatrix::zeros(4, 4);
    ss[(0, 0)] = real(1.0);
    assert!(concurrence(&ss).unwrap() < 1e-9);
    assert!((ms_fidelity(&ss).unwrap() - 0.5).abs() < 1e-15);
    assert!(matches!(concurrence(&DMatrix::zeros(3, 3)), Err(Error::Layout(_))));
}

#[test]
fn werner_state_concurrence() {
    for p in [0.0, 0.2, 1.0 / 3.0, 0.5, 0.9] {
        let rho = bell(0.0) * real(p) + DMatrix::identity(4, 4) * real((1.0 - p) / 4.0);
        let expected = ((3.0 * p - 1.0) / 2.0).max(0.0);
        assert!((concurrence(&rho).unwrap() - expected).abs() < 1e-9, "p = {p}");
    }
}

#[test]
fn efficiency_threshold() {
    assert!((conversion_efficiency(0.8, 1.0).unwrap() - 0.8).abs() < 1e-15);
    assert!(matches!(conversion_efficiency(0.8, 0.05), Err(Error::UndefinedEfficiency { .. })));
    assert!(mechanical_efficiency(0.4, 0.0).is_err());
    assert!(mechanical_efficiency(0.4, f64::NAN).is_err());
}

#[test]
fn absorbed_quanta_counts_excitations() {
    let p = QubitPopulations::from_two_qubit(&bell(0.0));
    assert!((absorbed_quanta(&p) - 1.0).abs() < 1e-15);
    assert!((p.sum() - 1.0).abs() < 1e-15);
}

#[test]
fn rejects_bad_inputs() {
    assert!(PhononDistribution::new(vec![0.5, 0.6]).is_err());
    assert!(PhononDistribution::new(vec![1.2, -0.2]).is_err());
    assert!(PhononDistribution::new(vec![]).is_err());
    let mut m = DMatrix::zeros(3, 3);
    m[(0, 1)] = real(1.0);
    assert!(matches!(ergotropy(&m, &number(3).unwrap()), Err(Error::InvalidState(_))));
    assert!(ergotropy(&DMatrix::identity(2, 2), &number(3).unwrap()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ergotropy_matches_assignment_search(seed in any::<u64>(), dim in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_density(&mut rng, dim);
        let h = random_hermitian(&mut rng, dim);
        let w = ergotropy(&rho, &Operator::from_dense(&h)).unwrap();
        prop_assert!((w - brute_force_ergotropy(&rho, &h)).abs() < 1e-10);
        prop_assert!(w > -1e-12);
    }

    #[test]
    fn ergotropy_bounds_unitary_extraction(seed in any::<u64>(), dim in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_density(&mut rng, dim);
        let h = number(dim).unwrap();
        let hd = h.to_dense();
        let w = ergotropy(&rho, &h).unwrap();
        let e0 = (&hd * &rho).trace().re;
        for _ in 0..20 {
            let u = random_unitary(&mut rng, dim);
            let rotated = &u * &rho * u.adjoint();
            prop_assert!(e0 - (&hd * rotated).trace().re <= w + 1e-9);
        }
        // dephasing in the energy basis cannot add ergotropy
        let dephased = ergotropy_diagonal(&PhononDistribution::from_density(&rho).unwrap());
        prop_assert!(dephased <= w + 1e-10);
    }

    #[test]
    fn passive_state_is_a_fixed_point(seed in any::<u64>(), dim in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_density(&mut rng, dim);
        let h = Operator::from_dense(&random_hermitian(&mut rng, dim));
        let p = passive_state(&rho, &h).unwrap();
        prop_assert!((p.rho.trace() - real(1.0)).norm() < 1e-12);
        prop_assert!(p.populations.windows(2).all(|w| w[0] >= w[1]));
        let again = passive_state(&p.rho, &h).unwrap();
        prop_assert!(max_abs(&(again.rho - &p.rho)) < 1e-9);
        prop_assert!(ergotropy(&p.rho, &h).unwrap().abs() < 1e-10);
    }

    #[test]
    fn concurrence_is_local_unitary_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_density(&mut rng, 4);
        let u = random_unitary(&mut rng, 2).kronecker(&random_unitary(&mut rng, 2));
        let c0 = concurrence(&rho).unwrap();
        let c1 = concurrence(&(&u * &rho * u.adjoint())).unwrap();
        prop_assert!((c0 - c1).abs() < 1e-8);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&c0));
    }

    #[test]
    fn product_states_are_unentangled(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_density(&mut rng, 2).kronecker(&random_density(&mut rng, 2));
        prop_assert!(concurrence(&rho).unwrap() < 1e-7);
    }
}
