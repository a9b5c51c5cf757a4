//! Thermodynamic and entanglement observables of the engine: qubit
//! populations, absorbed quanta, phonon gain, ergotropy, efficiencies,
//! concurrence.

use nalgebra::{DMatrix, DVector};

use crate::engine::CycleRecord;
use crate::error::{Error, Result};
use crate::opalg::{hermiticity_error, Operator, QuantumState, C64};

/// Denominators below this make an efficiency undefined.
pub const EFFICIENCY_THRESHOLD: f64 = 0.05;

/// Diagonal weights of a two-qubit state in the `{SS, SD, DS, DD}` basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QubitPopulations {
    pub ss: f64,
    pub sd: f64,
    pub ds: f64,
    pub dd: f64,
}

impl QubitPopulations {
    pub fn from_two_qubit(rho: &DMatrix<C64>) -> Self {
        QubitPopulations {
            ss: rho[(0, 0)].re,
            sd: rho[(1, 1)].re,
            ds: rho[(2, 2)].re,
            dd: rho[(3, 3)].re,
        }
    }

    pub fn sd_plus_ds(&self) -> f64 {
        self.sd + self.ds
    }

    pub fn sum(&self) -> f64 {
        self.ss + self.sd + self.ds + self.dd
    }
}

/// Reduced two-qubit density matrix of a state whose first two slots are
/// the qubits.
pub fn two_qubit_state(state: &QuantumState) -> Result<DMatrix<C64>> {
    let dims = state.layout().dims();
    if dims.len() < 2 || dims[0] != 2 || dims[1] != 2 {
        return Err(Error::Layout(format!("expected two leading qubit slots, got dims {dims:?}")));
    }
    if dims.len() == 2 {
        return Ok(state.density_matrix());
    }
    let dens = state.to_density();
    Ok(dens.partial_trace(&[0, 1])?.into_density_matrix())
}

pub fn qubit_populations(state: &QuantumState) -> Result<QubitPopulations> {
    Ok(QubitPopulations::from_two_qubit(&two_qubit_state(state)?))
}

/// `2·P_DD + P_SD + P_DS`.
pub fn absorbed_quanta(pops: &QubitPopulations) -> f64 {
    2.0 * pops.dd + pops.sd + pops.ds
}

/// Occupation probabilities over Fock levels `0..=nmax`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhononDistribution {
    probs: Vec<f64>,
}

impl PhononDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::param("probs", "distribution needs at least one level"));
        }
        if let Some((n, p)) = probs.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
            return Err(Error::param("probs", format!("P_{n} = {p} is negative")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::param("probs", format!("probabilities sum to {total}")));
        }
        Ok(PhononDistribution { probs })
    }

    /// Diagonal of a mode density matrix, with round-off negatives clipped.
    pub fn from_density(rho: &DMatrix<C64>) -> Result<Self> {
        let probs = (0..rho.nrows()).map(|n| rho[(n, n)].re.max(0.0)).collect();
        PhononDistribution::new(probs)
    }

    pub fn thermal(nbar: f64, levels: usize) -> Result<Self> {
        PhononDistribution::new(crate::opalg::thermal_probabilities(nbar, levels)?)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn nmax(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }
}

/// `n̄_c` at the end of the transfer stroke minus its initial value.
pub fn net_phonon_gain(record: &CycleRecord) -> Result<f64> {
    let end = record
        .stroke(3)
        .and_then(|s| s.series.last())
        .ok_or_else(|| Error::IncompleteRecord("no end-of-transfer snapshot".into()))?;
    Ok(end.n_c - record.initial.n_c)
}

fn ratio(num: f64, den: f64) -> Result<f64> {
    if !(den > EFFICIENCY_THRESHOLD) {
        return Err(Error::UndefinedEfficiency {
            value: den,
            threshold: EFFICIENCY_THRESHOLD,
        });
    }
    Ok(num / den)
}

/// `η_c = Δn_t / Δn_o`.
pub fn conversion_efficiency(delta_n_t: f64, delta_n_o: f64) -> Result<f64> {
    ratio(delta_n_t, delta_n_o)
}

/// `η_m = 𝒲 / Δn_t`, both in units of `ħω_c`. The denominator is the energy
/// of the output phonons.
pub fn mechanical_efficiency(ergotropy: f64, delta_n_t: f64) -> Result<f64> {
    ratio(ergotropy, delta_n_t)
}

#[derive(Clone, Debug)]
pub struct PassiveState {
    pub rho: DMatrix<C64>,
    /// Energy eigenvalues (ascending) the populations were assigned to.
    pub energies: Vec<f64>,
    /// Populations in descending order.
    pub populations: Vec<f64>,
    /// Eigenvectors of the Hamiltonian, columns in ascending energy order.
    pub energy_basis: DMatrix<C64>,
    /// Set when the Hamiltonian has (near-)degenerate levels; ties were
    /// broken by eigenstate index.
    pub degenerate: bool,
}

fn check_pair(rho: &DMatrix<C64>, h: &Operator) -> Result<()> {
    if rho.nrows() != h.dim() || rho.ncols() != h.dim() {
        return Err(Error::Layout(format!(
            "{}x{} state with Hamiltonian of dimension {}",
            rho.nrows(),
            rho.ncols(),
            h.dim()
        )));
    }
    let herm = hermiticity_error(rho);
    if herm > 1e-8 {
        return Err(Error::InvalidState(format!("state non-Hermitian by {herm:e}")));
    }
    if !h.is_hermitian(1e-10) {
        return Err(Error::InvalidState("Hamiltonian is not Hermitian".into()));
    }
    Ok(())
}

/// Sorted eigen-decomposition of a Hermitian matrix; `ascending` selects
/// the order. Ties keep the solver's index order.
fn sorted_eigen(m: &DMatrix<C64>, ascending: bool) -> (Vec<f64>, DMatrix<C64>) {
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (eig.eigenvalues[a], eig.eigenvalues[b]);
        if ascending {
            x.total_cmp(&y)
        } else {
            y.total_cmp(&x)
        }
    });
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// The passive state of `rho` with respect to `h`: populations of `rho`
/// sorted descending, placed on energy eigenstates sorted ascending.
pub fn passive_state(rho: &DMatrix<C64>, h: &Operator) -> Result<PassiveState> {
    check_pair(rho, h)?;
    let (energies, basis) = sorted_eigen(&h.to_dense(), true);
    let (populations, _) = sorted_eigen(rho, false);
    let degenerate = energies.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-12);
    let weights = DVector::from_iterator(populations.len(), populations.iter().map(|&p| C64::new(p, 0.0)));
    let rho_p = &basis * DMatrix::from_diagonal(&weights) * basis.adjoint();
    Ok(PassiveState {
        rho: rho_p,
        energies,
        populations,
        energy_basis: basis,
        degenerate,
    })
}

/// `tr[Hρ] − tr[Hρ̃]` with `ρ̃` the passive state.
pub fn ergotropy(rho: &DMatrix<C64>, h: &Operator) -> Result<f64> {
    let passive = passive_state(rho, h)?;
    let energy: f64 = h.iter().map(|(i, j, a)| (a * rho[(j, i)]).re).sum();
    let passive_energy: f64 = passive
        .energies
        .iter()
        .zip(&passive.populations)
        .map(|(e, p)| e * p)
        .sum();
    Ok(energy - passive_energy)
}

/// Ergotropy of `diag(P_n)` under `H = a†a`.
pub fn ergotropy_diagonal(dist: &PhononDistribution) -> f64 {
    let p = dist.probs();
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let energy: f64 = p.iter().enumerate().map(|(n, x)| n as f64 * x).sum();
    let passive: f64 = sorted.iter().enumerate().map(|(n, x)| n as f64 * x).sum();
    energy - passive
}

fn check_two_qubit(rho: &DMatrix<C64>) -> Result<()> {
    if rho.nrows() != 4 || rho.ncols() != 4 {
        return Err(Error::Layout(format!("expected 4x4 two-qubit state, got {}x{}", rho.nrows(), rho.ncols())));
    }
    Ok(())
}

/// Wootters concurrence `max(0, λ₁−λ₂−λ₃−λ₄)`.
pub fn concurrence(rho: &DMatrix<C64>) -> Result<f64> {
    check_two_qubit(rho)?;
    let (vals, vecs) = sorted_eigen(rho, false);
    if let Some(&neg) = vals.iter().find(|&&v| v < -1e-6) {
        return Err(Error::InvalidState(format!("eigenvalue {neg:e} is negative")));
    }
    let roots = DVector::from_iterator(4, vals.iter().map(|&v| C64::new(v.max(0.0).sqrt(), 0.0)));
    let sqrt_rho = &vecs * DMatrix::from_diagonal(&roots) * vecs.adjoint();
    // σ_y ⊗ σ_y in the {SS, SD, DS, DD} basis
    let mut yy = DMatrix::<C64>::zeros(4, 4);
    yy[(0, 3)] = C64::new(-1.0, 0.0);
    yy[(3, 0)] = C64::new(-1.0, 0.0);
    yy[(1, 2)] = C64::new(1.0, 0.0);
    yy[(2, 1)] = C64::new(1.0, 0.0);
    let flipped = &yy * rho.map(|z| z.conj()) * &yy;
    let r = &sqrt_rho * flipped * &sqrt_rho;
    let (mu, _) = sorted_eigen(&r, false);
    // eigenvalues at the round-off floor would otherwise enter as ~1e-8
    let floor = 64.0 * f64::EPSILON * mu[0].abs();
    let lam: Vec<f64> = mu.iter().map(|&m| if m > floor { m.sqrt() } else { 0.0 }).collect();
    Ok((lam[0] - lam[1] - lam[2] - lam[3]).max(0.0))
}

/// `(P_SS + P_DD)/2 + |ρ_{SS,DD}|`: fidelity with the closest
/// `(|SS⟩ + e^{iφ}|DD⟩)/√2` Bell state.
pub fn ms_fidelity(rho: &DMatrix<C64>) -> Result<f64> {
    check_two_qubit(rho)?;
    Ok((rho[(0, 0)].re + rho[(3, 3)].re) / 2.0 + rho[(0, 3)].norm())
}

/// Energy bookkeeping of one cycle. Ergotropies are in units of `ħω_c`;
/// efficiencies are `None` where the denominator is below
/// [`EFFICIENCY_THRESHOLD`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyReport {
    pub delta_n_o: f64,
    pub delta_n_t: f64,
    pub eta_c: Option<f64>,
    pub w_exact: f64,
    pub w_diag: f64,
    pub eta_m: Option<f64>,
}

impl EnergyReport {
    /// Builds the report from absorbed quanta, phonon gain and the load
    /// state at the end of the transfer stroke.
    pub fn from_load(delta_n_o: f64, delta_n_t: f64, load: &DMatrix<C64>) -> Result<Self> {
        let n = load.nrows();
        let h_p = crate::opalg::number(n)?;
        let w_exact = ergotropy(load, &h_p)?;
        let w_diag = ergotropy_diagonal(&PhononDistribution::from_density(load)?);
        Ok(EnergyReport {
            delta_n_o,
            delta_n_t,
            eta_c: conversion_efficiency(delta_n_t, delta_n_o).ok(),
            w_exact,
            w_diag,
            eta_m: mechanical_efficiency(w_diag, delta_n_t).ok(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opalg::{number, thermal_state};

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn diag(p: &[f64]) -> DMatrix<C64> {
        DMatrix::from_diagonal(&DVector::from_iterator(p.len(), p.iter().map(|&x| c(x))))
    }

    fn bell() -> DMatrix<C64> {
        let mut m = DMatrix::zeros(4, 4);
        for &(i, j) in &[(0, 0), (0, 3), (3, 0), (3, 3)] {
            m[(i, j)] = c(0.5);
        }
        m
    }

    #[test]
    fn populations_and_quanta() {
        let ss = QubitPopulations::from_two_qubit(&diag(&[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(absorbed_quanta(&ss), 0.0);
        let b = QubitPopulations::from_two_qubit(&bell());
        assert!((b.ss - 0.5).abs() < 1e-15 && (b.dd - 0.5).abs() < 1e-15);
        assert!((absorbed_quanta(&b) - 1.0).abs() < 1e-15);
        let reported = QubitPopulations {
            ss: 1.0 - 0.4851 - 0.02541,
            sd: 0.02541 / 2.0,
            ds: 0.02541 / 2.0,
            dd: 0.4851,
        };
        assert!((absorbed_quanta(&reported) - 0.99561).abs() < 1e-12);
    }

    #[test]
    fn efficiencies() {
        assert!((conversion_efficiency(0.78, 0.99561).unwrap() - 0.7834).abs() < 5e-5);
        assert_eq!(conversion_efficiency(0.5, 0.5).unwrap(), 1.0);
        assert_eq!(conversion_efficiency(0.0, 0.5).unwrap(), 0.0);
        assert!(matches!(
            conversion_efficiency(0.01, 0.01),
            Err(Error::UndefinedEfficiency { .. })
        ));

        assert!((mechanical_efficiency(0.4242, 0.8108).unwrap() - 0.523).abs() < 5e-4);
        assert!((mechanical_efficiency(0.373, 0.78).unwrap() - 0.478).abs() < 5e-4);
        assert_eq!(mechanical_efficiency(0.0, 0.78).unwrap(), 0.0);
        assert!(mechanical_efficiency(0.1, 0.0).is_err());
    }

    #[test]
    fn passive_state_examples() {
        let h = number(6).unwrap();
        let th = thermal_state(0.4, 6).unwrap().into_density_matrix();
        let p = passive_state(&th, &h).unwrap();
        assert!((&p.rho - &th).norm() < 1e-12);
        assert!(!p.degenerate);

        let mut one = DMatrix::zeros(4, 4);
        one[(1, 1)] = c(1.0);
        let p = passive_state(&one, &number(4).unwrap()).unwrap();
        assert!((p.rho[(0, 0)] - c(1.0)).norm() < 1e-12);
        assert!(p.rho[(1, 1)].norm() < 1e-12);
    }

    #[test]
    fn passive_state_flags_degeneracy() {
        let h = Operator::diagonal(&[c(0.0), c(1.0), c(1.0)]);
        let p = passive_state(&diag(&[0.2, 0.3, 0.5]), &h).unwrap();
        assert!(p.degenerate);
    }

    #[test]
    fn ergotropy_examples() {
        let mut fock2 = DMatrix::zeros(5, 5);
        fock2[(2, 2)] = c(1.0);
        assert!((ergotropy(&fock2, &number(5).unwrap()).unwrap() - 2.0).abs() < 1e-12);

        let th = thermal_state(0.13, 12).unwrap().into_density_matrix();
        assert!(ergotropy(&th, &number(12).unwrap()).unwrap().abs() < 1e-10);

        let two = diag(&[0.3, 0.7]);
        assert!((ergotropy(&two, &number(2).unwrap()).unwrap() - 0.4).abs() < 1e-12);
        let d = PhononDistribution::new(vec![0.3, 0.7]).unwrap();
        assert!((ergotropy_diagonal(&d) - 0.4).abs() < 1e-15);

        let th = PhononDistribution::thermal(0.13, 12).unwrap();
        assert!(ergotropy_diagonal(&th).abs() < 1e-10);
    }

    #[test]
    fn ergotropy_shape_errors() {
        assert!(matches!(
            ergotropy(&diag(&[1.0, 0.0]), &number(3).unwrap()),
            Err(Error::Layout(_))
        ));
    }

    #[test]
    fn distribution_validation() {
        assert!(PhononDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(PhononDistribution::new(vec![1.1, -0.1]).is_err());
        assert!(PhononDistribution::new(vec![]).is_err());
        let d = PhononDistribution::new(vec![0.25, 0.5, 0.25]).unwrap();
        assert_eq!(d.nmax(), 2);
        assert!((d.mean() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn concurrence_examples() {
        assert!((concurrence(&bell()).unwrap() - 1.0).abs() < 1e-9);
        assert!(concurrence(&diag(&[1.0, 0.0, 0.0, 0.0])).unwrap().abs() < 1e-9);
        let p = 0.8;
        let werner = bell() * c(p) + DMatrix::identity(4, 4) * c((1.0 - p) / 4.0);
        assert!((concurrence(&werner).unwrap() - 0.7).abs() < 1e-9);
        assert!(concurrence(&diag(&[1.2, -0.2, 0.0, 0.0])).is_err());
        assert!(concurrence(&diag(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn fidelity_examples() {
        assert!((ms_fidelity(&bell()).unwrap() - 1.0).abs() < 1e-15);
        let mixed = DMatrix::identity(4, 4) * c(0.25);
        assert!((ms_fidelity(&mixed).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn report_from_load() {
        // 0.5 |0⟩ + 0.5 |2⟩ populations, no coherence
        let load = diag(&[0.5, 0.0, 0.5]);
        let r = EnergyReport::from_load(1.0, 1.0, &load).unwrap();
        // passive order [0.5, 0.5, 0] costs 0.5, energy is 1.0
        assert!((r.w_diag - 0.5).abs() < 1e-12);
        assert!((r.w_exact - 0.5).abs() < 1e-12);
        assert_eq!(r.eta_c, Some(1.0));
        assert!((r.eta_m.unwrap() - 0.5).abs() < 1e-12);
        let none = EnergyReport::from_load(0.0, 0.0, &diag(&[1.0, 0.0])).unwrap();
        assert!(none.eta_c.is_none() && none.eta_m.is_none());
    }
}
