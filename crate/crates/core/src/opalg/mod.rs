//! Finite-dimensional operator algebra over qubits and truncated bosonic modes.
//!
//! Conventions used across the crate:
//! - qubit index 0 is `|S⟩` (ground), index 1 is `|D⟩` (excited);
//! - Fock index equals phonon number;
//! - composite spaces are ordered `[qubit₁, qubit₂, breath, com]`, first
//!   slot slowest-varying.

mod operator;
mod state;

pub use num_complex::Complex64 as C64;
pub use operator::{Operator, PRUNE_THRESHOLD};
pub use state::{expect, QuantumState, StateKind};

pub(crate) use state::hermiticity_error;

use crate::error::{Error, Result};

/// Ordered subsystem dimensions with a label per slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SubsystemLayout {
    dims: Vec<usize>,
    labels: Vec<String>,
}

impl SubsystemLayout {
    pub fn new<S: Into<String>>(dims: Vec<usize>, labels: Vec<S>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Layout("layout needs at least one slot".into()));
        }
        if let Some(&d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidDimension(d));
        }
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() != dims.len() {
            return Err(Error::Layout(format!(
                "{} labels for {} slots",
                labels.len(),
                dims.len()
            )));
        }
        Ok(SubsystemLayout { dims, labels })
    }

    /// The engine's four-slot layout `[qubit₁, qubit₂, breath, com]`.
    pub fn engine(n_breath: usize, n_com: usize) -> Result<Self> {
        SubsystemLayout::new(vec![2, 2, n_breath, n_com], vec!["q1", "q2", "breath", "com"])
    }

    pub fn single(dim: usize, label: &str) -> Result<Self> {
        SubsystemLayout::new(vec![dim], vec![label])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn slot(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn flat_index(&self, indices: &[usize]) -> Result<usize> {
        if indices.len() != self.dims.len() {
            return Err(Error::Layout(format!(
                "{} indices for {} slots",
                indices.len(),
                self.dims.len()
            )));
        }
        indices.iter().zip(&self.dims).try_fold(0, |acc, (&i, &d)| {
            if i >= d {
                Err(Error::Layout(format!("index {i} out of range for slot of dimension {d}")))
            } else {
                Ok(acc * d + i)
            }
        })
    }

    pub(crate) fn select(&self, slots: &[usize]) -> SubsystemLayout {
        SubsystemLayout {
            dims: slots.iter().map(|&s| self.dims[s]).collect(),
            labels: slots.iter().map(|&s| self.labels[s].clone()).collect(),
        }
    }

    pub(crate) fn concat(&self, other: &SubsystemLayout) -> SubsystemLayout {
        SubsystemLayout {
            dims: self.dims.iter().chain(&other.dims).copied().collect(),
            labels: self.labels.iter().chain(&other.labels).cloned().collect(),
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        Err(Error::InvalidDimension(dim))
    } else {
        Ok(())
    }
}

/// Truncated annihilation operator, `⟨n−1|a|n⟩ = √n`.
pub fn destroy(dim: usize) -> Result<Operator> {
    check_dim(dim)?;
    Ok(Operator::from_triplets(
        dim,
        (1..dim).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0))),
    ))
}

pub fn create(dim: usize) -> Result<Operator> {
    Ok(destroy(dim)?.dagger())
}

pub fn number(dim: usize) -> Result<Operator> {
    check_dim(dim)?;
    Ok(Operator::from_triplets(
        dim,
        (1..dim).map(|n| (n, n, C64::new(n as f64, 0.0))),
    ))
}

pub fn identity(dim: usize) -> Result<Operator> {
    check_dim(dim)?;
    Ok(Operator::identity(dim))
}

#[derive(Clone, Debug)]
pub struct QubitOps {
    /// `|S⟩⟨D|`
    pub sigma_minus: Operator,
    /// `|D⟩⟨S|`
    pub sigma_plus: Operator,
    /// `σ_z|D⟩ = +|D⟩`, `σ_z|S⟩ = −|S⟩`
    pub sigma_z: Operator,
    pub projector_s: Operator,
    pub projector_d: Operator,
}

pub fn qubit_ops() -> QubitOps {
    let one = C64::new(1.0, 0.0);
    let sigma_minus = Operator::from_triplets(2, [(0, 1, one)]);
    QubitOps {
        sigma_plus: sigma_minus.dagger(),
        sigma_minus,
        sigma_z: Operator::diagonal(&[-one, one]),
        projector_s: Operator::diagonal(&[one, C64::new(0.0, 0.0)]),
        projector_d: Operator::diagonal(&[C64::new(0.0, 0.0), one]),
    }
}

/// `I ⊗ … ⊗ op ⊗ … ⊗ I` with `op` in `slot`.
pub fn embed(op: &Operator, slot: usize, layout: &SubsystemLayout) -> Result<Operator> {
    embed_many(&[(slot, op)], layout)
}

/// Tensor product placing each `(slot, op)` factor in its slot and the
/// identity elsewhere. Slots must be distinct.
pub fn embed_many(factors: &[(usize, &Operator)], layout: &SubsystemLayout) -> Result<Operator> {
    let dims = layout.dims();
    for (k, &(slot, op)) in factors.iter().enumerate() {
        if slot >= dims.len() {
            return Err(Error::Layout(format!("slot {slot} outside a {}-slot layout", dims.len())));
        }
        if op.dim() != dims[slot] {
            return Err(Error::Layout(format!(
                "operator of dimension {} placed in slot {slot} of dimension {}",
                op.dim(),
                dims[slot]
            )));
        }
        if factors[..k].iter().any(|&(s, _)| s == slot) {
            return Err(Error::Layout(format!("slot {slot} given twice")));
        }
    }
    let mut acc: Option<Operator> = None;
    let mut pending_identity = 1usize;
    for (slot, &d) in dims.iter().enumerate() {
        match factors.iter().find(|&&(s, _)| s == slot) {
            Some(&(_, op)) => {
                let left = match acc.take() {
                    Some(a) => a.kron(&Operator::identity(pending_identity)),
                    None => Operator::identity(pending_identity),
                };
                acc = Some(left.kron(op));
                pending_identity = 1;
            }
            None => pending_identity *= d,
        }
    }
    let out = match acc {
        Some(a) => a.kron(&Operator::identity(pending_identity)),
        None => Operator::identity(pending_identity),
    };
    Ok(out.with_layout(layout.clone()))
}

/// Occupations `p_n ∝ (n̄/(1+n̄))^n`, renormalized over `dim` levels.
pub fn thermal_probabilities(nbar: f64, dim: usize) -> Result<Vec<f64>> {
    check_dim(dim)?;
    if !(nbar >= 0.0) || !nbar.is_finite() {
        return Err(Error::param("nbar", format!("must be finite and >= 0, got {nbar}")));
    }
    let ratio = nbar / (1.0 + nbar);
    let mut p: Vec<f64> = (0..dim).map(|n| ratio.powi(n as i32)).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    Ok(p)
}

pub fn thermal_state(nbar: f64, dim: usize) -> Result<QuantumState> {
    let p = thermal_probabilities(nbar, dim)?;
    let rho = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        dim,
        p.into_iter().map(|x| C64::new(x, 0.0)),
    ));
    QuantumState::density_unchecked(SubsystemLayout::single(dim, "mode")?, rho)
}
