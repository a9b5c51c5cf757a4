use nalgebra::{DMatrix, DVector};

use super::{Operator, SubsystemLayout, C64};
use crate::error::{Error, Result};

const NORM_TOL: f64 = 1e-9;
const EIG_FLOOR: f64 = -1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateKind {
    Ket,
    Density,
}

#[derive(Clone, Debug)]
enum Repr {
    Ket(DVector<C64>),
    Density(DMatrix<C64>),
}

/// A pure or mixed state over a composite space.
#[derive(Clone, Debug)]
pub struct QuantumState {
    layout: SubsystemLayout,
    repr: Repr,
}

impl QuantumState {
    /// Normalized ket. Fails if the norm deviates from 1 by more than 1e-9.
    pub fn ket(layout: SubsystemLayout, psi: DVector<C64>) -> Result<Self> {
        if psi.len() != layout.total_dim() {
            return Err(Error::Layout(format!(
                "ket of length {} on layout of dimension {}",
                psi.len(),
                layout.total_dim()
            )));
        }
        let norm2 = psi.norm_squared();
        if (norm2 - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("ket norm^2 = {norm2}")));
        }
        Ok(QuantumState {
            layout,
            repr: Repr::Ket(psi),
        })
    }

    /// Validated density matrix: Hermitian, unit trace, eigenvalues >= -1e-8.
    pub fn density(layout: SubsystemLayout, rho: DMatrix<C64>) -> Result<Self> {
        let state = QuantumState::density_unchecked(layout, rho)?;
        let herm = state.hermiticity_error();
        if herm > NORM_TOL {
            return Err(Error::InvalidState(format!("non-Hermitian by {herm:e}")));
        }
        let tr = state.trace();
        if (tr.re - 1.0).abs() > NORM_TOL || tr.im.abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("trace = {tr}")));
        }
        let min_eig = state.min_eigenvalue();
        if min_eig < EIG_FLOOR {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(state)
    }

    /// Density matrix checked only for shape. Used for intermediate results
    /// of propagation where invariants are tracked separately.
    pub fn density_unchecked(layout: SubsystemLayout, rho: DMatrix<C64>) -> Result<Self> {
        let n = layout.total_dim();
        if rho.nrows() != n || rho.ncols() != n {
            return Err(Error::Layout(format!(
                "{}x{} matrix on layout of dimension {n}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        Ok(QuantumState {
            layout,
            repr: Repr::Density(rho),
        })
    }

    /// Product basis ket; `indices` has one entry per slot.
    pub fn basis(layout: SubsystemLayout, indices: &[usize]) -> Result<Self> {
        let flat = layout.flat_index(indices)?;
        let mut psi = DVector::zeros(layout.total_dim());
        psi[flat] = C64::new(1.0, 0.0);
        QuantumState::ket(layout, psi)
    }

    pub fn kind(&self) -> StateKind {
        match self.repr {
            Repr::Ket(_) => StateKind::Ket,
            Repr::Density(_) => StateKind::Density,
        }
    }

    pub fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn as_ket(&self) -> Option<&DVector<C64>> {
        match &self.repr {
            Repr::Ket(v) => Some(v),
            Repr::Density(_) => None,
        }
    }

    pub fn as_density(&self) -> Option<&DMatrix<C64>> {
        match &self.repr {
            Repr::Density(m) => Some(m),
            Repr::Ket(_) => None,
        }
    }

    pub fn into_density_matrix(self) -> DMatrix<C64> {
        match self.repr {
            Repr::Density(m) => m,
            Repr::Ket(v) => &v * v.adjoint(),
        }
    }

    /// Density-matrix form; kets become projectors `|ψ⟩⟨ψ|`.
    pub fn to_density(&self) -> QuantumState {
        match &self.repr {
            Repr::Density(_) => self.clone(),
            Repr::Ket(v) => QuantumState {
                layout: self.layout.clone(),
                repr: Repr::Density(v * v.adjoint()),
            },
        }
    }

    pub fn density_matrix(&self) -> DMatrix<C64> {
        self.clone().into_density_matrix()
    }

    /// Tensor product in slot order `self ⊗ other`. The result is a ket only
    /// when both factors are kets.
    pub fn tensor(&self, other: &QuantumState) -> QuantumState {
        let layout = self.layout.concat(&other.layout);
        let repr = match (&self.repr, &other.repr) {
            (Repr::Ket(a), Repr::Ket(b)) => Repr::Ket(a.kronecker(b)),
            _ => Repr::Density(self.density_matrix().kronecker(&other.density_matrix())),
        };
        QuantumState { layout, repr }
    }

    pub fn trace(&self) -> C64 {
        match &self.repr {
            Repr::Ket(v) => C64::new(v.norm_squared(), 0.0),
            Repr::Density(m) => m.trace(),
        }
    }

    pub fn purity(&self) -> f64 {
        match &self.repr {
            Repr::Ket(v) => v.norm_squared().powi(2),
            Repr::Density(m) => m.iter().map(|z| z.norm_sqr()).sum(),
        }
    }

    pub fn hermiticity_error(&self) -> f64 {
        match &self.repr {
            Repr::Ket(_) => 0.0,
            Repr::Density(m) => hermiticity_error(m),
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match &self.repr {
            Repr::Ket(_) => 0.0,
            Repr::Density(m) => hermitian_eigenvalues(m).into_iter().fold(f64::INFINITY, f64::min),
        }
    }

    /// Reduced state over `keep` (slot indices), in original slot order.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<QuantumState> {
        let rho = match &self.repr {
            Repr::Density(m) => m,
            Repr::Ket(_) => return Err(Error::UnsupportedKind("partial_trace needs a density state")),
        };
        let (reduced, layout) = partial_trace_matrix(rho, &self.layout, keep)?;
        Ok(QuantumState {
            layout,
            repr: Repr::Density(reduced),
        })
    }

    /// `⟨ψ|A|ψ⟩` or `tr[Aρ]`.
    pub fn expect(&self, op: &Operator) -> Result<C64> {
        expect(op, self)
    }
}

/// `⟨ψ|A|ψ⟩` or `tr[Aρ]`. For Hermitian `A` the imaginary part is numerical
/// noise and its magnitude measures it.
pub fn expect(op: &Operator, state: &QuantumState) -> Result<C64> {
    if op.dim() != state.dim() {
        return Err(Error::Layout(format!(
            "operator of dimension {} on state of dimension {}",
            op.dim(),
            state.dim()
        )));
    }
    Ok(match &state.repr {
        Repr::Ket(v) => {
            let av = op.apply(v.as_slice());
            v.iter().zip(&av).map(|(a, b)| a.conj() * b).sum()
        }
        Repr::Density(m) => op.iter().map(|(i, j, a)| a * m[(j, i)]).sum(),
    })
}

pub(crate) fn hermiticity_error(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in j..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues of the Hermitian part of `m`.
pub(crate) fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    h.symmetric_eigenvalues().iter().copied().collect()
}

pub(crate) fn partial_trace_matrix(
    rho: &DMatrix<C64>,
    layout: &SubsystemLayout,
    keep: &[usize],
) -> Result<(DMatrix<C64>, SubsystemLayout)> {
    let nslots = layout.len();
    if keep.is_empty() {
        return Err(Error::Layout("partial trace must keep at least one slot".into()));
    }
    let mut keep_sorted = keep.to_vec();
    keep_sorted.sort_unstable();
    keep_sorted.dedup();
    if keep_sorted.len() != keep.len() || keep_sorted.iter().any(|&s| s >= nslots) {
        return Err(Error::Layout(format!("invalid slot set {keep:?} for {nslots} slots")));
    }
    let kept_layout = layout.select(&keep_sorted);
    let traced: Vec<usize> = (0..nslots).filter(|s| !keep_sorted.contains(s)).collect();
    let dims = layout.dims();
    let n_keep = kept_layout.total_dim();
    let n_trace: usize = traced.iter().map(|&s| dims[s]).product();

    // full[t][k] = flat index of (kept multi-index k, traced multi-index t)
    let n = layout.total_dim();
    let mut full = vec![0usize; n];
    let mut digits = vec![0usize; nslots];
    for flat in 0..n {
        let mut rem = flat;
        for s in (0..nslots).rev() {
            digits[s] = rem % dims[s];
            rem /= dims[s];
        }
        let k = keep_sorted.iter().fold(0, |acc, &s| acc * dims[s] + digits[s]);
        let t = traced.iter().fold(0, |acc, &s| acc * dims[s] + digits[s]);
        full[t * n_keep + k] = flat;
    }

    let mut out = DMatrix::zeros(n_keep, n_keep);
    for t in 0..n_trace {
        let idx = &full[t * n_keep..(t + 1) * n_keep];
        for (b, &j) in idx.iter().enumerate() {
            for (a, &i) in idx.iter().enumerate() {
                out[(a, b)] += rho[(i, j)];
            }
        }
    }
    Ok((out, kept_layout))
}
