//! Blue-sideband thermometry of the load mode.
//!
//! A response curve `s_n(t)` is the mean qubit excitation after driving the
//! blue sideband for time `t`, starting from `|SS⟩ ⊗ |n⟩`. Because the master
//! equation is linear, the signal of a mixed load is `Σ_n P_n s_n(t)`, and the
//! populations are recovered by a least-squares fit on the probability
//! simplex.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::{evolve_sampled, trace_product, ScheduledHamiltonian};
use crate::engine::EngineParams;
use crate::error::{Error, Result};
use crate::opalg::{destroy, embed, embed_many, qubit_ops, Operator, QuantumState, SubsystemLayout, C64};
use crate::thermo::PhononDistribution;

/// Which ions the sideband pulse addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SidebandModel {
    /// Both ions driven together; the signal is `(P_SD + P_DS + 2P_DD)/2`.
    Collective,
    /// Only ion 1 driven; the signal is its excited population.
    SingleIon,
}

/// Integration step used for the response curves, μs.
pub const RESPONSE_DT: f64 = 0.01;

/// 200 evenly spaced samples over `[0, 100]` μs.
pub fn default_fit_times() -> Vec<f64> {
    (0..200).map(|k| 100.0 * k as f64 / 199.0).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResponseBasis {
    times: Vec<f64>,
    /// `curves[(k, n)] = s_n(times[k])`.
    curves: DMatrix<f64>,
    model: SidebandModel,
}

impl ResponseBasis {
    /// Builds a basis from precomputed curves, one column per Fock level.
    pub fn from_curves(times: Vec<f64>, curves: DMatrix<f64>, model: SidebandModel) -> Result<Self> {
        if curves.nrows() != times.len() || curves.ncols() == 0 {
            return Err(Error::param(
                "curves",
                format!("{}x{} matrix for {} times", curves.nrows(), curves.ncols(), times.len()),
            ));
        }
        Ok(ResponseBasis { times, curves, model })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn curves(&self) -> &DMatrix<f64> {
        &self.curves
    }

    pub fn curve(&self, n: usize) -> Vec<f64> {
        self.curves.column(n).iter().copied().collect()
    }

    pub fn nmax(&self) -> usize {
        self.curves.ncols() - 1
    }

    pub fn model(&self) -> SidebandModel {
        self.model
    }
}

fn sideband_hamiltonian(p: &EngineParams, layout: &SubsystemLayout, model: SidebandModel) -> Result<Operator> {
    let q = qubit_ops();
    let ad = destroy(layout.dims()[2])?.dagger();
    let ions: &[usize] = match model {
        SidebandModel::Collective => &[0, 1],
        SidebandModel::SingleIon => &[0],
    };
    let mut h = Operator::zeros(layout.total_dim());
    for &ion in ions {
        let blue = embed_many(&[(ion, &q.sigma_plus), (2, &ad)], layout)?;
        h = &h + &(&blue + &blue.dagger());
    }
    Ok(h.scale(C64::new(p.coupling(), 0.0)))
}

fn excitation_observable(layout: &SubsystemLayout, model: SidebandModel) -> Result<Operator> {
    let q = qubit_ops();
    Ok(match model {
        SidebandModel::Collective => {
            let sum = &embed(&q.projector_d, 0, layout)? + &embed(&q.projector_d, 1, layout)?;
            sum.scale(C64::new(0.5, 0.0))
        }
        SidebandModel::SingleIon => embed(&q.projector_d, 0, layout)?,
    })
}

/// Collective two-ion response curves for Fock levels `0..=nmax`.
pub fn response_curves(nmax: usize, times: &[f64], p: &EngineParams) -> Result<ResponseBasis> {
    response_curves_with(nmax, times, p, SidebandModel::Collective)
}

pub fn response_curves_with(
    nmax: usize,
    times: &[f64],
    p: &EngineParams,
    model: SidebandModel,
) -> Result<ResponseBasis> {
    p.validate()?;
    if nmax + 2 >= p.n_com {
        return Err(Error::Truncation(format!(
            "nmax = {nmax} needs a load truncation above {}, have {}",
            nmax + 2,
            p.n_com
        )));
    }
    if times.is_empty() {
        return Err(Error::param("times", "must not be empty"));
    }
    if times[0] < 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("times", "must be non-negative and strictly increasing"));
    }
    let layout = SubsystemLayout::new(vec![2, 2, p.n_com], vec!["q1", "q2", "com"])?;
    let h = ScheduledHamiltonian::constant(sideband_hamiltonian(p, &layout, model)?);
    let obs = excitation_observable(&layout, model)?;

    let columns: Vec<Result<Vec<f64>>> = (0..=nmax)
        .into_par_iter()
        .map(|n| {
            let start = QuantumState::basis(layout.clone(), &[0, 0, n])?;
            let mut col = Vec::with_capacity(times.len());
            evolve_sampled(&start, &h, &[], 0.0, times, RESPONSE_DT, |_, s| {
                let rho = s.as_density().expect("density");
                col.push(trace_product(&obs, rho).re);
            })?;
            Ok(col)
        })
        .collect();
    let mut curves = DMatrix::zeros(times.len(), nmax + 1);
    for (n, col) in columns.into_iter().enumerate() {
        curves.column_mut(n).copy_from_slice(&col?);
    }
    ResponseBasis::from_curves(times.to_vec(), curves, model)
}

/// Forward model `signal(t) = Σ_n P_n s_n(t)`.
pub fn simulate_signal(dist: &PhononDistribution, basis: &ResponseBasis) -> Result<Vec<f64>> {
    if dist.nmax() > basis.nmax() {
        return Err(Error::param(
            "dist",
            format!("nmax {} exceeds basis nmax {}", dist.nmax(), basis.nmax()),
        ));
    }
    let p = DVector::from_iterator(
        basis.nmax() + 1,
        dist.probs().iter().copied().chain(std::iter::repeat(0.0)).take(basis.nmax() + 1),
    );
    Ok((basis.curves() * p).iter().copied().collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    /// Per-sample noise level; only scales the reported chi-square.
    pub noise_sigma: Option<f64>,
    /// Tikhonov weight on `‖P‖²`; 0 disables regularization.
    pub tikhonov: f64,
    /// Basis condition numbers above this are rejected.
    pub max_condition: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            noise_sigma: None,
            tikhonov: 0.0,
            max_condition: 1e10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub dist: PhononDistribution,
    /// Root-mean-square misfit of the fitted signal.
    pub residual: f64,
    /// `Σ (misfit/σ)² / samples` when a noise level is given.
    pub reduced_chi2: Option<f64>,
    pub nmax: usize,
    pub tikhonov: f64,
    /// Ratio of extreme singular values of the basis.
    pub condition: f64,
    pub iterations: usize,
}

pub fn fit_populations(signal: &[f64], basis: &ResponseBasis, noise_sigma: Option<f64>) -> Result<FitResult> {
    fit_populations_with(
        signal,
        basis,
        &FitOptions {
            noise_sigma,
            ..FitOptions::default()
        },
    )
}

/// Minimizes `‖A P − signal‖² + λ‖P‖²` over `P ≥ 0, Σ P = 1` with a primal
/// active-set method.
pub fn fit_populations_with(signal: &[f64], basis: &ResponseBasis, opts: &FitOptions) -> Result<FitResult> {
    let a = basis.curves();
    let (m, k) = a.shape();
    if signal.len() != m {
        return Err(Error::param(
            "signal",
            format!("{} samples for a basis of {m} times", signal.len()),
        ));
    }
    if let Some((i, v)) = signal.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::param("signal", format!("sample {i} is {v}")));
    }
    if let Some(s) = opts.noise_sigma {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::param("noise_sigma", format!("must be > 0, got {s}")));
        }
    }
    if !(opts.tikhonov >= 0.0 && opts.tikhonov.is_finite()) {
        return Err(Error::param("tikhonov", format!("must be >= 0, got {}", opts.tikhonov)));
    }

    let sv = a.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if m < k || smin <= 0.0 { f64::INFINITY } else { smax / smin };
    if opts.tikhonov == 0.0 && !(condition <= opts.max_condition) {
        let reason = if m < k {
            format!("{m} samples for {k} unknowns")
        } else {
            "basis curves are nearly linearly dependent".to_string()
        };
        return Err(Error::IllPosedFit { reason, condition });
    }

    let b = DVector::from_column_slice(signal);
    let mut q = a.transpose() * a;
    for i in 0..k {
        q[(i, i)] += opts.tikhonov;
    }
    let c = a.transpose() * &b;
    let (x, iterations) = simplex_qp(&q, &c)?;

    let mut probs: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|v| *v /= total);
    let fitted = a * DVector::from_column_slice(&probs);
    let sq: f64 = (fitted - &b).iter().map(|r| r * r).sum();
    let residual = (sq / m as f64).sqrt();
    Ok(FitResult {
        dist: PhononDistribution::new(probs)?,
        residual,
        reduced_chi2: opts.noise_sigma.map(|s| sq / (s * s) / m as f64),
        nmax: k - 1,
        tikhonov: opts.tikhonov,
        condition,
        iterations,
    })
}

/// Solves the KKT system of `min ½xᵀQx − cᵀx` subject to `Σ x = 1` with the
/// variables outside `free` pinned to zero. Returns `(x, ν)`.
fn solve_free(q: &DMatrix<f64>, c: &DVector<f64>, free: &[usize]) -> Option<(DVector<f64>, f64)> {
    let f = free.len();
    let mut kkt = DMatrix::zeros(f + 1, f + 1);
    let mut rhs = DVector::zeros(f + 1);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = q[(i, j)];
        }
        kkt[(a, f)] = 1.0;
        kkt[(f, a)] = 1.0;
        rhs[a] = c[i];
    }
    rhs[f] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    let mut x = DVector::zeros(c.len());
    for (a, &i) in free.iter().enumerate() {
        x[i] = sol[a];
    }
    Some((x, sol[f]))
}

fn simplex_qp(q: &DMatrix<f64>, c: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
    let k = c.len();
    let tol = 1e-12 * (1.0 + q.amax());
    // start at the vertex with the smallest objective
    let objective = |x: &DVector<f64>| 0.5 * x.dot(&(q * x)) - c.dot(x);
    let start = (0..k)
        .min_by(|&i, &j| {
            let vi = 0.5 * q[(i, i)] - c[i];
            let vj = 0.5 * q[(j, j)] - c[j];
            vi.total_cmp(&vj)
        })
        .expect("non-empty basis");
    let mut x = DVector::zeros(k);
    x[start] = 1.0;
    let mut free = vec![false; k];
    free[start] = true;

    let max_iter = 50 * (k + 1);
    for iter in 1..=max_iter {
        let idx: Vec<usize> = (0..k).filter(|&i| free[i]).collect();
        let (z, nu) = solve_free(q, c, &idx).ok_or_else(|| Error::IllPosedFit {
            reason: "singular KKT system".into(),
            condition: f64::INFINITY,
        })?;
        if idx.iter().all(|&i| z[i] > tol) {
            x = z;
            // multipliers of the pinned variables
            let grad = q * &x - c;
            let worst = (0..k)
                .filter(|&i| !free[i])
                .map(|i| (i, grad[i] + nu))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                Some((i, lambda)) if lambda < -tol => free[i] = true,
                _ => return Ok((x, iter)),
            }
        } else {
            // walk towards z until the first free variable reaches zero
            let mut alpha = 1.0;
            let mut blocking = None;
            for &i in &idx {
                if z[i] <= tol {
                    let step = x[i] / (x[i] - z[i]);
                    if step < alpha {
                        alpha = step;
                        blocking = Some(i);
                    }
                }
            }
            x = &x + (&z - &x) * alpha;
            for &i in &idx {
                if x[i] <= tol || Some(i) == blocking {
                    x[i] = 0.0;
                    free[i] = false;
                }
            }
            if !free.iter().any(|&f| f) {
                // numerical corner case: restart from the best vertex
                let best = (0..k)
                    .map(|i| {
                        let mut e = DVector::zeros(k);
                        e[i] = 1.0;
                        (i, objective(&e))
                    })
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("non-empty")
                    .0;
                x = DVector::zeros(k);
                x[best] = 1.0;
                free[best] = true;
            }
        }
    }
    Err(Error::IllPosedFit {
        reason: format!("active set did not settle in {max_iter} iterations"),
        condition: f64::INFINITY,
    })
}
