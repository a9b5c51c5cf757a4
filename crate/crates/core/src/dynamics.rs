//! Density-matrix propagation under time-dependent Hamiltonians with Lindblad
//! dissipation, using classical fixed-step fourth-order Runge–Kutta.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::opalg::{hermiticity_error, Operator, QuantumState, SubsystemLayout, C64};

/// Default bound on trace and Hermiticity drift over one propagation window.
pub const DRIFT_TOLERANCE: f64 = 1e-6;

pub type Coefficient = Arc<dyn Fn(f64) -> C64 + Send + Sync>;

#[derive(Clone)]
pub struct HamiltonianTerm {
    pub op: Operator,
    pub coeff: Coefficient,
}

/// `H(t) = Σ_k coeff_k(t) · op_k`, valid on `[start, end]` (times in μs).
#[derive(Clone)]
pub struct ScheduledHamiltonian {
    dim: usize,
    terms: Vec<HamiltonianTerm>,
    window: (f64, f64),
}

impl fmt::Debug for ScheduledHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScheduledHamiltonian")
            .field("dim", &self.dim)
            .field("terms", &self.terms.len())
            .field("window", &self.window)
            .finish()
    }
}

impl ScheduledHamiltonian {
    pub fn new(dim: usize, start: f64, end: f64) -> Self {
        ScheduledHamiltonian {
            dim,
            terms: Vec::new(),
            window: (start, end),
        }
    }

    /// Time-independent Hamiltonian valid for all `t >= 0`.
    pub fn constant(op: Operator) -> Self {
        let mut h = ScheduledHamiltonian::new(op.dim(), 0.0, f64::INFINITY);
        h.terms.push(HamiltonianTerm {
            op,
            coeff: Arc::new(|_| C64::new(1.0, 0.0)),
        });
        h
    }

    pub fn push<F>(&mut self, op: Operator, coeff: F) -> Result<()>
    where
        F: Fn(f64) -> C64 + Send + Sync + 'static,
    {
        if op.dim() != self.dim {
            return Err(Error::Layout(format!(
                "term of dimension {} in Hamiltonian of dimension {}",
                op.dim(),
                self.dim
            )));
        }
        self.terms.push(HamiltonianTerm {
            op,
            coeff: Arc::new(coeff),
        });
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[HamiltonianTerm] {
        &self.terms
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn duration(&self) -> f64 {
        self.window.1 - self.window.0
    }

    pub fn at(&self, t: f64) -> Operator {
        self.terms
            .iter()
            .fold(Operator::zeros(self.dim), |acc, term| &acc + &term.op.scale((term.coeff)(t)))
    }

    /// Largest Hermiticity defect of `H(t)` over `samples` evenly spaced
    /// times in the window (a finite window end is required for sampling
    /// beyond the start).
    pub fn hermiticity_error(&self, samples: usize) -> f64 {
        let (a, b) = self.window;
        let b = if b.is_finite() { b } else { a + 100.0 };
        (0..samples.max(1))
            .map(|k| a + (b - a) * k as f64 / (samples.max(2) - 1) as f64)
            .map(|t| self.at(t).hermiticity_error())
            .fold(0.0, f64::max)
    }
}

/// Jump operator with rate in μs⁻¹.
#[derive(Clone, Debug)]
pub struct CollapseChannel {
    pub op: Operator,
    pub rate: f64,
}

impl CollapseChannel {
    pub fn new(op: Operator, rate: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::param("rate", format!("must be finite and >= 0, got {rate}")));
        }
        Ok(CollapseChannel { op, rate })
    }
}

/// `−i[H,ρ] + Σ_i (γ_i/2)(2 L_i ρ L_i† − L_i†L_i ρ − ρ L_i†L_i)`.
pub fn lindblad_rhs(rho: &DMatrix<C64>, h: &Operator, channels: &[CollapseChannel]) -> Result<DMatrix<C64>> {
    let n = h.dim();
    if rho.nrows() != n || rho.ncols() != n {
        return Err(Error::Layout(format!(
            "{}x{} state with Hamiltonian of dimension {n}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    let mi = C64::new(0.0, -1.0);
    let mut out = (h.mul_dense(rho) - h.dense_mul(rho)) * mi;
    for ch in channels {
        if ch.op.dim() != n {
            return Err(Error::Layout(format!(
                "jump operator of dimension {} with Hamiltonian of dimension {n}",
                ch.op.dim()
            )));
        }
        let l = &ch.op;
        let ld = l.dagger();
        let ldl = ld.matmul(l);
        let jump = l.mul_dense(&ld.dense_mul(rho));
        let anti = ldl.mul_dense(rho) + ldl.dense_mul(rho);
        out += (jump * C64::new(2.0, 0.0) - anti) * C64::new(ch.rate / 2.0, 0.0);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub dt: f64,
    pub steps: usize,
    /// `|tr ρ(t1) − tr ρ(t0)|` before renormalization.
    pub trace_drift: f64,
    pub hermiticity_drift: f64,
    pub renormalized: bool,
}

#[derive(Clone, Debug)]
pub struct EvolutionResult {
    pub times: Vec<f64>,
    /// One series per requested observable, aligned with `times`.
    pub observables: Vec<Vec<f64>>,
    pub final_state: QuantumState,
    pub report: StepReport,
}

/// Propagates `state` from `t0` to `t1` with step close to `dt` (the window
/// is divided into an integer number of equal steps). Expectation values of
/// `observables` are recorded at `t0`, every `record_stride` steps, and at
/// `t1`.
#[allow(clippy::too_many_arguments)]
pub fn evolve(
    state: &QuantumState,
    h: &ScheduledHamiltonian,
    channels: &[CollapseChannel],
    t0: f64,
    t1: f64,
    dt: f64,
    observables: &[Operator],
    record_stride: usize,
) -> Result<EvolutionResult> {
    for op in observables {
        if op.dim() != h.dim() {
            return Err(Error::Layout(format!(
                "observable of dimension {} with Hamiltonian of dimension {}",
                op.dim(),
                h.dim()
            )));
        }
    }
    let mut series = vec![Vec::new(); observables.len()];
    let out = evolve_with(state, h, channels, t0, t1, dt, record_stride, |_, s| {
        let rho = s.as_density().expect("propagated states are densities");
        for (op, col) in observables.iter().zip(series.iter_mut()) {
            col.push(trace_product(op, rho).re);
        }
    })?;
    Ok(EvolutionResult {
        times: out.times,
        observables: series,
        final_state: out.final_state,
        report: out.report,
    })
}

#[derive(Clone, Debug)]
pub struct Propagation {
    pub times: Vec<f64>,
    pub final_state: QuantumState,
    pub report: StepReport,
}

/// Like [`evolve`] but hands each recorded state to `recorder`.
#[allow(clippy::too_many_arguments)]
pub fn evolve_with<F>(
    state: &QuantumState,
    h: &ScheduledHamiltonian,
    channels: &[CollapseChannel],
    t0: f64,
    t1: f64,
    dt: f64,
    record_stride: usize,
    recorder: F,
) -> Result<Propagation>
where
    F: FnMut(f64, &QuantumState),
{
    if !(t1 > t0) {
        return Err(Error::param("t1", format!("must exceed t0 = {t0}, got {t1}")));
    }
    if !(dt > 0.0) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    if record_stride == 0 {
        return Err(Error::param("record_stride", "must be at least 1"));
    }
    let steps = ((t1 - t0) / dt - 1e-9).ceil().max(1.0) as usize;
    let plan: Vec<(f64, usize)> = {
        let h_step = (t1 - t0) / steps as f64;
        let mut marks = Vec::new();
        let mut done = 0;
        while done < steps {
            let chunk = record_stride.min(steps - done);
            done += chunk;
            let t = if done == steps { t1 } else { t0 + done as f64 * h_step };
            marks.push((t, chunk));
        }
        marks
    };
    run_plan(state, h, channels, t0, &plan, true, recorder)
}

/// Propagates from `t0` through the strictly increasing `times`, recording at
/// each. Every interval is split into equal steps no longer than `max_dt`.
pub fn evolve_sampled<F>(
    state: &QuantumState,
    h: &ScheduledHamiltonian,
    channels: &[CollapseChannel],
    t0: f64,
    times: &[f64],
    max_dt: f64,
    mut recorder: F,
) -> Result<Propagation>
where
    F: FnMut(f64, &QuantumState),
{
    if times.is_empty() {
        return Err(Error::param("times", "must not be empty"));
    }
    if !(max_dt > 0.0) {
        return Err(Error::param("max_dt", format!("must be positive, got {max_dt}")));
    }
    if times[0] < t0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("times", "must be increasing and not before t0"));
    }
    let record_start = times[0] == t0;
    let mut plan = Vec::new();
    let mut prev = t0;
    for &t in times.iter().skip(usize::from(record_start)) {
        let n = ((t - prev) / max_dt - 1e-9).ceil().max(1.0) as usize;
        plan.push((t, n));
        prev = t;
    }
    if plan.is_empty() {
        // only t0 requested
        let mut rho = state.to_density();
        let layout = rho.layout().clone();
        recorder(t0, &rho);
        rho = QuantumState::density_unchecked(layout, rho.into_density_matrix())?;
        return Ok(Propagation {
            times: vec![t0],
            final_state: rho,
            report: StepReport {
                dt: 0.0,
                steps: 0,
                trace_drift: 0.0,
                hermiticity_drift: 0.0,
                renormalized: false,
            },
        });
    }
    run_plan(state, h, channels, t0, &plan, record_start, recorder)
}

/// `plan` holds `(target time, number of equal steps to reach it)`; the state
/// is recorded at every target.
fn run_plan<F>(
    state: &QuantumState,
    h: &ScheduledHamiltonian,
    channels: &[CollapseChannel],
    t0: f64,
    plan: &[(f64, usize)],
    record_start: bool,
    mut recorder: F,
) -> Result<Propagation>
where
    F: FnMut(f64, &QuantumState),
{
    let n = h.dim();
    if state.dim() != n {
        return Err(Error::Layout(format!(
            "state of dimension {} with Hamiltonian of dimension {n}",
            state.dim()
        )));
    }
    let (w0, w1) = h.window();
    let t_end = plan.last().map(|p| p.0).unwrap_or(t0);
    let slack = 1e-9 * (1.0 + t_end.abs());
    if t0 < w0 - slack || t_end > w1 + slack {
        return Err(Error::param(
            "time window",
            format!("[{t0}, {t_end}] outside Hamiltonian window [{w0}, {w1}]"),
        ));
    }
    let layout: SubsystemLayout = state.layout().clone();
    let rho0 = state.to_density().into_density_matrix();
    let herm0 = hermiticity_error(&rho0);
    if herm0 > 1e-8 {
        return Err(Error::InvalidState(format!("initial state non-Hermitian by {herm0:e}")));
    }
    let mut rho = (&rho0 + rho0.adjoint()) * C64::new(0.5, 0.0);
    let tr0 = rho.trace().re;

    let mut prop = Integrator::new(h, channels)?;
    let mut times = Vec::with_capacity(plan.len() + 1);
    let mut record = |t: f64, rho: DMatrix<C64>| -> Result<DMatrix<C64>> {
        let s = QuantumState::density_unchecked(layout.clone(), rho)?;
        recorder(t, &s);
        times.push(t);
        Ok(s.into_density_matrix())
    };
    if record_start {
        rho = record(t0, rho)?;
    }

    let mut t = t0;
    let mut total_steps = 0;
    let mut min_dt = f64::INFINITY;
    for &(target, nsteps) in plan {
        let step = (target - t) / nsteps as f64;
        min_dt = min_dt.min(step);
        for k in 0..nsteps {
            let ts = t + k as f64 * step;
            prop.step(&mut rho, ts, step);
        }
        t = target;
        total_steps += nsteps;
        let tr = rho.trace();
        let drift = (tr.re - tr0).abs();
        if !drift.is_finite() || drift > DRIFT_TOLERANCE || tr.im.abs() > DRIFT_TOLERANCE {
            return Err(Error::IntegrationDiverged {
                time: t,
                reason: format!("trace drift {drift:e}"),
            });
        }
        rho = record(t, rho)?;
    }

    let trace_drift = (rho.trace().re - tr0).abs();
    let hermiticity_drift = hermiticity_error(&rho);
    if hermiticity_drift > DRIFT_TOLERANCE {
        return Err(Error::IntegrationDiverged {
            time: t,
            reason: format!("Hermiticity drift {hermiticity_drift:e}"),
        });
    }
    let renormalized = trace_drift > 0.0;
    if renormalized {
        let tr = rho.trace().re;
        rho *= C64::new(tr0 / tr, 0.0);
    }
    Ok(Propagation {
        times,
        final_state: QuantumState::density_unchecked(layout, rho)?,
        report: StepReport {
            dt: min_dt,
            steps: total_steps,
            trace_drift,
            hermiticity_drift,
            renormalized,
        },
    })
}

/// `tr[A ρ]` for sparse `A`.
pub(crate) fn trace_product(op: &Operator, rho: &DMatrix<C64>) -> C64 {
    op.iter().map(|(i, j, a)| a * rho[(j, i)]).sum()
}

/// RK4 stepper. The effective non-Hermitian Hamiltonian
/// `H_eff(t) = H(t) − (i/2) Σ γ L†L` is assembled on a fixed sparsity pattern
/// and the generator evaluated as
/// `−i(H_eff ρ − ρ H_eff†) + Σ γ L ρ L†`, with `H_eff ρ = (ρ H_eff†)†` for
/// Hermitian `ρ`.
struct Integrator<'a> {
    h: &'a ScheduledHamiltonian,
    /// `H_eff†` stored in CSR; its values are refreshed at every stage.
    heff_dag: Operator,
    /// For each term, positions of its conjugated entries in `heff_dag`.
    term_slots: Vec<Vec<(usize, C64)>>,
    /// Constant dissipative part of `H_eff†` (i.e. `+(i/2)Σ γ L†L`).
    damping: Vec<(usize, C64)>,
    jumps: Vec<(f64, Operator, Operator)>,
    k: [DMatrix<C64>; 4],
    tmp: DMatrix<C64>,
    scratch: DMatrix<C64>,
}

impl<'a> Integrator<'a> {
    fn new(h: &'a ScheduledHamiltonian, channels: &[CollapseChannel]) -> Result<Self> {
        let n = h.dim();
        let mut jumps = Vec::new();
        let mut damping_op = Operator::zeros(n);
        for ch in channels {
            if ch.op.dim() != n {
                return Err(Error::Layout(format!(
                    "jump operator of dimension {} with Hamiltonian of dimension {n}",
                    ch.op.dim()
                )));
            }
            if ch.rate == 0.0 {
                continue;
            }
            let ld = ch.op.dagger();
            damping_op = &damping_op + &ld.matmul(&ch.op).scale(C64::new(0.0, ch.rate / 2.0));
            jumps.push((ch.rate, ch.op.clone(), ld));
        }

        // union pattern of every term's dagger and the damping part
        let one = C64::new(1.0, 0.0);
        let pattern = Operator::from_triplets(
            n,
            h.terms()
                .iter()
                .flat_map(|t| t.op.iter().map(|(i, j, _)| (j, i, one)))
                .chain(damping_op.iter().map(|(i, j, _)| (i, j, one))),
        );
        let mut offsets = vec![0usize; n + 1];
        for r in 0..n {
            offsets[r + 1] = offsets[r] + pattern.row(r).0.len();
        }
        let locate = |r: usize, c: usize| -> usize {
            let (cols, _) = pattern.row(r);
            offsets[r] + cols.binary_search(&c).expect("entry in union pattern")
        };
        let term_slots = h
            .terms()
            .iter()
            .map(|t| t.op.iter().map(|(i, j, v)| (locate(j, i), v.conj())).collect())
            .collect();
        let damping = damping_op.iter().map(|(i, j, v)| (locate(i, j), v)).collect();

        let zero = DMatrix::zeros(n, n);
        Ok(Integrator {
            h,
            heff_dag: pattern,
            term_slots,
            damping,
            jumps,
            k: [zero.clone(), zero.clone(), zero.clone(), zero.clone()],
            tmp: zero.clone(),
            scratch: zero,
        })
    }

    fn assemble(&mut self, t: f64) {
        let vals = self.heff_dag.values_mut();
        vals.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for (term, slots) in self.h.terms().iter().zip(&self.term_slots) {
            // (c·A)† = c̄·A†
            let c = (term.coeff)(t).conj();
            for &(p, v) in slots {
                vals[p] += c * v;
            }
        }
        for &(p, v) in &self.damping {
            vals[p] += v;
        }
    }

    fn rhs(&mut self, t: f64, rho: &DMatrix<C64>, out_idx: usize) {
        self.assemble(t);
        let n = rho.nrows();
        let x = &mut self.scratch;
        x.fill(C64::new(0.0, 0.0));
        self.heff_dag.dense_mul_acc(rho, C64::new(1.0, 0.0), x);
        // −i(X† − X) where X = ρ H_eff†
        let out = &mut self.k[out_idx];
        for j in 0..n {
            for i in 0..n {
                out[(i, j)] = C64::new(0.0, -1.0) * (x[(j, i)].conj() - x[(i, j)]);
            }
        }
        for (rate, l, ld) in &self.jumps {
            self.tmp.fill(C64::new(0.0, 0.0));
            ld.dense_mul_acc(rho, C64::new(1.0, 0.0), &mut self.tmp);
            l.mul_dense_into(&self.tmp, &mut self.scratch);
            let out = &mut self.k[out_idx];
            out.zip_apply(&self.scratch, |o, v| *o += v * *rate);
        }
    }

    fn step(&mut self, rho: &mut DMatrix<C64>, t: f64, dt: f64) {
        let half = dt / 2.0;
        let mut stage = rho.clone();
        self.rhs(t, rho, 0);
        stage.copy_from(rho);
        stage.zip_apply(&self.k[0], |s, k| *s += k * half);
        self.rhs(t + half, &stage, 1);
        stage.copy_from(rho);
        stage.zip_apply(&self.k[1], |s, k| *s += k * half);
        self.rhs(t + half, &stage, 2);
        stage.copy_from(rho);
        stage.zip_apply(&self.k[2], |s, k| *s += k * dt);
        self.rhs(t + dt, &stage, 3);
        let w = dt / 6.0;
        let [k1, k2, k3, k4] = &self.k;
        for (((r, a), (b, c)), d) in rho
            .iter_mut()
            .zip(k1.iter())
            .zip(k2.iter().zip(k3.iter()))
            .zip(k4.iter())
        {
            *r += (a + (b + c) * 2.0 + d) * w;
        }
    }
}
