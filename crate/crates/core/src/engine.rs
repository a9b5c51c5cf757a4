//! The four-stroke cycle: MS charging on the breath mode, detuning ramp,
//! Jaynes–Cummings transfer into the centre-of-mass (load) mode, and the
//! reverse ramp with qubit decay switched on.
//!
//! Frequencies are configured as cyclic values (kHz / MHz, i.e. `ω/2π`) and
//! converted to angular rad/μs; times are in μs.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dynamics::{evolve_sampled, evolve_with, CollapseChannel, ScheduledHamiltonian, StepReport};
use crate::error::{Error, Result};
use crate::opalg::{
    destroy, embed, embed_many, number, qubit_ops, thermal_state, Operator, QuantumState, SubsystemLayout,
    C64,
};
use crate::thermo::{self, EnergyReport, QubitPopulations};

/// Cyclic kHz to angular rad/μs.
pub fn khz_to_angular(f_khz: f64) -> f64 {
    2.0 * PI * f_khz * 1e-3
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RampSchedule {
    pub steps: usize,
    pub step_us: f64,
}

impl RampSchedule {
    pub fn duration(&self) -> f64 {
        self.steps as f64 * self.step_us
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrokeSteps {
    pub charge_us: f64,
    pub ramp_us: f64,
    pub transfer_us: f64,
}

/// How the cycle is propagated.
///
/// `Factored` exploits that the load mode is a spectator of the charging
/// stroke and the breath mode a spectator of the later strokes: stroke 1 runs
/// on qubits ⊗ breath and strokes 2–4 on qubits ⊗ load, which reproduces
/// every recorded observable of the full propagation. `Full` propagates the
/// four-slot density matrix throughout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PropagationMode {
    Factored,
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineParams {
    /// Carrier Rabi frequency Ω/2π, kHz.
    pub omega_khz: f64,
    /// Lamb–Dicke parameter.
    pub eta_p: f64,
    /// Breath-mode frequency ω_b/2π, MHz.
    pub omega_b_mhz: f64,
    /// Centre-of-mass mode frequency ω_c/2π, MHz.
    pub omega_c_mhz: f64,
    /// MS symmetric detuning δ/2π in kHz; `None` means `2·η_p·Ω`.
    pub delta_khz: Option<f64>,
    /// Effective qubit decay rate, rad/μs; `None` means `5·Ω`.
    pub gamma_eff: Option<f64>,
    pub n_h: f64,
    pub n_c: f64,
    /// Breath-mode Fock truncation.
    pub n_breath: usize,
    /// Load-mode Fock truncation.
    pub n_com: usize,
    /// Ramp detuning at the far end, cyclic kHz.
    pub ramp_start_khz: f64,
    pub ramp_down: RampSchedule,
    pub ramp_up: RampSchedule,
    pub dt: StrokeSteps,
    pub propagation: PropagationMode,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            omega_khz: 245.8,
            eta_p: 0.0574,
            omega_b_mhz: 1.37,
            omega_c_mhz: 0.794,
            delta_khz: None,
            gamma_eff: None,
            n_h: 0.03,
            n_c: 0.13,
            n_breath: 8,
            n_com: 12,
            ramp_start_khz: 859.0,
            ramp_down: RampSchedule { steps: 4, step_us: 0.1 },
            ramp_up: RampSchedule { steps: 5, step_us: 1.0 },
            dt: StrokeSteps {
                charge_us: 0.02,
                ramp_us: 0.002,
                transfer_us: 0.02,
            },
            propagation: PropagationMode::Factored,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and > 0, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and >= 0, got {v}")))
    }
}

impl EngineParams {
    pub fn validate(&self) -> Result<()> {
        positive("omega_khz", self.omega_khz)?;
        if !(0.0..1.0).contains(&self.eta_p) {
            return Err(Error::param("eta_p", format!("must lie in [0, 1), got {}", self.eta_p)));
        }
        positive("omega_b_mhz", self.omega_b_mhz)?;
        positive("omega_c_mhz", self.omega_c_mhz)?;
        if let Some(d) = self.delta_khz {
            positive("delta_khz", d)?;
        }
        if let Some(g) = self.gamma_eff {
            non_negative("gamma_eff", g)?;
        }
        non_negative("n_h", self.n_h)?;
        non_negative("n_c", self.n_c)?;
        for (name, n) in [("n_breath", self.n_breath), ("n_com", self.n_com)] {
            if n < 4 {
                return Err(Error::param(name, format!("truncation must be >= 4, got {n}")));
            }
        }
        positive("ramp_start_khz", self.ramp_start_khz)?;
        for (name, r) in [("ramp_down", self.ramp_down), ("ramp_up", self.ramp_up)] {
            if r.steps == 0 {
                return Err(Error::param(format!("{name}.steps"), "must be at least 1"));
            }
            positive(&format!("{name}.step_us"), r.step_us)?;
        }
        positive("dt.charge_us", self.dt.charge_us)?;
        positive("dt.ramp_us", self.dt.ramp_us)?;
        positive("dt.transfer_us", self.dt.transfer_us)?;
        Ok(())
    }

    /// Ω in rad/μs.
    pub fn omega(&self) -> f64 {
        khz_to_angular(self.omega_khz)
    }

    /// δ/2π in kHz.
    pub fn delta_cyclic_khz(&self) -> f64 {
        self.delta_khz.unwrap_or(2.0 * self.eta_p * self.omega_khz)
    }

    /// δ in rad/μs.
    pub fn delta(&self) -> f64 {
        khz_to_angular(self.delta_cyclic_khz())
    }

    /// γ_eff in rad/μs.
    pub fn gamma(&self) -> f64 {
        self.gamma_eff.unwrap_or(5.0 * self.omega())
    }

    /// Sideband coupling `η_p Ω / 2` in rad/μs.
    pub fn coupling(&self) -> f64 {
        self.eta_p * self.omega() / 2.0
    }

    /// Closed-loop MS gate time `2π/δ` in μs.
    pub fn gate_time(&self) -> f64 {
        2.0 * PI / self.delta()
    }

    /// `(ω_b − ω_c)/2π + δ/2π` in kHz, the ramp start implied by the mode
    /// frequencies. The default ramp start (859 kHz) differs from it; the
    /// stroke 2/4 results are insensitive to the choice.
    pub fn mode_gap_ramp_start_khz(&self) -> f64 {
        (self.omega_b_mhz - self.omega_c_mhz) * 1e3 + self.delta_cyclic_khz()
    }

    pub fn with_truncation(&self, n_breath: usize, n_com: usize) -> Self {
        EngineParams {
            n_breath,
            n_com,
            ..self.clone()
        }
    }
}

/// Which engine slots a propagation space carries. Qubits always occupy
/// slots 0 and 1.
#[derive(Clone, Debug)]
pub struct EngineSpace {
    layout: SubsystemLayout,
    breath: Option<usize>,
    com: Option<usize>,
}

impl EngineSpace {
    pub fn full(p: &EngineParams) -> Result<Self> {
        Ok(EngineSpace {
            layout: SubsystemLayout::engine(p.n_breath, p.n_com)?,
            breath: Some(2),
            com: Some(3),
        })
    }

    pub fn qubits_breath(p: &EngineParams) -> Result<Self> {
        Ok(EngineSpace {
            layout: SubsystemLayout::new(vec![2, 2, p.n_breath], vec!["q1", "q2", "breath"])?,
            breath: Some(2),
            com: None,
        })
    }

    pub fn qubits_com(p: &EngineParams) -> Result<Self> {
        Ok(EngineSpace {
            layout: SubsystemLayout::new(vec![2, 2, p.n_com], vec!["q1", "q2", "com"])?,
            breath: None,
            com: Some(2),
        })
    }

    pub fn layout(&self) -> &SubsystemLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn breath_slot(&self) -> Option<usize> {
        self.breath
    }

    pub fn com_slot(&self) -> Option<usize> {
        self.com
    }

    fn require(slot: Option<usize>, what: &str) -> Result<usize> {
        slot.ok_or_else(|| Error::Layout(format!("propagation space has no {what} mode")))
    }

    /// `(Σ_i σ₊^i ⊗ m, Σ_i σ₋^i ⊗ m)` pairs for a mode operator `m` in `slot`.
    fn collective(&self, slot: usize, mode_op: &Operator) -> Result<(Operator, Operator)> {
        let q = qubit_ops();
        let mut plus = Operator::zeros(self.dim());
        let mut minus = Operator::zeros(self.dim());
        for ion in 0..2 {
            plus = &plus + &embed_many(&[(ion, &q.sigma_plus), (slot, mode_op)], &self.layout)?;
            minus = &minus + &embed_many(&[(ion, &q.sigma_minus), (slot, mode_op)], &self.layout)?;
        }
        Ok((plus, minus))
    }

    pub fn mode_number(&self, slot: usize) -> Result<Operator> {
        embed(&number(self.layout.dims()[slot])?, slot, &self.layout)
    }

    /// `Σ_i σ₊^iσ₋^i + a_c†a_c`.
    pub fn total_excitation(&self) -> Result<Operator> {
        let com = Self::require(self.com, "load")?;
        let q = qubit_ops();
        let mut n = self.mode_number(com)?;
        for ion in 0..2 {
            n = &n + &embed(&q.projector_d, ion, &self.layout)?;
        }
        Ok(n)
    }
}

fn phase(theta: f64) -> C64 {
    C64::from_polar(1.0, theta)
}

/// Charging Hamiltonian on the full engine space.
pub fn build_ms_hamiltonian(p: &EngineParams) -> Result<ScheduledHamiltonian> {
    build_ms_hamiltonian_on(p, &EngineSpace::full(p)?)
}

/// `Σ_i (η_pΩ/2)[σ₊^i a_h e^{−iδt} + σ₊^i a_h† e^{iδt} + h.c.]`, i.e. the red
/// (`δ_r = −δ`) and blue (`δ_b = +δ`) sidebands of the breath mode with
/// equal Rabi frequencies.
pub fn build_ms_hamiltonian_on(p: &EngineParams, space: &EngineSpace) -> Result<ScheduledHamiltonian> {
    p.validate()?;
    let slot = EngineSpace::require(space.breath, "breath")?;
    let a = destroy(space.layout.dims()[slot])?;
    let ad = a.dagger();
    let g = p.coupling();
    let delta = p.delta();
    let (sp_a, sm_a) = space.collective(slot, &a)?;
    let (sp_ad, sm_ad) = space.collective(slot, &ad)?;

    let mut h = ScheduledHamiltonian::new(space.dim(), 0.0, f64::INFINITY);
    // red sideband and its conjugate
    h.push(sp_a.scale(C64::new(g, 0.0)), move |t| phase(-delta * t))?;
    h.push(sm_ad.scale(C64::new(g, 0.0)), move |t| phase(delta * t))?;
    // blue sideband and its conjugate
    h.push(sp_ad.scale(C64::new(g, 0.0)), move |t| phase(delta * t))?;
    h.push(sm_a.scale(C64::new(g, 0.0)), move |t| phase(-delta * t))?;
    Ok(h)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RampDirection {
    /// Detuning stepped from the ramp start down towards resonance.
    Down,
    /// Detuning stepped from resonance up to the ramp start.
    Up,
}

/// Piecewise-constant detuning profile `Δ(t)` (rad/μs) and its integral.
#[derive(Clone, Debug, PartialEq)]
pub struct RampProfile {
    step_us: f64,
    levels: Vec<f64>,
}

impl RampProfile {
    pub fn new(p: &EngineParams, direction: RampDirection) -> Self {
        let start = khz_to_angular(p.ramp_start_khz);
        let (sched, levels): (RampSchedule, Vec<f64>) = match direction {
            RampDirection::Down => {
                let s = p.ramp_down;
                let n = s.steps as f64;
                (s, (0..s.steps).map(|k| start * (1.0 - k as f64 / n)).collect())
            }
            RampDirection::Up => {
                let s = p.ramp_up;
                let n = s.steps as f64;
                (s, (0..s.steps).map(|k| start * (k as f64 + 1.0) / n).collect())
            }
        };
        RampProfile {
            step_us: sched.step_us,
            levels,
        }
    }

    pub fn duration(&self) -> f64 {
        self.step_us * self.levels.len() as f64
    }

    /// Detuning levels in rad/μs, one per step.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn detuning(&self, t: f64) -> f64 {
        let k = ((t / self.step_us).floor().max(0.0) as usize).min(self.levels.len() - 1);
        self.levels[k]
    }

    /// `φ(t) = ∫₀^t Δ(t') dt'`.
    pub fn phase(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.duration());
        let full = ((t / self.step_us).floor() as usize).min(self.levels.len());
        let done: f64 = self.levels[..full].iter().sum::<f64>() * self.step_us;
        let rest = if full < self.levels.len() {
            self.levels[full] * (t - full as f64 * self.step_us)
        } else {
            0.0
        };
        done + rest
    }
}

pub fn build_ramp_hamiltonian(p: &EngineParams, direction: RampDirection) -> Result<ScheduledHamiltonian> {
    build_ramp_hamiltonian_on(p, direction, &EngineSpace::full(p)?)
}

/// `Σ_i (η_pΩ/2) σ₊^i (e^{−iφ(t)} a_c + e^{iφ(t)} a_c†) + h.c.` over the ramp
/// window.
pub fn build_ramp_hamiltonian_on(
    p: &EngineParams,
    direction: RampDirection,
    space: &EngineSpace,
) -> Result<ScheduledHamiltonian> {
    p.validate()?;
    let slot = EngineSpace::require(space.com, "load")?;
    let a = destroy(space.layout.dims()[slot])?;
    let ad = a.dagger();
    let g = C64::new(p.coupling(), 0.0);
    let profile = RampProfile::new(p, direction);
    let (sp_a, sm_a) = space.collective(slot, &a)?;
    let (sp_ad, sm_ad) = space.collective(slot, &ad)?;

    let mut h = ScheduledHamiltonian::new(space.dim(), 0.0, profile.duration());
    let pr = profile.clone();
    h.push(sp_a.scale(g), move |t| phase(-pr.phase(t)))?;
    let pr = profile.clone();
    h.push(sm_ad.scale(g), move |t| phase(pr.phase(t)))?;
    let pr = profile.clone();
    h.push(sp_ad.scale(g), move |t| phase(pr.phase(t)))?;
    let pr = profile;
    h.push(sm_a.scale(g), move |t| phase(-pr.phase(t)))?;
    Ok(h)
}

pub fn build_jc_hamiltonian(p: &EngineParams) -> Result<ScheduledHamiltonian> {
    build_jc_hamiltonian_on(p, &EngineSpace::full(p)?)
}

/// `Σ_i (η_pΩ/2)(σ₊^i a_c + σ₋^i a_c†)`.
pub fn build_jc_hamiltonian_on(p: &EngineParams, space: &EngineSpace) -> Result<ScheduledHamiltonian> {
    p.validate()?;
    let slot = EngineSpace::require(space.com, "load")?;
    let a = destroy(space.layout.dims()[slot])?;
    let (sp_a, _) = space.collective(slot, &a)?;
    let h = sp_a.scale(C64::new(p.coupling(), 0.0));
    let h = &h + &h.dagger();
    Ok(ScheduledHamiltonian::constant(h))
}

pub fn build_dissipation(p: &EngineParams) -> Result<Vec<CollapseChannel>> {
    build_dissipation_on(p, &EngineSpace::full(p)?)
}

/// `σ₋^1` and `σ₋^2`, each at rate γ_eff.
pub fn build_dissipation_on(p: &EngineParams, space: &EngineSpace) -> Result<Vec<CollapseChannel>> {
    p.validate()?;
    let q = qubit_ops();
    (0..2)
        .map(|ion| CollapseChannel::new(embed(&q.sigma_minus, ion, &space.layout)?, p.gamma()))
        .collect()
}

/// `|SS⟩⟨SS| ⊗ ρ_th(n_h) ⊗ ρ_th(n_c)` on the full engine space.
pub fn initial_state(p: &EngineParams) -> Result<QuantumState> {
    p.validate()?;
    let qubits = QuantumState::basis(
        SubsystemLayout::new(vec![2, 2], vec!["q1", "q2"])?,
        &[0, 0],
    )?;
    let breath = thermal_state(p.n_h, p.n_breath)?;
    let com = thermal_state(p.n_c, p.n_com)?;
    let rho = qubits.to_density().tensor(&breath).tensor(&com).into_density_matrix();
    QuantumState::density_unchecked(SubsystemLayout::engine(p.n_breath, p.n_com)?, rho)
}

/// One stroke ready for propagation.
#[derive(Clone, Debug)]
pub struct StrokeSpec {
    pub id: u8,
    pub duration: f64,
    pub hamiltonian: ScheduledHamiltonian,
    pub channels: Vec<CollapseChannel>,
    pub dt: f64,
}

/// The four strokes on `space` (which must carry the modes each stroke
/// touches).
pub fn stroke_specs(
    p: &EngineParams,
    t_gate: f64,
    tau3: f64,
    charge_space: &EngineSpace,
    load_space: &EngineSpace,
) -> Result<Vec<StrokeSpec>> {
    Ok(vec![
        StrokeSpec {
            id: 1,
            duration: t_gate,
            hamiltonian: build_ms_hamiltonian_on(p, charge_space)?,
            channels: Vec::new(),
            dt: p.dt.charge_us,
        },
        StrokeSpec {
            id: 2,
            duration: p.ramp_down.duration(),
            hamiltonian: build_ramp_hamiltonian_on(p, RampDirection::Down, load_space)?,
            channels: Vec::new(),
            dt: p.dt.ramp_us,
        },
        StrokeSpec {
            id: 3,
            duration: tau3,
            hamiltonian: build_jc_hamiltonian_on(p, load_space)?,
            channels: Vec::new(),
            dt: p.dt.transfer_us,
        },
        StrokeSpec {
            id: 4,
            duration: p.ramp_up.duration(),
            hamiltonian: build_ramp_hamiltonian_on(p, RampDirection::Up, load_space)?,
            channels: build_dissipation_on(p, load_space)?,
            dt: p.dt.ramp_us,
        },
    ])
}

/// Observables of the engine at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Snapshot {
    /// Cycle time in μs (strokes are laid end to end).
    pub t_us: f64,
    pub populations: QubitPopulations,
    pub n_b: f64,
    pub n_c: f64,
    pub concurrence: f64,
    pub ms_fidelity: f64,
}

#[derive(Clone, Debug)]
pub struct StrokeRecord {
    pub id: u8,
    pub start_us: f64,
    pub duration_us: f64,
    pub series: Vec<Snapshot>,
    /// `None` for a zero-length stroke.
    pub report: Option<StepReport>,
}

#[derive(Clone, Debug)]
pub struct CycleRecord {
    pub t_gate_us: f64,
    pub tau3_us: f64,
    pub initial: Snapshot,
    pub strokes: Vec<StrokeRecord>,
    /// Reduced load-mode density matrix at the end of stroke 3.
    pub load_state: DMatrix<C64>,
    pub summary: EnergyReport,
}

impl CycleRecord {
    pub fn stroke(&self, id: u8) -> Option<&StrokeRecord> {
        self.strokes.iter().find(|s| s.id == id)
    }

    /// Snapshot at the end of stroke `id`.
    pub fn boundary(&self, id: u8) -> Option<&Snapshot> {
        self.stroke(id).and_then(|s| s.series.last())
    }

    pub fn final_snapshot(&self) -> &Snapshot {
        self.boundary(4).expect("a completed cycle records stroke 4")
    }

    /// Every scalar of the record by name: boundary observables after each
    /// stroke followed by the energy report (undefined efficiencies are
    /// reported as NaN).
    pub fn scalars(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for s in &self.strokes {
            if let Some(b) = s.series.last() {
                let id = s.id;
                out.push((format!("s{id}.P_SS"), b.populations.ss));
                out.push((format!("s{id}.P_SDplusDS"), b.populations.sd_plus_ds()));
                out.push((format!("s{id}.P_DD"), b.populations.dd));
                out.push((format!("s{id}.n_b"), b.n_b));
                out.push((format!("s{id}.n_c"), b.n_c));
                out.push((format!("s{id}.concurrence"), b.concurrence));
                out.push((format!("s{id}.ms_fidelity"), b.ms_fidelity));
            }
        }
        let r = &self.summary;
        out.push(("delta_n_o".into(), r.delta_n_o));
        out.push(("delta_n_t".into(), r.delta_n_t));
        out.push(("eta_c".into(), r.eta_c.unwrap_or(f64::NAN)));
        out.push(("W_exact".into(), r.w_exact));
        out.push(("W_diag".into(), r.w_diag));
        out.push(("eta_m".into(), r.eta_m.unwrap_or(f64::NAN)));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleOptions {
    /// Record a snapshot every this many integration steps (plus both ends
    /// of every stroke).
    pub record_stride: usize,
}

impl Default for CycleOptions {
    fn default() -> Self {
        CycleOptions { record_stride: 10 }
    }
}

fn snapshot(
    t_us: f64,
    state: &QuantumState,
    space: &EngineSpace,
    n_b_fixed: f64,
    n_c_fixed: f64,
) -> Result<Snapshot> {
    let rho = state
        .as_density()
        .ok_or(Error::UnsupportedKind("snapshots need a density state"))?;
    let two = thermo::two_qubit_state(state)?;
    let mean = |slot: Option<usize>, fixed: f64| -> Result<f64> {
        match slot {
            Some(s) => Ok(crate::dynamics::trace_product(&space.mode_number(s)?, rho).re),
            None => Ok(fixed),
        }
    };
    Ok(Snapshot {
        t_us,
        populations: QubitPopulations::from_two_qubit(&two),
        n_b: mean(space.breath, n_b_fixed)?,
        n_c: mean(space.com, n_c_fixed)?,
        concurrence: thermo::concurrence(&two)?,
        ms_fidelity: thermo::ms_fidelity(&two)?,
    })
}

/// Mean occupation of a thermal mode as represented in the truncated space.
fn thermal_mean(nbar: f64, dim: usize) -> Result<f64> {
    Ok(crate::opalg::thermal_probabilities(nbar, dim)?
        .iter()
        .enumerate()
        .map(|(n, p)| n as f64 * p)
        .sum())
}

/// Propagates one stroke, recording snapshots. Mode means for slots absent
/// from the space are held at the given constants.
fn run_stroke(
    spec: &StrokeSpec,
    start_us: f64,
    state: QuantumState,
    space: &EngineSpace,
    n_b_fixed: f64,
    n_c_fixed: f64,
    stride: usize,
) -> Result<(QuantumState, StrokeRecord)> {
    let id = spec.id;
    if spec.duration == 0.0 {
        let snap = snapshot(start_us, &state, space, n_b_fixed, n_c_fixed).map_err(|e| e.in_stroke(id))?;
        return Ok((
            state,
            StrokeRecord {
                id,
                start_us,
                duration_us: 0.0,
                series: vec![snap],
                report: None,
            },
        ));
    }
    if !(spec.duration > 0.0) {
        return Err(Error::param("duration", format!("stroke {id} duration {} is negative", spec.duration)));
    }
    let mut series = Vec::new();
    let mut failure = None;
    let out = evolve_with(
        &state,
        &spec.hamiltonian,
        &spec.channels,
        0.0,
        spec.duration,
        spec.dt,
        stride,
        |t, s| match snapshot(start_us + t, s, space, n_b_fixed, n_c_fixed) {
            Ok(snap) => series.push(snap),
            Err(e) => {
                failure.get_or_insert(e);
            }
        },
    )
    .map_err(|e| e.in_stroke(id))?;
    if let Some(e) = failure {
        return Err(e.in_stroke(id));
    }
    Ok((
        out.final_state,
        StrokeRecord {
            id,
            start_us,
            duration_us: spec.duration,
            series,
            report: Some(out.report),
        },
    ))
}

pub fn run_cycle(p: &EngineParams, t_gate: f64, tau3: f64) -> Result<CycleRecord> {
    run_cycle_with(p, t_gate, tau3, &CycleOptions::default())
}

pub fn run_cycle_with(p: &EngineParams, t_gate: f64, tau3: f64, opts: &CycleOptions) -> Result<CycleRecord> {
    p.validate()?;
    if !(t_gate >= 0.0 && t_gate.is_finite()) {
        return Err(Error::param("t_gate", format!("must be >= 0, got {t_gate}")));
    }
    if !(tau3 >= 0.0 && tau3.is_finite()) {
        return Err(Error::param("tau3", format!("must be >= 0, got {tau3}")));
    }
    let stride = opts.record_stride.max(1);
    match p.propagation {
        PropagationMode::Full => run_cycle_full(p, t_gate, tau3, stride),
        PropagationMode::Factored => run_cycle_factored(p, t_gate, tau3, stride),
    }
}

fn finish(
    t_gate: f64,
    tau3: f64,
    strokes: Vec<StrokeRecord>,
    load_state: DMatrix<C64>,
) -> Result<CycleRecord> {
    let initial = strokes[0].series[0];
    let end1 = strokes[0].series.last().expect("stroke records are non-empty");
    let end3 = strokes[2].series.last().expect("stroke records are non-empty");
    let delta_n_o = thermo::absorbed_quanta(&end1.populations);
    let delta_n_t = end3.n_c - initial.n_c;
    let summary = EnergyReport::from_load(delta_n_o, delta_n_t, &load_state)?;
    Ok(CycleRecord {
        t_gate_us: t_gate,
        tau3_us: tau3,
        initial,
        strokes,
        load_state,
        summary,
    })
}

fn run_cycle_full(p: &EngineParams, t_gate: f64, tau3: f64, stride: usize) -> Result<CycleRecord> {
    let space = EngineSpace::full(p)?;
    let specs = stroke_specs(p, t_gate, tau3, &space, &space)?;
    let mut state = initial_state(p)?;
    let mut strokes = Vec::with_capacity(4);
    let mut start = 0.0;
    let mut load_state = None;
    for spec in &specs {
        let (next, rec) = run_stroke(spec, start, state, &space, 0.0, 0.0, stride)?;
        start += spec.duration;
        state = next;
        if spec.id == 3 {
            load_state = Some(state.partial_trace(&[3])?.into_density_matrix());
        }
        strokes.push(rec);
    }
    finish(t_gate, tau3, strokes, load_state.expect("stroke 3 ran"))
}

/// State entering stroke 3 of a factored run.
struct Charged {
    /// qubits ⊗ load
    state: QuantumState,
    space: EngineSpace,
    /// breath occupation, frozen after stroke 1
    n_b: f64,
    strokes: Vec<StrokeRecord>,
    specs: Vec<StrokeSpec>,
}

/// Runs strokes 1 and 2.
fn charge_and_ramp(p: &EngineParams, t_gate: f64, stride: usize) -> Result<Charged> {
    let charge_space = EngineSpace::qubits_breath(p)?;
    let load_space = EngineSpace::qubits_com(p)?;
    let specs = stroke_specs(p, t_gate, 1.0, &charge_space, &load_space)?;

    let qubits = QuantumState::basis(SubsystemLayout::new(vec![2, 2], vec!["q1", "q2"])?, &[0, 0])?;
    let breath = thermal_state(p.n_h, p.n_breath)?;
    let com = thermal_state(p.n_c, p.n_com)?;
    let n_c0 = thermal_mean(p.n_c, p.n_com)?;

    let qb = QuantumState::density_unchecked(
        charge_space.layout().clone(),
        qubits.to_density().tensor(&breath).into_density_matrix(),
    )?;
    let (qb, rec1) = run_stroke(&specs[0], 0.0, qb, &charge_space, 0.0, n_c0, stride)?;
    let n_b1 = rec1.series.last().expect("non-empty").n_b;

    // breath is a spectator from here on; the load is still in its thermal
    // product state
    let q = qb.partial_trace(&[0, 1])?;
    let qc = QuantumState::density_unchecked(
        load_space.layout().clone(),
        q.tensor(&com).into_density_matrix(),
    )?;
    let (qc, rec2) = run_stroke(&specs[1], t_gate, qc, &load_space, n_b1, 0.0, stride)?;
    Ok(Charged {
        state: qc,
        space: load_space,
        n_b: n_b1,
        strokes: vec![rec1, rec2],
        specs,
    })
}

fn run_cycle_factored(p: &EngineParams, t_gate: f64, tau3: f64, stride: usize) -> Result<CycleRecord> {
    let Charged {
        state: qc,
        space: load_space,
        n_b: n_b1,
        mut strokes,
        mut specs,
    } = charge_and_ramp(p, t_gate, stride)?;
    specs[2].duration = tau3;
    let mut start = t_gate + specs[1].duration;
    let (qc, rec3) = run_stroke(&specs[2], start, qc, &load_space, n_b1, 0.0, stride)?;
    let load_state = qc.partial_trace(&[2])?.into_density_matrix();
    strokes.push(rec3);
    start += tau3;
    let (_, rec4) = run_stroke(&specs[3], start, qc, &load_space, n_b1, 0.0, stride)?;
    strokes.push(rec4);
    finish(t_gate, tau3, strokes, load_state)
}

/// Scan window for the transfer-stroke duration, μs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferScan {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for TransferScan {
    fn default() -> Self {
        TransferScan {
            lo: 5.0,
            hi: 60.0,
            step: 0.5,
        }
    }
}

impl TransferScan {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.lo > 0.0 && self.step > 0.0 && self.hi >= self.lo && self.hi.is_finite()) {
            return Err(Error::param(
                "scan",
                format!("empty or invalid window [{}, {}] step {}", self.lo, self.hi, self.step),
            ));
        }
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|k| self.lo + k as f64 * self.step).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferOptimum {
    pub tau_star: f64,
    pub delta_n_t: f64,
    /// `(τ, n̄_c(τ))` for every scanned duration.
    pub scan: Vec<(f64, f64)>,
}

/// Runs strokes 1–2 once, then scans the transfer duration and returns the
/// first duration maximizing the load's mean phonon number.
pub fn optimize_transfer_time(p: &EngineParams, t_gate: f64, scan: TransferScan) -> Result<TransferOptimum> {
    p.validate()?;
    let points = scan.points()?;
    let n_c0 = thermal_mean(p.n_c, p.n_com)?;
    let Charged {
        state: qc,
        space: load_space,
        specs,
        ..
    } = charge_and_ramp(p, t_gate, usize::MAX)?;
    let n_op = load_space.mode_number(2)?;
    let mut values = Vec::with_capacity(points.len());
    evolve_sampled(&qc, &specs[2].hamiltonian, &[], 0.0, &points, p.dt.transfer_us, |t, s| {
        let rho = s.as_density().expect("density");
        values.push((t, crate::dynamics::trace_product(&n_op, rho).re));
    })
    .map_err(|e| e.in_stroke(3))?;
    let mut best = values[0];
    for &(t, v) in &values[1..] {
        if v > best.1 {
            best = (t, v);
        }
    }
    Ok(TransferOptimum {
        tau_star: best.0,
        delta_n_t: best.1 - n_c0,
        scan: values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tau3Policy {
    /// Same transfer duration at every grid point.
    Fixed(f64),
    /// Re-optimize the transfer duration at every grid point.
    Reoptimized(TransferScan),
}

impl Tau3Policy {
    /// The fixed policy at the transfer optimum of the closed-loop gate.
    pub fn fixed_at_optimum(p: &EngineParams, scan: TransferScan) -> Result<Self> {
        Ok(Tau3Policy::Fixed(optimize_transfer_time(p, p.gate_time(), scan)?.tau_star))
    }
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub t_gate_us: f64,
    pub tau3_us: Option<f64>,
    pub outcome: std::result::Result<CycleRecord, String>,
}

/// One cycle per gate time, in grid order. Failures are reported per point.
/// `workers` sizes the thread pool; results do not depend on it.
pub fn sweep_gate_time(
    p: &EngineParams,
    grid: &[f64],
    policy: Tau3Policy,
    workers: usize,
    opts: &CycleOptions,
) -> Result<Vec<SweepPoint>> {
    p.validate()?;
    if grid.is_empty() {
        return Err(Error::param("grid", "must not be empty"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("grid", "must be strictly increasing"));
    }
    let point = |&t_gate: &f64| -> SweepPoint {
        let tau3 = match policy {
            Tau3Policy::Fixed(t) => Ok(t),
            Tau3Policy::Reoptimized(scan) => optimize_transfer_time(p, t_gate, scan).map(|o| o.tau_star),
        };
        match tau3 {
            Ok(tau3) => SweepPoint {
                t_gate_us: t_gate,
                tau3_us: Some(tau3),
                outcome: run_cycle_with(p, t_gate, tau3, opts).map_err(|e| e.to_string()),
            },
            Err(e) => SweepPoint {
                t_gate_us: t_gate,
                tau3_us: None,
                outcome: Err(e.to_string()),
            },
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::param("workers", e.to_string()))?;
    Ok(pool.install(|| grid.par_iter().map(point).collect()))
}

/// Evenly spaced grid `start, start+step, …` up to `stop` inclusive.
pub fn gate_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && stop >= start && start >= 0.0) {
        return Err(Error::param("grid", format!("invalid grid [{start}, {stop}] step {step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

#[derive(Clone, Debug)]
pub struct TruncationAudit {
    pub base: (usize, usize),
    pub enlarged: (usize, usize),
    /// `(name, base value, enlarged value)`.
    pub scalars: Vec<(String, f64, f64)>,
}

impl TruncationAudit {
    /// Largest absolute change over scalars defined in both runs.
    pub fn max_drift(&self) -> f64 {
        self.scalars
            .iter()
            .filter(|(_, a, b)| a.is_finite() && b.is_finite())
            .map(|(_, a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Re-runs the cycle with both truncations raised by `extra` levels.
pub fn audit_truncation(p: &EngineParams, t_gate: f64, tau3: f64, extra: usize) -> Result<TruncationAudit> {
    let big = p.with_truncation(p.n_breath + extra, p.n_com + extra);
    let a = run_cycle(p, t_gate, tau3)?;
    let b = run_cycle(&big, t_gate, tau3)?;
    let scalars = a
        .scalars()
        .into_iter()
        .zip(b.scalars())
        .map(|((name, x), (_, y))| (name, x, y))
        .collect();
    Ok(TruncationAudit {
        base: (p.n_breath, p.n_com),
        enlarged: (big.n_breath, big.n_com),
        scalars,
    })
}
