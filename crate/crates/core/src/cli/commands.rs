//! The batch commands. Each writes its tables into the output directory and
//! returns the paths written.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{write_effective, RunConfig};
use super::table::{Provenance, ResultTable};
use crate::engine::{
    audit_truncation, gate_grid, optimize_transfer_time, run_cycle_with, sweep_gate_time, CycleOptions,
    CycleRecord,
};
use crate::error::{Error, Result};
use crate::sideband::{fit_populations_with, response_curves, FitOptions};
use crate::thermo::ergotropy_diagonal;

pub const SERIES_COLUMNS: [&str; 9] = [
    "stroke",
    "t_us",
    "P_SS",
    "P_SDplusDS",
    "P_DD",
    "n_b",
    "n_c",
    "concurrence",
    "ms_fidelity",
];

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "t_gate_us",
    "tau3_us",
    "delta_n_o",
    "delta_n_t",
    "eta_c",
    "W_exact",
    "W_diag",
    "eta_m",
];

/// Sweep rows: the summary columns, end-of-charge qubit observables, and a
/// failure flag.
pub const SWEEP_COLUMNS: [&str; 15] = [
    "t_gate_us",
    "tau3_us",
    "failed",
    "P_SS",
    "P_SDplusDS",
    "P_DD",
    "concurrence",
    "ms_fidelity",
    "n_c_transfer",
    "delta_n_o",
    "delta_n_t",
    "eta_c",
    "W_exact",
    "W_diag",
    "eta_m",
];

struct Emitter {
    dir: PathBuf,
    provenance: Provenance,
    written: Vec<PathBuf>,
}

impl Emitter {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let dir = cfg.output.directory.clone();
        std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
        let effective = write_effective(cfg, &dir)?;
        Ok(Emitter {
            dir,
            provenance: Provenance::new(&cfg.digest()),
            written: vec![effective],
        })
    }

    fn emit(&mut self, name: &str, mut table: ResultTable) -> Result<()> {
        table.provenance = Some(self.provenance.clone());
        let path = self.dir.join(name);
        table.write(&path)?;
        self.written.push(path);
        Ok(())
    }
}

fn summary_row(r: &CycleRecord) -> Vec<Option<f64>> {
    let s = &r.summary;
    vec![
        Some(r.t_gate_us),
        Some(r.tau3_us),
        Some(s.delta_n_o),
        Some(s.delta_n_t),
        s.eta_c,
        Some(s.w_exact),
        Some(s.w_diag),
        s.eta_m,
    ]
}

pub fn series_table(r: &CycleRecord) -> ResultTable {
    let mut t = ResultTable::new(SERIES_COLUMNS);
    for stroke in &r.strokes {
        for s in &stroke.series {
            t.push_values(&[
                f64::from(stroke.id),
                s.t_us,
                s.populations.ss,
                s.populations.sd_plus_ds(),
                s.populations.dd,
                s.n_b,
                s.n_c,
                s.concurrence,
                s.ms_fidelity,
            ]);
        }
    }
    t
}

pub fn summary_table(r: &CycleRecord) -> ResultTable {
    let mut t = ResultTable::new(SUMMARY_COLUMNS);
    t.push(summary_row(r));
    t
}

/// One cycle: `cycle_series.csv` and `cycle_summary.csv`.
pub fn cmd_run_cycle(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut out = Emitter::new(cfg)?;
    let p = &cfg.engine;
    let t_gate = cfg.cycle.t_gate_us.unwrap_or_else(|| p.gate_time());
    let result = match cfg.cycle.tau3_us {
        Some(t) => Ok(t),
        None => optimize_transfer_time(p, t_gate, cfg.scan()).map(|o| o.tau_star),
    }
    .and_then(|tau3| {
        let opts = CycleOptions {
            record_stride: cfg.output.stride,
        };
        run_cycle_with(p, t_gate, tau3, &opts)
    });
    match result {
        Ok(record) => {
            out.emit("cycle_series.csv", series_table(&record))?;
            out.emit("cycle_summary.csv", summary_table(&record))?;
            Ok(out.written)
        }
        Err(e) => {
            let mut t = ResultTable::new(SUMMARY_COLUMNS);
            t.notes.push(format!("status: FAILED: {e}"));
            out.emit("cycle_summary.csv", t)?;
            Err(e)
        }
    }
}

/// One row per gate time in `sweep.csv`. Failed points are flagged rows with
/// the error in the notes.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut out = Emitter::new(cfg)?;
    let p = &cfg.engine;
    let s = &cfg.sweep;
    let grid = gate_grid(s.grid_start_us, s.grid_stop_us, s.grid_step_us)?;
    let policy = cfg.tau3_policy()?;
    let opts = CycleOptions {
        record_stride: cfg.output.stride,
    };
    let points = sweep_gate_time(p, &grid, policy, cfg.workers, &opts)?;

    let mut t = ResultTable::new(SWEEP_COLUMNS);
    for (i, pt) in points.iter().enumerate() {
        match &pt.outcome {
            Ok(r) => {
                let b = r.boundary(1).expect("charging stroke recorded");
                let n3 = r.boundary(3).expect("transfer stroke recorded").n_c;
                let sm = &r.summary;
                t.push(vec![
                    Some(pt.t_gate_us),
                    pt.tau3_us,
                    Some(0.0),
                    Some(b.populations.ss),
                    Some(b.populations.sd_plus_ds()),
                    Some(b.populations.dd),
                    Some(b.concurrence),
                    Some(b.ms_fidelity),
                    Some(n3),
                    Some(sm.delta_n_o),
                    Some(sm.delta_n_t),
                    sm.eta_c,
                    Some(sm.w_exact),
                    Some(sm.w_diag),
                    sm.eta_m,
                ]);
            }
            Err(e) => {
                t.notes.push(format!("row {i} failed: {e}"));
                let mut row = vec![None; SWEEP_COLUMNS.len()];
                row[0] = Some(pt.t_gate_us);
                row[1] = pt.tau3_us;
                row[2] = Some(1.0);
                t.push(row);
            }
        }
    }
    out.emit("sweep.csv", t)?;
    Ok(out.written)
}

/// Fits `fit.input_path` (columns `t_us`, `signal`): `fit_populations.csv`
/// holds `n, P_n`, `fit_summary.csv` the residual and implied ergotropy.
pub fn cmd_fit(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let input = cfg
        .fit
        .input_path
        .as_deref()
        .ok_or_else(|| Error::param("fit.input_path", "required by the fit command"))?;
    let table = ResultTable::read(input)?;
    let (times, mut signal) = read_signal(&table, input)?;
    if cfg.fit.inject_noise > 0.0 {
        let noise = Normal::new(0.0, cfg.fit.inject_noise).map_err(|e| Error::param("fit.inject_noise", e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        signal.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }
    let basis = response_curves(cfg.fit.nmax, &times, &cfg.engine)?;
    let fit = fit_populations_with(
        &signal,
        &basis,
        &FitOptions {
            noise_sigma: cfg.fit.noise_sigma,
            tikhonov: cfg.fit.tikhonov,
            ..FitOptions::default()
        },
    )?;

    let mut out = Emitter::new(cfg)?;
    let mut pops = ResultTable::new(["n", "P_n"]);
    for (n, p) in fit.dist.probs().iter().enumerate() {
        pops.push_values(&[n as f64, *p]);
    }
    out.emit("fit_populations.csv", pops)?;
    let mut summary = ResultTable::new(["nmax", "residual", "reduced_chi2", "W_diag", "mean_n", "condition"]);
    summary.push(vec![
        Some(fit.nmax as f64),
        Some(fit.residual),
        fit.reduced_chi2,
        Some(ergotropy_diagonal(&fit.dist)),
        Some(fit.dist.mean()),
        Some(fit.condition),
    ]);
    out.emit("fit_summary.csv", summary)?;
    Ok(out.written)
}

fn read_signal(table: &ResultTable, path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let missing = |name: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: format!("missing column `{name}`"),
    };
    let t = table.column("t_us").ok_or_else(|| missing("t_us"))?;
    let s = table.column("signal").ok_or_else(|| missing("signal"))?;
    let mut times = Vec::with_capacity(t.len());
    let mut signal = Vec::with_capacity(s.len());
    for (i, (t, s)) in t.into_iter().zip(s).enumerate() {
        match (t, s) {
            (Some(t), Some(s)) => {
                times.push(t);
                signal.push(s);
            }
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: table_line(table, i),
                    message: "empty cell".into(),
                })
            }
        }
    }
    Ok((times, signal))
}

/// Line number of data row `i` (header on the line after the comments).
fn table_line(table: &ResultTable, i: usize) -> u64 {
    let comments = table.notes.len() + if table.provenance.is_some() { 4 } else { 0 };
    (comments + 2 + i) as u64
}

/// `truncation_audit.csv`: the summary scalars at the configured truncation,
/// with every truncation raised by `audit.extra`, and their absolute drift.
pub fn cmd_audit_truncation(cfg: &RunConfig) -> Result<(Vec<PathBuf>, f64)> {
    let mut out = Emitter::new(cfg)?;
    let p = &cfg.engine;
    let t_gate = cfg.cycle.t_gate_us.unwrap_or_else(|| p.gate_time());
    let tau3 = match cfg.cycle.tau3_us {
        Some(t) => t,
        None => optimize_transfer_time(p, t_gate, cfg.scan())?.tau_star,
    };
    let audit = audit_truncation(p, t_gate, tau3, cfg.audit_extra)?;
    let mut columns = vec!["n_breath".to_string(), "n_com".to_string()];
    columns.extend(audit.scalars.iter().map(|(n, _, _)| n.clone()));
    let mut t = ResultTable::new(columns);
    let row = |dims: Option<(usize, usize)>, f: &dyn Fn(f64, f64) -> f64| -> Vec<Option<f64>> {
        let mut r = vec![dims.map(|d| d.0 as f64), dims.map(|d| d.1 as f64)];
        r.extend(audit.scalars.iter().map(|(_, a, b)| Some(f(*a, *b))));
        r
    };
    t.push(row(Some(audit.base), &|a, _| a));
    t.push(row(Some(audit.enlarged), &|_, b| b));
    t.push(row(None, &|a, b| (a - b).abs()));
    t.notes.push(format!("t_gate_us = {t_gate}, tau3_us = {tau3}; third row is |drift|"));
    let drift = audit.max_drift();
    out.emit("truncation_audit.csv", t)?;
    Ok((out.written, drift))
}
