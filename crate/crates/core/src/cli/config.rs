//! Flat `section.key = value` configuration.
//!
//! Every key is optional. `#` starts a comment. Unknown and repeated keys are
//! errors. Each key can be overridden from the environment as
//! `QENGINE_SECTION_KEY` (dots become underscores, upper case).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::engine::{EngineParams, PropagationMode, Tau3Policy, TransferScan};
use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "QENGINE_";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tau3Mode {
    Fixed,
    Reoptimized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleBlock {
    /// `None` runs the closed-loop gate time.
    pub t_gate_us: Option<f64>,
    /// `None` optimizes the transfer time over the scan window.
    pub tau3_us: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepBlock {
    pub grid_start_us: f64,
    pub grid_stop_us: f64,
    pub grid_step_us: f64,
    pub tau3_policy: Tau3Mode,
    /// Transfer time for the fixed policy; `None` optimizes it at the
    /// closed-loop gate time.
    pub tau3_us: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanBlock {
    pub lo_us: f64,
    pub hi_us: f64,
    pub step_us: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitBlock {
    pub input_path: Option<PathBuf>,
    pub nmax: usize,
    pub tikhonov: f64,
    pub noise_sigma: Option<f64>,
    /// Standard deviation of Gaussian noise added to the input signal before
    /// fitting; 0 disables injection.
    pub inject_noise: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputBlock {
    pub directory: PathBuf,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub engine: EngineParams,
    pub cycle: CycleBlock,
    pub sweep: SweepBlock,
    pub scan: ScanBlock,
    pub fit: FitBlock,
    pub output: OutputBlock,
    pub audit_extra: usize,
    pub workers: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scan = TransferScan::default();
        RunConfig {
            engine: EngineParams::default(),
            cycle: CycleBlock {
                t_gate_us: None,
                tau3_us: None,
            },
            sweep: SweepBlock {
                grid_start_us: 4.0,
                grid_stop_us: 72.0,
                grid_step_us: 4.0,
                tau3_policy: Tau3Mode::Fixed,
                tau3_us: None,
            },
            scan: ScanBlock {
                lo_us: scan.lo,
                hi_us: scan.hi,
                step_us: scan.step,
            },
            fit: FitBlock {
                input_path: None,
                nmax: 6,
                tikhonov: 0.0,
                noise_sigma: None,
                inject_noise: 0.0,
            },
            output: OutputBlock {
                directory: PathBuf::from("out"),
                stride: 10,
            },
            audit_extra: 4,
            workers: 1,
            seed: 0,
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "engine.omega_khz",
    "engine.eta_p",
    "engine.omega_b_mhz",
    "engine.omega_c_mhz",
    "engine.delta_khz",
    "engine.gamma_eff",
    "engine.n_h",
    "engine.n_c",
    "engine.n_breath",
    "engine.n_com",
    "engine.ramp_start_khz",
    "engine.ramp_down_steps",
    "engine.ramp_down_step_us",
    "engine.ramp_up_steps",
    "engine.ramp_up_step_us",
    "engine.dt_charge_us",
    "engine.dt_ramp_us",
    "engine.dt_transfer_us",
    "engine.propagation",
    "cycle.t_gate_us",
    "cycle.tau3_us",
    "sweep.grid_start_us",
    "sweep.grid_stop_us",
    "sweep.grid_step_us",
    "sweep.tau3_policy",
    "sweep.tau3_us",
    "scan.lo_us",
    "scan.hi_us",
    "scan.step_us",
    "fit.input_path",
    "fit.nmax",
    "fit.tikhonov",
    "fit.noise_sigma",
    "fit.inject_noise",
    "output.directory",
    "output.stride",
    "audit.extra",
    "workers",
    "seed",
];

/// Environment variable overriding `key`.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_uppercase())
}

fn real(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("`{v}` is not finite"))
    }
}

fn count(v: &str) -> std::result::Result<usize, String> {
    v.parse().map_err(|_| format!("`{v}` is not a non-negative integer"))
}

fn auto_real(v: &str) -> std::result::Result<Option<f64>, String> {
    if v == "auto" {
        Ok(None)
    } else {
        real(v).map(Some)
    }
}

fn show_auto(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl RunConfig {
    /// Sets one key from its textual value, without cross-field validation.
    pub fn set_value(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let e = &mut self.engine;
        match key {
            "engine.omega_khz" => e.omega_khz = real(v)?,
            "engine.eta_p" => e.eta_p = real(v)?,
            "engine.omega_b_mhz" => e.omega_b_mhz = real(v)?,
            "engine.omega_c_mhz" => e.omega_c_mhz = real(v)?,
            "engine.delta_khz" => e.delta_khz = auto_real(v)?,
            "engine.gamma_eff" => e.gamma_eff = auto_real(v)?,
            "engine.n_h" => e.n_h = real(v)?,
            "engine.n_c" => e.n_c = real(v)?,
            "engine.n_breath" => e.n_breath = count(v)?,
            "engine.n_com" => e.n_com = count(v)?,
            "engine.ramp_start_khz" => e.ramp_start_khz = real(v)?,
            "engine.ramp_down_steps" => e.ramp_down.steps = count(v)?,
            "engine.ramp_down_step_us" => e.ramp_down.step_us = real(v)?,
            "engine.ramp_up_steps" => e.ramp_up.steps = count(v)?,
            "engine.ramp_up_step_us" => e.ramp_up.step_us = real(v)?,
            "engine.dt_charge_us" => e.dt.charge_us = real(v)?,
            "engine.dt_ramp_us" => e.dt.ramp_us = real(v)?,
            "engine.dt_transfer_us" => e.dt.transfer_us = real(v)?,
            "engine.propagation" => {
                e.propagation = match v {
                    "factored" => PropagationMode::Factored,
                    "full" => PropagationMode::Full,
                    _ => return Err(format!("`{v}` is not one of factored, full")),
                }
            }
            "cycle.t_gate_us" => self.cycle.t_gate_us = auto_real(v)?,
            "cycle.tau3_us" => self.cycle.tau3_us = auto_real(v)?,
            "sweep.grid_start_us" => self.sweep.grid_start_us = real(v)?,
            "sweep.grid_stop_us" => self.sweep.grid_stop_us = real(v)?,
            "sweep.grid_step_us" => self.sweep.grid_step_us = real(v)?,
            "sweep.tau3_policy" => {
                self.sweep.tau3_policy = match v {
                    "fixed" => Tau3Mode::Fixed,
                    "reoptimized" => Tau3Mode::Reoptimized,
                    _ => return Err(format!("`{v}` is not one of fixed, reoptimized")),
                }
            }
            "sweep.tau3_us" => self.sweep.tau3_us = auto_real(v)?,
            "scan.lo_us" => self.scan.lo_us = real(v)?,
            "scan.hi_us" => self.scan.hi_us = real(v)?,
            "scan.step_us" => self.scan.step_us = real(v)?,
            "fit.input_path" => {
                self.fit.input_path = if v.is_empty() { None } else { Some(PathBuf::from(v)) }
            }
            "fit.nmax" => self.fit.nmax = count(v)?,
            "fit.tikhonov" => self.fit.tikhonov = real(v)?,
            "fit.noise_sigma" => self.fit.noise_sigma = auto_real(v)?,
            "fit.inject_noise" => self.fit.inject_noise = real(v)?,
            "output.directory" => self.output.directory = PathBuf::from(v),
            "output.stride" => self.output.stride = count(v)?,
            "audit.extra" => self.audit_extra = count(v)?,
            "workers" => self.workers = count(v)?,
            "seed" => self.seed = v.parse().map_err(|_| format!("`{v}` is not an unsigned integer"))?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Effective value of every key, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let e = &self.engine;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let values = vec![
            e.omega_khz.to_string(),
            e.eta_p.to_string(),
            e.omega_b_mhz.to_string(),
            e.omega_c_mhz.to_string(),
            show_auto(e.delta_khz),
            show_auto(e.gamma_eff),
            e.n_h.to_string(),
            e.n_c.to_string(),
            e.n_breath.to_string(),
            e.n_com.to_string(),
            e.ramp_start_khz.to_string(),
            e.ramp_down.steps.to_string(),
            e.ramp_down.step_us.to_string(),
            e.ramp_up.steps.to_string(),
            e.ramp_up.step_us.to_string(),
            e.dt.charge_us.to_string(),
            e.dt.ramp_us.to_string(),
            e.dt.transfer_us.to_string(),
            match e.propagation {
                PropagationMode::Factored => "factored".into(),
                PropagationMode::Full => "full".into(),
            },
            show_auto(self.cycle.t_gate_us),
            show_auto(self.cycle.tau3_us),
            self.sweep.grid_start_us.to_string(),
            self.sweep.grid_stop_us.to_string(),
            self.sweep.grid_step_us.to_string(),
            match self.sweep.tau3_policy {
                Tau3Mode::Fixed => "fixed".into(),
                Tau3Mode::Reoptimized => "reoptimized".into(),
            },
            show_auto(self.sweep.tau3_us),
            self.scan.lo_us.to_string(),
            self.scan.hi_us.to_string(),
            self.scan.step_us.to_string(),
            path(&self.fit.input_path),
            self.fit.nmax.to_string(),
            self.fit.tikhonov.to_string(),
            show_auto(self.fit.noise_sigma),
            self.fit.inject_noise.to_string(),
            self.output.directory.display().to_string(),
            self.output.stride.to_string(),
            self.audit_extra.to_string(),
            self.workers.to_string(),
            self.seed.to_string(),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    /// Effective textual value of `key`.
    pub fn value(&self, key: &str) -> Option<String> {
        self.entries().into_iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    /// The effective configuration in the input format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Hex SHA-256 over every entry that can change results, so the output
    /// directory and worker count are left out.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "output.directory" && k != "workers" {
                h.update(format!("{k} = {v}\n").as_bytes());
            }
        }
        let hash = h.finalize();
        hash.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn scan(&self) -> TransferScan {
        TransferScan {
            lo: self.scan.lo_us,
            hi: self.scan.hi_us,
            step: self.scan.step_us,
        }
    }

    /// Resolves the sweep's transfer-time policy, optimizing if needed.
    pub fn tau3_policy(&self) -> Result<Tau3Policy> {
        match (self.sweep.tau3_policy, self.sweep.tau3_us) {
            (Tau3Mode::Reoptimized, _) => Ok(Tau3Policy::Reoptimized(self.scan())),
            (Tau3Mode::Fixed, Some(t)) => Ok(Tau3Policy::Fixed(t)),
            (Tau3Mode::Fixed, None) => Tau3Policy::fixed_at_optimum(&self.engine, self.scan()),
        }
    }

    /// Checks everything the engine does not.
    fn validate_blocks(&self) -> std::result::Result<(), (&'static str, String)> {
        let s = &self.sweep;
        if !(s.grid_step_us > 0.0) {
            return Err(("sweep.grid_step_us", "must be > 0".into()));
        }
        if !(s.grid_start_us >= 0.0) {
            return Err(("sweep.grid_start_us", "must be >= 0".into()));
        }
        if s.grid_stop_us < s.grid_start_us {
            return Err(("sweep.grid_stop_us", "must not be below sweep.grid_start_us".into()));
        }
        if let Some(t) = s.tau3_us {
            if !(t >= 0.0) {
                return Err(("sweep.tau3_us", "must be >= 0".into()));
            }
        }
        for (key, v) in [("cycle.t_gate_us", self.cycle.t_gate_us), ("cycle.tau3_us", self.cycle.tau3_us)] {
            if let Some(t) = v {
                if !(t >= 0.0) {
                    return Err((key, "must be >= 0".into()));
                }
            }
        }
        if !(self.scan.lo_us > 0.0) {
            return Err(("scan.lo_us", "must be > 0".into()));
        }
        if !(self.scan.step_us > 0.0) {
            return Err(("scan.step_us", "must be > 0".into()));
        }
        if self.scan.hi_us < self.scan.lo_us {
            return Err(("scan.hi_us", "must not be below scan.lo_us".into()));
        }
        if !(self.fit.tikhonov >= 0.0) {
            return Err(("fit.tikhonov", "must be >= 0".into()));
        }
        if let Some(s) = self.fit.noise_sigma {
            if !(s > 0.0) {
                return Err(("fit.noise_sigma", "must be > 0".into()));
            }
        }
        if !(self.fit.inject_noise >= 0.0) {
            return Err(("fit.inject_noise", "must be >= 0".into()));
        }
        if self.output.stride == 0 {
            return Err(("output.stride", "must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(("workers", "must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where a key's value came from, for error messages.
#[derive(Clone, Debug)]
enum Origin {
    Line(usize),
    Env(String),
}

fn config_error(path: &Path, origin: Option<&Origin>, message: String) -> Error {
    match origin {
        Some(Origin::Line(line)) => Error::Config {
            path: path.to_path_buf(),
            line: *line,
            message,
        },
        Some(Origin::Env(var)) => Error::Config {
            path: PathBuf::from(format!("${var}")),
            line: 0,
            message,
        },
        None => Error::Config {
            path: path.to_path_buf(),
            line: 0,
            message,
        },
    }
}

/// Parses configuration text; `path` is used in error messages only.
pub fn parse_config_str<I>(text: &str, path: &Path, env: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut cfg = RunConfig::default();
    let mut origin: HashMap<&'static str, Origin> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(config_error(path, Some(&Origin::Line(line)), format!("expected `key = value`, got `{content}`")));
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(&known) = KEYS.iter().find(|k| **k == key) else {
            return Err(config_error(path, Some(&Origin::Line(line)), format!("unknown key `{key}`")));
        };
        if let Some(Origin::Line(first)) = origin.get(known) {
            return Err(config_error(
                path,
                Some(&Origin::Line(line)),
                format!("duplicate key `{key}`: first set on line {first}, again on line {line}"),
            ));
        }
        cfg.set_value(known, value)
            .map_err(|m| config_error(path, Some(&Origin::Line(line)), format!("`{key}`: {m}")))?;
        origin.insert(known, Origin::Line(line));
    }

    let env: HashMap<String, String> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    let mut names: Vec<&String> = env.keys().collect();
    names.sort();
    for var in names {
        let Some(&key) = KEYS.iter().find(|k| env_name(k) == *var) else {
            return Err(config_error(
                path,
                Some(&Origin::Env(var.clone())),
                "environment variable does not name a configuration key".to_string(),
            ));
        };
        let o = Origin::Env(var.clone());
        cfg.set_value(key, env[var].trim())
            .map_err(|m| config_error(path, Some(&o), format!("`{key}`: {m}")))?;
        origin.insert(key, o);
    }

    if let Err(e) = cfg.engine.validate() {
        let key = match &e {
            Error::InvalidParameter { name, .. } => KEYS
                .iter()
                .copied()
                .find(|k| *k == format!("engine.{}", name.replace('.', "_"))),
            _ => None,
        };
        return Err(config_error(path, key.and_then(|k| origin.get(k)), e.to_string()));
    }
    if let Err((key, msg)) = cfg.validate_blocks() {
        return Err(config_error(path, origin.get(key), format!("invalid parameter `{key}`: {msg}")));
    }
    Ok(cfg)
}

/// Reads and validates a configuration file, applying `QENGINE_*`
/// environment overrides.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text, path, std::env::vars())
}

/// Writes the effective configuration next to the outputs.
pub fn write_effective(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("effective.conf");
    std::fs::write(&path, cfg.to_text()).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}
