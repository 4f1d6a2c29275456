//! Run configuration: model keys plus per-command grid, drive and estimator
//! settings, all in the flat `key = value` format.

use std::fmt::Write as _;
use std::str::FromStr;

use rmwave::dynamics::BlochParams;
use rmwave::fitting::{FitMask, PARAM_NAMES};
use rmwave::model::parse_kv;
use rmwave::presets;
use rmwave::scattering::{linspace, MapKind};
use rmwave::sigproc::{DemodOptions, SignalAmplitudes};
use rmwave::{Error, ModelParams, Result};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Initial {
    /// Qubit-dominant in-gap eigenstate of the closed model.
    Gap,
    /// Excitation on the qubit site.
    Qubit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelParams,
    pub vq_min: Option<f64>,
    pub vq_max: Option<f64>,
    pub vq_n: usize,
    pub e_min: Option<f64>,
    pub e_max: Option<f64>,
    pub e_n: Option<usize>,
    pub map: MapKind,
    /// Peak prominence as a fraction of the slice maximum.
    pub min_prominence: f64,
    pub t_max: f64,
    pub t_n: usize,
    pub initial: Initial,
    pub bloch: BlochParams,
    pub drive_until: f64,
    pub bootstrap: usize,
    pub restarts: usize,
    pub fixed: Vec<String>,
    pub f_rabi: Option<f64>,
    pub demod: DemodOptions,
    pub amplitudes: Option<SignalAmplitudes>,
}

impl RunConfig {
    pub fn new(model: ModelParams) -> Self {
        RunConfig {
            model,
            vq_min: None,
            vq_max: None,
            vq_n: 161,
            e_min: None,
            e_max: None,
            e_n: None,
            map: MapKind::SRL,
            min_prominence: 1e-3,
            t_max: 1000.0,
            t_n: 2001,
            initial: Initial::Gap,
            bloch: presets::fig5_bloch(),
            drive_until: f64::INFINITY,
            bootstrap: 1000,
            restarts: 5,
            fixed: Vec::new(),
            f_rabi: None,
            demod: DemodOptions::default(),
            amplitudes: None,
        }
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        let model = presets::model(name).ok_or_else(|| {
            Error::InvalidParameter(format!("unknown preset {name:?}; known: {}", presets::NAMES.join(", ")))
        })?;
        let mut cfg = RunConfig::new(model);
        if name == "appc" {
            cfg.amplitudes = Some(presets::appc_amplitudes());
        }
        Ok(cfg)
    }

    /// Apply every line of a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = parse_kv(line, i + 1)?;
            self.set(k, v, i + 1)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let err = |m: String| Error::Parse { line, message: m };
        let real = || -> Result<f64> {
            value
                .parse::<f64>()
                .ok()
                .filter(|x| !x.is_nan())
                .ok_or_else(|| err(format!("{key} must be a number, got {value:?}")))
        };
        let count = || -> Result<usize> {
            value
                .parse::<usize>()
                .map_err(|_| err(format!("{key} must be a non-negative integer, got {value:?}")))
        };
        const AMPLITUDES: [&str; 4] = ["s_lL", "s_lR", "s_rL", "s_rR"];
        const STDS: [&str; 4] = ["std_lL", "std_lR", "std_rL", "std_rR"];
        if let Some(k) = AMPLITUDES.iter().position(|a| *a == key) {
            let x = real()?;
            let a = self.amplitudes.get_or_insert_with(|| SignalAmplitudes::new(0.0, 0.0, 0.0, 0.0));
            match k {
                0 => a.s_ll = x,
                1 => a.s_lr = x,
                2 => a.s_rl = x,
                _ => a.s_rr = x,
            }
            return Ok(());
        }
        if let Some(k) = STDS.iter().position(|a| *a == key) {
            let x = real()?;
            self.amplitudes
                .get_or_insert_with(|| SignalAmplitudes::new(0.0, 0.0, 0.0, 0.0))
                .stds[k] = x;
            return Ok(());
        }
        match key {
            "vq_min" => self.vq_min = Some(real()?),
            "vq_max" => self.vq_max = Some(real()?),
            "vq_n" => self.vq_n = count()?,
            "e_min" => self.e_min = Some(real()?),
            "e_max" => self.e_max = Some(real()?),
            "e_n" => self.e_n = Some(count()?),
            "map" => self.map = MapKind::from_str(value).map_err(|_| err(format!("unknown map {value:?}")))?,
            "min_prominence" => self.min_prominence = real()?,
            "t_max" => self.t_max = real()?,
            "t_n" => self.t_n = count()?,
            "initial" => {
                self.initial = match value {
                    "gap" => Initial::Gap,
                    "qubit" => Initial::Qubit,
                    _ => return Err(err(format!("initial must be gap or qubit, got {value:?}"))),
                }
            }
            "rabi_freq" => self.bloch.rabi_freq = real()?,
            "T1" => self.bloch.t1 = real()?,
            "T2" => self.bloch.t2 = real()?,
            "detuning" => self.bloch.detuning = real()?,
            "w_left" => self.bloch.w_left = real()?,
            "w_right" => self.bloch.w_right = real()?,
            "drive_until" => self.drive_until = real()?,
            "bootstrap" => self.bootstrap = count()?,
            "restarts" => self.restarts = count()?,
            "fix" => {
                let names: Vec<String> = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if let Some(bad) = names.iter().find(|n| !PARAM_NAMES.contains(&n.as_str())) {
                    return Err(err(format!("cannot fix {bad:?}; fittable: {}", PARAM_NAMES.join(", "))));
                }
                self.fixed = names;
            }
            "f_rabi" => self.f_rabi = Some(real()?),
            "cutoff" => self.demod.cutoff = real()?,
            "prefilter" => {
                self.demod.prefilter = match value {
                    "none" | "off" => None,
                    _ => Some(real()?),
                }
            }
            _ => self.model.set(key, value, line)?,
        }
        Ok(())
    }

    pub fn vq_grid(&self) -> Result<Vec<f64>> {
        let half = if self.model.v != 0.0 { 4.0 * self.model.v.abs() } else { 100.0 };
        let lo = self.vq_min.unwrap_or(-half);
        let hi = self.vq_max.unwrap_or(half);
        grid("VQ", lo, hi, self.vq_n)
    }

    /// Explicit energy grid, or `None` for the adaptive default.
    pub fn e_grid(&self) -> Result<Option<Vec<f64>>> {
        match (self.e_min, self.e_max, self.e_n) {
            (None, None, None) => Ok(None),
            (Some(lo), Some(hi), Some(n)) => grid("E", lo, hi, n).map(Some),
            _ => Err(Error::InvalidInput("e_min, e_max and e_n must be given together".into())),
        }
    }

    pub fn t_grid(&self) -> Result<Vec<f64>> {
        if !(self.t_max > 0.0) || self.t_n < 2 {
            return Err(Error::InvalidInput(format!(
                "time grid needs t_max > 0 and t_n >= 2, got {} and {}",
                self.t_max, self.t_n
            )));
        }
        Ok(linspace(0.0, self.t_max, self.t_n))
    }

    pub fn mask(&self) -> FitMask {
        let mut m = FitMask::default();
        for (i, name) in PARAM_NAMES.iter().enumerate() {
            if self.fixed.iter().any(|f| f == name) {
                m.0[i] = false;
            }
        }
        m
    }

    pub fn f_rabi(&self) -> f64 {
        self.f_rabi.unwrap_or(self.bloch.rabi_freq)
    }

    /// Full configuration in the flat format; parsing it back reproduces the run.
    pub fn to_config_string(&self) -> String {
        let mut s = self.model.to_config_string();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(x) = self.vq_min {
            kv("vq_min", format!("{x:?}"));
        }
        if let Some(x) = self.vq_max {
            kv("vq_max", format!("{x:?}"));
        }
        kv("vq_n", self.vq_n.to_string());
        if let (Some(lo), Some(hi), Some(n)) = (self.e_min, self.e_max, self.e_n) {
            kv("e_min", format!("{lo:?}"));
            kv("e_max", format!("{hi:?}"));
            kv("e_n", n.to_string());
        }
        kv("map", self.map.name().to_string());
        kv("min_prominence", format!("{:?}", self.min_prominence));
        kv("t_max", format!("{:?}", self.t_max));
        kv("t_n", self.t_n.to_string());
        kv(
            "initial",
            match self.initial {
                Initial::Gap => "gap",
                Initial::Qubit => "qubit",
            }
            .to_string(),
        );
        kv("rabi_freq", format!("{:?}", self.bloch.rabi_freq));
        kv("T1", format!("{:?}", self.bloch.t1));
        kv("T2", format!("{:?}", self.bloch.t2));
        kv("detuning", format!("{:?}", self.bloch.detuning));
        kv("w_left", format!("{:?}", self.bloch.w_left));
        kv("w_right", format!("{:?}", self.bloch.w_right));
        kv("drive_until", format!("{:?}", self.drive_until));
        kv("bootstrap", self.bootstrap.to_string());
        kv("restarts", self.restarts.to_string());
        if !self.fixed.is_empty() {
            kv("fix", self.fixed.join(","));
        }
        if let Some(f) = self.f_rabi {
            kv("f_rabi", format!("{f:?}"));
        }
        kv("cutoff", format!("{:?}", self.demod.cutoff));
        kv(
            "prefilter",
            self.demod.prefilter.map_or("none".to_string(), |x| format!("{x:?}")),
        );
        if let Some(a) = &self.amplitudes {
            for (k, x) in ["s_lL", "s_lR", "s_rL", "s_rR"].iter().zip(a.values()) {
                kv(k, format!("{x:?}"));
            }
            for (k, x) in ["std_lL", "std_lR", "std_rL", "std_rR"].iter().zip(a.stds) {
                kv(k, format!("{x:?}"));
            }
        }
        s
    }
}

fn grid(name: &str, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidInput(format!("empty {name} grid")));
    }
    if !(lo.is_finite() && hi.is_finite()) || (n > 1 && hi <= lo) {
        return Err(Error::InvalidInput(format!("{name} grid needs finite min < max, got [{lo}, {hi}]")));
    }
    Ok(linspace(lo, hi, n))
}
