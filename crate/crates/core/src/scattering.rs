//! Two-port scattering and local density of states from the retarded Green's
//! function of the port-dressed Hamiltonian.

use std::fmt::Write as _;

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{build_hamiltonian, LabeledHamiltonian, ModelParams, SiteRoles};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// `G(E) = (E − H)⁻¹`.
pub fn greens_function(h: &LabeledHamiltonian, e: f64) -> Result<Mat<Complex64>> {
    resolvent(&h.matrix, e)
}

fn resolvent(m: &Mat<Complex64>, e: f64) -> Result<Mat<Complex64>> {
    let n = m.nrows();
    let a = Mat::<Complex64>::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(e, 0.0) - m[(i, j)]
        } else {
            -m[(i, j)]
        }
    });
    linalg::inverse(&a).ok_or(Error::Singular { energy: e })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SMatrixPoint {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "S_LL")]
    pub s_ll: Complex64,
    #[serde(rename = "S_LR")]
    pub s_lr: Complex64,
    #[serde(rename = "S_RL")]
    pub s_rl: Complex64,
    #[serde(rename = "S_RR")]
    pub s_rr: Complex64,
}

/// Port-dressed Hamiltonian prepared for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Scatterer {
    h: LabeledHamiltonian,
    gamma_l: f64,
    gamma_r: f64,
}

impl Scatterer {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let (gamma_l, gamma_r) = params.port_widths();
        if !(gamma_l > 0.0 && gamma_r > 0.0) {
            return Err(Error::param("scattering needs Im Σ < 0 on both ports"));
        }
        Ok(Scatterer {
            h: build_hamiltonian(params, true)?,
            gamma_l,
            gamma_r,
        })
    }

    pub fn hamiltonian(&self) -> &LabeledHamiltonian {
        &self.h
    }

    pub fn s_matrix(&self, e: f64) -> Result<SMatrixPoint> {
        let g = greens_function(&self.h, e)?;
        let l = 0;
        let r = SiteRoles::idx(self.h.roles.port_r);
        let cross = I * (self.gamma_l * self.gamma_r).sqrt();
        Ok(SMatrixPoint {
            e,
            s_ll: -1.0 + I * self.gamma_l * g[(l, l)],
            s_lr: cross * g[(l, r)],
            s_rl: cross * g[(r, l)],
            s_rr: -1.0 + I * self.gamma_r * g[(r, r)],
        })
    }

    /// `−Im G_ii(E) / π` at the 0-based site `site0`.
    pub fn ldos(&self, e: f64, site0: usize) -> Result<f64> {
        if site0 >= self.h.dim() {
            return Err(Error::input(format!("site index {site0} out of range")));
        }
        let g = greens_function(&self.h, e)?;
        Ok(-g[(site0, site0)].im / std::f64::consts::PI)
    }

    pub fn value(&self, e: f64, kind: MapKind) -> Result<f64> {
        if kind == MapKind::Ldos {
            return self.ldos(e, 0);
        }
        let s = self.s_matrix(e)?;
        Ok(match kind {
            MapKind::SLL => s.s_ll.norm(),
            MapKind::SLR => s.s_lr.norm(),
            MapKind::SRL => s.s_rl.norm(),
            MapKind::SRR => s.s_rr.norm(),
            MapKind::Ldos => unreachable!(),
        })
    }
}

pub fn s_matrix(params: &ModelParams, e: f64) -> Result<SMatrixPoint> {
    Scatterer::new(params)?.s_matrix(e)
}

/// LDOS at the 1-based `site`. Requires lossy ports.
pub fn ldos(params: &ModelParams, e: f64, site: usize) -> Result<f64> {
    if site == 0 {
        return Err(Error::input("sites are numbered from 1"));
    }
    Scatterer::new(params)?.ldos(e, site - 1)
}

/// Quantity tabulated by a [`SpectrumMap`]. LDOS is taken at the left port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapKind {
    #[serde(rename = "S_LL")]
    SLL,
    #[serde(rename = "S_LR")]
    SLR,
    #[serde(rename = "S_RL")]
    SRL,
    #[serde(rename = "S_RR")]
    SRR,
    #[serde(rename = "LDOS")]
    Ldos,
}

impl MapKind {
    pub fn name(self) -> &'static str {
        match self {
            MapKind::SLL => "S_LL",
            MapKind::SLR => "S_LR",
            MapKind::SRL => "S_RL",
            MapKind::SRR => "S_RR",
            MapKind::Ldos => "LDOS",
        }
    }
}

impl std::str::FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S_LL" => Ok(MapKind::SLL),
            "S_LR" => Ok(MapKind::SLR),
            "S_RL" => Ok(MapKind::SRL),
            "S_RR" => Ok(MapKind::SRR),
            "LDOS" => Ok(MapKind::Ldos),
            _ => Err(Error::input(format!("unknown map kind {s:?}"))),
        }
    }
}

/// `values[i][j]` belongs to `e_grid[i]` and `vq_grid[j]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumMap {
    pub kind: MapKind,
    #[serde(rename = "E_grid")]
    pub e_grid: Vec<f64>,
    #[serde(rename = "VQ_grid")]
    pub vq_grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl SpectrumMap {
    pub fn new(kind: MapKind, e_grid: Vec<f64>, vq_grid: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != e_grid.len() || values.iter().any(|row| row.len() != vq_grid.len()) {
            return Err(Error::input("map values do not match the grid dimensions"));
        }
        Ok(SpectrumMap {
            kind,
            e_grid,
            vq_grid,
            values,
        })
    }

    /// Spectrum at one qubit energy.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[j]).collect()
    }

    /// Long form `E_MHz,VQ_MHz,value`, VQ-major.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("E_MHz,VQ_MHz,value\n");
        for (j, vq) in self.vq_grid.iter().enumerate() {
            for (i, e) in self.e_grid.iter().enumerate() {
                let _ = writeln!(out, "{e},{vq},{:e}", self.values[i][j]);
            }
        }
        out
    }

    /// Metadata describing the companion CSV.
    pub fn header_json(&self) -> serde_json::Value {
        let range = |g: &[f64]| {
            serde_json::json!({
                "n": g.len(),
                "min": g.iter().cloned().fold(f64::INFINITY, f64::min),
                "max": g.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            })
        };
        serde_json::json!({
            "kind": self.kind.name(),
            "columns": ["E_MHz", "VQ_MHz", "value"],
            "order": "VQ-major",
            "E": range(&self.e_grid),
            "VQ": range(&self.vq_grid),
        })
    }
}

/// `|S|` or LDOS over `(E, VQ)`. The model is evaluated at `e_grid`; the
/// returned map reports energies shifted by `f0` into lab frequencies.
pub fn transmission_map(params: &ModelParams, e_grid: &[f64], vq_grid: &[f64], kind: MapKind) -> Result<SpectrumMap> {
    if e_grid.is_empty() || vq_grid.is_empty() {
        return Err(Error::input("empty grid"));
    }
    let columns: Vec<Vec<f64>> = vq_grid
        .par_iter()
        .map(|&vq| {
            let sc = Scatterer::new(&params.with_vq(vq))?;
            e_grid.iter().map(|&e| sc.value(e, kind)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let values = (0..e_grid.len())
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect();
    SpectrumMap::new(
        kind,
        e_grid.iter().map(|e| e + params.f0).collect(),
        vq_grid.to_vec(),
        values,
    )
}

/// 0.5 MHz steps within `±(t1 + t2 + 2|V|)` of zero, 5 MHz steps for a
/// further half-width on each side.
pub fn default_energy_grid(params: &ModelParams) -> Vec<f64> {
    const FINE: f64 = 0.5;
    const COARSE: f64 = 5.0;
    let half = params.t1 + params.t2 + 2.0 * params.v.abs();
    let outer = 1.5 * half;
    let mut grid = Vec::new();
    let mut e = -outer;
    while e < -half {
        grid.push(e);
        e += COARSE;
    }
    let n = (2.0 * half / FINE).round() as usize;
    grid.extend((0..=n).map(|k| -half + FINE * k as f64));
    let mut e = half + COARSE;
    while e <= outer + 1e-9 {
        grid.push(e);
        e += COARSE;
    }
    grid
}

/// Uniform grid of `n` points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}
