//! One function per subcommand. Each writes its outputs into the run
//! directory and finishes with `manifest.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rmwave::dynamics::{
    bloch_rabi_trace, dressed_decay_time, emitted_probability, evolve_single_excitation, prepared_gap_state,
    site_state, TimeTrace,
};
use rmwave::edge::{bidirectional_point, gap_state_report, working_points, Direction};
use rmwave::fitting::{
    bootstrap_fit_with, extract_peaks, fit_hamiltonian_with, parse_gaps_csv, parse_peaks_csv, FitOptions,
};
use rmwave::scattering::{default_energy_grid, transmission_map, MapKind, Scatterer};
use rmwave::sigproc::{chi_estimate, measure_amplitudes};
use rmwave::spectral::{far_detuned_vq, sweep_csv, sweep_qubit_energy};
use rmwave::{build_hamiltonian, Error};
use serde_json::{json, Value};

use crate::config::{Initial, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config values or grids (exit 2).
    Usage(String),
    /// Unreadable or malformed input data (exit 3).
    Data(String),
    /// A solver, integrator or estimator failed (exit 4).
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::InvalidParameter(_) | Error::InvalidInput(_) => CliError::Usage(m),
            Error::Parse { .. } | Error::Underdetermined { .. } => CliError::Data(m),
            _ => CliError::Numerical(m),
        }
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn data_err(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| match e {
        Error::Parse { .. } => CliError::Data(format!("{}: {e}", path.display())),
        other => other.into(),
    }
}

pub struct Context {
    out: PathBuf,
    cfg: RunConfig,
    seed: u64,
    threads: Option<usize>,
    preset: Option<String>,
    config_path: Option<PathBuf>,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl Context {
    pub fn new(
        out: PathBuf,
        cfg: RunConfig,
        seed: u64,
        threads: Option<usize>,
        preset: Option<String>,
        config_path: Option<PathBuf>,
    ) -> Result<Self, CliError> {
        fs::create_dir_all(&out).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out.display())))?;
        Ok(Context {
            out,
            cfg,
            seed,
            threads,
            preset,
            config_path,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
        text.push('\n');
        self.write(name, &text)
    }

    fn input(&mut self, path: &Path) -> Result<String, CliError> {
        let text = read(path)?;
        self.inputs.push(path.display().to_string());
        Ok(text)
    }

    /// `run.conf` reproduces the configuration; `manifest.json` lists it with
    /// everything else needed to repeat the run.
    fn finish(mut self, command: &str, summary: Value) -> Result<(), CliError> {
        let conf = self.cfg.to_config_string();
        self.write("run.conf", &conf)?;
        let manifest = json!({
            "tool": "rmwave",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "preset": self.preset,
            "config_file": self.config_path.as_ref().map(|p| p.display().to_string()),
            "seed": self.seed,
            "threads": self.threads,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "config": self.cfg,
            "summary": summary,
        });
        self.write_json("manifest.json", &manifest)?;
        println!("{command}: wrote {} files to {}", self.outputs.len(), self.out.display());
        Ok(())
    }
}

pub fn spectrum(mut ctx: Context) -> Result<(), CliError> {
    let params = ctx.cfg.model;
    let vq_grid = ctx.cfg.vq_grid()?;
    let sweep = sweep_qubit_energy(&params, &vq_grid, false)?;
    let csv = sweep_csv(&sweep);
    ctx.write("spectrum_sweep.csv", &csv)?;

    let mut pops = String::from("VQ_MHz,pop_left,pop_right,pop_M,pop_Q,chi_left,chi_left_dB\n");
    let mut rows = 0;
    for &vq in &vq_grid {
        if let Ok(r) = gap_state_report(&params.with_vq(vq), Direction::Left) {
            let _ = writeln!(
                pops,
                "{vq},{:e},{:e},{:e},{:e},{},{}",
                r.pop_left,
                r.pop_right,
                r.pop_m,
                r.pop_q,
                r.chi.value(),
                r.chi_db.value()
            );
            rows += 1;
        }
    }
    ctx.write("edge_populations.csv", &pops)?;

    let directionality = match working_points(&params) {
        Ok((left, right)) => json!({
            "VQ_left": left,
            "VQ_right": right,
            "left": gap_state_report(&params.with_vq(left), Direction::Left)?,
            "right": gap_state_report(&params.with_vq(right), Direction::Right)?,
            "VQ_bidirectional": bidirectional_point(&params).ok(),
            "at_VQ": gap_state_report(&params, Direction::Left).ok(),
        }),
        Err(e) => json!({ "working_points": null, "reason": e.to_string() }),
    };
    ctx.write_json("directionality.json", &directionality)?;
    let in_gap_rows = sweep.iter().map(|p| p.modes.iter().filter(|m| m.in_gap).count()).sum::<usize>();
    let summary = json!({ "vq_points": vq_grid.len(), "in_gap_rows": in_gap_rows, "edge_rows": rows });
    ctx.finish("spectrum", summary)
}

pub fn scatter(mut ctx: Context) -> Result<(), CliError> {
    let params = ctx.cfg.model;
    Scatterer::new(&params)?;
    let e_grid = match ctx.cfg.e_grid()? {
        Some(g) => g,
        None => default_energy_grid(&params),
    };
    let vq_grid = ctx.cfg.vq_grid()?;
    let map = transmission_map(&params, &e_grid, &vq_grid, ctx.cfg.map)?;
    ctx.write("scatter_map.csv", &map.to_csv())?;
    ctx.write_json("scatter_map.json", &map.header_json())?;

    let far = far_detuned_vq(&params);
    let slice_model = params.with_vq(far);
    let sc = Scatterer::new(&slice_model)?;
    let slice: Vec<f64> = e_grid
        .iter()
        .map(|&e| sc.value(e, MapKind::SRL))
        .collect::<Result<_, _>>()?;
    let lab: Vec<f64> = e_grid.iter().map(|e| e + params.f0).collect();
    let top = slice.iter().cloned().fold(0.0, f64::max);
    let peaks = extract_peaks(&slice, &lab, far + params.f0, ctx.cfg.min_prominence * top)?;
    ctx.write("far_peaks.csv", &peaks.to_csv())?;
    println!("far-detuned S_RL slice at VQ = {far} MHz: {} peaks", peaks.len());
    let summary = json!({
        "map": ctx.cfg.map.name(),
        "e_points": e_grid.len(),
        "vq_points": vq_grid.len(),
        "far_VQ": far,
        "far_peak_count": peaks.len(),
    });
    ctx.finish("scatter", summary)
}

pub fn emit(mut ctx: Context) -> Result<(), CliError> {
    let params = ctx.cfg.model;
    let t_grid = ctx.cfg.t_grid()?;
    let (gl, gr) = params.port_widths();
    let lattice = if gl > 0.0 || gr > 0.0 {
        let h = build_hamiltonian(&params, true)?;
        let psi0 = match ctx.cfg.initial {
            Initial::Gap => prepared_gap_state(&params)?,
            Initial::Qubit => site_state(h.dim(), h.roles.q)?,
        };
        let trace = evolve_single_excitation(&h, &psi0, &t_grid)?;
        let emission = emitted_probability(&trace)?;
        ctx.write("emission_trace.csv", &trace.to_csv())?;
        let t1 = dressed_decay_time(&params).ok();
        let value = json!({ "emission": emission, "dressed_T1_ns": t1, "method": trace.method });
        ctx.write_json("emission.json", &value)?;
        value
    } else {
        Value::Null
    };
    let bloch = bloch_rabi_trace(&ctx.cfg.bloch, &t_grid, ctx.cfg.drive_until)?;
    ctx.write("bloch_trace.csv", &bloch.to_csv())?;
    let summary = json!({ "lattice": lattice, "bloch": ctx.cfg.bloch, "t_points": t_grid.len() });
    ctx.finish("emit", summary)
}

pub fn fit(mut ctx: Context, peaks_path: &Path, gaps_path: Option<&Path>) -> Result<(), CliError> {
    let text = ctx.input(peaks_path)?;
    let peaks = parse_peaks_csv(&text, &peaks_path.display().to_string()).map_err(data_err(peaks_path))?;
    let gaps = match gaps_path {
        Some(p) => {
            let text = ctx.input(p)?;
            parse_gaps_csv(&text).map_err(data_err(p))?
        }
        None => Vec::new(),
    };
    let opts = FitOptions {
        restarts: ctx.cfg.restarts,
        seed: ctx.seed,
        ..FitOptions::default()
    };
    let mask = ctx.cfg.mask();
    let result = match ctx.cfg.bootstrap {
        0 => fit_hamiltonian_with(&peaks, &gaps, &ctx.cfg.model, &mask, &opts)?,
        n => bootstrap_fit_with(&peaks, &gaps, &ctx.cfg.model, &mask, n, &opts)?,
    };
    ctx.write_json("fit.json", &result.to_json())?;
    ctx.write("fitted.conf", &result.best.to_config_string())?;
    for p in &result.parameters {
        println!("{:>3} = {:.2}  [{:.2}, {:.2}]", p.name, p.best, p.p2_5, p.p97_5);
    }
    let summary = json!({
        "peaks": peaks.len(),
        "gaps": gaps.len(),
        "residual_rms": result.residual_rms,
        "converged": result.converged,
    });
    ctx.finish("fit", summary)
}

pub fn chi(mut ctx: Context, traces: Option<(&Path, &Path)>) -> Result<(), CliError> {
    let amps = match traces {
        Some((l, r)) => {
            let left = TimeTrace::from_csv(&ctx.input(l)?).map_err(data_err(l))?;
            let right = TimeTrace::from_csv(&ctx.input(r)?).map_err(data_err(r))?;
            let n = ctx.cfg.bootstrap;
            measure_amplitudes(&left, &right, ctx.cfg.f_rabi(), &ctx.cfg.demod, n, ctx.seed)?
        }
        None => ctx.cfg.amplitudes.ok_or_else(|| {
            CliError::Usage("chi needs s_lL, s_lR, s_rL, s_rR in the config, the appc preset, or two trace files".into())
        })?,
    };
    let est = chi_estimate(&amps)?;
    let value = serde_json::to_value(est).expect("plain data serializes");
    ctx.write_json("chi.json", &value)?;
    println!(
        "chi = {}  ({} dB), fidelity = {:.4}",
        est.chi.value(),
        est.chi_db.value(),
        est.fidelity
    );
    ctx.finish("chi", value)
}
