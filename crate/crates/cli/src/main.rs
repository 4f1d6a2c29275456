mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{CliError, Context};
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "rmwave", version, about = "Rice-Mele waveguide QED toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Flat `key = value` config file applied on top of the preset.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in parameter set: fig1, fig3, fig4, fig5 or appc.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR", default_value = "rmwave-out")]
    out: PathBuf,
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Override a single config key, e.g. `--set VQ=-40`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Eigenvalue sweep over VQ, edge-state populations and directionality.
    Spectrum,
    /// S-matrix or LDOS map over (E, VQ) and the far-detuned peak report.
    Scatter,
    /// Port-resolved emission of the lattice model and a Bloch Rabi trace.
    Emit,
    /// Two-stage Hamiltonian fit with bootstrap intervals.
    Fit {
        /// Far-detuned peaks: flux_or_VQ,frequency_MHz,amplitude.
        #[arg(long, value_name = "PATH")]
        peaks: PathBuf,
        /// Anticrossing gaps: VQ_MHz,gap_MHz.
        #[arg(long, value_name = "PATH")]
        gaps: Option<PathBuf>,
    },
    /// Directionality from port amplitudes or from two Rabi trace files.
    Chi {
        /// Trace of the leftward edge state with port_L and port_R channels.
        #[arg(long, value_name = "PATH", requires = "right_trace")]
        left_trace: Option<PathBuf>,
        /// Trace of the rightward edge state.
        #[arg(long, value_name = "PATH", requires = "left_trace")]
        right_trace: Option<PathBuf>,
    },
}

fn load_config(g: &Global) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.preset {
        Some(name) => RunConfig::from_preset(name)?,
        None if g.config.is_some() => RunConfig::new(Default::default()),
        None => return Err(CliError::Usage("give --preset, --config or both".into())),
    };
    if let Some(path) = &g.config {
        let text = commands::read(path)?;
        cfg.apply_text(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    for kv in &g.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim(), 0)
            .map_err(|e| CliError::Usage(format!("--set {kv}: {e}")))?;
    }
    cfg.model.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(&cli.global)?;
    let ctx = Context::new(
        cli.global.out.clone(),
        cfg,
        cli.global.seed,
        cli.global.threads,
        cli.global.preset.clone(),
        cli.global.config.clone(),
    )?;
    match &cli.command {
        Command::Spectrum => commands::spectrum(ctx),
        Command::Scatter => commands::scatter(ctx),
        Command::Emit => commands::emit(ctx),
        Command::Fit { peaks, gaps } => commands::fit(ctx, peaks, gaps.as_deref()),
        Command::Chi {
            left_trace,
            right_trace,
        } => commands::chi(ctx, left_trace.as_deref().zip(right_trace.as_deref())),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
