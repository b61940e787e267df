use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use specchan::error::Result;
use specchan::harness::{self, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "specchan", version, about = "Spectral-ensemble channel analysis and decoding")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Replica-symmetric predictions over the SNR grid.
    Replica(Common),
    /// Decode a single instance and write its per-iteration trace.
    Decode(Common),
    /// Empirical BER over the SNR grid with replica and scalar baselines.
    Sweep(Common),
    /// Mean BER against iteration with and without self-reaction cancellation.
    Trajectory(Common),
    /// Numerical checks of the F functional; exits nonzero on any violation.
    Fcheck(Common),
    /// Compare sampled eigenvalues with the asymptotic spectra.
    Spectrum(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; missing fields take the preset defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// K = 2048 and 500 trials for decode sweeps.
    #[arg(long)]
    full_scale: bool,
}

impl Common {
    fn config(&self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None if kind == ExperimentKind::Trajectory => ExperimentConfig::src_ablation(),
            None => ExperimentConfig::desk_sweep(),
        };
        cfg.experiment = kind;
        if self.full_scale {
            cfg = cfg.full_scale();
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (common, kind) = match &cli.cmd {
        Cmd::Replica(c) => (c, ExperimentKind::ReplicaSweep),
        Cmd::Decode(c) => (c, ExperimentKind::Decode),
        Cmd::Sweep(c) => (c, ExperimentKind::DecodeSweep),
        Cmd::Trajectory(c) => (c, ExperimentKind::Trajectory),
        Cmd::Fcheck(c) => (c, ExperimentKind::Fcheck),
        Cmd::Spectrum(c) => (c, ExperimentKind::SpectrumReport),
    };
    let cfg = common.config(kind)?;
    let dir = cfg.out_dir.clone();
    let mut ok = true;
    let path = match kind {
        ExperimentKind::ReplicaSweep => harness::write_outputs(&dir, "replica", &harness::run_replica_sweep(&cfg)?, &cfg, json!(null))?,
        ExperimentKind::DecodeSweep => {
            let rows = harness::run_decode_sweep(&cfg, &harness::thread_pool()?)?;
            harness::write_outputs(&dir, "sweep", &rows, &cfg, json!(null))?
        }
        ExperimentKind::Trajectory => {
            let out = harness::run_trajectory(&cfg, &harness::thread_pool()?)?;
            harness::write_outputs(&dir, "trajectory_summary", &out.summary, &cfg, json!(null))?;
            harness::write_outputs(&dir, "trajectory", &out.rows, &cfg, json!(null))?
        }
        ExperimentKind::Decode => {
            let run = harness::run_single_decode(&cfg)?;
            let extra = json!({
                "ber": run.ber,
                "iterations": run.result.iterations,
                "converged": run.result.converged,
                "diverged": run.result.diverged,
                "n": run.n,
                "beta_realized": run.beta,
            });
            if cfg.dump_instance {
                eprintln!("instance: {}", harness::dump_instance(&dir, &run)?.display());
            }
            println!("ber {} after {} iterations (converged: {})", run.ber, run.result.iterations, run.result.converged);
            harness::write_outputs(&dir, "decode_trajectory", &run.result.trajectory, &cfg, extra)?
        }
        ExperimentKind::Fcheck => {
            let rows = harness::run_fcheck(&cfg)?;
            print!("{}", harness::format_checks(&rows));
            ok = rows.iter().all(|r| r.pass);
            harness::write_outputs(&dir, "fcheck", &rows, &cfg, json!(null))?
        }
        ExperimentKind::SpectrumReport => {
            let rows = harness::run_spectrum_report(&cfg, &harness::thread_pool()?)?;
            harness::write_outputs(&dir, "spectrum", &rows, &cfg, json!(null))?
        }
    };
    eprintln!("wrote {}", path.display());
    Ok(ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
