//! Command-line laboratory for viscous planar shocks: profile
//! construction, perturbed runs, source-free front runs, inequality
//! verification, and amplitude sweeps.
//!
//! Every subcommand reads the same TOML configuration (all keys optional)
//! and accepts repeated `--set section.key=value` overrides. Exit codes:
//! `0` success, `1` usage/config/IO error, `2` the work ran but reported a
//! failure (early termination or a violated inequality).

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use shocklab::dynamics::Mode;
use shocklab::harness::{
    self, render_report, run_experiment, ExperimentConfig, TerminationReason,
};
use shocklab::inequalities::{estimate_constant_observed, LemmaId, SamplerConfig};
use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "shocklab",
    version,
    about = "Viscous shock laboratory: profiles, perturbed runs, and inequality checks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Configuration source shared by all subcommands.
#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set run.horizon=2.5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        Ok(harness::load_config_with_overrides(self.config.as_deref(), &self.set)?)
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum LemmaArg {
    Poincare,
    Pointwise,
    Both,
}

impl LemmaArg {
    fn lemmas(self) -> Vec<LemmaId> {
        match self {
            LemmaArg::Poincare => vec![LemmaId::WeightedPoincare],
            LemmaArg::Pointwise => vec![LemmaId::PointwiseWeighted],
            LemmaArg::Both => vec![LemmaId::WeightedPoincare, LemmaId::PointwiseWeighted],
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Construct the shock profile and print its certificate as JSON.
    Profile {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also write profile.csv and certificate.json into this directory.
        #[arg(short, long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Run the configured experiment and print its report.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (overrides run.output_dir).
        #[arg(short, long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Run in the source-free front mode regardless of the configured mode.
    Special {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (overrides run.output_dir).
        #[arg(short, long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Sample the weighted inequalities and print JSON reports.
    Verify {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Number of random samples per inequality.
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Base seed for the sample streams.
        #[arg(long, default_value_t = 0x7368_6f63)]
        seed: u64,
        /// Which inequality to sample.
        #[arg(long, value_enum, default_value_t = LemmaArg::Both)]
        lemma: LemmaArg,
        /// Write one CSV row per sample to this file.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
    },
    /// Fan the experiment out over a set of perturbation amplitudes.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Amplitudes to run, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1e-3, 1e-2, 1e-1])]
        amplitudes: Vec<f64>,
        /// Root directory for the per-amplitude run directories.
        #[arg(short, long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn cmd_profile(cfg: &ConfigArgs, out: Option<&PathBuf>) -> Result<ExitCode> {
    let cfg = cfg.load()?;
    let flux = cfg.build_flux()?;
    let profile = cfg.build_profile(&flux)?;
    let cert = profile.check_profile();
    println!("{}", serde_json::to_string_pretty(&cert)?);
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        profile.write_csv(&dir.join("profile.csv"))?;
        fs::write(
            dir.join("certificate.json"),
            serde_json::to_string_pretty(&cert)? + "\n",
        )?;
        eprintln!("wrote profile.csv and certificate.json to {}", dir.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(cfg: &ConfigArgs, out: Option<&PathBuf>, force_mode: Option<Mode>) -> Result<ExitCode> {
    let mut cfg = cfg.load()?;
    if let Some(mode) = force_mode {
        cfg.run.mode = mode;
    }
    if let Some(dir) = out {
        cfg.run.output_dir = Some(dir.clone());
    }
    let (manifest, series) = run_experiment(&cfg)?;
    print!("{}", render_report(&manifest, &series));
    if let Some(dir) = &cfg.run.output_dir {
        eprintln!("artifacts in {}", dir.display());
    }
    Ok(if manifest.termination == TerminationReason::HorizonReached {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_verify(
    cfg: &ConfigArgs,
    samples: usize,
    seed: u64,
    lemma: LemmaArg,
    csv: Option<&PathBuf>,
) -> Result<ExitCode> {
    let cfg = cfg.load()?;
    let flux = cfg.build_flux()?;
    let profile = cfg.build_profile(&flux)?;
    let grid = cfg.build_grid()?;
    let sampler = SamplerConfig { n_samples: samples, seed };

    let mut csv_out = match csv {
        Some(path) => {
            let file =
                File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(file);
            writeln!(w, "lemma,sample,sample_id,m,ratio,violation")?;
            Some(w)
        }
        None => None,
    };

    let mut reports = Vec::new();
    for id in lemma.lemmas() {
        let label = format!("{id:?}");
        let mut rows: Vec<String> = Vec::new();
        let report = estimate_constant_observed(id, &sampler, &grid, &profile, &mut |s| {
            rows.push(format!(
                "{label},{},{},{},{},{}",
                s.index, s.sample_id, s.m, s.ratio, s.violation
            ));
        });
        if let Some(w) = csv_out.as_mut() {
            for row in &rows {
                writeln!(w, "{row}")?;
            }
        }
        reports.push(report);
    }
    if let Some(mut w) = csv_out {
        w.flush()?;
    }

    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(if reports.iter().all(|r| r.pass) { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_sweep(cfg: &ConfigArgs, amplitudes: &[f64], out: &PathBuf) -> Result<ExitCode> {
    let base = cfg.load()?;
    let entries = harness::sweep(&base, amplitudes, out)?;
    let mut all_finished = true;
    for e in &entries {
        println!(
            "amplitude {:>9.3e}  {}  steps {:>8}  t = {:.4}  E: {:.3e} -> {:.3e}  ({})",
            e.amplitude,
            e.termination,
            e.steps,
            e.final_time,
            e.initial_energy,
            e.final_energy,
            e.dir.display()
        );
        all_finished &= e.termination == TerminationReason::HorizonReached;
    }
    Ok(if all_finished { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Profile { cfg, out } => cmd_profile(cfg, out.as_ref()),
        Cmd::Run { cfg, out } => cmd_run(cfg, out.as_ref(), None),
        Cmd::Special { cfg, out } => cmd_run(cfg, out.as_ref(), Some(Mode::Special)),
        Cmd::Verify { cfg, samples, seed, lemma, csv } => {
            cmd_verify(cfg, *samples, *seed, *lemma, csv.as_ref())
        }
        Cmd::Sweep { cfg, amplitudes, out } => cmd_sweep(cfg, amplitudes, out),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
