//! Command-line entry points. Exit codes: 0 success, 1 i/o failure,
//! 2 configuration/usage error, 3 runtime divergence.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::lmi::{check_certificate, CertificateSpec, DEFAULT_TOL};
use crate::scenario::{ScenarioConfig, PRESETS};
use crate::sim::{batch, compute_metrics, run, write_outputs};

#[derive(Parser)]
#[command(
    name = "etsmc",
    version,
    about = "Event-triggered sliding-mode formation tracking under switching topologies"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write trace.csv, events.csv, modes.csv,
    /// metrics.json and config.toml
    Run {
        /// preset name or path to a scenario TOML file
        #[arg(long)]
        config: String,
        /// overrides the seed in the config
        #[arg(long)]
        seed: Option<u64>,
        /// output directory (ETSMC_OUT_DIR overrides)
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo batch over consecutive seeds, replicas in parallel
    Batch {
        /// preset name or path to a scenario TOML file
        #[arg(long)]
        config: String,
        /// number of replicas
        #[arg(long)]
        seeds: usize,
        /// first seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// directory for per-seed metrics and the batch summary
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a candidate certificate against a scenario's plant, topologies
    /// and switching process
    Verify {
        /// path to a certificate TOML file
        #[arg(long)]
        certificate: PathBuf,
        /// preset name or path to a scenario TOML file
        #[arg(long)]
        config: String,
        /// also write the report as JSON
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// List built-in scenario presets
    Presets,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFiniteState { .. } => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn out_dir(requested: PathBuf) -> PathBuf {
    std::env::var_os("ETSMC_OUT_DIR").map(PathBuf::from).unwrap_or(requested)
}

fn dispatch(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::Run { config, seed, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let sc = cfg.resolve()?;
            let seed = seed.unwrap_or(cfg.seed);
            let trace = run(&sc, seed)?;
            let metrics = compute_metrics(&trace, cfg.theta_band, &cfg.fault);
            let dir = out_dir(out);
            write_outputs(&trace, &metrics, &cfg.to_toml(), &dir)?;
            println!(
                "wrote {} (seed {seed}, settling {}, steady error {:.4}, {} releases / {} samples)",
                dir.display(),
                metrics
                    .settling_time
                    .map(|t| format!("{t:.3} s"))
                    .unwrap_or_else(|| "never".into()),
                metrics.steady_error,
                metrics.total_releases,
                metrics.total_samples,
            );
            Ok(())
        }
        Cmd::Batch { config, seeds, seed, out } => {
            if seeds == 0 {
                return Err(Error::Config("batch needs at least one seed".into()));
            }
            let cfg = ScenarioConfig::load(&config)?;
            let sc = cfg.resolve()?;
            let entries = batch(&sc, seed, seeds)?;
            let settled = entries
                .iter()
                .filter(|e| e.metrics.settling_time.is_some())
                .count();
            println!(
                "{seeds} replicas (seeds {seed}..{}): {settled} settled within the band",
                seed + seeds as u64 - 1
            );
            if let Some(dir) = out.map(out_dir) {
                std::fs::create_dir_all(&dir)?;
                for e in &entries {
                    let sub = dir.join(format!("seed-{}", e.seed));
                    std::fs::create_dir_all(&sub)?;
                    let json = serde_json::to_string_pretty(&e.metrics)
                        .map_err(|err| Error::Config(format!("metrics serialization: {err}")))?;
                    std::fs::write(sub.join("metrics.json"), json)?;
                }
                let summary = serde_json::to_string_pretty(&entries)
                    .map_err(|err| Error::Config(format!("summary serialization: {err}")))?;
                std::fs::write(dir.join("batch_summary.json"), summary)?;
                println!("wrote {}", dir.display());
            }
            Ok(())
        }
        Cmd::Verify { certificate, config, json } => {
            let cfg = ScenarioConfig::load(&config)?;
            let sc = cfg.resolve()?;
            let text = std::fs::read_to_string(&certificate).map_err(|e| {
                Error::Config(format!("cannot read certificate {}: {e}", certificate.display()))
            })?;
            let spec = CertificateSpec::from_toml(&text)?;
            let cert = spec.resolve(
                sc.n_modes,
                sc.plant_modes[0].n_x(),
                sc.n_followers,
                &sc.gains.gains.k_mats,
            )?;
            let report =
                check_certificate(&cert, &sc.plant_modes, &sc.couplings, &sc.process, DEFAULT_TOL)?;
            // tolerate closed pipes (e.g. `verify ... | head`)
            let _ = write!(std::io::stdout(), "{report}");
            if let Some(path) = json {
                let payload = serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
                std::fs::write(path, payload)?;
            }
            Ok(())
        }
        Cmd::Presets => {
            let mut out = std::io::stdout();
            for name in PRESETS {
                let _ = writeln!(out, "{name}");
            }
            Ok(())
        }
    }
}

/// Parse argv and execute; returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    2
                }
            }
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
