//! Command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use metaaug::checkpoint::{load_bundle, save_bundle};
use metaaug::config::RunConfig;
use metaaug::dataset::{convert_pnm_dir, load_dataset, save_dataset, split, synth_digits, Dataset};
use metaaug::fsutil::atomic_write;
use metaaug::sampler::dist_csv;
use metaaug::trainer::{evaluate, log_to_csv, run, transfer_train, FrozenBundle, RunOutcome};
use metaaug::verify::gradcheck;
use metaaug::Result;

#[derive(Parser)]
#[command(name = "metaaug", version, about = "Sample-aware data augmentation policy learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a task network jointly with the augmentation policy.
    Train {
        /// Path to a `key = value` config file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a fresh network with a frozen policy checkpoint.
    Transfer {
        /// Policy checkpoint produced by `train`.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify every analytic gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a checkpoint's transformation distribution as CSV.
    ExportDist {
        ckpt: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic glyph dataset container.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert a directory of per-class PGM/PPM folders into a container.
    Convert {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, message }) => {
            eprintln!("error: {}", message);
            ExitCode::from(code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

/// Setup-stage failures (unreadable/invalid config or arguments) exit 2;
/// run-stage failures exit 1.
trait Stage<T> {
    fn setup(self) -> std::result::Result<T, CliError>;
    fn runtime(self) -> std::result::Result<T, CliError>;
}

impl<T, E: std::fmt::Display> Stage<T> for std::result::Result<T, E> {
    fn setup(self) -> std::result::Result<T, CliError> {
        self.map_err(|e| CliError { code: 2, message: e.to_string() })
    }

    fn runtime(self) -> std::result::Result<T, CliError> {
        self.map_err(|e| CliError { code: 1, message: e.to_string() })
    }
}

fn dispatch(command: Command) -> std::result::Result<(), CliError> {
    match command {
        Command::Train { config, out } => {
            let cfg = read_config(&config, out)?;
            let ds = load_split(&cfg)?;
            let outcome = run(&cfg, &ds).runtime()?;
            let out_dir = out_dir(&cfg)?;
            write_train_outputs(&cfg, &ds, &outcome, &out_dir).runtime()?;
            report(&outcome, &ds);
            println!("wrote {}", out_dir.display());
            Ok(())
        }
        Command::Transfer { policy, config, out } => {
            let cfg = read_config(&config, out)?;
            let bundle = load_bundle(&policy).setup()?;
            let ds = load_split(&cfg)?;
            let outcome = transfer_train(&cfg, &ds, &bundle, false).runtime()?;
            let out_dir = out_dir(&cfg)?;
            atomic_write(&out_dir.join("transfer_log.csv"), log_to_csv(&outcome.log).as_bytes())
                .runtime()?;
            report(&outcome, &ds);
            println!("wrote {}", out_dir.display());
            Ok(())
        }
        Command::Gradcheck { trials, seed } => {
            if trials == 0 {
                return Err(CliError { code: 2, message: "gradcheck needs at least 1 trial".into() });
            }
            let rows = gradcheck(trials, seed).runtime()?;
            println!(
                "{:<30} {:>7} {:>13} {:>9} {:>6}",
                "component", "trials", "max rel err", "tol", "result"
            );
            let mut all_pass = true;
            for row in &rows {
                all_pass &= row.pass;
                println!(
                    "{:<30} {:>7} {:>13.3e} {:>9.0e} {:>6}",
                    row.name,
                    row.trials,
                    row.max_err,
                    row.tol,
                    if row.pass { "PASS" } else { "FAIL" }
                );
            }
            if all_pass {
                Ok(())
            } else {
                Err(CliError { code: 1, message: "gradcheck failed".into() })
            }
        }
        Command::ExportDist { ckpt, out } => {
            let bundle = load_bundle(&ckpt).setup()?;
            let csv = dist_csv(&bundle.probabilities);
            match out {
                Some(path) => atomic_write(&path, csv.as_bytes()).runtime()?,
                None => print!("{}", csv),
            }
            Ok(())
        }
        Command::Synth { out, count, seed } => {
            let ds = synth_digits(count, seed).setup()?;
            save_dataset(&ds, &out).runtime()?;
            println!(
                "wrote {} ({} samples, {} classes, {}x{}x{})",
                out.display(),
                ds.len(),
                ds.num_classes,
                ds.height,
                ds.width,
                ds.channels
            );
            Ok(())
        }
        Command::Convert { dir, out } => {
            let ds = convert_pnm_dir(&dir).setup()?;
            save_dataset(&ds, &out).runtime()?;
            println!("wrote {} ({} samples, {} classes)", out.display(), ds.len(), ds.num_classes);
            Ok(())
        }
    }
}

fn read_config(path: &Path, out_override: Option<PathBuf>) -> std::result::Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError { code: 2, message: format!("{}: {}", path.display(), e) })?;
    let mut cfg = RunConfig::parse(&text).setup()?;
    if let Some(out) = out_override {
        cfg.out_dir = Some(out);
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> std::result::Result<PathBuf, CliError> {
    cfg.out_dir.clone().ok_or_else(|| CliError {
        code: 2,
        message: "no output directory: pass --out or set out_dir in the config".into(),
    })
}

fn load_split(cfg: &RunConfig) -> std::result::Result<Dataset, CliError> {
    let ds = load_dataset(&cfg.dataset)
        .map_err(|e| CliError { code: 2, message: format!("{}: {}", cfg.dataset.display(), e) })?;
    split(&ds, (cfg.split_train, cfg.split_val, cfg.split_test), cfg.seed).setup()
}

/// Write log.csv, dist.csv, and policy.ckpt for a finished joint run.
fn write_train_outputs(
    _cfg: &RunConfig,
    _ds: &Dataset,
    outcome: &RunOutcome,
    out_dir: &Path,
) -> Result<()> {
    atomic_write(&out_dir.join("log.csv"), log_to_csv(&outcome.log).as_bytes())?;
    atomic_write(&out_dir.join("dist.csv"), outcome.sampler.dist_csv().as_bytes())?;
    let feature_net = outcome
        .frozen_feature_net
        .clone()
        .unwrap_or_else(|| outcome.task_net.clone());
    let bundle = FrozenBundle {
        policy: outcome.policy.clone(),
        feature_net,
        probabilities: outcome.sampler.probabilities().to_vec(),
    };
    save_bundle(&bundle, &out_dir.join("policy.ckpt"))?;
    Ok(())
}

fn report(outcome: &RunOutcome, ds: &Dataset) {
    if let Some(last) = outcome.log.last() {
        println!(
            "final iteration {}: train loss {:.4}, val loss {:.4}",
            last.t, last.train_loss_weighted, last.val_loss
        );
    }
    for (name, indices) in [("val", &ds.val), ("test", &ds.test)] {
        if !indices.is_empty() {
            if let Ok((loss, acc)) = evaluate(&outcome.task_net, ds, indices) {
                println!("{}: loss {:.4}, accuracy {:.4}", name, loss, acc);
            }
        }
    }
}
