use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use feddua::prior_file::PriorFile;
use feddua::verdict_log::check_log;
use feddua::{calibrate, emit_outputs, prepare, run_experiment, ExperimentConfig, HarnessError, RayonExecutor};
use log::info;

/// Deterministic federated-learning simulator with data-volume verification.
#[derive(Debug, Parser)]
#[command(name = "feddua", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory (overrides `out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrate a prior on the shadow split and save it.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Prior file to write (default: `<out>/prior.txt`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a verdict log for internal consistency.
    VerifyLogs {
        #[arg(long)]
        ledger: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Config file (`key = value` per line).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for client training (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl Common {
    fn load(&self) -> feddua::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        for o in &self.overrides {
            cfg.apply_assignment(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> feddua::Result<()> {
    match cli.command {
        Command::Run { common, out } => {
            let mut cfg = common.load()?;
            if let Some(out) = out {
                cfg.out = out;
            }
            let exec = RayonExecutor::new(common.threads)?;
            let (output, _) = run_experiment(&cfg, &exec)?;
            emit_outputs(&cfg.out, &cfg, &output)?;
            println!(
                "final accuracy {:.4} after {} rounds; artifacts in {}",
                output.final_accuracy(),
                output.rounds.len(),
                cfg.out.display()
            );
        }
        Command::Calibrate { common, out } => {
            let cfg = common.load()?;
            let exec = RayonExecutor::new(common.threads)?;
            let fed = prepare(&cfg)?;
            let cal = calibrate(&cfg, &fed, &exec)?;
            let path = out.unwrap_or_else(|| cfg.out.join("prior.txt"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
            }
            PriorFile {
                strategy: cfg.strategy_kind()?.name().to_string(),
                prior: cal.prior,
            }
            .save(&path)?;
            println!("prior written to {}", path.display());
        }
        Command::VerifyLogs { ledger } => verify_logs(&ledger)?,
    }
    Ok(())
}

fn verify_logs(path: &Path) -> feddua::Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let report = check_log(&text, path)?;
    println!("events: {}", report.events);
    println!("accepted: {}", report.accepts);
    for (reason, n) in &report.flags_by_reason {
        println!("flagged {reason}: {n}");
    }
    println!("excluded clients: {:?}", report.excluded);
    if report.is_consistent() {
        println!("log is consistent");
        Ok(())
    } else {
        for v in &report.violations {
            println!("violation: {v}");
        }
        Err(HarnessError::parse(
            path,
            0,
            format!("{} consistency violations", report.violations.len()),
        ))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {
            info!("done");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
