//! Argument parsing, config loading and exit-code mapping.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{self, Ctx, Outcome, Status};
use crate::config::{ConfigError, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(i32)]
pub enum ExitCode {
    Success = 0,
    Failure = 1,
    Config = 2,
    Diverged = 3,
    Verification = 4,
}

#[derive(Debug, Parser)]
#[command(
    name = "fsmle",
    version,
    about = "Likelihood-free MLE with local Fisher score matching"
)]
pub struct Cli {
    /// JSON run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "FSM_MLE_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Gradient error over budgets and hyperparameters.
    Grad,
    /// Maximum likelihood runs with iterate averaging.
    Optimize,
    /// Hyperparameter grid search by prediction error.
    Tune,
    /// Confidence-interval coverage.
    Coverage,
    /// Smoothing bias against its theoretical bound.
    BiasProbe,
    /// Wall-clock timing of gradient estimates (machine dependent).
    Bench,
    /// Numerical identity checks.
    Verify,
}

pub fn load_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
                path: String::new(),
                message: format!("cannot read {}: {e}", path.display()),
            })?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

pub fn dispatch(command: Command, ctx: &Ctx) -> anyhow::Result<Outcome> {
    match command {
        Command::Grad => commands::grad::run(ctx),
        Command::Optimize => commands::optimize::run(ctx),
        Command::Tune => commands::tune::run(ctx),
        Command::Coverage => commands::coverage::run(ctx),
        Command::BiasProbe => commands::bias::run(ctx),
        Command::Bench => commands::bench::run(ctx),
        Command::Verify => commands::verify::run(ctx),
    }
}

fn execute(cli: &Cli) -> ExitCode {
    let cfg = match load_config(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::Config;
        }
    };
    let ctx = match Ctx::new(cfg) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid config: {e:#}");
            return ExitCode::Config;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::Failure;
        }
    };
    match pool.install(|| dispatch(cli.command, &ctx)) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            println!("{}", outcome.message);
            match outcome.status {
                Status::Ok => ExitCode::Success,
                Status::Diverged => {
                    eprintln!("error: divergence detected");
                    ExitCode::Diverged
                }
                Status::VerificationFailed => {
                    eprintln!("error: verification failed");
                    ExitCode::Verification
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::Config
            } else {
                ExitCode::Failure
            }
        }
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run_cli<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                ExitCode::Config
            } else {
                ExitCode::Success
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> ExitCode {
        run_cli(std::iter::once("fsmle").chain(args.iter().copied()))
    }

    #[test]
    fn bad_arguments_map_to_config_error() {
        assert_eq!(run(&["no-such-command"]), ExitCode::Config);
        assert_eq!(run(&["--seed", "x", "verify"]), ExitCode::Config);
        assert_eq!(
            run(&["--config", "/nonexistent/cfg.json", "verify"]),
            ExitCode::Config
        );
    }

    #[test]
    fn invalid_config_maps_to_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"optimizer": {"eta": -1}}"#).unwrap();
        assert_eq!(
            run(&["--config", cfg.to_str().unwrap(), "optimize"]),
            ExitCode::Config
        );
        std::fs::write(
            &cfg,
            r#"{"model": {"kind": "shifted_exponential", "truth": 2.0}}"#,
        )
        .unwrap();
        let out = dir.path().join("out");
        assert_eq!(
            run(&[
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "grad"
            ]),
            ExitCode::Config
        );
    }

    #[test]
    fn overrides_apply() {
        let cli = Cli::try_parse_from(["fsmle", "--seed", "9", "--out", "/tmp/x", "tune"]).unwrap();
        let cfg = load_config(&cli).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.output, PathBuf::from("/tmp/x"));
        assert_eq!(cli.command, Command::Tune);
    }

    #[test]
    fn verify_succeeds_with_small_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"experiments": {"verify": {"cases": 10}}}"#).unwrap();
        let out = dir.path().join("out");
        let code = run(&[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            "1",
            "verify",
        ]);
        assert_eq!(code, ExitCode::Success);
        assert!(out.join("verify.csv").exists());
    }
}
