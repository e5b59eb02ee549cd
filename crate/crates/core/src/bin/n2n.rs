use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nonlinear_n2n::commands::{run, Command, CommandError, CommandResult, ExperimentConfig};
use nonlinear_n2n::loss::{LossKind, Placement};
use nonlinear_n2n::ToneMap;

#[derive(Parser)]
#[command(name = "n2n", version, about = "Bias bounds and oracles for tone-mapped Noise2Noise losses")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    tonemap: Option<ToneMap>,
    #[arg(long, global = true)]
    loss: Option<LossKind>,
    /// none, target or both.
    #[arg(long, global = true)]
    placement: Option<Placement>,
}

#[derive(Subcommand)]
enum Sub {
    /// Tone-map curves, max(|J-|, |J+|) curves and the variance-bound parabola.
    Curves {
        /// Support bound M of the parabola.
        #[arg(long)]
        support_max: Option<f64>,
        #[arg(long)]
        y_max: Option<f64>,
        /// Extra φ as `shape:map`, e.g. `tone:identity`. Repeatable.
        #[arg(long = "phi")]
        phis: Vec<String>,
    },
    /// Closed-form table rows against the numeric bound search.
    VerifyTable {
        /// Only check this row (`shape:map`). Repeatable.
        #[arg(long = "row")]
        rows: Vec<String>,
        /// Sets both the absolute and relative tolerance.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Brute-force minimizer battery.
    Oracle {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Per-pixel SGD training runs.
    Train {
        /// All 22 loss configurations.
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        /// Also write median-filtered curves.
        #[arg(long)]
        smooth: bool,
    },
    /// Finite-data error decomposition check.
    FiniteData {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        error_mean: Option<f64>,
        #[arg(long)]
        error_var: Option<f64>,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn configure(cli: Cli) -> CommandResult<(Command, ExperimentConfig, PathBuf)> {
    let mut c = match &cli.common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let g = cli.common;
    set(&mut c.seed, g.seed);
    set(&mut c.epsilon, g.epsilon);
    c.loss = g.loss.or(c.loss);
    c.placement = g.placement.or(c.placement);
    c.tonemap = g.tonemap.or(c.tonemap);
    let command = match cli.command {
        Sub::Curves { support_max, y_max, phis } => {
            set(&mut c.curves.support_max, support_max);
            set(&mut c.curves.y_max, y_max);
            c.curves.extra_phis.extend(phis);
            Command::Curves
        }
        Sub::VerifyTable { rows, tolerance } => {
            if !rows.is_empty() {
                c.table.rows = rows;
            }
            set(&mut c.table.abs_tol, tolerance);
            set(&mut c.table.rel_tol, tolerance);
            Command::VerifyTable
        }
        Sub::Oracle { samples } => {
            set(&mut c.oracle.samples, samples);
            Command::Oracle
        }
        Sub::Train { sweep, seeds, steps, lr, batch, smooth } => {
            c.train.sweep |= sweep;
            c.train.smooth |= smooth;
            set(&mut c.train.seeds, seeds);
            set(&mut c.train.steps, steps);
            set(&mut c.train.lr, lr);
            set(&mut c.train.batch, batch);
            Command::Train
        }
        Sub::FiniteData { trials, error_mean, error_var } => {
            set(&mut c.finite_data.trials, trials);
            set(&mut c.finite_data.error_mean, error_mean);
            set(&mut c.finite_data.error_var, error_var);
            Command::FiniteData
        }
    };
    Ok((command, c, g.out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure(cli).and_then(|(command, config, out)| run(command, &config, &out));
    match result {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            println!("wrote {} artifacts, config {}", outcome.manifest.artifacts.len(), outcome.manifest.config_hash);
            if outcome.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                for f in &outcome.failures {
                    eprintln!("FAIL {f}");
                }
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CommandError) -> u8 {
    e.exit_code() as u8
}
