use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edgelearn::harness::{
    equivalence_experiment, evaluate_grid, gradcheck_suite, grid_axes, load_checkpoint_into,
    load_dataset, run_experiment, write_grid_csv, ExperimentConfig, Preset, GRADCHECK_TOLERANCE,
};
use edgelearn::protocol::TrainingState;
use edgelearn::Error;

#[derive(Parser)]
#[command(
    name = "edgelearn",
    version,
    about = "Edge-network training experiments over simulated fronthaul"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the final grid.
    Train(Common),
    /// Evaluate a saved checkpoint on the final grid.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load; `<out-dir>/checkpoint.bin` by default.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run an SNR or network-size sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `snr-sweep` or `ntest-sweep`; taken from the file when omitted.
        #[arg(long)]
        preset: Option<Preset>,
    },
    /// Finite-difference gradient checks; exits with 2 on failure.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 25)]
        instances: usize,
    },
    /// Decentralized against centralized training; exits with 2 on failure.
    Equivalence(Common),
}

enum Failure {
    Config(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.training.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(common: &Common, preset: Preset) -> Result<(), Failure> {
    let mut cfg = load_config(common)?;
    cfg.preset = preset;
    let result = run_experiment(&cfg, &common.out_dir)?;
    if let Some(acc) = result.final_val_accuracy {
        println!("final validation accuracy {acc:.4}");
    }
    for p in &result.grid {
        let snr = p
            .snr_db
            .map_or_else(|| "noiseless".to_string(), |s| format!("{s} dB"));
        println!(
            "{} n_test={} {snr}: accuracy {:.4}",
            p.architecture, p.n_test, p.accuracy
        );
    }
    println!("outputs written to {}", common.out_dir.display());
    Ok(())
}

fn eval(common: &Common, checkpoint: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let dataset = load_dataset(&cfg)?;
    let path = checkpoint.map_or_else(|| common.out_dir.join("checkpoint.bin"), Path::to_path_buf);
    let obs = edgelearn::protocol::Dataset::observation_len(&dataset);
    let classes = edgelearn::protocol::Dataset::classes(&dataset);
    let mut state = TrainingState::new(cfg.training.clone(), obs, classes)?;
    load_checkpoint_into(&mut state, &path)?;
    let (snrs, n_tests) = grid_axes(&cfg);
    let grid = evaluate_grid(&state, &dataset, &snrs, &n_tests, cfg.eval_samples)?;
    std::fs::create_dir_all(&common.out_dir).map_err(Error::from)?;
    write_grid_csv(&common.out_dir.join("eval.csv"), &grid)?;
    for p in &grid {
        let snr = p
            .snr_db
            .map_or_else(|| "noiseless".to_string(), |s| format!("{s} dB"));
        println!("n_test={} {snr}: accuracy {:.4}", p.n_test, p.accuracy);
    }
    Ok(())
}

fn gradcheck(common: &Common, instances: usize) -> Result<(), Failure> {
    let seed = match &common.config {
        Some(_) => load_config(common)?.training.seed,
        None => common.seed.unwrap_or(0),
    };
    let report = gradcheck_suite(seed, instances)?;
    std::fs::create_dir_all(&common.out_dir).map_err(Error::from)?;
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    std::fs::write(common.out_dir.join("gradcheck.json"), json).map_err(Error::from)?;
    for c in &report.cases {
        println!(
            "{:<20} instances {:>4} compared {:>6} skipped {:>3} max rel error {:.3e}",
            c.name, c.instances, c.compared, c.skipped, c.max_rel_error
        );
    }
    if report.passed() {
        println!(
            "gradcheck passed (worst {:.3e} <= {GRADCHECK_TOLERANCE:e})",
            report.worst()
        );
        Ok(())
    } else {
        Err(Failure::Numeric(format!(
            "gradcheck failed: worst relative error {:.3e} exceeds {GRADCHECK_TOLERANCE:e}",
            report.worst()
        )))
    }
}

fn equivalence(common: &Common) -> Result<(), Failure> {
    let mut cfg = match &common.config {
        Some(_) => load_config(common)?,
        None => equivalence_experiment(common.seed.unwrap_or(0)),
    };
    cfg.preset = Preset::Equivalence;
    let result = run_experiment(&cfg, &common.out_dir)?;
    let mut failed = false;
    for r in &result.equivalence {
        let mode = if r.encoder_sharing {
            "shared encoders"
        } else {
            "independent encoders"
        };
        println!(
            "{mode}: {} rounds, max relative deviation {:.3e}",
            r.rounds, r.max_deviation
        );
        failed |= !r.passed();
    }
    if failed {
        Err(Failure::Numeric(
            "decentralized and centralized training diverged".into(),
        ))
    } else {
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(c) => train(c, Preset::Standard),
        Command::Eval { common, checkpoint } => eval(common, checkpoint.as_deref()),
        Command::Sweep { common, preset } => {
            let preset = match preset {
                Some(p) => Ok(*p),
                None => load_config(common).and_then(|c| match c.preset {
                    p @ (Preset::SnrSweep | Preset::NtestSweep) => Ok(p),
                    _ => Err(Failure::Config(
                        "sweep needs --preset snr-sweep or ntest-sweep".into(),
                    )),
                }),
            };
            preset.and_then(|p| match p {
                Preset::SnrSweep | Preset::NtestSweep => train(common, p),
                _ => Err(Failure::Config(format!("'{p}' is not a sweep preset"))),
            })
        }
        Command::Gradcheck { common, instances } => gradcheck(common, *instances),
        Command::Equivalence(c) => equivalence(c),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
