use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::checkpoint::save_checkpoint;
use super::checks::{run_equivalence, EquivalenceReport};
use super::config::{DataSource, ExperimentConfig, Preset};
use super::dataset::{calibrate, Calibration, GridDataset};
use super::metrics::MetricsWriter;
use crate::error::{Error, Result};
use crate::protocol::{evaluate, train_with, Dataset, EvalOptions, Split, TrainingState};

pub const SNR_SWEEP_DB: [f64; 7] = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0];
pub const NTEST_SWEEP_MAX: usize = 12;

/// Training-set size and gradient-descent iterations of the dataset calibration oracles.
const CALIBRATION_TRAIN: usize = 1000;
const CALIBRATION_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalPoint {
    pub architecture: String,
    pub snr_db: Option<f64>,
    pub n_test: usize,
    pub accuracy: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub preset: String,
    pub seed: u64,
    pub rounds: usize,
    pub final_val_accuracy: Option<f64>,
    pub cloud_parameters: usize,
    pub calibration: Option<Calibration>,
    pub grid: Vec<EvalPoint>,
    pub equivalence: Vec<EquivalenceReport>,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<GridDataset> {
    match &cfg.data {
        DataSource::Synthetic(spec) => GridDataset::generate_synthetic(cfg.data_seed(), spec),
        DataSource::Flat { path, window } => GridDataset::load_flat(path, *window, cfg.data_seed()),
    }
}

/// Test-split accuracy for every `(snr, n_test)` pair, SNR-major.
pub fn evaluate_grid<D: Dataset + ?Sized>(
    state: &TrainingState,
    dataset: &D,
    snrs: &[Option<f64>],
    n_tests: &[usize],
    max_samples: Option<usize>,
) -> Result<Vec<EvalPoint>> {
    let mut out = Vec::with_capacity(snrs.len() * n_tests.len());
    for &snr_db in snrs {
        for &n_test in n_tests {
            let r = evaluate(
                state,
                dataset,
                &EvalOptions {
                    split: Split::Test,
                    nodes: n_test,
                    snr_db,
                    seed: state.config.seed,
                    max_samples,
                },
            )?;
            out.push(EvalPoint {
                architecture: state.config.architecture.to_string(),
                snr_db,
                n_test,
                accuracy: r.accuracy,
                samples: r.samples,
            });
        }
    }
    Ok(out)
}

/// Network sizes and SNRs of the final grid for a preset.
pub fn grid_axes(cfg: &ExperimentConfig) -> (Vec<Option<f64>>, Vec<usize>) {
    let nodes = if cfg.eval_nodes.is_empty() {
        vec![cfg.training.nodes]
    } else {
        cfg.eval_nodes.clone()
    };
    match cfg.preset {
        Preset::SnrSweep => (SNR_SWEEP_DB.iter().map(|&s| Some(s)).collect(), nodes),
        Preset::NtestSweep => (
            cfg.eval_snr_db[..1].to_vec(),
            (1..=NTEST_SWEEP_MAX).collect(),
        ),
        Preset::Standard | Preset::Equivalence => (cfg.eval_snr_db.clone(), nodes),
    }
}

pub fn write_grid_csv(path: &Path, grid: &[EvalPoint]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "architecture,snr_db,n_test,accuracy")?;
    for p in grid {
        let snr = p
            .snr_db
            .map_or_else(|| "none".to_string(), |s| s.to_string());
        writeln!(w, "{},{},{},{}", p.architecture, snr, p.n_test, p.accuracy)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Runs one experiment and writes `metrics.csv`, `result.json` and
/// `checkpoint.bin` (plus `sweep.csv` for sweeps) into `out_dir`.
///
/// The equivalence preset writes `equivalence.csv` and `result.json` only.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentResult> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.txt"), cfg.to_text())?;
    let dataset = load_dataset(cfg)?;
    if cfg.preset == Preset::Equivalence {
        return run_equivalence_preset(cfg, &dataset, out_dir);
    }
    let calibration = match cfg.data {
        DataSource::Synthetic(_) => Some(calibrate(
            &dataset,
            CALIBRATION_TRAIN,
            CALIBRATION_ITERATIONS,
        )?),
        DataSource::Flat { .. } => None,
    };
    let mut training = cfg.training.clone();
    if cfg.preset == Preset::NtestSweep {
        training.encoder_sharing = true;
    }
    let mut metrics = MetricsWriter::create(&out_dir.join("metrics.csv"))?;
    let mut last_val = None;
    let state = train_with(training, &dataset, |_, record| {
        if record.val_accuracy.is_some() {
            last_val = record.val_accuracy;
        }
        metrics.push(record)
    })?;
    save_checkpoint(&state, &out_dir.join("checkpoint.bin"))?;
    let (snrs, n_tests) = grid_axes(cfg);
    let grid = evaluate_grid(&state, &dataset, &snrs, &n_tests, cfg.eval_samples)?;
    if matches!(cfg.preset, Preset::SnrSweep | Preset::NtestSweep) {
        write_grid_csv(&out_dir.join("sweep.csv"), &grid)?;
    }
    let result = ExperimentResult {
        preset: cfg.preset.to_string(),
        seed: cfg.training.seed,
        rounds: state.round,
        final_val_accuracy: last_val,
        cloud_parameters: state.cloud.param_count(),
        calibration,
        grid,
        equivalence: Vec::new(),
    };
    write_json(&out_dir.join("result.json"), &result)?;
    Ok(result)
}

fn run_equivalence_preset(
    cfg: &ExperimentConfig,
    dataset: &GridDataset,
    out_dir: &Path,
) -> Result<ExperimentResult> {
    let mut reports = Vec::with_capacity(2);
    for sharing in [false, true] {
        let mut training = cfg.training.clone();
        training.encoder_sharing = sharing;
        training.downlink_noise = false;
        training.async_mode = false;
        if training.optimizer != crate::nn::OptimizerKind::Sgd {
            return Err(Error::Config(
                "the equivalence preset needs optimizer = sgd".into(),
            ));
        }
        reports.push(run_equivalence(training, dataset)?);
    }
    let mut w = BufWriter::new(File::create(out_dir.join("equivalence.csv"))?);
    writeln!(w, "round,max_rel_dev_independent,max_rel_dev_shared")?;
    for (k, (a, b)) in reports[0]
        .per_round
        .iter()
        .zip(&reports[1].per_round)
        .enumerate()
    {
        writeln!(w, "{},{},{}", k + 1, a, b)?;
    }
    w.flush()?;
    let result = ExperimentResult {
        preset: cfg.preset.to_string(),
        seed: cfg.training.seed,
        rounds: cfg.training.rounds,
        final_val_accuracy: None,
        cloud_parameters: cfg.training.build_cloud(dataset.classes())?.param_count(),
        calibration: None,
        grid: Vec::new(),
        equivalence: reports,
    };
    write_json(&out_dir.join("result.json"), &result)?;
    Ok(result)
}
