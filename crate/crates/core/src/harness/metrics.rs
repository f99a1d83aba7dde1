use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::protocol::RoundRecord;

pub const METRICS_COLUMNS: [&str; 9] = [
    "round",
    "phase_time_ms",
    "train_loss",
    "val_accuracy",
    "snr_up_db_mean",
    "snr_dn_db_mean",
    "mean_active_ens",
    "param_norm_cloud",
    "param_norm_edges",
];

/// Per-round metrics aggregated between validation rounds. A row is written
/// (and flushed) at every round that carries a validation accuracy.
pub struct MetricsWriter<W: Write> {
    out: W,
    rounds: usize,
    time_ms: f64,
    loss: f64,
    snr_up: (f64, usize),
    snr_dn: (f64, usize),
    active: f64,
}

impl MetricsWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{}", METRICS_COLUMNS.join(","))?;
        out.flush()?;
        Ok(Self {
            out,
            rounds: 0,
            time_ms: 0.0,
            loss: 0.0,
            snr_up: (0.0, 0),
            snr_dn: (0.0, 0),
            active: 0.0,
        })
    }

    pub fn push(&mut self, record: &RoundRecord) -> Result<()> {
        self.rounds += 1;
        self.time_ms += record.phase_time_ms;
        self.loss += record.train_loss;
        self.snr_up.0 += record.snr_up_db.iter().sum::<f64>();
        self.snr_up.1 += record.snr_up_db.len();
        self.snr_dn.0 += record.snr_dn_db.iter().sum::<f64>();
        self.snr_dn.1 += record.snr_dn_db.len();
        self.active += record.mean_active();
        let Some(acc) = record.val_accuracy else {
            return Ok(());
        };
        let n = self.rounds as f64;
        let mean = |(sum, count): (f64, usize)| if count == 0 { 0.0 } else { sum / count as f64 };
        writeln!(
            self.out,
            "{},{},{},{},{},{},{},{},{}",
            record.round,
            self.time_ms,
            self.loss / n,
            acc,
            mean(self.snr_up),
            mean(self.snr_dn),
            self.active / n,
            record.param_norm_cloud,
            record.param_norm_edges
        )?;
        self.out.flush()?;
        self.rounds = 0;
        self.time_ms = 0.0;
        self.loss = 0.0;
        self.snr_up = (0.0, 0);
        self.snr_dn = (0.0, 0);
        self.active = 0.0;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
