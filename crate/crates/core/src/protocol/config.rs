use serde::{Deserialize, Serialize};

use crate::cloud::{solve_hidden_width, BaselineModel, CloudModel, CloudNet, CloudSpec};
use crate::edge::{CqiTransform, EdgeNode, EncoderSpec};
use crate::error::{Error, Result};
use crate::nn::{OptimizerKind, PowerMode};
use crate::rng::{derive_seed, Purpose};

/// Relative tolerance when matching baseline parameter budgets.
pub const BUDGET_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fading {
    /// i.i.d. `CN(0, 1)` coefficients (scaled by pathloss when enabled).
    Rayleigh,
    /// Unit magnitude, uniformly random phase.
    Unit,
}

impl std::str::FromStr for Fading {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rayleigh" => Ok(Self::Rayleigh),
            "unit" => Ok(Self::Unit),
            other => Err(Error::Config(format!("unknown fading model '{other}'"))),
        }
    }
}

impl std::fmt::Display for Fading {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Rayleigh => "rayleigh",
            Self::Unit => "unit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    Proposed,
    SumAgg,
    CatNet,
    MhNet,
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Self::Proposed),
            "sumagg" => Ok(Self::SumAgg),
            "catnet" => Ok(Self::CatNet),
            "mhnet" => Ok(Self::MhNet),
            other => Err(Error::Config(format!("unknown architecture '{other}'"))),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Proposed => "proposed",
            Self::SumAgg => "sumagg",
            Self::CatNet => "catnet",
            Self::MhNet => "mhnet",
        })
    }
}

/// Node-to-cloud distances drawn uniformly from `[d_min, d_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathlossRange {
    pub d_min: f64,
    pub d_max: f64,
    pub exponent: f64,
}

impl Default for PathlossRange {
    fn default() -> Self {
        Self {
            d_min: 10.0,
            d_max: 50.0,
            exponent: 2.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub nodes: usize,
    pub rounds: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub message_len: usize,
    pub encoder_hidden: Vec<usize>,
    pub architecture: Architecture,
    pub branches: usize,
    pub latent: usize,
    pub cloud_hidden: usize,
    pub snr_up_db: (f64, f64),
    pub snr_dn_db: (f64, f64),
    pub uplink_noise: bool,
    pub downlink_noise: bool,
    /// One SNR pair per round instead of per sample.
    pub snr_per_round: bool,
    pub fading: Fading,
    pub power_mode: PowerMode,
    pub edge_power: f64,
    pub cloud_power: f64,
    pub async_mode: bool,
    pub encoder_sharing: bool,
    pub cqie: bool,
    pub pathloss: Option<PathlossRange>,
    pub eval_every: usize,
    /// Validation SNR; `None` evaluates over noiseless fading links.
    pub val_snr_db: Option<f64>,
    pub record_timing: bool,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            nodes: 3,
            rounds: 400,
            batch: 64,
            lr: 0.05,
            optimizer: OptimizerKind::Sgd,
            message_len: 8,
            encoder_hidden: vec![32],
            architecture: Architecture::Proposed,
            branches: 5,
            latent: 32,
            cloud_hidden: 32,
            snr_up_db: (0.0, 30.0),
            snr_dn_db: (0.0, 30.0),
            uplink_noise: true,
            downlink_noise: true,
            snr_per_round: false,
            fading: Fading::Rayleigh,
            power_mode: PowerMode::PerBlock,
            edge_power: 1.0,
            cloud_power: 1.0,
            async_mode: false,
            encoder_sharing: false,
            cqie: false,
            pathloss: None,
            eval_every: 10,
            val_snr_db: Some(20.0),
            record_timing: false,
            seed: 0,
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.nodes >= 1, || "nodes must be at least 1".into())?;
        check(self.batch >= 1, || "batch must be at least 1".into())?;
        check(
            self.message_len >= 2 && self.message_len.is_multiple_of(2),
            || {
                format!(
                    "message_len must be even and positive, got {}",
                    self.message_len
                )
            },
        )?;
        check(self.lr.is_finite() && self.lr >= 0.0, || {
            format!("lr must be finite and non-negative, got {}", self.lr)
        })?;
        for (name, (lo, hi)) in [("snr_up_db", self.snr_up_db), ("snr_dn_db", self.snr_dn_db)] {
            check(lo.is_finite() && hi.is_finite() && lo <= hi, || {
                format!("{name} range [{lo}, {hi}] is not well ordered")
            })?;
        }
        check(self.edge_power > 0.0 && self.cloud_power > 0.0, || {
            "power budgets must be positive".into()
        })?;
        check(self.eval_every >= 1, || {
            "eval_every must be at least 1".into()
        })?;
        check(
            self.branches >= 1 && self.latent >= 1 && self.cloud_hidden >= 1,
            || "cloud dimensions must be positive".into(),
        )?;
        check(self.encoder_hidden.iter().all(|&h| h > 0), || {
            "encoder hidden widths must be positive".into()
        })?;
        if let Some(p) = self.pathloss {
            check(
                p.d_min > 0.0 && p.d_min <= p.d_max && p.exponent >= 0.0,
                || format!("invalid pathloss range {:?}", p),
            )?;
            check(self.fading == Fading::Rayleigh, || {
                "pathloss requires rayleigh fading".into()
            })?;
        }
        Ok(())
    }

    /// Learning rate of the centralized shared-encoder update equivalent to
    /// FedAvg over `nodes` local steps.
    pub fn shared_lr(&self) -> f64 {
        self.lr / self.nodes as f64
    }

    pub fn cqi_transform(&self) -> Option<CqiTransform> {
        match (self.cqie, self.pathloss) {
            (false, _) => None,
            (true, None) => Some(CqiTransform::Raw),
            (true, Some(_)) => Some(CqiTransform::Log10),
        }
    }

    pub fn encoder_spec(&self, observation_len: usize) -> EncoderSpec {
        EncoderSpec {
            observation_len,
            hidden: self.encoder_hidden.clone(),
            message_len: self.message_len,
            power_mode: self.power_mode,
            power_budget: self.edge_power,
            cqi: self.cqi_transform(),
        }
    }

    pub fn cloud_spec(&self, classes: usize) -> CloudSpec {
        CloudSpec {
            message_len: self.message_len,
            latent: self.latent,
            classes,
            branches: self.branches,
            hidden: self.cloud_hidden,
        }
    }

    /// Edge nodes with independent initializations, or one shared
    /// initialization when encoders are shared.
    pub fn build_nodes(&self, observation_len: usize, count: usize) -> Result<Vec<EdgeNode>> {
        let spec = self.encoder_spec(observation_len);
        (0..count)
            .map(|i| {
                let key = if self.encoder_sharing { 0 } else { i as u64 };
                let seed = derive_seed(self.seed, Purpose::EncoderInit, &[key]);
                EdgeNode::new(i, spec.clone(), seed, self.optimizer)
            })
            .collect()
    }

    /// The cloud network; baselines get hidden widths solved to match the
    /// parameter count of the proposed model.
    pub fn build_cloud(&self, classes: usize) -> Result<CloudNet> {
        let spec = self.cloud_spec(classes);
        let seed_for = |m: usize| derive_seed(self.seed, Purpose::CloudInit, &[m as u64]);
        let budget = spec.param_count();
        let s = self.message_len;
        Ok(match self.architecture {
            Architecture::Proposed => {
                CloudNet::Proposed(CloudModel::new(spec, self.optimizer, seed_for)?)
            }
            Architecture::SumAgg => CloudNet::Baseline(BaselineModel::sum_agg(s, classes)?),
            Architecture::CatNet => {
                let h = solve_hidden_width(budget, self.nodes * s, classes, 1, BUDGET_TOLERANCE)?;
                CloudNet::Baseline(BaselineModel::catnet(
                    self.nodes,
                    s,
                    h,
                    classes,
                    self.optimizer,
                    seed_for(0),
                )?)
            }
            Architecture::MhNet => {
                let h = solve_hidden_width(budget, s, classes, self.nodes, BUDGET_TOLERANCE)?;
                CloudNet::Baseline(BaselineModel::mhnet(
                    self.nodes,
                    s,
                    h,
                    classes,
                    self.optimizer,
                    seed_for,
                )?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        TrainingConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_odd_message_and_reversed_snr() {
        let mut c = TrainingConfig {
            message_len: 7,
            ..TrainingConfig::default()
        };
        assert!(c.validate().is_err());
        c.message_len = 8;
        c.snr_up_db = (10.0, 0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn baselines_match_budget() {
        for arch in [Architecture::CatNet, Architecture::MhNet] {
            let c = TrainingConfig {
                architecture: arch,
                nodes: 6,
                ..TrainingConfig::default()
            };
            let target = c.cloud_spec(4).param_count() as f64;
            let got = c.build_cloud(4).unwrap().param_count() as f64;
            assert!(
                (got - target).abs() / target <= BUDGET_TOLERANCE,
                "{arch}: {got} vs {target}"
            );
        }
    }
}
