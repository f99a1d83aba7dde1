//! Communication-round orchestration: cooperative inference, the five-phase
//! training round, and a centralized reference trainer.

mod config;
mod inference;
mod oracle;
mod round;
mod schedule;
mod train;

pub use config::{Architecture, Fading, PathlossRange, TrainingConfig, BUDGET_TOLERANCE};
pub use inference::{evaluate, run_inference, EvalOptions, EvalResult};
pub use oracle::{centralized_oracle_round, max_state_deviation};
pub use round::{
    draw_channel, draw_round, run_training_round, FronthaulLink, LinkDraw, Phase, PhaseMark,
    RoundDraws, RoundRecord,
};
pub use schedule::{drop_probability, sample_active_sets, schedule_minibatches, ActiveSets};
pub use train::{train, train_with};

use serde::{Deserialize, Serialize};

use crate::cloud::CloudNet;
use crate::edge::{EdgeNode, LocalObservation};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn key(self) -> u64 {
        match self {
            Self::Train => 0,
            Self::Validation => 1,
            Self::Test => 2,
        }
    }
}

/// Source of labelled samples, each observable from any number of nodes.
pub trait Dataset {
    fn len(&self, split: Split) -> usize;

    fn label(&self, split: Split, index: usize) -> usize;

    fn classes(&self) -> usize;

    fn observation_len(&self) -> usize;

    /// Node `node`'s view of sample `index`. Equal `draw` keys give equal views.
    fn observe(&self, split: Split, index: usize, node: usize, draw: u64) -> LocalObservation;
}

/// Parameters of every node and of the cloud after `round` rounds.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub config: TrainingConfig,
    pub nodes: Vec<EdgeNode>,
    pub cloud: CloudNet,
    pub round: usize,
    pub observation_len: usize,
    pub classes: usize,
}

impl TrainingState {
    pub fn new(config: TrainingConfig, observation_len: usize, classes: usize) -> Result<Self> {
        config.validate()?;
        let nodes = config.build_nodes(observation_len, config.nodes)?;
        let cloud = config.build_cloud(classes)?;
        Ok(Self {
            config,
            nodes,
            cloud,
            round: 0,
            observation_len,
            classes,
        })
    }

    pub fn edge_norm(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| n.params().iter_values().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Nodes serving a network of `count` nodes. With shared encoders any
    /// count works; otherwise only the first `count` trained nodes exist.
    pub fn nodes_for(&self, count: usize) -> Result<Vec<EdgeNode>> {
        self.cloud.check_nodes(count)?;
        if count <= self.nodes.len() {
            return Ok(self.nodes[..count].to_vec());
        }
        if !self.config.encoder_sharing {
            return Err(crate::Error::NodeCount {
                expected: self.nodes.len(),
                got: count,
            });
        }
        let template = &self.nodes[0];
        Ok((0..count)
            .map(|i| {
                let mut node = template.clone();
                node.id = i;
                node
            })
            .collect())
    }
}
