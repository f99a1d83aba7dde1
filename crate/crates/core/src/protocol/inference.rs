use rand::Rng;
use serde::Serialize;

use super::round::draw_channel;
use super::{Dataset, Split, TrainingState};
use crate::channel::{snr_to_noise_var, uplink_transmit, ChannelRealization};
use crate::cloud::CloudNet;
use crate::edge::{EdgeNode, LocalObservation};
use crate::error::{Error, Result};
use crate::nn::argmax;
use crate::rng::{derive_seed, stream, Purpose};

/// Cooperative inference for one sample: every node encodes its observation,
/// transmits over its own channel, and the cloud fuses what arrives. Uplink
/// noise is drawn from `rng` in node order.
pub fn run_inference<R: Rng + ?Sized>(
    nodes: &[EdgeNode],
    cloud: &CloudNet,
    channels: &[ChannelRealization],
    observations: &[LocalObservation],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if nodes.len() != channels.len() || nodes.len() != observations.len() {
        return Err(Error::Dimension {
            context: "inference nodes/channels/observations",
            expected: nodes.len(),
            got: channels.len().min(observations.len()),
        });
    }
    let mut received = Vec::with_capacity(nodes.len());
    for ((node, ch), obs) in nodes.iter().zip(channels).zip(observations) {
        let cqi = node.uses_cqi().then(|| ch.magnitude());
        let (s, _) = node.encode(obs, cqi.as_deref())?;
        received.push(uplink_transmit(&s, ch, rng)?.into_real());
    }
    let inputs: Vec<(usize, &[f64])> = received.iter().map(Vec::as_slice).enumerate().collect();
    let (x, _) = cloud.infer(&inputs, nodes.len())?;
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub split: Split,
    pub nodes: usize,
    /// Uplink SNR; `None` means noiseless links.
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub max_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub samples: usize,
}

/// Accuracy over a split. Channels, noise and crops are keyed by sample and
/// node, so two models are always compared on identical links and views.
pub fn evaluate<D: Dataset + ?Sized>(
    state: &TrainingState,
    dataset: &D,
    opts: &EvalOptions,
) -> Result<EvalResult> {
    let nodes = state.nodes_for(opts.nodes)?;
    let total = dataset.len(opts.split);
    let count = opts.max_samples.map_or(total, |m| m.min(total));
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    let var = opts.snr_db.map_or(0.0, snr_to_noise_var);
    let split = opts.split.key();
    let crop_draw = derive_seed(opts.seed, Purpose::Eval, &[split]);
    let mut correct = 0usize;
    let mut loss = 0.0;
    for idx in 0..count {
        let channels = (0..nodes.len())
            .map(|i| {
                let mut rng = stream(opts.seed, Purpose::Eval, &[split, idx as u64, i as u64]);
                Ok(draw_channel(&state.config, &mut rng)?.with_noise(var, 0.0))
            })
            .collect::<Result<Vec<_>>>()?;
        let observations: Vec<LocalObservation> = (0..nodes.len())
            .map(|i| dataset.observe(opts.split, idx, i, crop_draw))
            .collect();
        let mut noise = stream(
            opts.seed,
            Purpose::UplinkNoise,
            &[u64::MAX, split, idx as u64],
        );
        let x = run_inference(&nodes, &state.cloud, &channels, &observations, &mut noise)?;
        let label = dataset.label(opts.split, idx);
        if argmax(&x) == label {
            correct += 1;
        }
        loss += crate::nn::softmax_cross_entropy(&x, label)?.0;
    }
    Ok(EvalResult {
        accuracy: correct as f64 / count as f64,
        mean_loss: loss / count as f64,
        samples: count,
    })
}
