use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use super::config::{Fading, TrainingConfig};
use super::schedule::{sample_active_sets, ActiveSets};
use super::{Dataset, Split, TrainingState};
use crate::channel::{
    complex_noise, compute_alpha, downlink_decode, downlink_transmit_with_noise, sample_channel,
    sample_unit_channel, snr_to_noise_var, uplink_transmit_with_noise, ChannelRealization,
    FronthaulSignal, Pathloss,
};
use crate::cloud::fedavg;
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, ForwardCache};
use crate::rng::{derive_seed, stream, Purpose};

/// Random quantities of one (sample, node) link in one round.
#[derive(Debug, Clone)]
pub struct LinkDraw {
    pub channel: ChannelRealization,
    pub uplink_noise: Vec<Complex64>,
    pub downlink_noise: Vec<Complex64>,
}

/// Everything random about a round, derived from the master seed alone.
#[derive(Debug, Clone)]
pub struct RoundDraws {
    pub active: ActiveSets,
    pub snr_up_db: Vec<f64>,
    pub snr_dn_db: Vec<f64>,
    /// `links[b][i]`, present only for active pairs.
    pub links: Vec<Vec<Option<LinkDraw>>>,
    /// Key separating this round's observation crops from other rounds'.
    pub crop_draw: u64,
}

impl RoundDraws {
    pub fn link(&self, b: usize, i: usize) -> Result<&LinkDraw> {
        self.links[b][i].as_ref().ok_or(Error::Config(format!(
            "node {i} is inactive for sample {b}"
        )))
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Channel realization for one link, pathloss distance included.
pub fn draw_channel<R: Rng + ?Sized>(
    config: &TrainingConfig,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let blocks = config.message_len / 2;
    match config.fading {
        Fading::Unit => Ok(sample_unit_channel(rng, blocks)),
        Fading::Rayleigh => {
            let pathloss = config.pathloss.map(|p| Pathloss {
                distance: uniform(rng, (p.d_min, p.d_max)),
                exponent: p.exponent,
            });
            sample_channel(rng, blocks, pathloss)
        }
    }
}

pub fn draw_round(config: &TrainingConfig, k: usize, batch_len: usize) -> Result<RoundDraws> {
    let seed = config.seed;
    let k64 = k as u64;
    let n = config.nodes;
    let active = if config.async_mode {
        sample_active_sets(&mut stream(seed, Purpose::ActiveSet, &[k64]), n, batch_len)
    } else {
        ActiveSets::all_active(n, batch_len)
    };
    let mut snr_up_db = Vec::with_capacity(batch_len);
    let mut snr_dn_db = Vec::with_capacity(batch_len);
    let mut links = Vec::with_capacity(batch_len);
    for b in 0..batch_len {
        let mut snr_rng = if config.snr_per_round {
            stream(seed, Purpose::Snr, &[k64])
        } else {
            stream(seed, Purpose::Snr, &[k64, b as u64])
        };
        let up = uniform(&mut snr_rng, config.snr_up_db);
        let dn = uniform(&mut snr_rng, config.snr_dn_db);
        let up_var = if config.uplink_noise {
            snr_to_noise_var(up)
        } else {
            0.0
        };
        let dn_var = if config.downlink_noise {
            snr_to_noise_var(dn)
        } else {
            0.0
        };
        snr_up_db.push(up);
        snr_dn_db.push(dn);
        let row = (0..n)
            .map(|i| {
                if !active.is_active(b, i) {
                    return Ok(None);
                }
                let key = [k64, b as u64, i as u64];
                let channel = draw_channel(config, &mut stream(seed, Purpose::Channel, &key))?
                    .with_noise(up_var, dn_var);
                let blocks = channel.blocks();
                Ok(Some(LinkDraw {
                    uplink_noise: complex_noise(
                        &mut stream(seed, Purpose::UplinkNoise, &key),
                        blocks,
                        up_var,
                    ),
                    downlink_noise: complex_noise(
                        &mut stream(seed, Purpose::DownlinkNoise, &key),
                        blocks,
                        dn_var,
                    ),
                    channel,
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        links.push(row);
    }
    Ok(RoundDraws {
        active,
        snr_up_db,
        snr_dn_db,
        links,
        crop_draw: derive_seed(seed, Purpose::Crop, &[k64]),
    })
}

/// Fronthaul wrapper counting every real value that crosses the
/// node/cloud boundary.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FronthaulLink {
    up: usize,
    down: usize,
}

impl FronthaulLink {
    pub fn uplink(
        &mut self,
        s: &FronthaulSignal,
        ch: &ChannelRealization,
        noise: &[Complex64],
    ) -> Result<FronthaulSignal> {
        let y = uplink_transmit_with_noise(s, ch, noise)?;
        self.up += s.len();
        Ok(y)
    }

    pub fn downlink(
        &mut self,
        m: &[Complex64],
        ch: &ChannelRealization,
        alpha: f64,
        noise: &[Complex64],
    ) -> Result<Vec<Complex64>> {
        let y = downlink_transmit_with_noise(m, ch, alpha, noise)?;
        self.down += 2 * m.len();
        Ok(y)
    }

    pub fn uplink_values(&self) -> usize {
        self.up
    }

    pub fn downlink_values(&self) -> usize {
        self.down
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    EdgeForward,
    Uplink,
    CloudBackprop,
    Downlink,
    EdgeBackprop,
    Commit,
}

/// Parameter norms observed at the end of a phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseMark {
    pub phase: Phase,
    pub cloud_norm: f64,
    pub edge_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub batch: Vec<usize>,
    /// Dataset indices each node was active for.
    pub node_batches: Vec<Vec<usize>>,
    /// Active nodes per batch position.
    pub active_sets: Vec<Vec<usize>>,
    pub redraws: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub snr_up_db: Vec<f64>,
    pub snr_dn_db: Vec<f64>,
    pub param_norm_cloud: f64,
    pub param_norm_edges: f64,
    pub uplink_values: usize,
    pub downlink_values: usize,
    pub trace: Vec<PhaseMark>,
    pub phase_time_ms: f64,
}

impl RoundRecord {
    pub fn mean_active(&self) -> f64 {
        if self.active_sets.is_empty() {
            return 0.0;
        }
        self.active_sets.iter().map(Vec::len).sum::<usize>() as f64 / self.active_sets.len() as f64
    }
}

/// One communication round on mini-batch `batch` (dataset indices into the
/// training split). Updates are staged and committed together at the end,
/// so an error leaves `state` untouched.
pub fn run_training_round<D: Dataset + ?Sized>(
    state: &mut TrainingState,
    dataset: &D,
    batch: &[usize],
    k: usize,
) -> Result<RoundRecord> {
    let start = Instant::now();
    let config = &state.config;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = state.nodes.len();
    let draws = draw_round(config, k, batch.len())?;
    let mut link = FronthaulLink::default();
    let mut trace = Vec::with_capacity(6);
    let mark = |phase, state: &TrainingState| PhaseMark {
        phase,
        cloud_norm: state.cloud.l2_norm(),
        edge_norm: state.edge_norm(),
    };

    // Edge forward pass: each node encodes its own crop of each sample.
    let mut encoded: Vec<Vec<Option<(FronthaulSignal, ForwardCache)>>> =
        vec![vec![None; n]; batch.len()];
    for (i, node) in state.nodes.iter().enumerate() {
        for &b in &draws.active.per_node[i] {
            let obs = dataset.observe(Split::Train, batch[b], i, draws.crop_draw);
            let ch = &draws.link(b, i)?.channel;
            let cqi = node.uses_cqi().then(|| ch.magnitude());
            encoded[b][i] = Some(node.encode(&obs, cqi.as_deref())?);
        }
    }
    trace.push(mark(Phase::EdgeForward, state));

    // Uplink coordination.
    let mut received: Vec<Vec<(usize, Vec<f64>)>> = Vec::with_capacity(batch.len());
    for (b, row) in encoded.iter().enumerate() {
        let mut sample = Vec::with_capacity(n);
        for (i, slot) in row.iter().enumerate() {
            if let Some((s, _)) = slot {
                let d = draws.link(b, i)?;
                sample.push((i, link.uplink(s, &d.channel, &d.uplink_noise)?.into_real()));
            }
        }
        received.push(sample);
    }
    trace.push(mark(Phase::Uplink, state));

    // Cloud backpropagation: gradients for the cloud and a message per
    // active node, all from the pre-round parameters.
    let mut cloud_grads = state.cloud.zero_grads();
    let mut messages: Vec<Vec<(usize, Vec<f64>)>> = Vec::with_capacity(batch.len());
    let mut loss_sum = 0.0;
    for (b, sample) in received.iter().enumerate() {
        let inputs: Vec<(usize, &[f64])> = sample.iter().map(|(i, y)| (*i, y.as_slice())).collect();
        let (x, cache) = state.cloud.infer(&inputs, n)?;
        let label = dataset.label(Split::Train, batch[b]);
        let (loss, grad_x) = softmax_cross_entropy(&x, label)?;
        loss_sum += loss;
        let m = state
            .cloud
            .backward_sample(&cache, &grad_x, &mut cloud_grads)?;
        messages.push(sample.iter().map(|(i, _)| *i).zip(m).collect());
    }
    let mut staged_cloud = state.cloud.clone();
    staged_cloud.update(&cloud_grads, config.lr, batch.len())?;
    trace.push(mark(Phase::CloudBackprop, state));

    // Downlink coordination: the cloud scales each message to its power
    // budget without channel knowledge; each node undoes phase and scaling.
    let mut decoded: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; n]; batch.len()];
    for (b, sample) in messages.iter().enumerate() {
        let packed = sample
            .iter()
            .map(|(_, m)| crate::channel::pack(m))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[Complex64]> = packed.iter().map(Vec::as_slice).collect();
        for (j, (i, _)) in sample.iter().enumerate() {
            let alpha = compute_alpha(&refs, config.cloud_power, config.power_mode, j)?;
            let d = draws.link(b, *i)?;
            let y = link.downlink(&packed[j], &d.channel, alpha, &d.downlink_noise)?;
            decoded[b][*i] = Some(downlink_decode(&y, &d.channel.phase(), alpha)?.into_real());
        }
    }
    trace.push(mark(Phase::Downlink, state));

    // Edge backpropagation on staged copies.
    let mut staged_nodes = state.nodes.clone();
    let mut candidates = Vec::new();
    for (i, node) in staged_nodes.iter_mut().enumerate() {
        let local: Vec<(&ForwardCache, &[f64])> = draws.active.per_node[i]
            .iter()
            .map(|&b| {
                let cache = &encoded[b][i].as_ref().expect("active pair was encoded").1;
                let d = decoded[b][i].as_deref().expect("active pair was decoded");
                (cache, d)
            })
            .collect();
        if config.encoder_sharing {
            let shared = node.params().clone();
            candidates.push(node.local_update_shared(&shared, &local, config.lr)?);
        } else if config.async_mode {
            node.local_update_async(&local, config.lr)?;
        } else {
            node.local_update_wireless(&local, config.lr)?;
        }
    }
    if config.encoder_sharing {
        let avg = fedavg(&candidates)?;
        for node in &mut staged_nodes {
            node.set_params(avg.clone())?;
        }
    }
    trace.push(mark(Phase::EdgeBackprop, state));

    state.cloud = staged_cloud;
    state.nodes = staged_nodes;
    state.round = k;
    trace.push(mark(Phase::Commit, state));

    let node_batches = draws
        .active
        .per_node
        .iter()
        .map(|positions| positions.iter().map(|&b| batch[b]).collect())
        .collect();
    Ok(RoundRecord {
        round: k,
        batch: batch.to_vec(),
        node_batches,
        active_sets: draws.active.per_sample.clone(),
        redraws: draws.active.redraws,
        train_loss: loss_sum / batch.len() as f64,
        val_accuracy: None,
        snr_up_db: draws.snr_up_db,
        snr_dn_db: draws.snr_dn_db,
        param_norm_cloud: state.cloud.l2_norm(),
        param_norm_edges: state.edge_norm(),
        uplink_values: link.uplink_values(),
        downlink_values: link.downlink_values(),
        trace,
        phase_time_ms: if state.config.record_timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        },
    })
}
