//! Centralized reference trainer.
//!
//! Builds the whole network (encoders, channels as fixed affine maps,
//! cloud) as one graph per sample and applies ordinary end-to-end SGD. It
//! shares the random draws of the decentralized round but none of its
//! message passing, power scaling, staging or averaging.

use super::round::draw_round;
use super::{Dataset, Split, TrainingState};
use crate::channel::unpack;
use crate::error::{Error, Result};
use crate::nn::{sgd_step, softmax_cross_entropy, OptimizerKind, Params};

/// One centralized SGD step on the round-`k` draws of `batch`.
///
/// Encoder parameters move with `lr`, or with `lr / N` on the single shared
/// encoder when encoders are shared. Requires plain SGD and synchronous
/// rounds; downlink noise is ignored since gradients are exact here.
pub fn centralized_oracle_round<D: Dataset + ?Sized>(
    state: &mut TrainingState,
    dataset: &D,
    batch: &[usize],
    k: usize,
) -> Result<()> {
    let config = state.config.clone();
    if config.optimizer != OptimizerKind::Sgd {
        return Err(Error::Config(
            "the centralized oracle supports plain SGD only".into(),
        ));
    }
    if config.async_mode {
        return Err(Error::Config(
            "the centralized oracle runs synchronous rounds only".into(),
        ));
    }
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = state.nodes.len();
    let draws = draw_round(&config, k, batch.len())?;
    let mut cloud_grads = state.cloud.zero_grads();
    let mut enc_grads: Vec<Params> = state
        .nodes
        .iter()
        .map(|nd| Params::zeros_like(nd.params()))
        .collect();

    for (b, &idx) in batch.iter().enumerate() {
        let mut caches = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        let mut gains = Vec::with_capacity(n);
        for (i, node) in state.nodes.iter().enumerate() {
            let link = draws.link(b, i)?;
            let obs = dataset.observe(Split::Train, idx, i, draws.crop_draw);
            let side = match node.spec().cqi {
                Some(t) => t.apply(&link.channel.magnitude()),
                None => Vec::new(),
            };
            let (s, cache) = node.encoder().forward_with_side(&obs.values, &side)?;
            let gain = link.channel.effective_diag();
            let noise = unpack(&link.uplink_noise);
            let y: Vec<f64> = s
                .iter()
                .zip(&gain)
                .zip(&noise)
                .map(|((sj, hj), nj)| hj * sj + nj)
                .collect();
            caches.push(cache);
            ys.push(y);
            gains.push(gain);
        }
        let inputs: Vec<(usize, &[f64])> = ys.iter().map(Vec::as_slice).enumerate().collect();
        let (x, cloud_cache) = state.cloud.infer(&inputs, n)?;
        let (_, grad_x) = softmax_cross_entropy(&x, dataset.label(Split::Train, idx))?;
        let grad_y = state
            .cloud
            .backward_sample(&cloud_cache, &grad_x, &mut cloud_grads)?;
        for (i, node) in state.nodes.iter().enumerate() {
            let grad_s: Vec<f64> = grad_y[i]
                .iter()
                .zip(&gains[i])
                .map(|(g, h)| g * h)
                .collect();
            node.encoder()
                .backward_accumulate(&caches[i], &grad_s, &mut enc_grads[i])?;
        }
    }

    let scale = 1.0 / batch.len() as f64;
    state.cloud.update(&cloud_grads, config.lr, batch.len())?;
    if config.encoder_sharing {
        let mut total = Params::zeros_like(state.nodes[0].params());
        for g in &enc_grads {
            total.axpy(1.0, g)?;
        }
        total.scale(scale);
        let mut shared = state.nodes[0].params().clone();
        sgd_step(&mut shared, &total, config.shared_lr())?;
        for node in &mut state.nodes {
            node.set_params(shared.clone())?;
        }
    } else {
        for (node, g) in state.nodes.iter_mut().zip(enc_grads.iter_mut()) {
            g.scale(scale);
            let mut p = node.params().clone();
            sgd_step(&mut p, g, config.lr)?;
            node.set_params(p)?;
        }
    }
    state.round = k;
    Ok(())
}

/// Largest relative deviation over every parameter of two states.
pub fn max_state_deviation(a: &TrainingState, b: &TrainingState, floor: f64) -> Result<f64> {
    if a.nodes.len() != b.nodes.len() {
        return Err(Error::NodeCount {
            expected: a.nodes.len(),
            got: b.nodes.len(),
        });
    }
    let mut worst = 0.0f64;
    for (na, nb) in a.nodes.iter().zip(&b.nodes) {
        worst = worst.max(na.params().max_relative_deviation(nb.params(), floor)?);
    }
    let (ca, cb) = (a.cloud.params(), b.cloud.params());
    if ca.len() != cb.len() {
        return Err(Error::ShapeMismatch("cloud stack count".into()));
    }
    for (pa, pb) in ca.iter().zip(&cb) {
        worst = worst.max(pa.max_relative_deviation(pb, floor)?);
    }
    Ok(worst)
}
