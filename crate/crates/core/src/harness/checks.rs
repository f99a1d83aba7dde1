//! Numerical self-checks: finite-difference gradient checks and agreement
//! of decentralized training with the centralized reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{DataSource, ExperimentConfig, Preset};
use super::dataset::{GridDataset, SyntheticSpec};
use crate::channel::{compute_alpha, downlink_decode, downlink_transmit, pack, sample_channel};
use crate::cloud::{BaselineModel, CloudModel, CloudNet, CloudSpec};
use crate::edge::{CqiTransform, EncoderSpec};
use crate::error::Result;
use crate::nn::{softmax_cross_entropy, Layer, LayerStack, OptimizerKind, Params, PowerMode};
use crate::protocol::{
    centralized_oracle_round, max_state_deviation, run_training_round, schedule_minibatches,
    Dataset, Fading, Split, TrainingConfig, TrainingState,
};

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-10;
/// Denominator floor of the entrywise relative error in gradient checks.
pub const GRADCHECK_FLOOR: f64 = 1e-5;
/// Denominator floor of the entrywise relative deviation between states.
pub const DEVIATION_FLOOR: f64 = 1e-6;

const STEP: f64 = 1e-5;
/// Central differences at `h` and `2h` disagreeing by more than this
/// (relative) mark a coordinate whose neighborhood straddles a kink.
const KINK_RATIO: f64 = 1e-3;
/// Same test on forward against backward differences, which also catches a
/// stencil centered exactly on a kink.
const ONE_SIDED_RATIO: f64 = 1e-2;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CheckCase {
    pub name: String,
    pub instances: usize,
    pub compared: usize,
    /// Coordinates excluded because ReLU or the projection clip switches
    /// branch within the difference stencil.
    pub skipped: usize,
    pub max_rel_error: f64,
}

impl CheckCase {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub cases: Vec<CheckCase>,
}

impl GradcheckReport {
    pub fn instances(&self) -> usize {
        self.cases.iter().map(|c| c.instances).sum()
    }

    pub fn worst(&self) -> f64 {
        self.cases
            .iter()
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= GRADCHECK_TOLERANCE
    }
}

/// Compares `analytic[j]` with central differences of `f(j, delta)`, the
/// objective with coordinate `j` shifted by `delta`.
fn compare(
    case: &mut CheckCase,
    analytic: &[f64],
    mut f: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<()> {
    for (j, &a) in analytic.iter().enumerate() {
        let (plus, minus, center) = (f(j, STEP)?, f(j, -STEP)?, f(j, 0.0)?);
        let fd = (plus - minus) / (2.0 * STEP);
        let fd2 = (f(j, 2.0 * STEP)? - f(j, -2.0 * STEP)?) / (4.0 * STEP);
        let one_sided_gap = ((plus - center) - (center - minus)).abs() / STEP;
        let scale = fd.abs().max(fd2.abs()).max(GRADCHECK_FLOOR);
        if (fd - fd2).abs() > KINK_RATIO * scale || one_sided_gap > ONE_SIDED_RATIO * scale {
            case.skipped += 1;
            continue;
        }
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(GRADCHECK_FLOOR);
        case.max_rel_error = case.max_rel_error.max(err);
        case.compared += 1;
    }
    Ok(())
}

fn perturbed(p: &Params, j: usize, delta: f64) -> Params {
    let mut q = p.clone();
    if let Some(v) = q.iter_values_mut().nth(j) {
        *v += delta;
    }
    q
}

/// Replaces every parameter (biases included) with a uniform draw so no
/// pre-activation sits exactly on a kink.
fn randomize(p: &Params, rng: &mut ChaCha8Rng) -> Params {
    let mut q = p.clone();
    for v in q.iter_values_mut() {
        *v = rng.random_range(-0.8..0.8);
    }
    q
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient check of one stack under the objective `r . output`.
fn check_stack(case: &mut CheckCase, stack: &LayerStack, rng: &mut ChaCha8Rng) -> Result<()> {
    let input = random_vec(rng, stack.input_dim(), 1.5);
    let side = random_vec(rng, stack.side_dim(), 1.0);
    let (out, cache) = stack.forward_with_side(&input, &side)?;
    let r = random_vec(rng, out.len(), 1.0);
    let g = stack.backward(&cache, &r)?;
    let objective = |s: &LayerStack, x: &[f64], side: &[f64]| -> Result<f64> {
        Ok(dot(&s.forward_with_side(x, side)?.0, &r))
    };
    compare(case, &g.params.to_flat(), |j, d| {
        let mut s = stack.clone();
        s.set_params(perturbed(stack.params(), j, d))?;
        objective(&s, &input, &side)
    })?;
    compare(case, &g.input, |j, d| {
        let mut x = input.clone();
        x[j] += d;
        objective(stack, &x, &side)
    })?;
    let side_grad: Vec<f64> = g.side.concat();
    compare(case, &side_grad, |j, d| {
        let mut s2 = side.clone();
        s2[j] += d;
        objective(stack, &input, &s2)
    })?;
    case.instances += 1;
    Ok(())
}

/// Gradient check of a cloud network under the cross-entropy loss, for its
/// parameters and for every received signal (the downlink messages).
fn check_cloud(
    case: &mut CheckCase,
    cloud: &CloudNet,
    inputs: usize,
    nodes: usize,
    classes: usize,
    s: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut cloud = cloud.clone();
    let randomized = cloud.params().iter().map(|p| randomize(p, rng)).collect();
    cloud.set_params(randomized)?;
    let cloud = &cloud;
    let ys: Vec<Vec<f64>> = (0..inputs).map(|_| random_vec(rng, s, 1.5)).collect();
    let label = rng.random_range(0..classes);
    let loss = |c: &CloudNet, ys: &[Vec<f64>]| -> Result<f64> {
        let inp: Vec<(usize, &[f64])> = ys.iter().map(Vec::as_slice).enumerate().collect();
        let (x, _) = c.infer(&inp, nodes)?;
        Ok(softmax_cross_entropy(&x, label)?.0)
    };
    let inp: Vec<(usize, &[f64])> = ys.iter().map(Vec::as_slice).enumerate().collect();
    let (x, cache) = cloud.infer(&inp, nodes)?;
    let (_, gx) = softmax_cross_entropy(&x, label)?;
    let mut grads = cloud.zero_grads();
    let messages = cloud.backward_sample(&cache, &gx, &mut grads)?;
    let params = cloud.params();
    let sizes: Vec<usize> = params.iter().map(Params::count).collect();
    let flat: Vec<f64> = grads.iter().flat_map(Params::to_flat).collect();
    compare(case, &flat, |j, d| {
        let (mut stack, mut off) = (0, j);
        while off >= sizes[stack] {
            off -= sizes[stack];
            stack += 1;
        }
        let mut p = params.clone();
        p[stack] = perturbed(&params[stack], off, d);
        let mut c = cloud.clone();
        c.set_params(p)?;
        loss(&c, &ys)
    })?;
    compare(case, &messages.concat(), |j, d| {
        let mut y2 = ys.clone();
        y2[j / s][j % s] += d;
        loss(cloud, &y2)
    })?;
    case.instances += 1;
    Ok(())
}

/// Finite-difference checks over every layer type, both power modes, edge
/// encoders with and without channel side input, the multi-branch cloud
/// model with its downlink messages, and the baseline clouds.
pub fn gradcheck_suite(seed: u64, instances_per_case: usize) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport::default();
    let mut run_stack =
        |name: &str, build: &dyn Fn(&mut ChaCha8Rng) -> Result<LayerStack>| -> Result<CheckCase> {
            let mut case = CheckCase::new(name);
            for _ in 0..instances_per_case {
                let mut stack = build(&mut rng)?;
                let p = randomize(stack.params(), &mut rng);
                stack.set_params(p)?;
                check_stack(&mut case, &stack, &mut rng)?;
            }
            Ok(case)
        };
    let seed_of = |rng: &mut ChaCha8Rng| rng.random::<u64>();
    report.cases.push(run_stack("dense", &|r| {
        let (i, o) = (r.random_range(1..6), r.random_range(1..6));
        LayerStack::new(
            i,
            vec![Layer::Dense {
                input: i,
                output: o,
            }],
            seed_of(r),
        )
    })?);
    report.cases.push(run_stack("dense+relu", &|r| {
        LayerStack::mlp(&[4, 7, 3], seed_of(r))
    })?);
    report.cases.push(run_stack("concat", &|r| {
        LayerStack::new(
            3,
            vec![
                Layer::Dense {
                    input: 3,
                    output: 5,
                },
                Layer::Relu,
                Layer::Concat { side: 2 },
                Layer::Dense {
                    input: 7,
                    output: 4,
                },
            ],
            seed_of(r),
        )
    })?);
    for mode in [PowerMode::PerBlock, PowerMode::Sum] {
        report
            .cases
            .push(run_stack(&format!("projection({mode})"), &|r| {
                let budget = r.random_range(0.2..2.0);
                LayerStack::new(
                    5,
                    vec![
                        Layer::Dense {
                            input: 5,
                            output: 6,
                        },
                        Layer::Projection { budget, mode },
                    ],
                    seed_of(r),
                )
            })?);
    }
    for (name, cqi) in [("encoder", None), ("encoder+cqi", Some(CqiTransform::Raw))] {
        report.cases.push(run_stack(name, &|r| {
            EncoderSpec {
                observation_len: 6,
                hidden: vec![8],
                message_len: 4,
                power_mode: PowerMode::PerBlock,
                power_budget: 1.0,
                cqi,
            }
            .build(seed_of(r))
        })?);
    }
    for m in [1, 3] {
        for n in [1, 3] {
            let mut case = CheckCase::new(format!("cloud(M={m},N={n})"));
            for _ in 0..instances_per_case {
                let spec = CloudSpec {
                    message_len: 4,
                    latent: 3,
                    classes: 3,
                    branches: m,
                    hidden: 5,
                };
                let base = rng.random::<u64>();
                let cloud = CloudNet::Proposed(CloudModel::new(spec, OptimizerKind::Sgd, |b| {
                    base + b as u64
                })?);
                check_cloud(&mut case, &cloud, n, n, 3, 4, &mut rng)?;
            }
            report.cases.push(case);
        }
    }
    let mut case = CheckCase::new("baselines");
    for _ in 0..instances_per_case {
        let s = rng.random::<u64>();
        let catnet = CloudNet::Baseline(BaselineModel::catnet(2, 4, 5, 3, OptimizerKind::Sgd, s)?);
        check_cloud(&mut case, &catnet, 2, 2, 3, 4, &mut rng)?;
        let mhnet =
            CloudNet::Baseline(BaselineModel::mhnet(3, 4, 5, 3, OptimizerKind::Sgd, |i| {
                s + i as u64
            })?);
        check_cloud(&mut case, &mhnet, 3, 3, 3, 4, &mut rng)?;
    }
    report.cases.push(case);
    Ok(report)
}

/// Small configuration for equivalence runs: three nodes, batches of
/// eight, noiseless downlink, noisy Rayleigh uplink.
pub fn equivalence_config(seed: u64, encoder_sharing: bool) -> TrainingConfig {
    TrainingConfig {
        nodes: 3,
        batch: 8,
        rounds: 50,
        lr: 0.1,
        optimizer: OptimizerKind::Sgd,
        message_len: 4,
        encoder_hidden: vec![8],
        branches: 2,
        latent: 4,
        cloud_hidden: 8,
        snr_up_db: (0.0, 30.0),
        snr_dn_db: (0.0, 30.0),
        uplink_noise: true,
        downlink_noise: false,
        fading: Fading::Rayleigh,
        encoder_sharing,
        seed,
        ..TrainingConfig::default()
    }
}

fn equivalence_data_spec() -> SyntheticSpec {
    SyntheticSpec {
        classes: 3,
        grid: 8,
        window: 5,
        train: 64,
        validation: 0,
        test: 8,
        ..SyntheticSpec::default()
    }
}

pub fn equivalence_dataset(seed: u64) -> Result<GridDataset> {
    GridDataset::generate_synthetic(seed, &equivalence_data_spec())
}

/// The equivalence preset with the small configuration and dataset above.
pub fn equivalence_experiment(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        preset: Preset::Equivalence,
        training: equivalence_config(seed, false),
        data: DataSource::Synthetic(equivalence_data_spec()),
        ..ExperimentConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub encoder_sharing: bool,
    pub rounds: usize,
    /// Maximum entrywise relative deviation after each round.
    pub per_round: Vec<f64>,
    pub max_deviation: f64,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.max_deviation <= EQUIVALENCE_TOLERANCE
    }
}

/// Runs decentralized rounds and centralized reference steps side by side
/// from the same initialization and compares every parameter each round.
pub fn run_equivalence<D: Dataset + ?Sized>(
    config: TrainingConfig,
    dataset: &D,
) -> Result<EquivalenceReport> {
    let mut dtde =
        TrainingState::new(config.clone(), dataset.observation_len(), dataset.classes())?;
    let mut central = dtde.clone();
    let schedule = schedule_minibatches(
        config.seed,
        dataset.len(Split::Train),
        config.batch,
        config.rounds,
    )?;
    let mut per_round = Vec::with_capacity(config.rounds);
    for (k0, batch) in schedule.iter().enumerate() {
        run_training_round(&mut dtde, dataset, batch, k0 + 1)?;
        centralized_oracle_round(&mut central, dataset, batch, k0 + 1)?;
        per_round.push(max_state_deviation(&dtde, &central, DEVIATION_FLOOR)?);
    }
    Ok(EquivalenceReport {
        encoder_sharing: config.encoder_sharing,
        rounds: config.rounds,
        max_deviation: per_round.iter().copied().fold(0.0, f64::max),
        per_round,
    })
}

/// Standard errors allowed between the mean wireless encoder update and the
/// noiseless one.
pub const UNBIASEDNESS_Z: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnbiasednessReport {
    pub draws: usize,
    pub components: usize,
    /// Largest `|mean - exact| / standard error` over all components.
    pub max_z: f64,
    /// Largest `|mean - exact|` over all components.
    pub max_bias: f64,
}

impl UnbiasednessReport {
    pub fn passed(&self) -> bool {
        self.max_z < UNBIASEDNESS_Z
    }
}

/// Compares the encoder update built from noisy downlink signals against the
/// one built from the exact gradients `H m`, over `draws` independent
/// downlink noise realizations of variance `downlink_var`.
pub fn wireless_unbiasedness(
    seed: u64,
    draws: usize,
    downlink_var: f64,
) -> Result<UnbiasednessReport> {
    const BATCH: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = EncoderSpec {
        observation_len: 6,
        hidden: vec![5],
        message_len: 4,
        power_mode: PowerMode::PerBlock,
        power_budget: 1.0,
        cqi: None,
    };
    let mut encoder = spec.build(seed)?;
    let p = randomize(encoder.params(), &mut rng);
    encoder.set_params(p)?;

    let mut samples = Vec::with_capacity(BATCH);
    for _ in 0..BATCH {
        let obs: Vec<f64> = (0..spec.observation_len)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let (_, cache) = encoder.forward(&obs)?;
        let ch =
            sample_channel(&mut rng, spec.message_len / 2, None)?.with_noise(0.0, downlink_var);
        let m: Vec<f64> = (0..spec.message_len)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        samples.push((cache, ch, pack(&m)?, m));
    }
    let update = |signals: &[Vec<f64>]| -> Result<Vec<f64>> {
        let mut acc = Params::zeros_like(encoder.params());
        for ((cache, ..), g) in samples.iter().zip(signals) {
            encoder.backward_accumulate(cache, g, &mut acc)?;
        }
        acc.scale(1.0 / BATCH as f64);
        Ok(acc.to_flat())
    };

    let exact: Vec<Vec<f64>> = samples
        .iter()
        .map(|(_, ch, _, m)| {
            ch.effective_diag()
                .iter()
                .zip(m)
                .map(|(h, v)| h * v)
                .collect()
        })
        .collect();
    let reference = update(&exact)?;
    let mut sum = vec![0.0; reference.len()];
    let mut sum_sq = vec![0.0; reference.len()];
    for _ in 0..draws {
        let mut decoded = Vec::with_capacity(BATCH);
        for (_, ch, packed, _) in &samples {
            let alpha = compute_alpha(&[packed.as_slice()], 1.0, PowerMode::PerBlock, 0)?;
            let y = downlink_transmit(packed, ch, alpha, &mut rng)?;
            decoded.push(downlink_decode(&y, &ch.phase(), alpha)?.into_real());
        }
        for (j, v) in update(&decoded)?.into_iter().enumerate() {
            sum[j] += v;
            sum_sq[j] += v * v;
        }
    }
    let t = draws as f64;
    let mut max_z: f64 = 0.0;
    let mut max_bias: f64 = 0.0;
    for j in 0..reference.len() {
        let mean = sum[j] / t;
        max_bias = max_bias.max((mean - reference[j]).abs());
        let var = (sum_sq[j] / t - mean * mean).max(0.0) * t / (t - 1.0);
        let se = (var / t).sqrt();
        if se > 0.0 {
            max_z = max_z.max((mean - reference[j]).abs() / se);
        } else if mean != reference[j] {
            max_z = f64::INFINITY;
        }
    }
    Ok(UnbiasednessReport {
        draws,
        components: reference.len(),
        max_z,
        max_bias,
    })
}
