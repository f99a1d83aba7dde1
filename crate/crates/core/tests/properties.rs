use std::collections::HashSet;

use edgelearn::cloud::{fedavg, CloudModel, CloudSpec};
use edgelearn::nn::{OptimizerKind, Params, Tensor};
use edgelearn::protocol::{drop_probability, sample_active_sets, schedule_minibatches};
use edgelearn::rng::{stream, Purpose};
use proptest::prelude::*;

fn spec(branches: usize) -> CloudSpec {
    CloudSpec {
        message_len: 4,
        latent: 5,
        classes: 3,
        branches,
        hidden: 7,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn cloud_output_ignores_node_order(
        signals in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..7),
        branches in 1usize..4,
        seed in any::<u64>(),
        rotate in 0usize..7,
    ) {
        let model = CloudModel::new(spec(branches), OptimizerKind::Sgd, |m| seed ^ m as u64).unwrap();
        let refs: Vec<&[f64]> = signals.iter().map(Vec::as_slice).collect();
        let (x, _) = model.cloud_infer(&refs).unwrap();
        let mut permuted = refs.clone();
        permuted.rotate_left(rotate % refs.len());
        permuted.reverse();
        let (y, _) = model.cloud_infer(&permuted).unwrap();
        prop_assert!(max_abs_diff(&x, &y) <= 1e-12);
    }

    #[test]
    fn schedule_batches_are_full_and_distinct(
        seed in any::<u64>(),
        size in 1usize..200,
        batch_frac in 0.01f64..1.0,
        rounds in 0usize..40,
    ) {
        let batch = ((size as f64 * batch_frac).ceil() as usize).clamp(1, size);
        let schedule = schedule_minibatches(seed, size, batch, rounds).unwrap();
        prop_assert_eq!(schedule.len(), rounds);
        for b in &schedule {
            prop_assert_eq!(b.len(), batch);
            prop_assert!(b.iter().all(|&i| i < size));
            prop_assert_eq!(b.iter().collect::<HashSet<_>>().len(), batch);
        }
        // Each epoch visits every index at most once.
        let per_epoch = size / batch;
        for epoch in schedule.chunks(per_epoch) {
            let seen: HashSet<usize> = epoch.iter().flatten().copied().collect();
            prop_assert_eq!(seen.len(), epoch.len() * batch);
        }
        prop_assert_eq!(schedule_minibatches(seed, size, batch, rounds).unwrap(), schedule);
    }

    #[test]
    fn active_sets_are_never_empty(seed in any::<u64>(), nodes in 1usize..10, batch in 1usize..50) {
        let sets = sample_active_sets(&mut stream(seed, Purpose::ActiveSet, &[]), nodes, batch);
        prop_assert_eq!(sets.per_sample.len(), batch);
        for (b, s) in sets.per_sample.iter().enumerate() {
            prop_assert!(!s.is_empty());
            prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
            for &i in s {
                prop_assert!(sets.per_node[i].contains(&b));
            }
        }
        let pairs: usize = sets.per_node.iter().map(Vec::len).sum();
        prop_assert_eq!(pairs, sets.per_sample.iter().map(Vec::len).sum::<usize>());
    }

    #[test]
    fn fedavg_of_copies_is_identity_and_mean_is_linear(
        a in prop::collection::vec(-5.0f64..5.0, 6),
        b in prop::collection::vec(-5.0f64..5.0, 6),
        copies in 1usize..6,
    ) {
        let p = |v: &Vec<f64>| Params::new(vec![Tensor { name: "w".into(), shape: vec![2, 3], data: v.clone() }]);
        let same = fedavg(&vec![p(&a); copies]).unwrap();
        prop_assert!(max_abs_diff(&same.to_flat(), &a) <= 1e-12);
        let avg = fedavg(&[p(&a), p(&b)]).unwrap();
        let expected: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        prop_assert!(max_abs_diff(&avg.to_flat(), &expected) <= 1e-12);
    }
}

#[test]
fn dropout_rate_matches_probability() {
    let mut rng = stream(7, Purpose::ActiveSet, &[]);
    for nodes in [2usize, 4, 8] {
        let sets = sample_active_sets(&mut rng, nodes, 20_000);
        let p = drop_probability(nodes);
        // Conditioning on a non-empty set: E|set| = N(1-p) / (1 - p^N).
        let expected = nodes as f64 * (1.0 - p) / (1.0 - p.powi(nodes as i32));
        let got = sets.mean_active();
        assert!(
            (got / expected - 1.0).abs() < 0.02,
            "N={nodes}: {got} vs {expected}"
        );
    }
}
