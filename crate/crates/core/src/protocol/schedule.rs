use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Mini-batches for `rounds` rounds: each epoch is a seeded shuffle of the
/// dataset cut into full batches of `batch` (a trailing partial batch is
/// dropped). Any party holding the seed recomputes the same schedule.
pub fn schedule_minibatches(
    seed: u64,
    dataset_size: usize,
    batch: usize,
    rounds: usize,
) -> Result<Vec<Vec<usize>>> {
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    if batch > dataset_size {
        return Err(Error::Config(format!(
            "batch size {batch} exceeds dataset size {dataset_size}"
        )));
    }
    let per_epoch = dataset_size / batch;
    let mut out = Vec::with_capacity(rounds);
    let mut epoch = 0u64;
    while out.len() < rounds {
        let mut order: Vec<usize> = (0..dataset_size).collect();
        order.shuffle(&mut stream(seed, Purpose::Schedule, &[epoch]));
        for chunk in order.chunks_exact(batch).take(per_epoch) {
            if out.len() == rounds {
                break;
            }
            out.push(chunk.to_vec());
        }
        epoch += 1;
    }
    Ok(out)
}

/// Which nodes reached the cloud for each sample of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSets {
    /// Active node indices per batch position, ascending.
    pub per_sample: Vec<Vec<usize>>,
    /// Batch positions at which each node was active, ascending.
    pub per_node: Vec<Vec<usize>>,
    /// Samples redrawn because every node had dropped out.
    pub redraws: usize,
}

impl ActiveSets {
    pub fn all_active(nodes: usize, batch: usize) -> Self {
        Self::from_samples(nodes, vec![(0..nodes).collect(); batch], 0)
    }

    fn from_samples(nodes: usize, per_sample: Vec<Vec<usize>>, redraws: usize) -> Self {
        let mut per_node = vec![Vec::new(); nodes];
        for (b, set) in per_sample.iter().enumerate() {
            for &i in set {
                per_node[i].push(b);
            }
        }
        Self {
            per_sample,
            per_node,
            redraws,
        }
    }

    pub fn is_active(&self, b: usize, i: usize) -> bool {
        self.per_sample[b].binary_search(&i).is_ok()
    }

    pub fn mean_active(&self) -> f64 {
        if self.per_sample.is_empty() {
            return 0.0;
        }
        self.per_sample.iter().map(Vec::len).sum::<usize>() as f64 / self.per_sample.len() as f64
    }
}

/// Per-sample dropout probability `(N - 1) / (2N)` for a network of `nodes`.
pub fn drop_probability(nodes: usize) -> f64 {
    if nodes == 0 {
        return 0.0;
    }
    (nodes as f64 - 1.0) / (2.0 * nodes as f64)
}

/// Drops each node independently per sample; samples where every node
/// dropped are redrawn.
pub fn sample_active_sets<R: Rng + ?Sized>(rng: &mut R, nodes: usize, batch: usize) -> ActiveSets {
    let p = drop_probability(nodes);
    let mut redraws = 0;
    let per_sample = (0..batch)
        .map(|_| loop {
            let set: Vec<usize> = (0..nodes).filter(|_| !rng.random_bool(p)).collect();
            if !set.is_empty() {
                break set;
            }
            redraws += 1;
        })
        .collect();
    ActiveSets::from_samples(nodes, per_sample, redraws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_schedule_covers_epoch() {
        let s = schedule_minibatches(3, 4, 2, 2).unwrap();
        assert_eq!(s.len(), 2);
        let mut all: Vec<usize> = s.concat();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert_eq!(s, schedule_minibatches(3, 4, 2, 2).unwrap());
    }

    #[test]
    fn schedule_rejects_oversized_batch() {
        assert!(schedule_minibatches(0, 3, 4, 1).is_err());
        assert!(schedule_minibatches(0, 3, 3, 0).unwrap().is_empty());
    }

    #[test]
    fn drop_probability_values() {
        assert_eq!(drop_probability(8), 0.4375);
        assert_eq!(drop_probability(1), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sets = sample_active_sets(&mut rng, 1, 50);
        assert!(sets.per_sample.iter().all(|s| s == &vec![0]));
    }

    #[test]
    fn per_node_mirrors_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sets = sample_active_sets(&mut rng, 4, 30);
        for (i, positions) in sets.per_node.iter().enumerate() {
            for b in 0..30 {
                assert_eq!(positions.contains(&b), sets.is_active(b, i));
            }
        }
        assert!(sets.per_sample.iter().all(|s| !s.is_empty()));
    }
}
