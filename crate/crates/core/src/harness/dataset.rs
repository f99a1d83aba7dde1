//! Grid-valued datasets observed through random square crops.
//!
//! The synthetic task places a bright blob near one of `classes` anchor
//! points spread on a circle around the grid center; the label is the anchor
//! index. A crop sees the blob (or its absence) only relative to its own
//! unknown offset, so a single view is ambiguous while the full grid is
//! close to linearly separable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::edge::LocalObservation;
use crate::error::{Error, Result};
use crate::protocol::{Dataset, Split};
use crate::rng::{stream, Purpose};

const FLAT_MAGIC: &[u8; 4] = b"ELDS";
const FLAT_VERSION: u32 = 1;
/// Share of the train split held out when a flat file has no validation split.
pub const FLAT_VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub grid: usize,
    pub window: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Blob peak height above the background.
    pub amplitude: f64,
    /// Gaussian blob width in cells.
    pub blob_width: f64,
    /// Anchor distance from the grid center, as a fraction of half the grid.
    pub radius: f64,
    /// Uniform jitter of the blob around its anchor, in cells.
    pub jitter: f64,
    /// Per-cell Gaussian noise.
    pub noise_std: f64,
    /// Half-width of the uniform per-sample brightness offset.
    pub brightness: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            grid: 16,
            window: 10,
            train: 4000,
            validation: 500,
            test: 1000,
            amplitude: 1.0,
            blob_width: 1.5,
            radius: 0.55,
            jitter: 1.5,
            noise_std: 0.3,
            brightness: 0.3,
        }
    }
}

/// Labelled global states stored as `height x width` grids.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    height: usize,
    width: usize,
    window: usize,
    classes: usize,
    seed: u64,
    /// `[train, validation, test]`.
    states: [Vec<Vec<f64>>; 3],
    labels: [Vec<usize>; 3],
}

fn split_slot(split: Split) -> usize {
    split.key() as usize
}

impl GridDataset {
    pub fn new(
        height: usize,
        width: usize,
        window: usize,
        classes: usize,
        seed: u64,
        states: [Vec<Vec<f64>>; 3],
        labels: [Vec<usize>; 3],
    ) -> Result<Self> {
        if window == 0 || window > height.min(width) {
            return Err(Error::Dataset(format!(
                "crop window {window} does not fit a {height}x{width} grid"
            )));
        }
        if classes == 0 {
            return Err(Error::Dataset("at least one class is needed".into()));
        }
        for (s, l) in states.iter().zip(&labels) {
            if s.len() != l.len() {
                return Err(Error::Dataset(format!(
                    "{} states but {} labels",
                    s.len(),
                    l.len()
                )));
            }
            if let Some(bad) = s.iter().find(|g| g.len() != height * width) {
                return Err(Error::Dataset(format!(
                    "state of length {} in a {height}x{width} dataset",
                    bad.len()
                )));
            }
            if let Some(&bad) = l.iter().find(|&&t| t >= classes) {
                return Err(Error::LabelOutOfRange {
                    label: bad,
                    classes,
                });
            }
        }
        Ok(Self {
            height,
            width,
            window,
            classes,
            seed,
            states,
            labels,
        })
    }

    pub fn generate_synthetic(seed: u64, spec: &SyntheticSpec) -> Result<Self> {
        if spec.window == 0 || spec.window > spec.grid {
            return Err(Error::Dataset(format!(
                "crop window {} does not fit a {}x{} grid",
                spec.window, spec.grid, spec.grid
            )));
        }
        if spec.classes < 2 {
            return Err(Error::Dataset(
                "the synthetic task needs at least two classes".into(),
            ));
        }
        if spec.noise_std < 0.0 || spec.blob_width <= 0.0 {
            return Err(Error::Dataset(
                "noise and blob width must be non-negative and positive".into(),
            ));
        }
        let g = spec.grid as f64;
        let center = (g - 1.0) / 2.0;
        let anchors: Vec<(f64, f64)> = (0..spec.classes)
            .map(|c| {
                let theta = std::f64::consts::TAU * c as f64 / spec.classes as f64;
                let r = spec.radius * g / 2.0;
                (center + r * theta.cos(), center + r * theta.sin())
            })
            .collect();
        let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Dataset(e.to_string()))?;
        // Validation is carved from the tail of the train pool.
        let sizes = [spec.train + spec.validation, 0, spec.test];
        let mut states: [Vec<Vec<f64>>; 3] = Default::default();
        let mut labels: [Vec<usize>; 3] = Default::default();
        for (slot, &size) in sizes.iter().enumerate() {
            if size == 0 {
                continue;
            }
            let mut rng = stream(seed, Purpose::Dataset, &[slot as u64]);
            for _ in 0..size {
                let label = rng.random_range(0..spec.classes);
                let (ar, ac) = anchors[label];
                let br = ar + rng.random_range(-1.0..=1.0) * spec.jitter;
                let bc = ac + rng.random_range(-1.0..=1.0) * spec.jitter;
                let offset = rng.random_range(-1.0..=1.0) * spec.brightness;
                let two_w2 = 2.0 * spec.blob_width * spec.blob_width;
                let mut grid = Vec::with_capacity(spec.grid * spec.grid);
                for r in 0..spec.grid {
                    for c in 0..spec.grid {
                        let d2 = (r as f64 - br).powi(2) + (c as f64 - bc).powi(2);
                        let v =
                            offset + spec.amplitude * (-d2 / two_w2).exp() + noise.sample(&mut rng);
                        grid.push(v);
                    }
                }
                states[slot].push(grid);
                labels[slot].push(label);
            }
        }
        carve_validation(&mut states, &mut labels, spec.validation);
        Self::new(
            spec.grid,
            spec.grid,
            spec.window,
            spec.classes,
            seed,
            states,
            labels,
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn with_window(mut self, window: usize) -> Result<Self> {
        if window == 0 || window > self.height.min(self.width) {
            return Err(Error::Dataset(format!(
                "crop window {window} does not fit a {}x{} grid",
                self.height, self.width
            )));
        }
        self.window = window;
        Ok(self)
    }

    pub fn state(&self, split: Split, index: usize) -> &[f64] {
        &self.states[split_slot(split)][index]
    }

    pub fn labels(&self, split: Split) -> &[usize] {
        &self.labels[split_slot(split)]
    }

    /// The `window x window` block at offset `(row, col)`, row-major.
    pub fn crop_at(&self, split: Split, index: usize, row: usize, col: usize) -> Vec<f64> {
        let state = self.state(split, index);
        let w = self.window;
        let mut out = Vec::with_capacity(w * w);
        for r in row..row + w {
            out.extend_from_slice(&state[r * self.width + col..r * self.width + col + w]);
        }
        out
    }

    /// Uniform crop offset.
    pub fn draw_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        (
            rng.random_range(0..=self.height - self.window),
            rng.random_range(0..=self.width - self.window),
        )
    }

    /// `nodes` independent uniform crops of one sample, possibly overlapping.
    pub fn crop_observations<R: Rng + ?Sized>(
        &self,
        split: Split,
        index: usize,
        nodes: usize,
        rng: &mut R,
    ) -> Vec<LocalObservation> {
        (0..nodes)
            .map(|_| {
                let (r, c) = self.draw_offset(rng);
                LocalObservation {
                    values: self.crop_at(split, index, r, c),
                    sample_index: index,
                    source_index: index,
                }
            })
            .collect()
    }

    /// Writes the flat binary format read by [`GridDataset::load_flat`].
    pub fn save_flat(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(FLAT_MAGIC)?;
        w.write_all(&FLAT_VERSION.to_le_bytes())?;
        for labels in &self.labels {
            w.write_all(&(labels.len() as u64).to_le_bytes())?;
        }
        for v in [self.height, self.width, self.classes] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for states in &self.states {
            for s in states {
                for v in s {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        for labels in &self.labels {
            for &t in labels {
                w.write_all(&(t as i32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an external dataset: magic `ELDS`, `u32` version, three `u64`
    /// split sizes, `u32` height, width and class count, then every state as
    /// little-endian `f64` (train, validation, test) and every label as `i32`.
    pub fn load_flat(path: &Path, window: usize, seed: u64) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != FLAT_MAGIC {
            return Err(Error::Dataset("not a flat dataset file".into()));
        }
        let version = read_u32(&mut r, "version")?;
        if version != FLAT_VERSION {
            return Err(Error::Dataset(format!(
                "dataset format version {version} is not supported (expected {FLAT_VERSION})"
            )));
        }
        let mut sizes = [0usize; 3];
        for s in &mut sizes {
            *s = read_u64(&mut r, "split size")? as usize;
        }
        let height = read_u32(&mut r, "height")? as usize;
        let width = read_u32(&mut r, "width")? as usize;
        let classes = read_u32(&mut r, "classes")? as usize;
        let mut states: [Vec<Vec<f64>>; 3] = Default::default();
        let mut buf = vec![0u8; 8 * height * width];
        for (slot, &n) in sizes.iter().enumerate() {
            for _ in 0..n {
                read_exact(&mut r, &mut buf, "features")?;
                states[slot].push(
                    buf.chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                        .collect(),
                );
            }
        }
        let mut labels: [Vec<usize>; 3] = Default::default();
        for (slot, &n) in sizes.iter().enumerate() {
            for _ in 0..n {
                let t = read_u32(&mut r, "labels")? as i32;
                if t < 0 {
                    return Err(Error::Dataset(format!("negative label {t}")));
                }
                labels[slot].push(t as usize);
            }
        }
        if states[1].is_empty() {
            let n = (states[0].len() as f64 * FLAT_VALIDATION_FRACTION).floor() as usize;
            carve_validation(&mut states, &mut labels, n);
        }
        Self::new(height, width, window, classes, seed, states, labels)
    }
}

/// Moves the last `n` train samples to the front of the validation split.
fn carve_validation(states: &mut [Vec<Vec<f64>>; 3], labels: &mut [Vec<usize>; 3], n: usize) {
    let at = states[0].len().saturating_sub(n);
    let mut s = states[0].split_off(at);
    let mut l = labels[0].split_off(at);
    s.append(&mut states[1]);
    l.append(&mut labels[1]);
    states[1] = s;
    labels[1] = l;
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Dataset(format!("truncated file while reading {what}: {e}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

impl Dataset for GridDataset {
    fn len(&self, split: Split) -> usize {
        self.labels[split_slot(split)].len()
    }

    fn label(&self, split: Split, index: usize) -> usize {
        self.labels[split_slot(split)][index]
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn observation_len(&self) -> usize {
        self.window * self.window
    }

    fn observe(&self, split: Split, index: usize, node: usize, draw: u64) -> LocalObservation {
        let mut rng = stream(
            self.seed,
            Purpose::Crop,
            &[split.key(), index as u64, node as u64, draw],
        );
        let (r, c) = self.draw_offset(&mut rng);
        LocalObservation {
            values: self.crop_at(split, index, r, c),
            sample_index: index,
            source_index: index,
        }
    }
}

/// Multinomial logistic regression trained by full-batch gradient descent
/// on standardized features; returns held-out accuracy.
pub fn logistic_regression_accuracy(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    classes: usize,
    iterations: usize,
    lr: f64,
) -> Result<f64> {
    let dim = train_x.first().ok_or(Error::EmptyBatch)?.len();
    if test_x.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = train_x.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in train_x {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; dim];
    for x in train_x {
        for ((s, v), m) in sd.iter_mut().zip(x).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    for s in &mut sd {
        *s = s.sqrt().max(1e-9);
    }
    let standardize = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(&mean)
            .zip(&sd)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    };
    let xs: Vec<Vec<f64>> = train_x.iter().map(|x| standardize(x)).collect();
    let mut w = vec![vec![0.0; dim + 1]; classes];
    let logits = |w: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        w.iter()
            .map(|row| row[dim] + row[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    };
    for _ in 0..iterations {
        let mut grad = vec![vec![0.0; dim + 1]; classes];
        for (x, &t) in xs.iter().zip(train_y) {
            let p = crate::nn::softmax(&logits(&w, x));
            for (c, (g, pc)) in grad.iter_mut().zip(&p).enumerate() {
                let e = pc - if c == t { 1.0 } else { 0.0 };
                for (gj, xj) in g[..dim].iter_mut().zip(x) {
                    *gj += e * xj;
                }
                g[dim] += e;
            }
        }
        for (row, g) in w.iter_mut().zip(&grad) {
            for (wj, gj) in row.iter_mut().zip(g) {
                *wj -= lr * gj / n;
            }
        }
    }
    let correct = test_x
        .iter()
        .zip(test_y)
        .filter(|(x, &t)| crate::nn::argmax(&logits(&w, &standardize(x))) == t)
        .count();
    Ok(correct as f64 / test_x.len() as f64)
}

/// Held-out accuracies of the full-state and single-crop linear oracles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub full_state: f64,
    pub single_crop: f64,
}

impl Calibration {
    pub fn gap(&self) -> f64 {
        self.full_state - self.single_crop
    }
}

/// Fits both oracles on the training split and scores them on the test split.
pub fn calibrate(
    dataset: &GridDataset,
    max_train: usize,
    iterations: usize,
) -> Result<Calibration> {
    let n_train = dataset.len(Split::Train).min(max_train);
    let n_test = dataset.len(Split::Test);
    let full = |split, n: usize| -> Vec<Vec<f64>> {
        (0..n).map(|i| dataset.state(split, i).to_vec()).collect()
    };
    let crop = |split: Split, n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| dataset.observe(split, i, 0, u64::MAX).values)
            .collect()
    };
    let ty = &dataset.labels(Split::Train)[..n_train];
    let sy = dataset.labels(Split::Test);
    let classes = dataset.classes();
    Ok(Calibration {
        full_state: logistic_regression_accuracy(
            &full(Split::Train, n_train),
            ty,
            &full(Split::Test, n_test),
            sy,
            classes,
            iterations,
            0.5,
        )?,
        single_crop: logistic_regression_accuracy(
            &crop(Split::Train, n_train),
            ty,
            &crop(Split::Test, n_test),
            sy,
            classes,
            iterations,
            0.5,
        )?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            train: 20,
            validation: 5,
            test: 5,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = GridDataset::generate_synthetic(3, &small()).unwrap();
        let b = GridDataset::generate_synthetic(3, &small()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn crop_geometry() {
        let ds = GridDataset::generate_synthetic(
            1,
            &SyntheticSpec {
                window: 12,
                ..small()
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let (r, c) = ds.draw_offset(&mut rng);
            assert!(r <= 4 && c <= 4);
        }
        let full = ds.clone().with_window(16).unwrap();
        let obs = full.crop_observations(Split::Train, 2, 3, &mut rng);
        assert!(obs.iter().all(|o| o.values == full.state(Split::Train, 2)));
    }

    #[test]
    fn rejects_oversized_window() {
        let spec = SyntheticSpec {
            window: 17,
            ..small()
        };
        assert!(GridDataset::generate_synthetic(0, &spec).is_err());
    }

    #[test]
    fn flat_roundtrip_and_truncation() {
        let ds = GridDataset::generate_synthetic(5, &small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        ds.save_flat(&path).unwrap();
        let back = GridDataset::load_flat(&path, ds.window(), 5).unwrap();
        assert_eq!(back, ds);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            GridDataset::load_flat(&path, 10, 5),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn validation_is_carved_from_train() {
        let mut no_val = small();
        no_val.validation = 0;
        no_val.train = 25;
        let pool = GridDataset::generate_synthetic(4, &no_val).unwrap();
        let ds = GridDataset::generate_synthetic(4, &small()).unwrap();
        assert_eq!((ds.len(Split::Train), ds.len(Split::Validation)), (20, 5));
        assert_eq!(ds.state(Split::Train, 19), pool.state(Split::Train, 19));
        assert_eq!(ds.state(Split::Validation, 0), pool.state(Split::Train, 20));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        pool.save_flat(&path).unwrap();
        let back = GridDataset::load_flat(&path, pool.window(), 4).unwrap();
        assert_eq!(
            (back.len(Split::Train), back.len(Split::Validation)),
            (23, 2)
        );
        assert_eq!(
            back.state(Split::Validation, 1),
            pool.state(Split::Train, 24)
        );
    }
}
