//! Datasets (CIFAR-10 binary batches or seeded synthetic Gaussians) and
//! client sharding.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng;
use crate::tensor::Tensor;

pub const CIFAR_RECORD_LEN: usize = 3073;
pub const CIFAR_SHAPE: [usize; 3] = [3, 32, 32];
const CIFAR_CLASSES: usize = 10;

/// Per-channel normalization statistics, always taken from a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    fn channels(shape: &[usize]) -> usize {
        if shape.len() == 3 {
            shape[0]
        } else {
            1
        }
    }

    pub fn compute(inputs: &[f64], shape: &[usize]) -> Self {
        let c = Self::channels(shape);
        let sample: usize = shape.iter().product();
        let plane = sample / c;
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let count = (inputs.len() / sample * plane) as f64;
        for s in inputs.chunks_exact(sample) {
            for (ch, p) in s.chunks_exact(plane).enumerate() {
                mean[ch] += p.iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for s in inputs.chunks_exact(sample) {
            for (ch, p) in s.chunks_exact(plane).enumerate() {
                sq[ch] += p.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let v = (s / count).sqrt();
                if v > 0.0 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        NormStats { mean, std }
    }

    fn apply(&self, inputs: &mut [f64], shape: &[usize]) {
        let sample: usize = shape.iter().product();
        let plane = sample / self.mean.len();
        for s in inputs.chunks_exact_mut(sample) {
            for (ch, p) in s.chunks_exact_mut(plane).enumerate() {
                let (m, sd) = (self.mean[ch], self.std[ch]);
                p.iter_mut().for_each(|v| *v = (*v - m) / sd);
            }
        }
    }
}

/// Immutable labelled samples stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    sample_shape: Vec<usize>,
    labels: Vec<usize>,
    num_classes: usize,
    stats: NormStats,
}

impl Dataset {
    /// Normalizes `raw` with `stats`, or with its own statistics when `None`.
    pub fn from_raw(
        mut raw: Vec<f64>,
        sample_shape: Vec<usize>,
        labels: Vec<usize>,
        num_classes: usize,
        stats: Option<&NormStats>,
    ) -> Result<Self> {
        let sample: usize = sample_shape.iter().product();
        if labels.is_empty() || sample == 0 || raw.len() != labels.len() * sample {
            return Err(SimError::Tensor(format!(
                "{} values for {} samples of shape {sample_shape:?}",
                raw.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(SimError::LabelRange {
                label: bad,
                classes: num_classes,
            });
        }
        let stats = match stats {
            Some(s) => {
                if s.mean.len() != NormStats::channels(&sample_shape) {
                    return Err(SimError::Tensor("normalization stats channel mismatch".into()));
                }
                s.clone()
            }
            None => NormStats::compute(&raw, &sample_shape),
        };
        stats.apply(&mut raw, &sample_shape);
        Ok(Dataset {
            inputs: raw,
            sample_shape,
            labels,
            num_classes,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let n: usize = self.sample_shape.iter().product();
        &self.inputs[i * n..(i + 1) * n]
    }

    /// Stacks the inputs at `indices` into a `[N, ...]` tensor.
    pub fn inputs_batch(&self, indices: &[usize]) -> Result<Tensor> {
        let n: usize = self.sample_shape.iter().product();
        let mut v = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            v.extend_from_slice(self.input(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor::new(shape, v)
    }

    pub fn labels_batch(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Copy of the samples at `indices`, keeping this dataset's statistics.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() || indices.iter().any(|&i| i >= self.len()) {
            return Err(SimError::Tensor("subset indices out of range".into()));
        }
        let mut inputs = Vec::new();
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
        }
        Ok(Dataset {
            inputs,
            sample_shape: self.sample_shape.clone(),
            labels: self.labels_batch(indices),
            num_classes: self.num_classes,
            stats: self.stats.clone(),
        })
    }

    /// Re-encodes CIFAR-shaped samples as 3073-byte records.
    pub fn to_cifar10_bytes(&self) -> Result<Vec<u8>> {
        if self.sample_shape != CIFAR_SHAPE {
            return Err(SimError::Tensor("not a CIFAR-shaped dataset".into()));
        }
        let plane = 32 * 32;
        let mut out = Vec::with_capacity(self.len() * CIFAR_RECORD_LEN);
        for i in 0..self.len() {
            out.push(self.labels[i] as u8);
            for (ch, p) in self.input(i).chunks_exact(plane).enumerate() {
                let (m, s) = (self.stats.mean[ch], self.stats.std[ch]);
                out.extend(p.iter().map(|v| ((v * s + m) * 255.0).round().clamp(0.0, 255.0) as u8));
            }
        }
        Ok(out)
    }
}

/// Parses CIFAR-10 binary records: one label byte then 3072 pixel bytes
/// (R, G, B planes of 32x32, row-major).
pub fn parse_cifar10(bytes: &[u8], max_records: Option<usize>) -> Result<(Vec<f64>, Vec<usize>)> {
    if bytes.len() % CIFAR_RECORD_LEN != 0 {
        let offset = (bytes.len() / CIFAR_RECORD_LEN * CIFAR_RECORD_LEN) as u64;
        return Err(SimError::Format {
            offset,
            msg: format!(
                "truncated record: {} trailing bytes, records are {CIFAR_RECORD_LEN} bytes",
                bytes.len() % CIFAR_RECORD_LEN
            ),
        });
    }
    let total = bytes.len() / CIFAR_RECORD_LEN;
    let n = max_records.map_or(total, |m| m.min(total));
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD_LEN - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).take(n).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(SimError::Format {
                offset: (i * CIFAR_RECORD_LEN) as u64,
                msg: format!("label byte {label} > 9"),
            });
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&p| p as f64 / 255.0));
    }
    Ok((pixels, labels))
}

/// Loads one binary batch file. Pass the training statistics when loading a
/// test split; `None` computes statistics from this file.
pub fn load_cifar10_binary(
    path: &Path,
    max_records: Option<usize>,
    stats: Option<&NormStats>,
) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let (pixels, labels) = parse_cifar10(&bytes, max_records)?;
    Dataset::from_raw(pixels, CIFAR_SHAPE.to_vec(), labels, CIFAR_CLASSES, stats)
}

fn cifar_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Reads `data_batch_{1..5}.bin` until `train_max` records are collected and
/// `test_batch.bin` up to `test_max`; the test split uses training stats.
pub fn load_cifar10_dir(dir: &Path, train_max: usize, test_max: usize) -> Result<(Dataset, Dataset)> {
    let dir = cifar_dir(dir);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for b in 1..=5 {
        if labels.len() >= train_max {
            break;
        }
        let bytes = std::fs::read(dir.join(format!("data_batch_{b}.bin")))?;
        let (p, l) = parse_cifar10(&bytes, Some(train_max - labels.len()))?;
        pixels.extend(p);
        labels.extend(l);
    }
    let train = Dataset::from_raw(pixels, CIFAR_SHAPE.to_vec(), labels, CIFAR_CLASSES, None)?;
    let test = load_cifar10_binary(&dir.join("test_batch.bin"), Some(test_max), Some(train.stats()))?;
    Ok((train, test))
}

/// Random direction for a class mean. Image shapes `[C, H, W]` get a
/// piecewise-constant pattern on an 8x8 grid per channel, so that local
/// pooling keeps the class signal; other shapes are i.i.d. per entry.
fn smooth_direction<R: Rng>(shape: &[usize], r: &mut R) -> Vec<f64> {
    let dim: usize = shape.iter().product();
    let [c, h, w] = shape else {
        return (0..dim).map(|_| r.sample(StandardNormal)).collect();
    };
    let (bh, bw) = ((h / 8).max(1), (w / 8).max(1));
    let (gh, gw) = (h.div_ceil(bh), w.div_ceil(bw));
    let coarse: Vec<f64> = (0..c * gh * gw).map(|_| r.sample(StandardNormal)).collect();
    let mut v = Vec::with_capacity(dim);
    for ch in 0..*c {
        for y in 0..*h {
            for x in 0..*w {
                v.push(coarse[(ch * gh + y / bh) * gw + x / bw]);
            }
        }
    }
    v
}

fn synth_raw(
    n: usize,
    num_classes: usize,
    shape: &[usize],
    separation: f64,
    seed: u64,
) -> (Vec<f64>, Vec<usize>) {
    let dim: usize = shape.iter().product();
    let mut mr = rng::stream(seed, "synth/means");
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let v = smooth_direction(shape, &mut mr);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            // Nearly orthogonal directions, so pairwise distance ~= separation.
            v.into_iter()
                .map(|x| x / norm * separation / std::f64::consts::SQRT_2)
                .collect()
        })
        .collect();
    let mut sr = rng::stream(seed, "synth/samples");
    let mut raw = Vec::with_capacity(n * dim);
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    for &l in &labels {
        raw.extend(means[l].iter().map(|m| m + sr.sample::<f64, _>(StandardNormal)));
    }
    (raw, labels)
}

/// Class-conditional unit-variance Gaussians whose means sit about
/// `separation` apart. Labels cycle through the classes, so every class is
/// balanced.
pub fn synth_dataset(
    n: usize,
    num_classes: usize,
    shape: &[usize],
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    let (raw, labels) = synth_raw(n, num_classes, shape, separation, seed);
    Dataset::from_raw(raw, shape.to_vec(), labels, num_classes, None)
}

/// Train/test pair drawn from the same class means; the test split is
/// normalized with the training statistics.
pub fn synth_split(
    n_train: usize,
    n_test: usize,
    num_classes: usize,
    shape: &[usize],
    separation: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let (mut raw, mut labels) = synth_raw(n_train + n_test, num_classes, shape, separation, seed);
    let dim: usize = shape.iter().product();
    let test_raw = raw.split_off(n_train * dim);
    let test_labels = labels.split_off(n_train);
    let train = Dataset::from_raw(raw, shape.to_vec(), labels, num_classes, None)?;
    let test = Dataset::from_raw(test_raw, shape.to_vec(), test_labels, num_classes, Some(train.stats()))?;
    Ok((train, test))
}

/// Random permutation of `0..n` cut into `num_clients` contiguous shards
/// whose sizes differ by at most one.
pub fn shard_iid(n: usize, num_clients: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if num_clients == 0 || num_clients > n {
        return Err(SimError::config(
            "num_clients",
            format!("cannot split {n} samples over {num_clients} clients"),
        ));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, "data/shard"));
    let (base, extra) = (n / num_clients, n % num_clients);
    let mut shards = Vec::with_capacity(num_clients);
    let mut off = 0;
    for c in 0..num_clients {
        let len = base + usize::from(c < extra);
        shards.push(perm[off..off + len].to_vec());
        off += len;
    }
    Ok(shards)
}

/// Label-skewed shards: each class is split across clients by proportions
/// drawn from a symmetric Dirichlet(`alpha`).
pub fn shard_dirichlet(labels: &[usize], num_classes: usize, num_clients: usize, alpha: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    if num_clients == 0 {
        return Err(SimError::config("num_clients", "must be positive"));
    }
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| SimError::config("data.dirichlet_alpha", e.to_string()))?;
    let mut r = rng::stream(seed, "data/dirichlet");
    let mut shards = vec![Vec::new(); num_clients];
    for class in 0..num_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut r);
        let draws: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut r).max(1e-300)).collect();
        let total: f64 = draws.iter().sum();
        let mut cum = 0.0;
        let mut start = 0;
        for (c, w) in draws.iter().enumerate() {
            cum += w / total;
            let end = if c + 1 == num_clients {
                idx.len()
            } else {
                ((cum * idx.len() as f64).round() as usize).clamp(start, idx.len())
            };
            shards[c].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    if shards.iter().any(Vec::is_empty) {
        // Every client needs at least one sample to train.
        let donor = (0..num_clients).max_by_key(|&c| shards[c].len()).unwrap();
        for c in 0..num_clients {
            if shards[c].is_empty() && shards[donor].len() > 1 {
                let v = shards[donor].pop().unwrap();
                shards[c].push(v);
            }
        }
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}
