//! Synthetic clustered data, dataset files, and the graded-similarity pair harness.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::TrainConfig;
use super::embfile::{read_embeddings, write_embeddings};
use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Matrix};

/// Independent seed for sub-task `stream` of a run seeded with `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Matrix,
    pub labels: Vec<usize>,
    /// One unit-norm row per cluster.
    pub centers: Matrix,
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `per_cluster` noisy copies of every center, cluster-major.
pub fn sample_clusters(centers: &Matrix, per_cluster: usize, noise_scale: f64, seed: u64) -> Result<(Matrix, Vec<usize>)> {
    if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
        return Err(Error::Config(format!("noise_scale must be non-negative, got {noise_scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = centers.rows() * per_cluster;
    let labels: Vec<usize> = (0..n).map(|i| i / per_cluster).collect();
    let samples = Matrix::from_fn(n, centers.cols(), |i, j| {
        let noise: f64 = rng.sample(StandardNormal);
        centers[(labels[i], j)] + noise_scale * noise
    });
    Ok((samples, labels))
}

/// Centers uniform on the unit sphere, samples = center + `noise_scale`·N(0, I).
pub fn generate_synthetic(num_clusters: usize, per_cluster: usize, dim: usize, noise_scale: f64, seed: u64) -> Result<Dataset> {
    if num_clusters == 0 || per_cluster == 0 || dim == 0 {
        return Err(Error::Config(format!(
            "cluster count, cluster size and dimension must be positive (got {num_clusters}, {per_cluster}, {dim})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Matrix::zeros(num_clusters, dim);
    for c in 0..num_clusters {
        centers.row_mut(c).copy_from_slice(&random_unit(dim, &mut rng));
    }
    let (samples, labels) = sample_clusters(&centers, per_cluster, noise_scale, rng.next_u64())?;
    Ok(Dataset { samples, labels, centers })
}

/// Cone-shaped, anisotropic embeddings: clustered data pushed through a
/// badly conditioned linear map and offset by a large common direction.
pub fn anisotropic_embeddings(num_clusters: usize, per_cluster: usize, dim: usize, noise_scale: f64, seed: u64) -> Result<Dataset> {
    let base = generate_synthetic(num_clusters, per_cluster, dim, noise_scale, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mixing = Matrix::from_fn(dim, dim, |i, _| rng.sample::<f64, _>(StandardNormal) * 0.8f64.powi(i as i32));
    let offset: Vec<f64> = random_unit(dim, &mut rng).into_iter().map(|v| 3.0 * v).collect();
    let mut samples = base.samples.matmul(&mixing)?;
    for i in 0..samples.rows() {
        for (v, o) in samples.row_mut(i).iter_mut().zip(&offset) {
            *v += o;
        }
    }
    Ok(Dataset { samples, ..base })
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn labels_path(path: &Path) -> PathBuf {
    sidecar(path, ".labels")
}

pub fn centers_path(path: &Path) -> PathBuf {
    sidecar(path, ".centers")
}

impl Dataset {
    /// Writes samples to `path`, labels to `<path>.labels` (one per line) and centers to `<path>.centers`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_embeddings(path, &self.samples)?;
        let labels: String = self.labels.iter().map(|l| format!("{l}\n")).collect();
        fs::write(labels_path(path), labels)?;
        write_embeddings(centers_path(path), &self.centers)?;
        Ok(())
    }

    /// Reads a dataset written by [`Dataset::save`]. Without a centers file,
    /// class means normalized to unit length stand in for the centers.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let samples = read_embeddings(path)?;
        let text = fs::read_to_string(labels_path(path)).map_err(|e| {
            Error::Format(format!("cannot read labels file {}: {e}", labels_path(path).display()))
        })?;
        let labels = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad label '{l}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        if labels.len() != samples.rows() {
            return Err(Error::Format(format!(
                "{} labels for {} samples",
                labels.len(),
                samples.rows()
            )));
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        let centers_file = centers_path(path);
        let centers = if centers_file.exists() {
            read_embeddings(&centers_file)?
        } else {
            class_means(&samples, &labels, num_classes)
        };
        if centers.rows() < num_classes || centers.cols() != samples.cols() {
            return Err(Error::Format(format!(
                "centers of shape {:?} do not cover {num_classes} classes of dimension {}",
                centers.shape(),
                samples.cols()
            )));
        }
        Ok(Self { samples, labels, centers })
    }
}

fn class_means(samples: &Matrix, labels: &[usize], num_classes: usize) -> Matrix {
    let mut sums = Matrix::zeros(num_classes, samples.cols());
    for (row, &l) in samples.row_iter().zip(labels) {
        for (s, v) in sums.row_mut(l).iter_mut().zip(row) {
            *s += v;
        }
    }
    for c in 0..num_classes {
        let n = norm(sums.row(c));
        if n > 0.0 {
            sums.row_mut(c).iter_mut().for_each(|v| *v /= n);
        }
    }
    sums
}

/// Sample pairs with graded gold similarity (cosine of their cluster centers).
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<(usize, usize)>,
    pub gold: Vec<f64>,
}

pub fn similarity_pairs(labels: &[usize], centers: &Matrix, count: usize, seed: u64) -> Result<PairSet> {
    if labels.len() < 2 {
        return Err(Error::InsufficientData("pair harness needs at least 2 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    let mut gold = Vec::with_capacity(count);
    while pairs.len() < count {
        let a = rng.random_range(0..labels.len());
        let b = rng.random_range(0..labels.len());
        if a == b {
            continue;
        }
        let (ca, cb) = (centers.row(labels[a]), centers.row(labels[b]));
        gold.push(dot(ca, cb) / (norm(ca) * norm(cb)));
        pairs.push((a, b));
    }
    Ok(PairSet { pairs, gold })
}

/// Consecutive members of each cluster, the positive pairs for alignment.
pub fn same_cluster_pairs(labels: &[usize]) -> Vec<(usize, usize)> {
    let mut last: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    let mut pairs = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if let Some(prev) = last.insert(l, i) {
            pairs.push((prev, i));
        }
    }
    pairs
}

/// Training pool plus a labelled development split.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingData {
    pub train: Matrix,
    pub dev: Matrix,
    pub dev_labels: Vec<usize>,
    pub centers: Matrix,
}

impl TrainingData {
    /// Training and development samples drawn around the same centers.
    pub fn synthetic(config: &TrainConfig) -> Result<Self> {
        let ds = generate_synthetic(
            config.num_clusters,
            config.per_cluster,
            config.input_dim,
            config.noise_scale,
            config.data_seed,
        )?;
        let (dev, dev_labels) = sample_clusters(
            &ds.centers,
            config.dev_per_cluster,
            config.noise_scale,
            derive_seed(config.data_seed, 1),
        )?;
        Ok(Self {
            train: ds.samples,
            dev,
            dev_labels,
            centers: ds.centers,
        })
    }

    /// Every fifth sample goes to the development split.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let (dev_idx, train_idx): (Vec<usize>, Vec<usize>) = (0..ds.samples.rows()).partition(|i| i % 5 == 4);
        if dev_idx.len() < 2 || train_idx.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "{} samples are too few for a train/dev split",
                ds.samples.rows()
            )));
        }
        Ok(Self {
            train: ds.samples.select_rows(&train_idx),
            dev: ds.samples.select_rows(&dev_idx),
            dev_labels: dev_idx.iter().map(|&i| ds.labels[i]).collect(),
            centers: ds.centers.clone(),
        })
    }
}
