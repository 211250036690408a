//! Labeled datasets: synthetic Gaussian mixtures, long-tail subsampling,
//! the CIFAR-10 binary reader and the `FGDS`/`FGLZ` container format.
//!
//! Container layout (little-endian):
//! `magic[4] | version u32 | N u32 | num_classes u32 | rank u32 | dims u32[rank]
//!  | labels u16[N] | samples f32[N * prod(dims)]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use fgan_autodiff::Tensor;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{format_err, io_err, FganError, Result};
use crate::rng::{self, tag};

pub const DATASET_MAGIC: [u8; 4] = *b"FGDS";
pub const LATENT_MAGIC: [u8; 4] = *b"FGLZ";
pub const FORMAT_VERSION: u32 = 1;

pub const CIFAR_RECORD_BYTES: usize = 3073;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_SHAPE: [usize; 3] = [3, 32, 32];

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    sample_shape: Vec<usize>,
    samples: Vec<f32>,
    labels: Vec<u16>,
    num_classes: usize,
    class_counts: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(sample_shape: Vec<usize>, samples: Vec<f32>, labels: Vec<u16>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 || num_classes > u16::MAX as usize {
            return Err(FganError::Config(format!("invalid class count {num_classes}")));
        }
        if sample_shape.is_empty() || sample_shape.contains(&0) {
            return Err(FganError::Config(format!("invalid sample shape {sample_shape:?}")));
        }
        let dim: usize = sample_shape.iter().product();
        if samples.len() != labels.len() * dim {
            return Err(FganError::Data(format!(
                "{} labels need {} sample values, got {}",
                labels.len(),
                labels.len() * dim,
                samples.len()
            )));
        }
        let mut class_counts = vec![0; num_classes];
        for &l in &labels {
            let l = l as usize;
            if l >= num_classes {
                return Err(FganError::Data(format!("label {l} out of range for {num_classes} classes")));
            }
            class_counts[l] += 1;
        }
        Ok(Self {
            sample_shape,
            samples,
            labels,
            num_classes,
            class_counts,
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

    pub fn feature_dim(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let d = self.feature_dim();
        &self.samples[i * d..(i + 1) * d]
    }

    /// Empirical class distribution.
    pub fn p_bias(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.class_counts.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] as usize == class).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let d = self.feature_dim();
        let mut samples = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            samples.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Self::new(self.sample_shape.clone(), samples, labels, self.num_classes).expect("subset of a valid dataset")
    }

    /// Samples at `indices` stacked as `[len, sample_shape...]`.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend(self.sample(i).iter().map(|&v| v as f64));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor::new(shape, data).expect("batch of a valid dataset")
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i] as usize).collect()
    }

    /// Deterministic permutation of the samples.
    pub fn shuffled(&self, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::stream(seed, &[tag::SUBSAMPLE, 1]));
        self.subset(&order)
    }

    /// Split off the last `fraction` of a seeded permutation as a held-out set.
    pub fn split(&self, fraction: f64, seed: u64) -> (Self, Self) {
        let shuffled = self.shuffled(seed);
        let held = ((self.len() as f64) * fraction).round() as usize;
        let cut = self.len() - held.min(self.len());
        let train: Vec<usize> = (0..cut).collect();
        let test: Vec<usize> = (cut..self.len()).collect();
        (shuffled.subset(&train), shuffled.subset(&test))
    }
}

/// Target per-class sizes for a long-tail subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImbalanceProfile {
    Counts(Vec<usize>),
    /// `round(head * ratio^k)` for class `k`, at least 1.
    Geometric { head: usize, ratio: f64 },
}

impl ImbalanceProfile {
    pub fn counts(&self, num_classes: usize) -> Result<Vec<usize>> {
        match self {
            Self::Counts(c) => {
                if c.len() != num_classes {
                    return Err(FganError::Config(format!(
                        "profile has {} classes, dataset has {num_classes}",
                        c.len()
                    )));
                }
                if c.contains(&0) {
                    return Err(FganError::Config("profile counts must be at least 1".into()));
                }
                Ok(c.clone())
            }
            &Self::Geometric { head, ratio } => {
                if head == 0 || !(ratio > 0.0 && ratio <= 1.0) {
                    return Err(FganError::Config(format!(
                        "geometric profile needs head >= 1 and ratio in (0, 1], got head {head} ratio {ratio}"
                    )));
                }
                Ok(geometric_counts(head, ratio, num_classes))
            }
        }
    }
}

pub fn geometric_counts(head: usize, ratio: f64, num_classes: usize) -> Vec<usize> {
    (0..num_classes)
        .map(|k| ((head as f64) * ratio.powi(k as i32)).round().max(1.0) as usize)
        .collect()
}

/// Decay ratio whose geometric profile total is closest to `target_total`,
/// by bisection on the (monotone) total.
pub fn fit_geometric_ratio(head: usize, num_classes: usize, target_total: usize) -> Result<f64> {
    let total = |r: f64| geometric_counts(head, r, num_classes).iter().sum::<usize>();
    if target_total > total(1.0) || target_total < total(f64::MIN_POSITIVE) {
        return Err(FganError::Config(format!(
            "total {target_total} is unreachable with head {head} over {num_classes} classes"
        )));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < target_total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let best = if target_total.abs_diff(total(lo)) <= target_total.abs_diff(total(hi)) {
        lo
    } else {
        hi
    };
    Ok(best.max(f64::MIN_POSITIVE))
}

/// Isotropic 2-D Gaussian per class, centred at angle `2*pi*k/num_classes`
/// on a circle of `radius`.
pub fn gen_gaussian_mixture(num_classes: usize, counts: &[usize], radius: f64, sigma: f64, seed: u64) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(FganError::Config(format!("need at least 2 classes, got {num_classes}")));
    }
    if counts.len() != num_classes {
        return Err(FganError::Config(format!(
            "{} counts for {num_classes} classes",
            counts.len()
        )));
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(FganError::Config(format!("class {k} has zero requested samples")));
    }
    if !(sigma > 0.0) {
        return Err(FganError::Config(format!("sigma must be positive, got {sigma}")));
    }
    let mut rng = rng::stream(seed, &[tag::DATA]);
    let noise = Normal::new(0.0, sigma).map_err(|e| FganError::Config(e.to_string()))?;
    let total: usize = counts.iter().sum();
    let mut points = Vec::with_capacity(total);
    for (k, &count) in counts.iter().enumerate() {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / num_classes as f64;
        let (cx, cy) = (radius * angle.cos(), radius * angle.sin());
        for _ in 0..count {
            let x = cx + noise.sample(&mut rng);
            let y = cy + noise.sample(&mut rng);
            points.push(([x as f32, y as f32], k as u16));
        }
    }
    points.shuffle(&mut rng);
    let samples = points.iter().flat_map(|(p, _)| *p).collect();
    let labels = points.iter().map(|&(_, l)| l).collect();
    LabeledDataset::new(vec![2], samples, labels, num_classes)
}

/// Per-class subsample without replacement matching `profile` exactly,
/// in a seeded random order.
pub fn make_imbalanced(ds: &LabeledDataset, profile: &ImbalanceProfile, seed: u64) -> Result<LabeledDataset> {
    let wanted = profile.counts(ds.num_classes())?;
    let mut rng = rng::stream(seed, &[tag::SUBSAMPLE]);
    let mut chosen = Vec::with_capacity(wanted.iter().sum());
    for (class, &want) in wanted.iter().enumerate() {
        let pool = ds.indices_of_class(class);
        if want > pool.len() {
            return Err(FganError::Data(format!(
                "class {class} has {} samples, profile asks for {want}",
                pool.len()
            )));
        }
        chosen.extend(index::sample(&mut rng, pool.len(), want).into_iter().map(|i| pool[i]));
    }
    chosen.shuffle(&mut rng);
    Ok(ds.subset(&chosen))
}

/// Draw `n` indices uniformly with replacement.
pub fn random_indices<R: Rng>(rng: &mut R, len: usize, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..len)).collect()
}

fn parse_cifar(bytes: &[u8], path: &Path) -> Result<(Vec<f32>, Vec<u16>)> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(format_err(
            path,
            format!("length {} is not a multiple of {CIFAR_RECORD_BYTES}", bytes.len()),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut samples = Vec::with_capacity(n * (CIFAR_RECORD_BYTES - 1));
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        if rec[0] as usize >= CIFAR_CLASSES {
            return Err(format_err(path, format!("record {r} has label byte {}", rec[0])));
        }
        labels.push(rec[0] as u16);
        samples.extend(rec[1..].iter().map(|&p| p as f32 / 127.5 - 1.0));
    }
    Ok((samples, labels))
}

/// Read CIFAR-10 binary batches. `path` is either one batch file or a
/// directory holding `data_batch_1.bin` .. `data_batch_5.bin`.
pub fn load_cifar10(path: &Path) -> Result<LabeledDataset> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let files: Vec<PathBuf> = (1..=5)
            .map(|i| path.join(format!("data_batch_{i}.bin")))
            .filter(|p| p.exists())
            .collect();
        if files.is_empty() {
            return Err(format_err(path, "no data_batch_*.bin files"));
        }
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let bytes = std::fs::read(&f).map_err(io_err(&f))?;
        let (s, l) = parse_cifar(&bytes, &f)?;
        samples.extend(s);
        labels.extend(l);
    }
    LabeledDataset::new(CIFAR_SHAPE.to_vec(), samples, labels, CIFAR_CLASSES)
}

fn write_container(magic: [u8; 4], ds: &LabeledDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let io = io_err(path);
    (|| -> std::io::Result<()> {
        w.write_all(&magic)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(ds.len() as u32)?;
        w.write_u32::<LittleEndian>(ds.num_classes() as u32)?;
        w.write_u32::<LittleEndian>(ds.sample_shape().len() as u32)?;
        for &d in ds.sample_shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &l in ds.labels() {
            w.write_u16::<LittleEndian>(l)?;
        }
        for &v in ds.samples() {
            w.write_f32::<LittleEndian>(v)?;
        }
        w.flush()
    })()
    .map_err(io)
}

fn read_container(magic: [u8; 4], path: &Path) -> Result<LabeledDataset> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let bad = |detail: String| format_err(path, detail);
    let eof = |e: std::io::Error| format_err(path, format!("truncated: {e}"));
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(eof)?;
    if m != magic {
        return Err(bad(format!("bad magic {m:?}, expected {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(eof)?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let num_classes = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let rank = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    if rank == 0 || rank > 8 {
        return Err(bad(format!("invalid rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.read_u32::<LittleEndian>().map_err(eof)? as usize);
    }
    let mut labels = vec![0u16; n];
    r.read_u16_into::<LittleEndian>(&mut labels).map_err(eof)?;
    let dim: usize = dims.iter().product();
    let mut samples = vec![0f32; n * dim];
    r.read_f32_into::<LittleEndian>(&mut samples).map_err(eof)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io_err(path))? != 0 {
        return Err(bad("trailing bytes after payload".into()));
    }
    LabeledDataset::new(dims, samples, labels, num_classes).map_err(|e| bad(e.to_string()))
}

pub fn save_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    write_container(DATASET_MAGIC, ds, path)
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    if !path.exists() {
        return Err(FganError::MissingArtifact {
            path: path.to_path_buf(),
            producer: "gen-data",
        });
    }
    read_container(DATASET_MAGIC, path)
}

/// Latent vectors with their target classes, stored like a dataset under
/// the `FGLZ` magic.
pub fn save_latents(latents: &LabeledDataset, path: &Path) -> Result<()> {
    write_container(LATENT_MAGIC, latents, path)
}

pub fn load_latents(path: &Path) -> Result<LabeledDataset> {
    read_container(LATENT_MAGIC, path)
}
