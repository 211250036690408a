//! Fairness auditing and sample-quality metrics over classifier embeddings.

use std::fmt::Write as _;
use std::path::Path;

use fgan_autodiff::Tensor;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{io_err, FganError, Result};
use crate::models::{argmax, Classifier, Generator};
use crate::rng::{self, tag};

/// Tolerance for probability rows summing to one.
pub const SIMPLEX_TOL: f64 = 1e-5;

/// Hard counts the argmax class; soft averages the probabilities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Hard,
    #[default]
    Soft,
}

/// Reject rows that are not on the probability simplex.
pub fn check_simplex(probs: &Tensor) -> Result<()> {
    if probs.shape().len() != 2 {
        return Err(FganError::Usage(format!("probabilities must be [n, K], got {:?}", probs.shape())));
    }
    for i in 0..probs.shape()[0] {
        let row = probs.row(i);
        let s: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(FganError::Numerical(format!("row {i} is not a probability vector (sum {s})")));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub counts: Vec<usize>,
    pub total: usize,
    /// Mean classifier probability per class.
    pub soft: Vec<f64>,
}

impl ClassHistogram {
    pub fn from_probs(probs: &Tensor) -> Result<Self> {
        check_simplex(probs)?;
        let (n, k) = (probs.shape()[0], probs.shape()[1]);
        let mut counts = vec![0; k];
        let mut soft = vec![0.0; k];
        for i in 0..n {
            let row = probs.row(i);
            counts[argmax(row)] += 1;
            for (s, &p) in soft.iter_mut().zip(row) {
                *s += p;
            }
        }
        soft.iter_mut().for_each(|s| *s /= n.max(1) as f64);
        Ok(Self { counts, total: n, soft })
    }

    /// A histogram known only by counts; the soft view equals the hard one.
    pub fn from_counts(counts: Vec<usize>) -> Self {
        let total: usize = counts.iter().sum();
        let soft = counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect();
        Self { counts, total, soft }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// Per-class expectation `E_d`.
    pub fn expectations(&self, mode: Mode) -> Vec<f64> {
        match mode {
            Mode::Hard => self.counts.iter().map(|&c| c as f64 / self.total as f64).collect(),
            Mode::Soft => self.soft.clone(),
        }
    }

    /// Pool several histograms over the same classes.
    pub fn merge(hists: &[ClassHistogram]) -> Self {
        let k = hists[0].num_classes();
        let total: usize = hists.iter().map(|h| h.total).sum();
        let mut counts = vec![0; k];
        let mut soft = vec![0.0; k];
        for h in hists {
            for d in 0..k {
                counts[d] += h.counts[d];
                soft[d] += h.soft[d] * h.total as f64;
            }
        }
        soft.iter_mut().for_each(|s| *s /= total.max(1) as f64);
        Self { counts, total, soft }
    }
}

/// Class counts and mean probabilities of `num_samples` generated samples.
pub fn class_histogram(g: &Generator, c: &Classifier, num_samples: usize, seed: u64) -> Result<ClassHistogram> {
    if num_samples == 0 {
        return Ok(ClassHistogram::from_counts(vec![0; c.num_classes()]));
    }
    let mut rng = rng::stream(seed, &[tag::AUDIT]);
    let z = g.sample_latents(&mut rng, num_samples);
    ClassHistogram::from_probs(&c.probabilities(&g.generate(&z)?)?)
}

/// L2 norm of `(1/K - E_d)`.
pub fn fairness_metric(hist: &ClassHistogram, mode: Mode) -> Result<f64> {
    let k = hist.num_classes();
    if k < 2 {
        return Err(FganError::Usage(format!("fairness needs at least 2 classes, got {k}")));
    }
    if hist.total == 0 {
        return Err(FganError::Usage("fairness of an empty histogram".into()));
    }
    let uniform = vec![1.0 / k as f64; k];
    Ok(l2_distance(&hist.expectations(mode), &uniform))
}

/// L2 norm of the difference between two expectation vectors.
pub fn fairness_metric_ref(gen: &ClassHistogram, reference: &ClassHistogram, mode: Mode) -> Result<f64> {
    if gen.num_classes() != reference.num_classes() {
        return Err(FganError::Usage(format!(
            "histograms over {} and {} classes",
            gen.num_classes(),
            reference.num_classes()
        )));
    }
    if gen.total == 0 || reference.total == 0 {
        return Err(FganError::Usage("fairness of an empty histogram".into()));
    }
    Ok(l2_distance(&gen.expectations(mode), &reference.expectations(mode)))
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl FeatureStats {
    /// Mean and unbiased covariance of the rows of `[n, f]` features.
    pub fn from_features(features: &Tensor) -> Result<Self> {
        let (n, f) = rows_cols(features)?;
        if n < 2 {
            return Err(FganError::Usage(format!("feature statistics need at least 2 samples, got {n}")));
        }
        let x = DMatrix::from_row_slice(n, f, features.data());
        let mean = x.row_mean().transpose();
        let centered = DMatrix::from_fn(n, f, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        Ok(Self { mean, cov, count: n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(self.cov.iter()).all(|v| v.is_finite())
    }
}

fn rows_cols(t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [n, f] => Ok((n, f)),
        ref s => Err(FganError::Usage(format!("features must be [n, f], got {s:?}"))),
    }
}

/// Symmetric square root with eigenvalues clamped at zero; also returns the
/// clamped (negative) eigenvalue mass.
fn sym_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clamped: f64 = eig.eigenvalues.iter().filter(|&&l| l < 0.0).map(|l| -l).sum();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&roots) * v.transpose(), clamped)
}

/// Frechet distance between Gaussian fits.
pub fn fid(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(FganError::Usage(format!("feature dims {} and {}", a.dim(), b.dim())));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(FganError::Numerical("non-finite feature statistics".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    let diff = &a.mean - &b.mean;
    let (root_a, clamped_a) = sym_sqrt(&a.cov);
    let inner = &root_a * &b.cov * &root_a;
    let sym = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clamped_inner: f64 = eig.eigenvalues.iter().filter(|&&l| l < 0.0).map(|l| -l).sum();
    let trace_sqrt: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let trace = a.cov.trace() + b.cov.trace();
    if clamped_a + clamped_inner > 1e-3 * trace.abs().max(f64::MIN_POSITIVE) {
        log::warn!("fid: clamped negative eigenvalue mass {:.3e}", clamped_a + clamped_inner);
    }
    let value = diff.norm_squared() + trace - 2.0 * trace_sqrt;
    if !value.is_finite() {
        return Err(FganError::Numerical("non-finite FID".into()));
    }
    Ok(value.max(0.0))
}

/// Unbiased squared MMD with kernel `(x.y / f + 1)^3`.
pub fn kid(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (m, f) = rows_cols(a)?;
    let (n, fb) = rows_cols(b)?;
    if f != fb {
        return Err(FganError::Usage(format!("feature dims {f} and {fb}")));
    }
    if m < 2 || n < 2 {
        return Err(FganError::Usage(format!("KID needs at least 2 samples per side, got {m} and {n}")));
    }
    let kernel = |x: &[f64], y: &[f64]| {
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        (dot / f as f64 + 1.0).powi(3)
    };
    let within = |t: &Tensor, len: usize| {
        let mut s = 0.0;
        for i in 0..len {
            for j in (i + 1)..len {
                s += kernel(t.row(i), t.row(j));
            }
        }
        2.0 * s / (len * (len - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..m {
        for j in 0..n {
            cross += kernel(a.row(i), b.row(j));
        }
    }
    Ok(within(a, m) + within(b, n) - 2.0 * cross / (m * n) as f64)
}

/// `exp(mean KL(p(y|x) || p(y)))` per split; mean and population std.
pub fn inception_score(probs: &Tensor, splits: usize) -> Result<(f64, f64)> {
    check_simplex(probs)?;
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    if splits == 0 || n < splits {
        return Err(FganError::Usage(format!("{n} samples cannot form {splits} splits")));
    }
    let mut scores = Vec::with_capacity(splits);
    for s in 0..splits {
        let (lo, hi) = (s * n / splits, (s + 1) * n / splits);
        let mut marginal = vec![0.0; k];
        for i in lo..hi {
            for (m, &p) in marginal.iter_mut().zip(probs.row(i)) {
                *m += p;
            }
        }
        marginal.iter_mut().for_each(|m| *m /= (hi - lo) as f64);
        let mut kl = 0.0;
        for i in lo..hi {
            for (&p, &m) in probs.row(i).iter().zip(&marginal) {
                if p > 0.0 {
                    kl += p * (p / m).ln();
                }
            }
        }
        scores.push((kl / (hi - lo) as f64).exp());
    }
    Ok(mean_std(&scores))
}

/// Named or explicit class-proportion profile.
pub fn parse_profile(spec: &str, num_classes: usize) -> Result<Vec<f64>> {
    let p: Vec<f64> = match spec {
        "uniform" => vec![1.0; num_classes],
        "skewed" => skewed_profile(num_classes),
        s if s.starts_with("class") => {
            let k: usize = s[5..]
                .trim_start_matches([':', '-'])
                .parse()
                .map_err(|_| FganError::Config(format!("bad profile {s}")))?;
            if k >= num_classes {
                return Err(FganError::Config(format!("profile {s}: class out of range")));
            }
            (0..num_classes).map(|d| if d == k { 1.0 } else { 0.0 }).collect()
        }
        s => s
            .split(':')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| FganError::Config(format!("bad profile {s}")))?,
    };
    if p.len() != num_classes || p.iter().any(|&v| !(v >= 0.0)) || p.iter().sum::<f64>() <= 0.0 {
        return Err(FganError::Config(format!("profile {spec} is not a distribution over {num_classes} classes")));
    }
    let s: f64 = p.iter().sum();
    Ok(p.into_iter().map(|v| v / s).collect())
}

/// The benchmark's 60/20/10/7/3 skew, extended geometrically past five classes.
pub fn skewed_profile(num_classes: usize) -> Vec<f64> {
    const BASE: [f64; 5] = [60.0, 20.0, 10.0, 7.0, 3.0];
    let mut p: Vec<f64> = (0..num_classes)
        .map(|k| if k < 5 { BASE[k] } else { 3.0 * 0.5f64.powi(k as i32 - 4) })
        .collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Split `total` into per-class counts by largest remainder.
pub fn apportion(profile: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = profile.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..profile.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub profiles: Vec<Vec<f64>>,
    /// `fid[i][j]`: first half of profile `i` against second half of profile `j`.
    pub fid: Vec<Vec<f64>>,
    /// Samples on each side of a cell.
    pub samples_per_set: usize,
    /// FID of the first set of profile 0 against itself.
    pub identical_set: f64,
}

impl Heatmap {
    /// Smallest ratio of a cross-profile cell to the larger of its two
    /// same-profile cells.
    pub fn min_cross_ratio(&self) -> f64 {
        let n = self.fid.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let diag = self.fid[i][i].max(self.fid[j][j]);
                    best = best.min(self.fid[i][j] / diag);
                }
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let n = self.fid.len();
        let mut s = String::from("profile");
        for j in 0..n {
            let _ = write!(s, ",p{j}");
        }
        s.push_str(",samples,proportions\n");
        for i in 0..n {
            let _ = write!(s, "p{i}");
            for j in 0..n {
                let _ = write!(s, ",{:.6}", self.fid[i][j]);
            }
            let props: Vec<String> = self.profiles[i].iter().map(|p| format!("{p:.4}")).collect();
            let _ = writeln!(s, ",{},{}", self.samples_per_set, props.join(":"));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(io_err(path))
    }
}

/// FID between every pair of class-mix profiles, each drawn as two disjoint
/// sets of `per_set` samples from `dataset`.
pub fn fid_sensitivity_heatmap(
    dataset: &LabeledDataset,
    embedder: &Classifier,
    profiles: &[Vec<f64>],
    per_set: usize,
    seed: u64,
) -> Result<Heatmap> {
    if profiles.is_empty() {
        return Err(FganError::Usage("no profiles".into()));
    }
    if per_set < 2 {
        return Err(FganError::Usage("heatmap sets need at least 2 samples".into()));
    }
    let k = dataset.num_classes();
    let mut rng = rng::stream(seed, &[tag::HEATMAP]);
    let mut pools: Vec<Vec<usize>> = (0..k).map(|c| dataset.indices_of_class(c)).collect();
    let mut sets = Vec::with_capacity(profiles.len());
    for p in profiles {
        if p.len() != k {
            return Err(FganError::Usage(format!("profile over {} classes, dataset has {k}", p.len())));
        }
        let counts = apportion(p, per_set);
        let mut halves = [Vec::new(), Vec::new()];
        for (c, &want) in counts.iter().enumerate() {
            if 2 * want > pools[c].len() {
                return Err(FganError::Data(format!(
                    "class {c} has {} samples, two disjoint sets need {}",
                    pools[c].len(),
                    2 * want
                )));
            }
            pools[c].shuffle(&mut rng);
            halves[0].extend_from_slice(&pools[c][..want]);
            halves[1].extend_from_slice(&pools[c][want..2 * want]);
        }
        let stats = |idx: &[usize]| -> Result<FeatureStats> {
            FeatureStats::from_features(&embedder.features(&dataset.batch(idx))?)
        };
        sets.push([stats(&halves[0])?, stats(&halves[1])?]);
    }
    let n = profiles.len();
    let mut grid = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            grid[i][j] = fid(&sets[i][0], &sets[j][1])?;
        }
    }
    Ok(Heatmap {
        profiles: profiles.to_vec(),
        fid: grid,
        samples_per_set: per_set,
        identical_set: fid(&sets[0][0], &sets[0][0])?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Self {
        let (mean, std) = mean_std(v);
        Self { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub repeats: usize,
    pub samples: usize,
    /// Per-side sample cap for KID.
    pub kid_samples: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            repeats: 5,
            samples: 2000,
            kid_samples: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub seed: u64,
    pub config_hash: String,
    pub repeats: usize,
    pub samples: usize,
    pub fairness_hard: MeanStd,
    pub fairness_soft: MeanStd,
    /// Pooled over all repeats.
    pub histogram: ClassHistogram,
    pub fid: f64,
    /// Reported x 10^3.
    pub kid_x1000: f64,
    pub inception_score: MeanStd,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Fairness over `repeats` independent sample sets, plus FID/KID/IS of the
/// pooled samples against `reference` in the classifier's feature space.
pub fn evaluate(
    g: &Generator,
    c: &Classifier,
    reference: &LabeledDataset,
    spec: &EvalSpec,
    seed: u64,
    config_hash: &str,
    label: &str,
) -> Result<EvalReport> {
    if spec.repeats == 0 || spec.samples < 2 {
        return Err(FganError::Usage("evaluation needs repeats >= 1 and samples >= 2".into()));
    }
    if reference.len() < 2 {
        return Err(FganError::Data("reference set needs at least 2 samples".into()));
    }
    let ref_feats = c.features(&reference.batch(&(0..reference.len()).collect::<Vec<_>>()))?;
    let ref_stats = FeatureStats::from_features(&ref_feats)?;
    let kid_n = spec.kid_samples.min(spec.samples).min(reference.len()).max(2);
    let ref_kid = head_rows(&ref_feats, kid_n)?;

    let (mut hard, mut soft, mut hists, mut kids) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut all_feats, mut all_probs) = (Vec::new(), Vec::new());
    let mut feat_dim = 0;
    for r in 0..spec.repeats {
        let mut rng = rng::stream(seed, &[tag::EVAL, r as u64]);
        let z = g.sample_latents(&mut rng, spec.samples);
        let (probs, feats) = c.probs_and_features(&g.generate(&z)?)?;
        let h = ClassHistogram::from_probs(&probs)?;
        hard.push(fairness_metric(&h, Mode::Hard)?);
        soft.push(fairness_metric(&h, Mode::Soft)?);
        hists.push(h);
        kids.push(kid(&head_rows(&feats, kid_n)?, &ref_kid)?);
        feat_dim = feats.shape()[1];
        all_feats.extend_from_slice(feats.data());
        all_probs.extend_from_slice(probs.data());
    }
    let n = spec.repeats * spec.samples;
    let feats = Tensor::new(vec![n, feat_dim], all_feats)?;
    let probs = Tensor::new(vec![n, c.num_classes()], all_probs)?;
    let fid_value = fid(&FeatureStats::from_features(&feats)?, &ref_stats)?;
    let is = inception_score(&probs, spec.repeats)?;
    Ok(EvalReport {
        label: label.to_string(),
        seed,
        config_hash: config_hash.to_string(),
        repeats: spec.repeats,
        samples: spec.samples,
        fairness_hard: MeanStd::of(&hard),
        fairness_soft: MeanStd::of(&soft),
        histogram: ClassHistogram::merge(&hists),
        fid: fid_value,
        kid_x1000: 1e3 * kids.iter().sum::<f64>() / kids.len() as f64,
        inception_score: MeanStd { mean: is.0, std: is.1 },
        timestamp: None,
    })
}

fn head_rows(t: &Tensor, n: usize) -> Result<Tensor> {
    let f = t.shape()[1];
    let n = n.min(t.shape()[0]);
    Ok(Tensor::new(vec![n, f], t.data()[..n * f].to_vec())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn stats(mean: Vec<f64>, cov: DMatrix<f64>) -> FeatureStats {
        FeatureStats {
            mean: DVector::from_vec(mean),
            cov,
            count: 100,
        }
    }

    #[test]
    fn fairness_closed_forms() {
        let uniform = ClassHistogram::from_counts(vec![10; 6]);
        assert_eq!(fairness_metric(&uniform, Mode::Hard).unwrap(), 0.0);
        let collapsed = ClassHistogram::from_counts(vec![100, 0, 0, 0, 0, 0]);
        assert!((fairness_metric(&collapsed, Mode::Hard).unwrap() - (5.0f64 / 6.0).sqrt()).abs() < 1e-12);
        let empty = ClassHistogram::from_counts(vec![0, 0]);
        assert!(matches!(fairness_metric(&empty, Mode::Hard), Err(FganError::Usage(_))));
    }

    #[test]
    fn fairness_ref_cases() {
        let a = ClassHistogram::from_counts(vec![4, 0]);
        let b = ClassHistogram::from_counts(vec![0, 4]);
        assert!((fairness_metric_ref(&a, &b, Mode::Hard).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(fairness_metric_ref(&a, &a, Mode::Hard).unwrap(), 0.0);
        let c = ClassHistogram::from_counts(vec![1, 2, 3]);
        assert!(fairness_metric_ref(&a, &c, Mode::Hard).is_err());
    }

    #[test]
    fn histogram_soft_means_sum_to_one() {
        let p = t(&[2, 3], vec![0.2, 0.5, 0.3, 0.6, 0.2, 0.2]);
        let h = ClassHistogram::from_probs(&p).unwrap();
        assert_eq!(h.counts, vec![1, 1, 0]);
        assert!((h.soft.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(ClassHistogram::from_probs(&t(&[1, 2], vec![0.7, 0.7])).is_err());
    }

    #[test]
    fn fid_gaussian_closed_forms() {
        let a = stats(vec![0.0], DMatrix::identity(1, 1));
        let b = stats(vec![1.0], DMatrix::identity(1, 1));
        assert!((fid(&a, &b).unwrap() - 1.0).abs() < 1e-9);
        let c = stats(vec![0.0, 0.0], DMatrix::identity(2, 2));
        let d = stats(vec![0.0, 0.0], DMatrix::identity(2, 2) * 4.0);
        assert!((fid(&c, &d).unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(fid(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn feature_stats_unbiased() {
        let f = t(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let s = FeatureStats::from_features(&f).unwrap();
        assert!((s.mean[0] - 2.5).abs() < 1e-12);
        assert!((s.cov[(0, 0)] - 5.0 / 3.0).abs() < 1e-12);
        assert!(FeatureStats::from_features(&t(&[1, 1], vec![1.0])).is_err());
    }

    #[test]
    fn kid_hand_cases() {
        let zeros = t(&[3, 2], vec![0.0; 6]);
        assert_eq!(kid(&zeros, &zeros).unwrap(), 0.0);
        let x = t(&[2, 1], vec![1.0, 1.0]);
        let y = t(&[2, 1], vec![0.0, 0.0]);
        assert_eq!(kid(&x, &y).unwrap(), 7.0);
        assert!(kid(&t(&[1, 1], vec![0.0]), &y).is_err());
    }

    #[test]
    fn inception_score_cases() {
        let uniform = t(&[4, 2], vec![0.5; 8]);
        assert!((inception_score(&uniform, 1).unwrap().0 - 1.0).abs() < 1e-12);
        let split = t(&[4, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        assert!((inception_score(&split, 1).unwrap().0 - 2.0).abs() < 1e-12);
        let single = t(&[3, 2], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(inception_score(&single, 1).unwrap(), (1.0, 0.0));
        assert!(inception_score(&single, 4).is_err());
    }

    #[test]
    fn profiles_and_apportionment() {
        assert_eq!(parse_profile("uniform", 4).unwrap(), vec![0.25; 4]);
        assert_eq!(parse_profile("class2", 3).unwrap(), vec![0.0, 0.0, 1.0]);
        let s = parse_profile("skewed", 5).unwrap();
        assert!((s[0] - 0.6).abs() < 1e-12 && (s[4] - 0.03).abs() < 1e-12);
        assert!(parse_profile("1:1", 3).is_err());
        assert_eq!(apportion(&[0.6, 0.2, 0.1, 0.07, 0.03], 1000), vec![600, 200, 100, 70, 30]);
        assert_eq!(apportion(&[1.0 / 3.0; 3], 10).iter().sum::<usize>(), 10);
    }

    #[test]
    fn mean_std_is_population() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }
}
