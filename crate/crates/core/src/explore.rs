//! Breadth-first latent-space exploration and balanced synthetic datasets.

use std::collections::VecDeque;

use fgan_autodiff::Tensor;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{FganError, Result};
use crate::models::{argmax, Classifier, Discriminator, Generator};
use crate::rng::{self, tag};

/// Minimum separation between two latents kept for the same class.
pub const DEDUP_RADIUS: f64 = 1e-6;

/// Latents decoded per batch while searching for seed vectors.
const SEED_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreConfig {
    /// Mutations per accepted node.
    pub mutations: usize,
    /// Half-width of the per-dimension uniform mutation.
    pub delta: f64,
    /// Accepted vectors per start vector.
    pub max_iter: usize,
    /// Minimum classifier confidence.
    pub tau: f64,
    /// Dequeue cap as a multiple of `max_iter`.
    pub dequeue_factor: usize,
    /// Random draws allowed when looking for a start vector.
    pub seed_tries: usize,
    /// Start vectors allowed per class in [`assemble_balanced`].
    pub max_seeds: usize,
    /// Quantile of real-data discriminator logits below which a latent is
    /// treated as off-manifold.
    pub logit_quantile: f64,
    pub seed: u64,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            mutations: 4,
            delta: 0.25,
            max_iter: 50,
            tau: 0.7,
            dequeue_factor: 200,
            seed_tries: 20_000,
            max_seeds: 200,
            logit_quantile: 0.01,
            seed: 0,
        }
    }
}

impl ExploreConfig {
    pub fn max_dequeues(&self) -> usize {
        self.dequeue_factor.saturating_mul(self.max_iter)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.mutations == 0 {
            v.push("explore.mutations must be at least 1".to_string());
        }
        if !(self.delta > 0.0) {
            v.push(format!("explore.delta must be positive, got {}", self.delta));
        }
        if self.max_iter == 0 {
            v.push("explore.max_iter must be at least 1".to_string());
        }
        if !(0.0..1.0).contains(&self.tau) {
            v.push(format!("explore.tau must lie in [0, 1), got {}", self.tau));
        }
        if self.dequeue_factor == 0 || self.max_seeds == 0 {
            v.push("explore.dequeue_factor and explore.max_seeds must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.logit_quantile) {
            v.push(format!("explore.logit_quantile must lie in [0, 1), got {}", self.logit_quantile));
        }
        v
    }
}

/// Acceptance test for a decoded latent.
#[derive(Clone, Copy, Debug)]
pub struct Validity<'a> {
    pub tau: f64,
    /// Discriminator and the logit floor it must clear.
    pub realism: Option<(&'a Discriminator, f64)>,
}

/// Lower `quantile` of the discriminator's logits on `data`.
pub fn logit_floor(d: &Discriminator, data: &LabeledDataset, quantile: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(FganError::Data("cannot calibrate the logit floor on an empty set".into()));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let mut logits = d.logits(&data.batch(&all))?;
    logits.sort_by(f64::total_cmp);
    let i = ((quantile * logits.len() as f64).floor() as usize).min(logits.len() - 1);
    Ok(logits[i])
}

/// Classifier verdict for each row of `z`: `(argmax, confidence, valid)`.
fn judge(g: &Generator, c: &Classifier, validity: &Validity<'_>, z: &Tensor) -> Result<Vec<(usize, f64, bool)>> {
    let x = g.generate(z)?;
    let probs = c.probabilities(&x)?;
    let real_ok = match validity.realism {
        Some((d, floor)) => d.logits(&x)?.into_iter().map(|l| l >= floor).collect(),
        None => vec![true; z.shape()[0]],
    };
    Ok((0..z.shape()[0])
        .map(|i| {
            let row = probs.row(i);
            let k = argmax(row);
            (k, row[k], row[k] >= validity.tau && real_ok[i])
        })
        .collect())
}

/// Draw `z ~ N(0, I)` until one decodes to a valid sample of class `t`.
pub fn find_seed_vector(
    g: &Generator,
    c: &Classifier,
    validity: &Validity<'_>,
    t: usize,
    max_tries: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = rng::stream(seed, &[tag::EXPLORE, t as u64]);
    let (mut tries, mut hits) = (0, 0);
    while tries < max_tries {
        let n = SEED_BATCH.min(max_tries - tries);
        let z = g.sample_latents(&mut rng, n);
        for (i, (k, _, ok)) in judge(g, c, validity, &z)?.into_iter().enumerate() {
            tries += 1;
            if k == t {
                hits += 1;
                if ok {
                    return Ok(z.row(i).to_vec());
                }
            }
        }
    }
    Err(FganError::Scarcity {
        class: t,
        hits,
        tries,
        frequency: if tries == 0 { 0.0 } else { hits as f64 / tries as f64 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptedLatent {
    pub z: Vec<f64>,
    /// Index of the accepted vector this one was mutated from.
    pub parent: Option<usize>,
    /// Euclidean distance to the start vector.
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreResult {
    pub target: usize,
    pub start: Vec<f64>,
    pub accepted: Vec<AcceptedLatent>,
    pub dequeues: usize,
}

impl ExploreResult {
    /// Every accepted child lies strictly farther from the start than its parent.
    pub fn chains_increasing(&self) -> bool {
        self.accepted
            .iter()
            .all(|a| a.parent.is_none_or(|p| a.distance > self.accepted[p].distance))
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Queue-based search from `start`: valid dequeued vectors of class `t` are
/// accepted and spawn `cfg.mutations` children, of which only those farther
/// from `start` than their parent are enqueued.
pub fn explore(
    g: &Generator,
    c: &Classifier,
    validity: &Validity<'_>,
    start: &[f64],
    t: usize,
    cfg: &ExploreConfig,
    seed: u64,
) -> Result<ExploreResult> {
    let m = g.latent_dim();
    if start.len() != m {
        return Err(FganError::Usage(format!("start vector has {} entries, latent dim is {m}", start.len())));
    }
    let mut rng = rng::stream(seed, &[tag::EXPLORE, t as u64, 1]);
    let mut queue: VecDeque<(Vec<f64>, Option<usize>)> = VecDeque::from([(start.to_vec(), None)]);
    let mut result = ExploreResult {
        target: t,
        start: start.to_vec(),
        accepted: Vec::new(),
        dequeues: 0,
    };
    let cap = cfg.max_dequeues();
    while result.accepted.len() < cfg.max_iter && result.dequeues < cap {
        let Some((z, parent)) = queue.pop_front() else { break };
        result.dequeues += 1;
        let zt = Tensor::new(vec![1, m], z.clone())?;
        let (k, _, ok) = judge(g, c, validity, &zt)?[0];
        if !ok || k != t {
            continue;
        }
        let dist = distance(&z, start);
        for _ in 0..cfg.mutations {
            let child: Vec<f64> = z.iter().map(|&v| v + rng.random_range(-cfg.delta..=cfg.delta)).collect();
            if distance(&child, start) > dist {
                queue.push_back((child, Some(result.accepted.len())));
            }
        }
        result.accepted.push(AcceptedLatent {
            z,
            parent,
            distance: dist,
        });
    }
    Ok(result)
}

/// Worker threads: `FGAN_THREADS` if set, else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var("FGAN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// A balanced synthetic dataset with the latents that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct BalancedSet {
    pub samples: LabeledDataset,
    /// Latent vectors `[N, m]` with their target classes.
    pub latents: LabeledDataset,
    /// Exploration runs per class, in seed order.
    pub runs: Vec<Vec<ExploreResult>>,
}

fn mine_class(
    g: &Generator,
    c: &Classifier,
    validity: &Validity<'_>,
    t: usize,
    per_class: usize,
    cfg: &ExploreConfig,
) -> Result<(Vec<Vec<f64>>, Vec<ExploreResult>)> {
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(per_class);
    let mut runs = Vec::new();
    for s in 0..cfg.max_seeds {
        if kept.len() >= per_class {
            break;
        }
        let seed = rng::derive_seed(cfg.seed, &[tag::EXPLORE, t as u64, s as u64]);
        let start = find_seed_vector(g, c, validity, t, cfg.seed_tries, seed)?;
        let run = explore(g, c, validity, &start, t, cfg, seed)?;
        for a in &run.accepted {
            if kept.len() >= per_class {
                break;
            }
            if kept.iter().all(|k| distance(k, &a.z) >= DEDUP_RADIUS) {
                kept.push(a.z.clone());
            }
        }
        runs.push(run);
    }
    if kept.len() < per_class {
        return Err(FganError::Scarcity {
            class: t,
            hits: kept.len(),
            tries: runs.iter().map(|r| r.dequeues).sum(),
            frequency: kept.len() as f64 / per_class as f64,
        });
    }
    Ok((kept, runs))
}

/// Mine `per_class` distinct latents for every class and decode them.
/// Classes run on a pool of [`thread_count`] workers and are merged in
/// class order, so the output does not depend on the thread count.
pub fn assemble_balanced(
    g: &Generator,
    c: &Classifier,
    validity: &Validity<'_>,
    per_class: usize,
    cfg: &ExploreConfig,
) -> Result<BalancedSet> {
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(FganError::Config(problems.join("; ")));
    }
    if per_class == 0 {
        return Err(FganError::Usage("per_class must be positive".into()));
    }
    let k = c.num_classes();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| FganError::Config(format!("thread pool: {e}")))?;
    let mined: Vec<Result<(Vec<Vec<f64>>, Vec<ExploreResult>)>> =
        pool.install(|| (0..k).into_par_iter().map(|t| mine_class(g, c, validity, t, per_class, cfg)).collect());
    let m = g.latent_dim();
    let mut z_all = Vec::with_capacity(k * per_class * m);
    let mut labels = Vec::with_capacity(k * per_class);
    let mut runs = Vec::with_capacity(k);
    for (t, r) in mined.into_iter().enumerate() {
        let (kept, class_runs) = r?;
        for z in kept {
            z_all.extend(z);
            labels.push(t as u16);
        }
        runs.push(class_runs);
    }
    let n = labels.len();
    let z = Tensor::new(vec![n, m], z_all)?;
    let x = g.generate(&z)?;
    let samples = LabeledDataset::new(g.sample_shape(), x.to_f32(), labels.clone(), k)?;
    let latents = LabeledDataset::new(vec![m], z.to_f32(), labels, k)?;
    Ok(BalancedSet {
        samples,
        latents,
        runs,
    })
}
