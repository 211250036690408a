//! GAN training with the fairness hinge loss and importance reweighting,
//! reduced-rate finetuning, and auxiliary classifier training.

use std::time::Instant;

use fgan_autodiff::{AdamConfig, AutodiffError, Binding, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{random_indices, LabeledDataset};
use crate::error::{FganError, Result};
use crate::metrics::{check_simplex, class_histogram, fairness_metric, ClassHistogram, Mode};
use crate::models::{argmax, freeze_discriminator_layers, softmax_rows, Arch, Checkpoint, Classifier, GanModel};
use crate::rng::{self, tag};

/// Per-class weights for the bias loss: `"auto"` or an explicit vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambdas {
    #[default]
    Auto,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning-rate multiplier used by [`finetune`].
    pub finetune_factor: f64,
    pub bias_loss: bool,
    /// Mode of the bias term on the generator objective.
    pub bias_mode: Mode,
    pub reweight: bool,
    pub lambdas: Lambdas,
    /// Leading discriminator layers held fixed.
    pub freeze_d: usize,
    pub r1_gamma: f64,
    /// R1 is applied every this many steps, scaled by the interval.
    pub r1_interval: u64,
    pub seed: u64,
    /// Steps between fairness evaluations and checkpoints.
    pub eval_every: u64,
    /// Steps between log records.
    pub log_every: u64,
    /// Generator samples for fairness during training.
    pub eval_samples: usize,
    /// Generator samples for the automatic lambda audit.
    pub audit_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            batch_size: 64,
            steps: 3000,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            finetune_factor: 0.1,
            bias_loss: false,
            bias_mode: Mode::Soft,
            reweight: false,
            lambdas: Lambdas::Auto,
            freeze_d: 0,
            r1_gamma: 1.0,
            r1_interval: 16,
            seed: 0,
            eval_every: 500,
            log_every: 100,
            eval_samples: 2000,
            audit_samples: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Every violated constraint, for `num_classes` classes.
    pub fn violations(&self, num_classes: usize) -> Vec<String> {
        let mut v = Vec::new();
        if self.batch_size == 0 {
            v.push("train.batch_size must be positive".to_string());
        }
        if self.bias_loss && self.batch_size < num_classes {
            v.push(format!(
                "train.batch_size {} is below the class count {num_classes} required by the bias loss",
                self.batch_size
            ));
        }
        if !(self.lr > 0.0) {
            v.push(format!("train.lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            v.push("train.beta1 and train.beta2 must lie in [0, 1)".to_string());
        }
        if !(self.eps > 0.0) {
            v.push("train.eps must be positive".to_string());
        }
        if !(self.finetune_factor > 0.0) {
            v.push(format!("train.finetune_factor must be positive, got {}", self.finetune_factor));
        }
        if !(self.r1_gamma >= 0.0) {
            v.push(format!("train.r1_gamma must be non-negative, got {}", self.r1_gamma));
        }
        if self.r1_interval == 0 {
            v.push("train.r1_interval must be positive".to_string());
        }
        if self.eval_every == 0 || self.log_every == 0 {
            v.push("train.eval_every and train.log_every must be positive".to_string());
        }
        if let Lambdas::Explicit(l) = &self.lambdas {
            if l.len() != num_classes {
                v.push(format!("train.lambdas has {} entries for {num_classes} classes", l.len()));
            }
            if l.iter().any(|&x| !(x >= 0.0)) {
                v.push("train.lambdas entries must be non-negative".to_string());
            }
        }
        v
    }
}

/// Loss terms of one step. `total = d_adv + r1 + g_adv + bias`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `softplus(D(fake)) + softplus(-D(real))`, batch means.
    pub d_adv: f64,
    /// `(gamma/2) E ||grad_x D(real)||^2`; zero on steps without R1.
    pub r1: f64,
    /// `softplus(-D(fake))`, batch mean.
    pub g_adv: f64,
    pub bias: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn d_loss(&self) -> f64 {
        self.d_adv + self.r1
    }

    pub fn g_loss(&self) -> f64 {
        self.g_adv + self.bias
    }
}

/// `(1 - count_d / N) / (K - 1)`.
pub fn lambda_weights(class_counts: &[usize]) -> Result<Vec<f64>> {
    let k = class_counts.len();
    if k < 2 {
        return Err(FganError::Config(format!("lambda weights need at least 2 classes, got {k}")));
    }
    let n: usize = class_counts.iter().sum();
    if n == 0 {
        return Err(FganError::Config("lambda weights need a non-empty count vector".into()));
    }
    Ok(class_counts
        .iter()
        .map(|&c| (1.0 - c as f64 / n as f64) / (k - 1) as f64)
        .collect())
}

/// Per-class discriminator multipliers `K * w_d`, evaluated as
/// `(1 - p_d) / (1 - 1/K)` so that balanced counts give exactly 1.
pub fn reweight_factors(class_counts: &[usize]) -> Result<Vec<f64>> {
    lambda_weights(class_counts)?;
    let k = class_counts.len() as f64;
    let n = class_counts.iter().sum::<usize>() as f64;
    Ok(class_counts.iter().map(|&c| (1.0 - c as f64 / n) / (1.0 - 1.0 / k)).collect())
}

/// Weight of each real sample under per-class `factors`.
pub fn sample_weights(labels: &[usize], factors: &[f64]) -> Vec<f64> {
    labels.iter().map(|&l| factors[l]).collect()
}

/// `sum_d lambda_d * max(0, 1/K - E_d)`.
pub fn hinge(expectations: &[f64], lambdas: &[f64]) -> f64 {
    let target = 1.0 / expectations.len() as f64;
    expectations
        .iter()
        .zip(lambdas)
        .map(|(&e, &l)| l * (target - e).max(0.0))
        .sum()
}

/// Bias loss value of a batch of classifier probabilities.
pub fn bias_loss_value(probs: &Tensor, lambdas: &[f64], mode: Mode) -> Result<f64> {
    check_simplex(probs)?;
    let k = probs.shape()[1];
    if lambdas.len() != k {
        return Err(FganError::Usage(format!("{} lambdas for {k} classes", lambdas.len())));
    }
    let hist = ClassHistogram::from_probs(probs)?;
    Ok(hinge(&hist.expectations(mode), lambdas))
}

/// Differentiable soft bias loss of `[B, K]` probabilities.
pub fn bias_loss_graph(g: &mut Graph, probs: Var, lambdas: &[f64]) -> Result<Var> {
    let (b, k) = match *g.shape(probs) {
        [b, k] => (b, k),
        ref s => return Err(FganError::Usage(format!("probabilities must be [B, K], got {s:?}"))),
    };
    if lambdas.len() != k {
        return Err(FganError::Usage(format!("{} lambdas for {k} classes", lambdas.len())));
    }
    let e = g.sum_to(probs, &[1, k])?;
    let e = g.scale(e, -1.0 / b as f64)?;
    let gap = g.add_scalar(e, 1.0 / k as f64)?;
    let clipped = g.leaky_relu(gap, 0.0)?;
    let l = g.constant(Tensor::new(vec![1, k], lambdas.to_vec())?);
    let weighted = g.mul(clipped, l)?;
    Ok(g.sum(weighted)?)
}

/// Fixed classifier and weights for the generator's fairness term.
#[derive(Clone, Copy, Debug)]
pub struct BiasTerm<'a> {
    pub classifier: &'a Classifier,
    pub lambdas: &'a [f64],
}

fn tag_step(step: u64, e: FganError) -> FganError {
    match e {
        FganError::Autodiff(AutodiffError::NonFinite { .. }) => {
            FganError::Numerical(format!("training aborted at step {step}: {e}"))
        }
        other => other,
    }
}

/// One discriminator update followed by one generator update.
pub fn gan_step(model: &mut GanModel, real: &Tensor, cfg: &TrainConfig, bias: Option<BiasTerm<'_>>) -> Result<LossBreakdown> {
    let step = model.step;
    step_impl(model, real, None, cfg, bias).map_err(|e| tag_step(step, e))
}

/// [`gan_step`] with each real sample's discriminator term scaled by
/// `factors[label]` (see [`reweight_factors`]).
pub fn reweighted_step(
    model: &mut GanModel,
    real: &Tensor,
    labels: &[usize],
    factors: &[f64],
    cfg: &TrainConfig,
    bias: Option<BiasTerm<'_>>,
) -> Result<LossBreakdown> {
    if labels.len() != real.shape()[0] {
        return Err(FganError::Config(format!(
            "{} labels for a batch of {}",
            labels.len(),
            real.shape()[0]
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= factors.len()) {
        return Err(FganError::Config(format!("label {l} has no class weight")));
    }
    let w = sample_weights(labels, factors);
    let step = model.step;
    step_impl(model, real, Some(&w), cfg, bias).map_err(|e| tag_step(step, e))
}

fn step_impl(
    model: &mut GanModel,
    real: &Tensor,
    weights: Option<&[f64]>,
    cfg: &TrainConfig,
    bias: Option<BiasTerm<'_>>,
) -> Result<LossBreakdown> {
    let b = real.shape()[0];
    let adam = cfg.adam();
    let mut out = LossBreakdown::default();

    // Discriminator.
    let mut rng = rng::stream(cfg.seed, &[tag::TRAIN_STEP, model.step, 1]);
    let fake = model.g.generate(&model.g.sample_latents(&mut rng, b))?;
    let apply_r1 = cfg.r1_gamma > 0.0 && model.step.is_multiple_of(cfg.r1_interval);
    let mut g = Graph::new();
    let dv = model.d.net.bind(&mut g, Binding::Trainable);
    let xr = if apply_r1 { g.leaf(real.clone()) } else { g.constant(real.clone()) };
    let xf = g.constant(fake);
    let d_real = model.d.net.forward(&mut g, &dv, xr)?;
    let d_fake = model.d.net.forward(&mut g, &dv, xf)?;
    let neg = g.neg(d_real)?;
    let mut real_terms = g.softplus(neg)?;
    if let Some(w) = weights {
        let w = g.constant(Tensor::new(vec![b, 1], w.to_vec())?);
        real_terms = g.mul(real_terms, w)?;
    }
    let l_real = g.mean(real_terms)?;
    let fake_terms = g.softplus(d_fake)?;
    let l_fake = g.mean(fake_terms)?;
    let d_adv = g.add(l_real, l_fake)?;
    out.d_adv = g.value(d_adv).item();
    let mut d_loss = d_adv;
    if apply_r1 {
        let s = g.sum(d_real)?;
        let gx = g.grad(s, &[xr])?;
        let sq = g.squared_norm(gx[0])?;
        let r1 = g.scale(sq, 0.5 * cfg.r1_gamma / b as f64)?;
        out.r1 = g.value(r1).item();
        let lazy = g.scale(r1, cfg.r1_interval as f64)?;
        d_loss = g.add(d_loss, lazy)?;
    }
    let grads = g.backward(d_loss)?;
    model.d.net.params_mut().accumulate_grads(&g, &dv, &grads)?;
    model.d.net.params_mut().adam_step(&adam)?;

    // Generator, on a fresh latent batch.
    let mut rng = rng::stream(cfg.seed, &[tag::TRAIN_STEP, model.step, 2]);
    let z = model.g.sample_latents(&mut rng, b);
    let mut g = Graph::new();
    let gv = model.g.net.bind(&mut g, Binding::Trainable);
    let dv = model.d.net.bind(&mut g, Binding::Frozen);
    let zv = g.constant(z);
    let x = model.g.net.forward(&mut g, &gv, zv)?;
    let logits = model.d.net.forward(&mut g, &dv, x)?;
    let neg = g.neg(logits)?;
    let terms = g.softplus(neg)?;
    let g_adv = g.mean(terms)?;
    out.g_adv = g.value(g_adv).item();
    let mut g_loss = g_adv;
    if let Some(bt) = bias {
        let cv = bt.classifier.net.bind(&mut g, Binding::Frozen);
        let c_logits = bt.classifier.net.forward(&mut g, &cv, x)?;
        let probs = g.softmax(c_logits)?;
        match cfg.bias_mode {
            Mode::Soft => {
                let term = bias_loss_graph(&mut g, probs, bt.lambdas)?;
                out.bias = g.value(term).item();
                g_loss = g.add(g_loss, term)?;
            }
            Mode::Hard => {
                out.bias = bias_loss_value(g.value(probs), bt.lambdas, Mode::Hard)?;
            }
        }
    }
    let grads = g.backward(g_loss)?;
    model.g.net.params_mut().accumulate_grads(&g, &gv, &grads)?;
    model.g.net.params_mut().adam_step(&adam)?;

    model.step += 1;
    out.total = out.d_adv + out.r1 + out.g_adv + out.bias;
    Ok(out)
}

/// One training-log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub r1: f64,
    pub bias: f64,
    pub fairness: Option<f64>,
    pub wallclock: f64,
}

/// Inputs shared by [`train`] and [`finetune`] beyond the config.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainContext<'a> {
    /// Required for the bias loss and for fairness logging.
    pub classifier: Option<&'a Classifier>,
    pub config_hash: &'a str,
}

/// Bias-loss weights for `cfg`: explicit, or from an audit of the current
/// generator (dataset class counts if it is untrained).
pub fn resolve_lambdas(model: &GanModel, data: &LabeledDataset, cfg: &TrainConfig, classifier: &Classifier) -> Result<Vec<f64>> {
    match &cfg.lambdas {
        Lambdas::Explicit(l) => Ok(l.clone()),
        Lambdas::Auto if model.step > 0 => {
            let hist = class_histogram(&model.g, classifier, cfg.audit_samples, cfg.seed)?;
            lambda_weights(&hist.counts)
        }
        Lambdas::Auto => lambda_weights(data.class_counts()),
    }
}

/// Run `cfg.steps` steps from the model's current step. The callback sees
/// every log record with the model at that point. Returns checkpoints at the
/// start, every `eval_every` steps and at the end.
pub fn train(
    model: &mut GanModel,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    ctx: &TrainContext<'_>,
    callback: &mut dyn FnMut(&LogRecord, &GanModel),
) -> Result<Vec<Checkpoint>> {
    let problems = cfg.violations(data.num_classes());
    if !problems.is_empty() {
        return Err(FganError::Config(problems.join("; ")));
    }
    if model.g.sample_shape() != data.sample_shape() || model.d.net.input_shape() != data.sample_shape() {
        return Err(FganError::Config(format!(
            "model samples {:?} do not match dataset samples {:?}",
            model.g.sample_shape(),
            data.sample_shape()
        )));
    }
    if data.is_empty() {
        return Err(FganError::Data("training set is empty".into()));
    }
    if let Some(c) = ctx.classifier {
        if c.num_classes() != data.num_classes() || c.net.input_shape() != data.sample_shape() {
            return Err(FganError::Config("classifier does not match the dataset".into()));
        }
    }
    let lambdas = match (cfg.bias_loss, ctx.classifier) {
        (false, _) => None,
        (true, None) => return Err(FganError::Config("bias loss needs a trained classifier".into())),
        (true, Some(c)) => Some(resolve_lambdas(model, data, cfg, c)?),
    };
    let bias = lambdas.as_deref().map(|l| BiasTerm {
        classifier: ctx.classifier.expect("checked above"),
        lambdas: l,
    });
    if let Some(l) = &lambdas {
        log::info!("bias loss lambdas {l:?}");
    }
    let class_weights = if cfg.reweight {
        Some(reweight_factors(data.class_counts())?)
    } else {
        None
    };
    freeze_discriminator_layers(&mut model.d, cfg.freeze_d)?;

    let start = Instant::now();
    let end_step = model.step + cfg.steps;
    let mut history = vec![Checkpoint::gan(model, cfg.seed, ctx.config_hash)];
    while model.step < end_step {
        let mut rng = rng::stream(cfg.seed, &[tag::TRAIN_STEP, model.step, 0]);
        let idx = random_indices(&mut rng, data.len(), cfg.batch_size);
        let real = data.batch(&idx);
        let losses = match &class_weights {
            Some(w) => reweighted_step(model, &real, &data.batch_labels(&idx), w, cfg, bias)?,
            None => gan_step(model, &real, cfg, bias)?,
        };
        let done = model.step;
        let eval_now = done.is_multiple_of(cfg.eval_every) || done == end_step;
        if done.is_multiple_of(cfg.log_every) || eval_now {
            let fairness = match (eval_now, ctx.classifier) {
                (true, Some(c)) => {
                    let h = class_histogram(&model.g, c, cfg.eval_samples, cfg.seed ^ done)?;
                    Some(fairness_metric(&h, Mode::Hard)?)
                }
                _ => None,
            };
            let record = LogRecord {
                step: done,
                d_loss: losses.d_loss(),
                g_loss: losses.g_loss(),
                r1: losses.r1,
                bias: losses.bias,
                fairness,
                wallclock: start.elapsed().as_secs_f64(),
            };
            callback(&record, model);
        }
        if eval_now {
            history.push(Checkpoint::gan(model, cfg.seed, ctx.config_hash));
        }
    }
    Ok(history)
}

/// [`train`] from `base` with the learning rate scaled by
/// `cfg.finetune_factor` and `cfg.freeze_d` leading discriminator layers frozen.
pub fn finetune(
    base: &Checkpoint,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    ctx: &TrainContext<'_>,
    callback: &mut dyn FnMut(&LogRecord, &GanModel),
) -> Result<(GanModel, Vec<Checkpoint>)> {
    let mut model = base.clone().into_gan()?;
    let tuned = TrainConfig {
        lr: cfg.lr * cfg.finetune_factor,
        ..cfg.clone()
    };
    let history = train(&mut model, data, &tuned, ctx, callback)?;
    Ok((model, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Fraction held out for the accuracy check.
    pub holdout: f64,
    /// Minimum held-out accuracy for downstream use.
    pub accuracy_floor: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 64,
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.99,
            holdout: 0.1,
            accuracy_floor: 0.90,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.batch_size == 0 {
            v.push("classifier.batch_size must be positive".to_string());
        }
        if !(self.lr > 0.0) {
            v.push(format!("classifier.lr must be positive, got {}", self.lr));
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            v.push(format!("classifier.holdout must lie in (0, 1), got {}", self.holdout));
        }
        if !(0.0..=1.0).contains(&self.accuracy_floor) {
            v.push(format!("classifier.accuracy_floor must lie in [0, 1], got {}", self.accuracy_floor));
        }
        v
    }
}

/// Fraction of `data` that `c` labels correctly.
pub fn accuracy(c: &Classifier, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(FganError::Data("accuracy of an empty set".into()));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let logits = c.net.output(&data.batch(&all))?;
    let probs = softmax_rows(&logits);
    let hits = (0..data.len())
        .filter(|&i| argmax(probs.row(i)) == data.labels()[i] as usize)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Cross-entropy training on a seeded split; returns the classifier and its
/// held-out accuracy. Fails with a quality error below `accuracy_floor`.
pub fn train_classifier(data: &LabeledDataset, arch: Arch, cfg: &ClassifierConfig) -> Result<(Classifier, f64)> {
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(FganError::Config(problems.join("; ")));
    }
    let (train_set, test_set) = data.split(cfg.holdout, cfg.seed);
    if train_set.is_empty() || test_set.is_empty() {
        return Err(FganError::Data(format!("{} samples are too few to split", data.len())));
    }
    let mut c = Classifier::build(arch, data.sample_shape(), data.num_classes(), cfg.seed)?;
    let adam = AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: 1e-8,
    };
    let k = data.num_classes();
    let mut order: Vec<usize> = Vec::new();
    let mut rng = rng::stream(cfg.seed, &[tag::CLASSIFIER]);
    for _ in 0..cfg.steps {
        if order.len() < cfg.batch_size {
            let mut epoch: Vec<usize> = (0..train_set.len()).collect();
            epoch.shuffle(&mut rng);
            order.extend(epoch);
        }
        let idx: Vec<usize> = order.drain(..cfg.batch_size.min(order.len())).collect();
        let b = idx.len();
        let mut onehot = vec![0.0; b * k];
        for (i, &l) in train_set.batch_labels(&idx).iter().enumerate() {
            onehot[i * k + l] = 1.0;
        }
        let mut g = Graph::new();
        let vars = c.net.bind(&mut g, Binding::Trainable);
        let x = g.constant(train_set.batch(&idx));
        let logits = c.net.forward(&mut g, &vars, x)?;
        let logp = g.log_softmax(logits)?;
        let y = g.constant(Tensor::new(vec![b, k], onehot)?);
        let picked = g.mul(logp, y)?;
        let total = g.sum(picked)?;
        let loss = g.scale(total, -1.0 / b as f64)?;
        let grads = g.backward(loss)?;
        c.net.params_mut().accumulate_grads(&g, &vars, &grads)?;
        c.net.params_mut().adam_step(&adam)?;
    }
    let acc = accuracy(&c, &test_set)?;
    log::info!("classifier held-out accuracy {acc:.4} after {} steps", cfg.steps);
    if acc < cfg.accuracy_floor {
        return Err(FganError::Quality(format!(
            "classifier held-out accuracy {acc:.4} is below the floor {:.2}; increase classifier.steps",
            cfg.accuracy_floor
        )));
    }
    Ok((c, acc))
}
