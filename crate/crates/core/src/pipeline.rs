//! Experiment configuration and the stage runner behind the `fgan` binary.
//!
//! A [`Run`] owns a directory named after the SHA-256 of its configuration.
//! Each stage reads the artifacts of earlier stages from that directory and
//! writes only its own outputs.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    fit_geometric_ratio, gen_gaussian_mixture, load_cifar10, load_dataset, make_imbalanced, save_dataset,
    save_latents, ImbalanceProfile, LabeledDataset, CIFAR_SHAPE,
};
use crate::error::{io_err, FganError, Result};
use crate::explore::{assemble_balanced, logit_floor, ExploreConfig, Validity};
use crate::grid::export_sample_grid;
use crate::metrics::{evaluate, fid_sensitivity_heatmap, parse_profile, EvalReport, EvalSpec, Heatmap};
use crate::models::{load_checkpoint, save_checkpoint, Arch, Checkpoint, Classifier, GanModel};
use crate::rng::{self, tag};
use crate::training::{finetune, train, train_classifier, ClassifierConfig, LogRecord, TrainConfig, TrainContext};

pub const SCHEMA_VERSION: u32 = 1;

/// Source of the imbalanced training set and the balanced reference set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// 2-D Gaussian blobs on a circle.
    GaussianMixture {
        num_classes: usize,
        counts: Vec<usize>,
        radius: f64,
        sigma: f64,
        reference_per_class: usize,
    },
    /// CIFAR-10 binary batches cut to a geometric long tail. The decay
    /// ratio is `ratio` if given, otherwise fitted to `target_total`.
    Cifar10 {
        path: PathBuf,
        head: usize,
        #[serde(default)]
        ratio: Option<f64>,
        #[serde(default)]
        target_total: Option<usize>,
        reference_per_class: usize,
    },
}

impl DatasetSpec {
    pub fn num_classes(&self) -> usize {
        match self {
            Self::GaussianMixture { num_classes, .. } => *num_classes,
            Self::Cifar10 { .. } => crate::dataset::CIFAR_CLASSES,
        }
    }

    pub fn sample_shape(&self) -> Vec<usize> {
        match self {
            Self::GaussianMixture { .. } => vec![2],
            Self::Cifar10 { .. } => CIFAR_SHAPE.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Arch,
    pub latent_dim: usize,
}

/// How the rebalanced model is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// The biased model itself.
    Plain,
    /// Trained from scratch on the imbalanced data with the bias loss.
    Bias,
    /// Trained from scratch with importance reweighting.
    Reweight,
    /// Trained from scratch on the balanced synthetic set.
    SynScratch,
    /// Biased model fine-tuned on the synthetic set with the bias loss.
    SynFinetune,
    /// As `SynFinetune` with leading discriminator layers frozen.
    SynFreezed,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Plain,
        Variant::Bias,
        Variant::Reweight,
        Variant::SynScratch,
        Variant::SynFinetune,
        Variant::SynFreezed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Plain => "plain",
            Self::Bias => "bias",
            Self::Reweight => "reweight",
            Self::SynScratch => "syn-scratch",
            Self::SynFinetune => "syn-finetune",
            Self::SynFreezed => "syn-freezed",
        }
    }

    pub fn uses_synthetic(self) -> bool {
        matches!(self, Self::SynScratch | Self::SynFinetune | Self::SynFreezed)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = FganError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|v| v.name()).collect();
            FganError::Usage(format!("unknown variant `{s}`, expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RebalanceSpec {
    /// Synthetic samples mined per class.
    pub per_class: usize,
    /// Steps for the fine-tuning variants.
    pub finetune_steps: u64,
    /// Leading discriminator layers frozen by `syn-freezed`.
    pub freeze_d: usize,
}

impl Default for RebalanceSpec {
    fn default() -> Self {
        Self {
            per_class: 1000,
            finetune_steps: 1500,
            freeze_d: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSpec {
    pub profiles: Vec<String>,
    /// Samples in each half of a profile's split.
    pub per_set: usize,
}

impl Default for AuditSpec {
    fn default() -> Self {
        Self {
            profiles: vec!["uniform".into(), "skewed".into()],
            per_set: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { rows: 8, cols: 8 }
    }
}

/// Everything a run depends on. The global `seed` replaces the per-section
/// seeds when the run is opened.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub variant: Variant,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub classifier: ClassifierConfig,
    pub train: TrainConfig,
    pub explore: ExploreConfig,
    pub rebalance: RebalanceSpec,
    pub eval: EvalSpec,
    pub audit: AuditSpec,
    pub grid: GridSpec,
}

impl Default for PipelineConfig {
    /// The 5-class Gaussian benchmark.
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            output_dir: PathBuf::from("runs"),
            variant: Variant::SynScratch,
            dataset: DatasetSpec::GaussianMixture {
                num_classes: 5,
                counts: vec![3000, 1000, 500, 350, 150],
                radius: 0.7,
                sigma: 0.05,
                reference_per_class: 1000,
            },
            model: ModelSpec {
                arch: Arch::Mlp,
                latent_dim: 8,
            },
            classifier: ClassifierConfig::default(),
            train: TrainConfig {
                r1_gamma: 0.1,
                ..TrainConfig::default()
            },
            explore: ExploreConfig::default(),
            rebalance: RebalanceSpec::default(),
            eval: EvalSpec::default(),
            audit: AuditSpec::default(),
            grid: GridSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FganError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| FganError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Copy with every section seed set to the global seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.train.seed = c.seed;
        c.classifier.seed = rng::derive_seed(c.seed, &[tag::CLASSIFIER]);
        c.explore.seed = c.seed;
        c
    }

    /// Training settings for the variant's rebalanced model.
    pub fn variant_train(&self) -> TrainConfig {
        let base = self.resolved().train;
        match self.variant {
            Variant::Plain => base,
            Variant::Bias => TrainConfig { bias_loss: true, ..base },
            Variant::Reweight => TrainConfig { reweight: true, ..base },
            Variant::SynScratch => base,
            Variant::SynFinetune => TrainConfig {
                bias_loss: true,
                steps: self.rebalance.finetune_steps,
                ..base
            },
            Variant::SynFreezed => TrainConfig {
                bias_loss: true,
                steps: self.rebalance.finetune_steps,
                freeze_d: self.rebalance.freeze_d,
                ..base
            },
        }
    }

    /// Every violated constraint.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            v.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let k = self.dataset.num_classes();
        match &self.dataset {
            DatasetSpec::GaussianMixture {
                num_classes,
                counts,
                radius,
                sigma,
                reference_per_class,
            } => {
                if *num_classes < 2 {
                    v.push(format!("dataset.num_classes must be at least 2, got {num_classes}"));
                }
                if counts.len() != *num_classes {
                    v.push(format!("dataset.counts has {} entries for {num_classes} classes", counts.len()));
                }
                if counts.contains(&0) {
                    v.push("dataset.counts entries must be at least 1".into());
                }
                if !(*radius > 0.0) || !(*sigma > 0.0) {
                    v.push("dataset.radius and dataset.sigma must be positive".into());
                }
                if *reference_per_class < 2 {
                    v.push("dataset.reference_per_class must be at least 2".into());
                }
            }
            DatasetSpec::Cifar10 {
                head,
                ratio,
                target_total,
                reference_per_class,
                ..
            } => {
                if *head == 0 {
                    v.push("dataset.head must be positive".into());
                }
                match (ratio, target_total) {
                    (Some(r), None) if !(*r > 0.0 && *r <= 1.0) => v.push(format!("dataset.ratio must lie in (0, 1], got {r}")),
                    (Some(_), Some(_)) => v.push("set only one of dataset.ratio and dataset.target_total".into()),
                    (None, None) => v.push("dataset needs ratio or target_total".into()),
                    _ => {}
                }
                if *reference_per_class < 2 {
                    v.push("dataset.reference_per_class must be at least 2".into());
                }
            }
        }
        let shape = self.dataset.sample_shape();
        match (self.model.arch, shape.len()) {
            (Arch::Mlp, 1) | (Arch::Conv32, 3) => {}
            (arch, _) => v.push(format!("model.arch {arch:?} cannot handle samples of shape {shape:?}")),
        }
        if self.model.latent_dim == 0 {
            v.push("model.latent_dim must be positive".into());
        }
        v.extend(self.classifier.violations());
        v.extend(self.train.violations(k));
        if self.variant != Variant::Plain {
            let vt = self.variant_train();
            v.extend(vt.violations(k).into_iter().filter(|m| !v.contains(m)).collect::<Vec<_>>());
        }
        v.extend(self.explore.violations());
        if self.rebalance.per_class == 0 {
            v.push("rebalance.per_class must be positive".into());
        }
        const D_LAYERS: usize = 4;
        if self.rebalance.freeze_d > D_LAYERS || self.train.freeze_d > D_LAYERS {
            v.push(format!("freeze_d cannot exceed the {D_LAYERS} discriminator layers"));
        }
        if self.eval.repeats == 0 || self.eval.samples < 2 || self.eval.kid_samples < 2 {
            v.push("eval needs repeats >= 1, samples >= 2 and kid_samples >= 2".into());
        }
        if self.audit.per_set < 2 {
            v.push("audit.per_set must be at least 2".into());
        }
        for p in &self.audit.profiles {
            if let Err(e) = parse_profile(p, k) {
                v.push(format!("audit.profiles: {e}"));
            }
        }
        if self.grid.rows == 0 || self.grid.cols == 0 {
            v.push("grid.rows and grid.cols must be positive".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(FganError::Config(format!("{} problem(s):\n  - {}", v.len(), v.join("\n  - "))))
        }
    }

    /// SHA-256 over the resolved config, leaving out the output directory
    /// and the evaluation protocol (neither changes any trained artifact).
    pub fn hash(&self) -> Result<String> {
        let mut value = serde_json::to_value(self.resolved())?;
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
            map.remove("eval");
        }
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&value)?)))
    }
}

/// Per-class exploration summary written by the `explore` stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreSummary {
    pub config_hash: String,
    pub per_class: usize,
    pub class_counts: Vec<usize>,
    pub start_vectors: Vec<usize>,
    pub dequeues: Vec<usize>,
    pub chains_increasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub config_hash: String,
    pub accuracy: f64,
}

/// A configured run directory.
#[derive(Clone, Debug)]
pub struct Run {
    pub config: PipelineConfig,
    pub hash: String,
    pub dir: PathBuf,
}

pub const TRAIN_DATA: &str = "data/train.fgds";
pub const REFERENCE_DATA: &str = "data/reference.fgds";
pub const SYNTHETIC_DATA: &str = "data/synthetic.fgds";
pub const SYNTHETIC_LATENTS: &str = "data/synthetic.fglz";
pub const CLASSIFIER: &str = "classifier.fgck";
pub const BIASED: &str = "biased.fgck";
pub const REBALANCED: &str = "rebalanced.fgck";

impl Run {
    /// Validate `config`, create its run directory and record the config.
    pub fn open(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash()?;
        let dir = config.output_dir.join(format!("run-{}", &hash[..16]));
        for sub in ["data", "logs", "reports", "checkpoints"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let cfg_path = dir.join("config.json");
        if !cfg_path.exists() {
            let text = config.resolved().to_json()?;
            fs::write(&cfg_path, text).map_err(io_err(&cfg_path))?;
        }
        log::info!("run directory {}", dir.display());
        Ok(Self { config, hash, dir })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn require(&self, rel: &str, producer: &'static str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(FganError::MissingArtifact { path: p, producer })
        }
    }

    fn cfg(&self) -> PipelineConfig {
        self.config.resolved()
    }

    pub fn train_data(&self) -> Result<LabeledDataset> {
        load_dataset(&self.require(TRAIN_DATA, "gen-data")?)
    }

    pub fn reference_data(&self) -> Result<LabeledDataset> {
        load_dataset(&self.require(REFERENCE_DATA, "gen-data")?)
    }

    pub fn synthetic_data(&self) -> Result<LabeledDataset> {
        load_dataset(&self.require(SYNTHETIC_DATA, "explore")?)
    }

    pub fn classifier(&self) -> Result<Classifier> {
        load_checkpoint(&self.require(CLASSIFIER, "train-classifier")?)?.into_classifier()
    }

    pub fn biased(&self) -> Result<Checkpoint> {
        load_checkpoint(&self.require(BIASED, "train-gan")?)
    }

    pub fn rebalanced(&self) -> Result<Checkpoint> {
        load_checkpoint(&self.require(REBALANCED, "rebalance")?)
    }

    /// Write the imbalanced training set and the balanced reference set.
    pub fn gen_data(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let seed = self.config.seed;
        let (train_set, reference) = match &self.config.dataset {
            DatasetSpec::GaussianMixture {
                num_classes,
                counts,
                radius,
                sigma,
                reference_per_class,
            } => (
                gen_gaussian_mixture(*num_classes, counts, *radius, *sigma, rng::derive_seed(seed, &[tag::DATA, 0]))?,
                gen_gaussian_mixture(
                    *num_classes,
                    &vec![*reference_per_class; *num_classes],
                    *radius,
                    *sigma,
                    rng::derive_seed(seed, &[tag::DATA, 1]),
                )?,
            ),
            DatasetSpec::Cifar10 {
                path,
                head,
                ratio,
                target_total,
                reference_per_class,
            } => {
                let full = load_cifar10(path)?;
                let k = full.num_classes();
                let ratio = match (ratio, target_total) {
                    (Some(r), _) => *r,
                    (None, Some(t)) => fit_geometric_ratio(*head, k, *t)?,
                    (None, None) => unreachable!("validated"),
                };
                let profile = ImbalanceProfile::Geometric { head: *head, ratio };
                let train_set = make_imbalanced(&full, &profile, rng::derive_seed(seed, &[tag::DATA, 0]))?;
                let test_path = if path.is_dir() { path.join("test_batch.bin") } else { PathBuf::new() };
                let pool = if test_path.is_file() { load_cifar10(&test_path)? } else { full };
                let reference = balanced_subset(&pool, *reference_per_class, rng::derive_seed(seed, &[tag::DATA, 1]))?;
                (train_set, reference)
            }
        };
        save_dataset(&train_set, &self.path(TRAIN_DATA))?;
        save_dataset(&reference, &self.path(REFERENCE_DATA))?;
        log::info!(
            "training set {:?}, reference set {:?}",
            train_set.class_counts(),
            reference.class_counts()
        );
        Ok((train_set, reference))
    }

    /// Train the auxiliary classifier on the balanced reference set.
    pub fn train_classifier(&self) -> Result<f64> {
        let cfg = self.cfg();
        let reference = self.reference_data()?;
        let (c, acc) = train_classifier(&reference, cfg.model.arch, &cfg.classifier)?;
        log::info!("classifier held-out accuracy {acc:.4}");
        save_checkpoint(
            &Checkpoint::classifier(&c, cfg.classifier.steps, cfg.classifier.seed, &self.hash),
            &self.path(CLASSIFIER),
        )?;
        let summary = ClassifierSummary {
            config_hash: self.hash.clone(),
            accuracy: acc,
        };
        self.write_json("reports/classifier.json", &summary)?;
        Ok(acc)
    }

    /// Train the plain GAN on the imbalanced set.
    pub fn train_gan(&self) -> Result<GanModel> {
        let cfg = self.cfg();
        let data = self.train_data()?;
        let classifier = self.classifier().ok();
        let plain = TrainConfig {
            bias_loss: false,
            reweight: false,
            ..cfg.train.clone()
        };
        let mut model = self.fresh_model()?;
        self.train_and_save(&mut model, &data, &plain, classifier.as_ref(), "biased")?;
        Ok(model)
    }

    fn fresh_model(&self) -> Result<GanModel> {
        let cfg = &self.config;
        GanModel::build(cfg.model.arch, cfg.model.latent_dim, &cfg.dataset.sample_shape(), cfg.seed)
    }

    fn train_and_save(
        &self,
        model: &mut GanModel,
        data: &LabeledDataset,
        tc: &TrainConfig,
        classifier: Option<&Classifier>,
        name: &str,
    ) -> Result<()> {
        let ctx = TrainContext {
            classifier,
            config_hash: &self.hash,
        };
        let mut log = self.log_writer(name)?;
        let mut failure = None;
        let history = train(model, data, tc, &ctx, &mut |r, _| log_record(&mut log, r, &mut failure))?;
        if let Some(e) = failure {
            return Err(e);
        }
        self.save_history(&history, name)?;
        save_checkpoint(&Checkpoint::gan(model, tc.seed, &self.hash), &self.path(&format!("{name}.fgck")))
    }

    fn log_writer(&self, name: &str) -> Result<(PathBuf, fs::File)> {
        let p = self.path(&format!("logs/{name}.jsonl"));
        let f = fs::File::create(&p).map_err(io_err(&p))?;
        Ok((p, f))
    }

    fn save_history(&self, history: &[Checkpoint], name: &str) -> Result<()> {
        for ck in history {
            save_checkpoint(ck, &self.path(&format!("checkpoints/{name}-{:06}.fgck", ck.step)))?;
        }
        Ok(())
    }

    /// Mine the balanced synthetic set from the biased generator.
    pub fn explore(&self) -> Result<ExploreSummary> {
        let cfg = self.cfg();
        let data = self.train_data()?;
        let c = self.classifier()?;
        let model = self.biased()?.into_gan()?;
        let floor = logit_floor(&model.d, &data, cfg.explore.logit_quantile)?;
        let validity = Validity {
            tau: cfg.explore.tau,
            realism: Some((&model.d, floor)),
        };
        let set = assemble_balanced(&model.g, &c, &validity, cfg.rebalance.per_class, &cfg.explore)?;
        save_dataset(&set.samples, &self.path(SYNTHETIC_DATA))?;
        save_latents(&set.latents, &self.path(SYNTHETIC_LATENTS))?;
        let summary = ExploreSummary {
            config_hash: self.hash.clone(),
            per_class: cfg.rebalance.per_class,
            class_counts: set.samples.class_counts().to_vec(),
            start_vectors: set.runs.iter().map(Vec::len).collect(),
            dequeues: set.runs.iter().map(|r| r.iter().map(|x| x.dequeues).sum()).collect(),
            chains_increasing: set.runs.iter().flatten().all(|r| r.chains_increasing()),
        };
        self.write_json("reports/explore.json", &summary)?;
        Ok(summary)
    }

    /// Produce the rebalanced model for the configured variant, running any
    /// missing upstream stage first, then evaluate both models.
    pub fn rebalance(&self) -> Result<Vec<EvalReport>> {
        if !self.path(TRAIN_DATA).exists() || !self.path(REFERENCE_DATA).exists() {
            self.gen_data()?;
        }
        if !self.path(CLASSIFIER).exists() {
            self.train_classifier()?;
        }
        if !self.path(BIASED).exists() {
            self.train_gan()?;
        }
        let variant = self.config.variant;
        if variant.uses_synthetic() && !self.path(SYNTHETIC_DATA).exists() {
            self.explore()?;
        }
        let tc = self.config.variant_train();
        let c = self.classifier()?;
        let name = "rebalanced";
        match variant {
            Variant::Plain => {
                let biased = self.biased()?;
                save_checkpoint(&biased, &self.path(REBALANCED))?;
            }
            Variant::Bias | Variant::Reweight => {
                let mut model = self.fresh_model()?;
                self.train_and_save(&mut model, &self.train_data()?, &tc, Some(&c), name)?;
            }
            Variant::SynScratch => {
                let mut model = self.fresh_model()?;
                self.train_and_save(&mut model, &self.synthetic_data()?, &tc, Some(&c), name)?;
            }
            Variant::SynFinetune | Variant::SynFreezed => {
                let base = self.biased()?;
                let data = self.synthetic_data()?;
                let ctx = TrainContext {
                    classifier: Some(&c),
                    config_hash: &self.hash,
                };
                let mut log = self.log_writer(name)?;
                let mut failure = None;
                let (model, history) = finetune(&base, &data, &tc, &ctx, &mut |r, _| log_record(&mut log, r, &mut failure))?;
                if let Some(e) = failure {
                    return Err(e);
                }
                self.save_history(&history, name)?;
                save_checkpoint(&Checkpoint::gan(&model, tc.seed, &self.hash), &self.path(REBALANCED))?;
            }
        }
        self.evaluate()
    }

    /// Evaluate the biased model and, when present, the rebalanced one.
    pub fn evaluate(&self) -> Result<Vec<EvalReport>> {
        let cfg = &self.config;
        let c = self.classifier()?;
        let reference = self.reference_data()?;
        let mut models = vec![("biased".to_string(), self.biased()?)];
        if self.path(REBALANCED).exists() {
            models.push((cfg.variant.name().to_string(), self.rebalanced()?));
        }
        let mut reports = Vec::new();
        for (label, ck) in models {
            let model = ck.into_gan()?;
            let report = evaluate(&model.g, &c, &reference, &cfg.eval, cfg.seed, &self.hash, &label)?;
            let file = if label == "biased" { "biased" } else { "rebalanced" };
            let p = self.path(&format!("reports/{file}.json"));
            fs::write(&p, report.to_json()?).map_err(io_err(&p))?;
            log::info!("{label}: fairness {} fid {:.4}", report.fairness_hard, report.fid);
            reports.push(report);
        }
        Ok(reports)
    }

    /// FID between class-mix profiles of the reference set.
    pub fn audit_fid(&self, profiles: &[String]) -> Result<Heatmap> {
        let reference = self.reference_data()?;
        let c = self.classifier()?;
        let k = reference.num_classes();
        let parsed = profiles.iter().map(|p| parse_profile(p, k)).collect::<Result<Vec<_>>>()?;
        let heatmap = fid_sensitivity_heatmap(&reference, &c, &parsed, self.config.audit.per_set, self.config.seed)?;
        heatmap.write_csv(&self.path("reports/audit_fid.csv"))?;
        Ok(heatmap)
    }

    /// Markdown table of the stored reports plus sample grids of each model.
    pub fn report(&self) -> Result<String> {
        let mut reports = Vec::new();
        for file in ["biased", "rebalanced"] {
            let p = self.path(&format!("reports/{file}.json"));
            if p.exists() {
                let text = fs::read_to_string(&p).map_err(io_err(&p))?;
                let r: EvalReport = serde_json::from_str(&text)?;
                reports.push((file, r));
            }
        }
        if reports.is_empty() {
            return Err(FganError::MissingArtifact {
                path: self.path("reports/biased.json"),
                producer: "evaluate",
            });
        }
        let c = self.classifier().ok();
        let mut out = String::new();
        let _ = writeln!(out, "# Run {}\n", &self.hash[..16]);
        let _ = writeln!(out, "| model | fairness (hard) | fairness (soft) | FID | KID x10^3 | IS |");
        let _ = writeln!(out, "|---|---|---|---|---|---|");
        for (file, r) in &reports {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.4} | {:.4} | {} |",
                r.label, r.fairness_hard, r.fairness_soft, r.fid, r.kid_x1000, r.inception_score
            );
            let ck = if *file == "biased" { self.biased()? } else { self.rebalanced()? };
            let model = ck.into_gan()?;
            let g = &self.config.grid;
            let written = export_sample_grid(&model.g, c.as_ref(), g.rows, g.cols, self.config.seed, &self.path(&format!("reports/grid-{file}")))?;
            log::info!("wrote {}", written.display());
        }
        let _ = writeln!(out, "\nclass histograms:");
        for (_, r) in &reports {
            let _ = writeln!(out, "- {}: {:?}", r.label, r.histogram.counts);
        }
        let p = self.path("reports/report.md");
        fs::write(&p, &out).map_err(io_err(&p))?;
        Ok(out)
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let p = self.path(rel);
        fs::write(&p, serde_json::to_string_pretty(value)? + "\n").map_err(io_err(&p))
    }
}

fn log_record(log: &mut (PathBuf, fs::File), r: &LogRecord, failure: &mut Option<FganError>) {
    if failure.is_some() {
        return;
    }
    let line = match serde_json::to_string(r) {
        Ok(l) => l,
        Err(e) => {
            *failure = Some(e.into());
            return;
        }
    };
    if let Err(e) = writeln!(log.1, "{line}") {
        *failure = Some(FganError::Io { path: log.0.clone(), source: e });
    }
    log::debug!("{line}");
}

/// `per_class` random samples of every class.
pub fn balanced_subset(ds: &LabeledDataset, per_class: usize, seed: u64) -> Result<LabeledDataset> {
    let mut rng = rng::stream(seed, &[tag::SUBSAMPLE]);
    let mut picked = Vec::with_capacity(per_class * ds.num_classes());
    for k in 0..ds.num_classes() {
        let pool = ds.indices_of_class(k);
        if pool.len() < per_class {
            return Err(FganError::Data(format!(
                "class {k} has {} samples, {per_class} requested",
                pool.len()
            )));
        }
        let take = rand::seq::index::sample(&mut rng, pool.len(), per_class);
        picked.extend(take.into_iter().map(|i| pool[i]));
    }
    Ok(ds.subset(&picked))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let c = PipelineConfig::default();
        assert!(c.violations().is_empty(), "{:?}", c.violations());
        let back = PipelineConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hash_ignores_output_dir_and_eval() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            output_dir: "/elsewhere".into(),
            eval: EvalSpec { repeats: 2, ..EvalSpec::default() },
            ..a.clone()
        };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let c = PipelineConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        let d = PipelineConfig {
            variant: Variant::Bias,
            ..a.clone()
        };
        assert_ne!(a.hash().unwrap(), d.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut c = PipelineConfig::default();
        c.schema_version = 9;
        c.model.latent_dim = 0;
        c.train.lr = -1.0;
        c.explore.tau = 1.5;
        let msg = c.validate().unwrap_err().to_string();
        for needle in ["schema_version", "latent_dim", "train.lr", "explore.tau"] {
            assert!(msg.contains(needle), "{needle} missing from {msg}");
        }
        assert!(msg.contains("4 problem(s)"), "{msg}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = PipelineConfig::from_json(r#"{"seeed": 3}"#).unwrap_err();
        assert!(err.to_string().contains("seeed"));
        let ok = PipelineConfig::from_json(r#"{"seed": 3, "train": {"steps": 10}}"#).unwrap();
        assert_eq!(ok.seed, 3);
        assert_eq!(ok.train.steps, 10);
        assert_eq!(ok.train.batch_size, 64);
    }

    #[test]
    fn variants_parse_and_configure() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert!("syn".parse::<Variant>().is_err());
        let c = PipelineConfig {
            variant: Variant::SynFreezed,
            ..PipelineConfig::default()
        };
        let t = c.variant_train();
        assert!(t.bias_loss);
        assert_eq!(t.freeze_d, 2);
        assert_eq!(t.steps, 1500);
    }

    #[test]
    fn mlp_rejects_image_data() {
        let c = PipelineConfig {
            dataset: DatasetSpec::Cifar10 {
                path: "x".into(),
                head: 5000,
                ratio: None,
                target_total: Some(29_028),
                reference_per_class: 100,
            },
            ..PipelineConfig::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("model.arch"), "{msg}");
    }

    #[test]
    fn balanced_subset_draws_evenly() {
        let ds = gen_gaussian_mixture(3, &[50, 20, 10], 0.7, 0.05, 1).unwrap();
        let sub = balanced_subset(&ds, 10, 2).unwrap();
        assert_eq!(sub.class_counts(), &[10, 10, 10]);
        assert!(balanced_subset(&ds, 11, 2).is_err());
    }
}
