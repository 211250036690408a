use std::fs;
use std::path::Path;

use fgan_core::metrics::EvalSpec;
use fgan_core::models::Arch;
use fgan_core::pipeline::*;
use fgan_core::training::{ClassifierConfig, TrainConfig};
use fgan_core::FganError;

fn small(out: &Path, variant: Variant) -> PipelineConfig {
    PipelineConfig {
        seed: 2,
        variant,
        output_dir: out.to_path_buf(),
        dataset: DatasetSpec::GaussianMixture {
            num_classes: 3,
            counts: vec![600, 300, 150],
            radius: 0.7,
            sigma: 0.05,
            reference_per_class: 200,
        },
        classifier: ClassifierConfig {
            steps: 300,
            ..ClassifierConfig::default()
        },
        train: TrainConfig {
            steps: 400,
            r1_gamma: 0.1,
            eval_every: 200,
            eval_samples: 300,
            audit_samples: 1000,
            ..TrainConfig::default()
        },
        rebalance: RebalanceSpec {
            per_class: 60,
            finetune_steps: 100,
            freeze_d: 2,
        },
        eval: EvalSpec {
            repeats: 2,
            samples: 300,
            kid_samples: 100,
        },
        audit: AuditSpec {
            profiles: vec!["uniform".into(), "class0".into()],
            per_set: 60,
        },
        ..PipelineConfig::default()
    }
}

#[test]
fn stages_require_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::open(small(dir.path(), Variant::SynScratch)).unwrap();
    let producer = |r: FganError| match r {
        FganError::MissingArtifact { producer, .. } => producer,
        other => panic!("expected a missing artifact, got {other}"),
    };
    assert_eq!(producer(run.train_classifier().unwrap_err()), "gen-data");
    run.gen_data().unwrap();
    assert_eq!(producer(run.explore().unwrap_err()), "train-classifier");
    assert_eq!(producer(run.evaluate().unwrap_err()), "train-classifier");
    run.train_classifier().unwrap();
    assert_eq!(producer(run.explore().unwrap_err()), "train-gan");
    assert_eq!(producer(run.evaluate().unwrap_err()), "train-gan");
    assert_eq!(producer(run.report().unwrap_err()), "evaluate");
    // The classifier only feeds fairness logging here, so it is optional.
    let other = Run::open(small(dir.path(), Variant::Bias)).unwrap();
    other.gen_data().unwrap();
    other.train_gan().unwrap();
    let log = fs::read_to_string(other.path("logs/biased.jsonl")).unwrap();
    assert!(log.contains("\"fairness\":null"));
}

#[test]
fn finetune_variants_leave_upstream_artifacts_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::open(small(dir.path(), Variant::SynFreezed)).unwrap();
    run.gen_data().unwrap();
    run.train_classifier().unwrap();
    run.train_gan().unwrap();
    let upstream = [TRAIN_DATA, REFERENCE_DATA, CLASSIFIER, BIASED, "config.json"];
    let before: Vec<Vec<u8>> = upstream.iter().map(|f| fs::read(run.path(f)).unwrap()).collect();

    let reports = run.rebalance().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0].label, "biased");
    assert_eq!(reports[1].label, "syn-freezed");
    for r in &reports {
        assert_eq!(r.config_hash, run.hash);
        assert_eq!(r.histogram.total, 600);
    }
    let after: Vec<Vec<u8>> = upstream.iter().map(|f| fs::read(run.path(f)).unwrap()).collect();
    assert_eq!(before, after);

    let biased = run.biased().unwrap().into_gan().unwrap();
    let tuned = run.rebalanced().unwrap().into_gan().unwrap();
    assert_eq!(tuned.step, biased.step + 100);
    for layer in 0..4 {
        for &i in tuned.d.net.layer_param_indices(layer) {
            let same = tuned.d.net.params().get(i).value == biased.d.net.params().get(i).value;
            assert_eq!(same, layer < 2, "layer {layer}");
        }
    }
    let log = fs::read_to_string(run.path("logs/rebalanced.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["step", "d_loss", "g_loss", "r1", "bias", "fairness", "wallclock"] {
        assert!(first.get(key).is_some(), "log line lacks {key}");
    }
    assert!(first["bias"].as_f64().unwrap() >= 0.0);

    let summary: ExploreSummary = serde_json::from_str(&fs::read_to_string(run.path("reports/explore.json")).unwrap()).unwrap();
    assert_eq!(summary.class_counts, vec![60; 3]);
    assert!(summary.chains_increasing);

    let md = run.report().unwrap();
    assert!(md.contains("| syn-freezed |"));
    assert!(md.contains(" ± "));
    let grid = fs::read_to_string(run.path("reports/grid-rebalanced.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 64);
    let heat = run.audit_fid(&["uniform".into(), "class0".into()]).unwrap();
    assert_eq!(heat.identical_set, 0.0);
    assert!(run.path("reports/audit_fid.csv").exists());
}

#[test]
fn variants_get_separate_run_directories() {
    let dir = tempfile::tempdir().unwrap();
    let dirs: Vec<_> = Variant::ALL
        .iter()
        .map(|&v| Run::open(small(dir.path(), v)).unwrap().dir)
        .collect();
    let mut unique = dirs.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), dirs.len());
    let again = Run::open(small(dir.path(), Variant::Plain)).unwrap();
    assert_eq!(again.dir, dirs[0]);
}

#[test]
fn plain_variant_reports_the_biased_model_twice() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::open(small(dir.path(), Variant::Plain)).unwrap();
    let reports = run.rebalance().unwrap();
    assert_eq!(reports[0].fairness_hard, reports[1].fairness_hard);
    assert_eq!(reports[0].fid, reports[1].fid);
    assert!(!run.path(SYNTHETIC_DATA).exists());
}

fn fake_cifar(dir: &Path, per_class: usize) {
    // Each class is a distinct flat colour with a little deterministic texture.
    for (batch, name) in ["data_batch_1.bin", "test_batch.bin"].iter().enumerate() {
        let mut bytes = Vec::new();
        for r in 0..per_class * 10 {
            let class = (r % 10) as u8;
            bytes.push(class);
            for ch in 0..3u32 {
                for p in 0..1024u32 {
                    let base = (class as u32 * 25 + ch * 60) % 256;
                    bytes.push(((base + (p * 7 + r as u32 + batch as u32) % 9) % 256) as u8);
                }
            }
        }
        fs::write(dir.join(name), bytes).unwrap();
    }
}

#[test]
fn conv_pipeline_runs_on_cifar_format_data() {
    let data = tempfile::tempdir().unwrap();
    fake_cifar(data.path(), 30);
    let out = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        seed: 1,
        variant: Variant::Bias,
        output_dir: out.path().to_path_buf(),
        dataset: DatasetSpec::Cifar10 {
            path: data.path().to_path_buf(),
            head: 30,
            ratio: Some(0.8),
            target_total: None,
            reference_per_class: 20,
        },
        model: ModelSpec {
            arch: Arch::Conv32,
            latent_dim: 16,
        },
        classifier: ClassifierConfig {
            steps: 40,
            batch_size: 32,
            accuracy_floor: 0.0,
            ..ClassifierConfig::default()
        },
        train: TrainConfig {
            steps: 3,
            batch_size: 16,
            eval_every: 3,
            eval_samples: 20,
            audit_samples: 50,
            r1_interval: 2,
            ..TrainConfig::default()
        },
        eval: EvalSpec {
            repeats: 2,
            samples: 10,
            kid_samples: 10,
        },
        grid: GridSpec { rows: 4, cols: 4 },
        ..PipelineConfig::default()
    };
    let run = Run::open(cfg).unwrap();
    let (train, reference) = run.gen_data().unwrap();
    assert_eq!(train.class_counts()[0], 30);
    assert_eq!(reference.class_counts(), &[20; 10]);
    let reports = run.rebalance().unwrap();
    assert!(reports.iter().all(|r| r.fid.is_finite()));
    run.report().unwrap();
    let ppm = fs::read(run.path("reports/grid-rebalanced.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n128 128\n255\n"));
}
