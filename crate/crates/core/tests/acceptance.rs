//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Criterion 10 runs only when `FGAN_CIFAR10` points
//! at a directory of CIFAR-10 binary batches.

mod common;

use std::path::Path;
use std::time::Instant;

use fgan_autodiff::gradcheck::{check_gradients, DEFAULT_STEP};
use fgan_autodiff::{Graph, Tensor, Var, LEAKY_SLOPE};
use fgan_core::dataset::LabeledDataset;
use fgan_core::explore::{assemble_balanced, logit_floor, Validity};
use fgan_core::metrics::*;
use fgan_core::models::{argmax, Arch, GanModel};
use fgan_core::pipeline::{DatasetSpec, PipelineConfig, Run, Variant};
use fgan_core::training::*;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

const SEEDS: [u64; 3] = [1, 2, 3];

fn contract(g: &mut Graph, y: Var, seed: u64) -> fgan_autodiff::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(common::uniform(&mut rng, g.shape(y)));
    let p = g.mul(y, w)?;
    g.sum(p)
}

type Prim = Box<dyn Fn(&mut Graph, &[Var]) -> fgan_autodiff::Result<Var>>;

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = common::uniform(&mut rng, &[3, 4]);
    let b = common::uniform(&mut rng, &[4, 2]);
    let c = common::uniform(&mut rng, &[3, 4]);
    let v = common::uniform(&mut rng, &[4]);
    let kinked = Tensor::new(vec![3, 4], a.data().iter().map(|x| if x.abs() < 0.05 { 0.5 } else { *x }).collect()).unwrap();
    let img = common::uniform(&mut rng, &[2, 2, 5, 5]);
    let ker = common::uniform(&mut rng, &[3, 2, 3, 3]);
    let up = common::uniform(&mut rng, &[2, 3, 4, 4]);
    let uker = common::uniform(&mut rng, &[3, 2, 4, 4]);
    let unary = |f: fn(&mut Graph, Var) -> fgan_autodiff::Result<Var>, s: u64| -> Prim {
        Box::new(move |g, x| {
            let y = f(g, x[0])?;
            contract(g, y, s)
        })
    };
    let cases: Vec<(&str, Vec<Tensor>, Prim)> = vec![
        ("matmul", vec![a.clone(), b.clone()], Box::new(|g, x| { let y = g.matmul(x[0], x[1])?; contract(g, y, 1) })),
        ("add", vec![a.clone(), c.clone()], Box::new(|g, x| { let y = g.add(x[0], x[1])?; contract(g, y, 2) })),
        ("sub", vec![a.clone(), c.clone()], Box::new(|g, x| { let y = g.sub(x[0], x[1])?; contract(g, y, 3) })),
        ("mul", vec![a.clone(), c.clone()], Box::new(|g, x| { let y = g.mul(x[0], x[1])?; contract(g, y, 4) })),
        ("scale", vec![a.clone()], Box::new(|g, x| { let y = g.scale(x[0], -1.7)?; contract(g, y, 5) })),
        ("add_scalar", vec![a.clone()], Box::new(|g, x| { let y = g.add_scalar(x[0], 0.3)?; contract(g, y, 6) })),
        ("neg", vec![a.clone()], unary(Graph::neg, 7)),
        ("transpose", vec![a.clone()], unary(Graph::transpose, 8)),
        ("expand", vec![v.clone()], Box::new(|g, x| { let y = g.expand(x[0], &[3, 4])?; contract(g, y, 9) })),
        ("sum_to", vec![a.clone()], Box::new(|g, x| { let y = g.sum_to(x[0], &[1, 4])?; contract(g, y, 10) })),
        ("reshape", vec![a.clone()], Box::new(|g, x| { let y = g.reshape(x[0], &[2, 6])?; contract(g, y, 11) })),
        ("sum", vec![a.clone()], Box::new(|g, x| g.sum(x[0]))),
        ("mean", vec![a.clone()], Box::new(|g, x| g.mean(x[0]))),
        ("squared_norm", vec![a.clone()], Box::new(|g, x| g.squared_norm(x[0]))),
        ("tanh", vec![a.clone()], unary(Graph::tanh, 12)),
        ("sigmoid", vec![a.clone()], unary(Graph::sigmoid, 13)),
        ("softplus", vec![a.clone()], unary(Graph::softplus, 14)),
        ("softmax", vec![a.clone()], unary(Graph::softmax, 15)),
        ("log_softmax", vec![a.clone()], unary(Graph::log_softmax, 16)),
        ("leaky_relu", vec![kinked], Box::new(|g, x| { let y = g.leaky_relu(x[0], LEAKY_SLOPE)?; contract(g, y, 17) })),
        ("conv2d", vec![img.clone(), ker.clone()], Box::new(|g, x| { let y = g.conv2d(x[0], x[1], 2, 1)?; contract(g, y, 18) })),
        ("conv_transpose2d", vec![up, uker], Box::new(|g, x| { let y = g.conv_transpose2d(x[0], x[1], 2, 1)?; contract(g, y, 19) })),
        ("double backward", vec![img, ker], Box::new(|g, x| {
            let y = g.conv2d(x[0], x[1], 1, 1)?;
            let t = g.tanh(y)?;
            let s = contract(g, t, 20)?;
            let gx = g.grad(s, &[x[0]])?;
            g.squared_norm(gx[0])
        })),
    ];
    let mut worst = (0.0f64, "");
    for (name, inputs, f) in &cases {
        let r = check_gradients(inputs, DEFAULT_STEP, f).map_err(|e| format!("{name}: {e}"))?;
        if r.max_rel_error > worst.0 {
            worst = (r.max_rel_error, name);
        }
    }
    let mut bias_err = 0.0f64;
    let mut bias_cases = 0;
    for seed in 0..6 {
        let case = common::BiasLossCase::new(seed);
        let e = case.expectations();
        let target = 1.0 / e.len() as f64;
        if e.iter().any(|&v| (v - target).abs() < 1e-2) || e.iter().all(|&v| v >= target) {
            continue;
        }
        bias_err = bias_err.max(case.check().max_rel_error);
        bias_cases += 1;
    }
    let pass = worst.0 < 1e-4 && bias_err < 1e-3 && bias_cases >= 3;
    Ok((
        pass,
        format!(
            "{} primitives, worst rel err {:.2e} ({}); soft bias loss through G and C over {bias_cases} cases, worst {:.2e}",
            cases.len(),
            worst.0,
            worst.1,
            bias_err
        ),
    ))
}

fn criterion_2() -> Outcome {
    let counts = [6536, 1748, 1213, 306, 171, 26];
    let expected = [0.06928, 0.16504, 0.17574, 0.19388, 0.19658, 0.19948];
    let l = lambda_weights(&counts).map_err(|e| e.to_string())?;
    let lam_err = l.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let sum_err = (l.iter().sum::<f64>() - 1.0).abs();
    let mut one_class = vec![0.0; 36];
    for i in 0..6 {
        one_class[i * 6] = 1.0;
    }
    let probs = Tensor::new(vec![6, 6], one_class).unwrap();
    let bias = bias_loss_value(&probs, &[1.0 / 6.0; 6], Mode::Hard).map_err(|e| e.to_string())?;
    let fair = fairness_metric(&ClassHistogram::from_counts(counts.to_vec()), Mode::Hard).map_err(|e| e.to_string())?;
    let collapse = fairness_metric(&ClassHistogram::from_counts(vec![10, 0, 0, 0, 0, 0]), Mode::Hard).map_err(|e| e.to_string())?;
    let pass = lam_err <= 1e-4
        && sum_err < 1e-12
        && (bias - 5.0 / 36.0).abs() <= 1e-9
        && (fair - 0.55410).abs() <= 1e-4
        && (collapse - (5.0f64 / 6.0).sqrt()).abs() <= 1e-9;
    Ok((
        pass,
        format!("lambda max err {lam_err:.1e}, sum err {sum_err:.1e}; bias loss {bias:.12}; fairness {fair:.5}; collapse {collapse:.12}"),
    ))
}

fn stats(mean: &[f64], cov: DMatrix<f64>) -> FeatureStats {
    FeatureStats {
        mean: DVector::from_column_slice(mean),
        cov,
        count: 1000,
    }
}

fn criterion_3() -> Outcome {
    let e = |r: fgan_core::Result<f64>| r.map_err(|e| e.to_string());
    let fid1 = e(fid(&stats(&[0.0], DMatrix::identity(1, 1)), &stats(&[1.0], DMatrix::identity(1, 1))))?;
    let fid2 = e(fid(&stats(&[0.0, 0.0], DMatrix::identity(2, 2)), &stats(&[0.0, 0.0], DMatrix::identity(2, 2) * 4.0)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let feats = common::uniform(&mut rng, &[200, 4]);
    let sf = FeatureStats::from_features(&feats).map_err(|e| e.to_string())?;
    let fid0 = e(fid(&sf, &sf))?;
    let x = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
    let y = Tensor::new(vec![2, 1], vec![0.0, 0.0]).unwrap();
    let kid7 = e(kid(&x, &y))?;
    let uniform = Tensor::new(vec![10, 4], vec![0.25; 40]).unwrap();
    let (is1, _) = inception_score(&uniform, 2).map_err(|e| e.to_string())?;
    let h = ClassHistogram::from_counts(vec![50, 30, 15, 5]);
    let direct = e(fairness_metric(&h, Mode::Soft))?;
    let vs_uniform = e(fairness_metric_ref(&h, &ClassHistogram::from_counts(vec![1; 4]), Mode::Soft))?;
    let pass = (fid1 - 1.0).abs() <= 1e-3
        && (fid2 - 2.0).abs() <= 1e-3
        && fid0.abs() <= 1e-6
        && kid7 == 7.0
        && (is1 - 1.0).abs() <= 1e-9
        && (vs_uniform - direct).abs() <= 1e-12;
    Ok((
        pass,
        format!("FID {fid1:.6} / {fid2:.6} / self {fid0:.1e}; KID {kid7}; IS {is1:.12}; direct vs uniform-reference {:.1e}", (vs_uniform - direct).abs()),
    ))
}

struct Benchmark {
    runs: Vec<(u64, Run, Vec<EvalReport>)>,
}

fn benchmark_config(seed: u64, variant: Variant, out: &Path) -> PipelineConfig {
    PipelineConfig {
        seed,
        variant,
        output_dir: out.to_path_buf(),
        ..PipelineConfig::default()
    }
}

fn run_variant(variant: Variant, out: &Path) -> Result<Benchmark, String> {
    let mut runs = Vec::new();
    for seed in SEEDS {
        let run = Run::open(benchmark_config(seed, variant, out)).map_err(|e| e.to_string())?;
        let reports = run.rebalance().map_err(|e| format!("seed {seed}: {e}"))?;
        runs.push((seed, run, reports));
    }
    Ok(Benchmark { runs })
}

fn fairness_pairs(b: &Benchmark) -> (Vec<f64>, Vec<f64>) {
    b.runs.iter().map(|(_, _, r)| (r[0].fairness_hard.mean, r[1].fairness_hard.mean)).unzip()
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

fn criterion_4(syn: &Result<Benchmark, String>) -> Outcome {
    let b = syn.as_ref().map_err(Clone::clone)?;
    let (biased, rebalanced) = fairness_pairs(b);
    let (mb, mr) = (common::median(&biased), common::median(&rebalanced));
    Ok((
        mb >= 0.15 && mr <= 0.5 * mb,
        format!(
            "median fairness biased {mb:.4} [{}] -> Syn-z retrained {mr:.4} [{}], ratio {:.3}",
            fmt(&biased),
            fmt(&rebalanced),
            mr / mb
        ),
    ))
}

fn criterion_5(out: &Path) -> Outcome {
    let b = run_variant(Variant::Bias, out)?;
    let (plain, with_bias) = fairness_pairs(&b);
    let (mp, mb) = (common::median(&plain), common::median(&with_bias));
    Ok((
        mb < mp,
        format!("median fairness without bias loss {mp:.4} [{}], with {mb:.4} [{}]", fmt(&plain), fmt(&with_bias)),
    ))
}

fn criterion_6(syn: &Result<Benchmark, String>) -> Outcome {
    let b = syn.as_ref().map_err(Clone::clone)?;
    let run = &b.runs[0].1;
    let err = |e: fgan_core::FganError| e.to_string();
    let cfg = run.config.resolved();
    let data = run.train_data().map_err(err)?;
    let c = run.classifier().map_err(err)?;
    let model: GanModel = run.biased().map_err(err)?.into_gan().map_err(err)?;
    let floor = logit_floor(&model.d, &data, cfg.explore.logit_quantile).map_err(err)?;
    let validity = Validity {
        tau: cfg.explore.tau,
        realism: Some((&model.d, floor)),
    };
    let set = assemble_balanced(&model.g, &c, &validity, 200, &cfg.explore).map_err(err)?;
    let counts = set.samples.class_counts().to_vec();
    let probs = c.probabilities(&all_rows(&set.samples)).map_err(err)?;
    let pure = (0..set.samples.len()).filter(|&i| {
        let row = probs.row(i);
        let label = set.samples.labels()[i] as usize;
        argmax(row) == label && row[label] >= cfg.explore.tau
    });
    let purity = pure.count() as f64 / set.samples.len() as f64;
    let chains = set.runs.iter().flatten().all(|r| r.chains_increasing());
    let within = set.runs.iter().flatten().all(|r| r.accepted.len() <= cfg.explore.max_iter);
    Ok((
        counts.iter().all(|&n| n == 200) && purity == 1.0 && chains && within,
        format!("class counts {counts:?}, purity {:.1}%, chains increasing {chains}", purity * 100.0),
    ))
}

fn all_rows(ds: &LabeledDataset) -> Tensor {
    ds.batch(&(0..ds.len()).collect::<Vec<_>>())
}

fn criterion_7(syn: &Result<Benchmark, String>) -> Outcome {
    let b = syn.as_ref().map_err(Clone::clone)?;
    let run = &b.runs[0].1;
    let profiles: Vec<String> = ["uniform", "skewed", "class0", "class3", "3:7:10:20:60"].map(String::from).to_vec();
    let h = run.audit_fid(&profiles).map_err(|e| e.to_string())?;
    let ratio = h.min_cross_ratio();
    Ok((
        ratio >= 5.0 && h.identical_set == 0.0,
        format!("{} profiles, smallest cross/same-profile ratio {ratio:.1}, identical-set FID {}", profiles.len(), h.identical_set),
    ))
}

fn criterion_8() -> Outcome {
    let (_, balanced) = common::benchmark(11);
    let cfg = TrainConfig {
        steps: 100,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = |reweight: bool| -> Result<(Vec<(f64, f64, f64)>, GanModel), String> {
        let mut m = GanModel::build(Arch::Mlp, 8, &[2], 5).map_err(|e| e.to_string())?;
        let mut log = Vec::new();
        let c = TrainConfig { reweight, log_every: 1, ..cfg.clone() };
        train(&mut m, &balanced, &c, &TrainContext::default(), &mut |r, _| log.push((r.d_loss, r.g_loss, r.r1)))
            .map_err(|e| e.to_string())?;
        Ok((log, m))
    };
    let (plain_log, plain) = run(false)?;
    let (rw_log, rw) = run(true)?;
    let identical = plain_log.len() == 100 && plain_log.iter().zip(&rw_log).all(|(a, b)| a.0.to_bits() == b.0.to_bits() && a.1.to_bits() == b.1.to_bits() && a.2.to_bits() == b.2.to_bits()) && plain == rw;
    let counts = [6536, 1748, 1213, 306, 171, 26];
    let expected = [0.06928, 0.16504, 0.17574, 0.19388, 0.19658, 0.19948];
    let f = reweight_factors(&counts).map_err(|e| e.to_string())?;
    let err = f.iter().zip(expected).map(|(a, b)| (a / 6.0 - b).abs()).fold(0.0, f64::max);
    Ok((
        identical && err <= 1e-4,
        format!("uniform-weight run bitwise identical over {} steps: {identical}; benchmark-count weights vs lambda max err {err:.1e}", plain_log.len()),
    ))
}

fn criterion_9(out: &Path) -> Outcome {
    let config = |dir: &str| PipelineConfig {
        seed: 4,
        output_dir: out.join(dir),
        train: TrainConfig {
            steps: 800,
            r1_gamma: 0.1,
            ..TrainConfig::default()
        },
        rebalance: fgan_core::pipeline::RebalanceSpec {
            per_class: 200,
            ..Default::default()
        },
        ..PipelineConfig::default()
    };
    let a = Run::open(config("a")).map_err(|e| e.to_string())?;
    let b = Run::open(config("b")).map_err(|e| e.to_string())?;
    a.rebalance().map_err(|e| e.to_string())?;
    b.rebalance().map_err(|e| e.to_string())?;
    let mut same = a.hash == b.hash;
    let mut checked = Vec::new();
    for f in ["reports/biased.json", "reports/rebalanced.json", "data/synthetic.fgds", "rebalanced.fgck"] {
        let (x, y) = (std::fs::read(a.path(f)).map_err(|e| e.to_string())?, std::fs::read(b.path(f)).map_err(|e| e.to_string())?);
        same &= x == y;
        checked.push(f);
    }
    Ok((same, format!("config hash {}, byte-identical: {}", &a.hash[..16], checked.join(", "))))
}

fn criterion_10(out: &Path) -> Option<Outcome> {
    let dir = std::env::var_os("FGAN_CIFAR10")?;
    let steps = std::env::var("FGAN_CIFAR_STEPS").ok().and_then(|s| s.parse().ok()).unwrap_or(3000);
    let config = |variant| PipelineConfig {
        seed: 1,
        variant,
        output_dir: out.to_path_buf(),
        dataset: DatasetSpec::Cifar10 {
            path: dir.clone().into(),
            head: 5000,
            ratio: None,
            target_total: Some(29_028),
            reference_per_class: 1000,
        },
        model: fgan_core::pipeline::ModelSpec {
            arch: Arch::Conv32,
            latent_dim: 64,
        },
        classifier: ClassifierConfig {
            accuracy_floor: 0.6,
            steps: 4000,
            ..ClassifierConfig::default()
        },
        train: TrainConfig {
            steps,
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    };
    Some((|| {
        let run = Run::open(config(Variant::Bias)).map_err(|e| e.to_string())?;
        let r = run.rebalance().map_err(|e| e.to_string())?;
        Ok((r[1].fid <= r[0].fid, format!("FID without bias loss {:.3}, with {:.3}", r[0].fid, r[1].fid)))
    })())
}

fn report(id: u32, title: &str, start: Instant, outcome: Outcome, failures: &mut u32) {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok((true, detail)) => println!("PASS criterion {id} ({title}): {detail} [{secs:.1}s]"),
        Ok((false, detail)) => {
            *failures += 1;
            println!("FAIL criterion {id} ({title}): {detail} [{secs:.1}s]");
        }
        Err(e) => {
            *failures += 1;
            println!("FAIL criterion {id} ({title}): error: {e} [{secs:.1}s]");
        }
    }
}

fn main() {
    // Single-threaded mode for the reproducibility guarantees.
    std::env::set_var("FGAN_THREADS", "1");
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut failures = 0;

    let t = Instant::now();
    report(1, "gradient suite", t, criterion_1(), &mut failures);
    let t = Instant::now();
    report(2, "formula oracles", t, criterion_2(), &mut failures);
    let t = Instant::now();
    report(3, "metric oracles", t, criterion_3(), &mut failures);

    let t = Instant::now();
    let syn = run_variant(Variant::SynScratch, &tmp.path().join("syn"));
    report(4, "rebalancing reproduction", t, criterion_4(&syn), &mut failures);
    let t = Instant::now();
    report(5, "bias-loss ablation", t, criterion_5(&tmp.path().join("bias")), &mut failures);
    let t = Instant::now();
    report(6, "latent exploration", t, criterion_6(&syn), &mut failures);
    let t = Instant::now();
    report(7, "FID sensitivity", t, criterion_7(&syn), &mut failures);
    let t = Instant::now();
    report(8, "reweighting baseline", t, criterion_8(), &mut failures);
    let t = Instant::now();
    report(9, "reproducibility", t, criterion_9(&tmp.path().join("repro")), &mut failures);
    let t = Instant::now();
    match criterion_10(&tmp.path().join("cifar")) {
        Some(outcome) => report(10, "CIFAR-10 extended", t, outcome, &mut failures),
        None => println!("SKIP criterion 10 (CIFAR-10 extended): set FGAN_CIFAR10 to a directory of CIFAR-10 binary batches"),
    }

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all gating acceptance criteria passed");
}
