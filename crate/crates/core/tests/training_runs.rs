use fgan_core::dataset::gen_gaussian_mixture;
use fgan_core::models::*;
use fgan_core::training::*;
use fgan_core::FganError;

fn cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 16,
        eval_every: 50,
        log_every: 10,
        eval_samples: 200,
        audit_samples: 500,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn losses(model: &mut GanModel, data: &fgan_core::dataset::LabeledDataset, c: &TrainConfig) -> Vec<(u64, f64, f64, f64)> {
    let mut out = Vec::new();
    train(model, data, c, &TrainContext::default(), &mut |r, _| out.push((r.step, r.d_loss, r.g_loss, r.r1))).unwrap();
    out
}

#[test]
fn zero_steps_returns_initial_checkpoint_only() {
    let data = gen_gaussian_mixture(3, &[30, 20, 10], 0.7, 0.05, 0).unwrap();
    let mut m = GanModel::build(Arch::Mlp, 4, &[2], 0).unwrap();
    let before = m.clone();
    let history = train(&mut m, &data, &cfg(0), &TrainContext::default(), &mut |_, _| {}).unwrap();
    assert_eq!(history.len(), 1);
    assert_eq!(history[0].step, 0);
    assert_eq!(m, before);
}

#[test]
fn same_seed_same_loss_curve() {
    let data = gen_gaussian_mixture(3, &[30, 20, 10], 0.7, 0.05, 0).unwrap();
    let mut a = GanModel::build(Arch::Mlp, 4, &[2], 1).unwrap();
    let mut b = a.clone();
    let la = losses(&mut a, &data, &cfg(60));
    let lb = losses(&mut b, &data, &cfg(60));
    assert_eq!(la, lb);
    assert_eq!(a, b);
    let mut c = GanModel::build(Arch::Mlp, 4, &[2], 1).unwrap();
    let lc = losses(&mut c, &data, &TrainConfig { seed: 4, ..cfg(60) });
    assert_ne!(la, lc);
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_gaussian_mixture(3, &[30, 20, 10], 0.7, 0.05, 0).unwrap();
    let mut straight = GanModel::build(Arch::Mlp, 4, &[2], 2).unwrap();
    let mut first = straight.clone();
    let full = losses(&mut straight, &data, &cfg(80));

    let mut head = losses(&mut first, &data, &cfg(40));
    let path = dir.path().join("mid.fgck");
    save_checkpoint(&Checkpoint::gan(&first, 3, ""), &path).unwrap();
    let mut resumed = load_checkpoint(&path).unwrap().into_gan().unwrap();
    assert_eq!(resumed.step, 40);
    head.extend(losses(&mut resumed, &data, &cfg(40)));
    assert_eq!(resumed.step, 80);
    assert_eq!(head, full);
    assert_eq!(resumed, straight);
}

#[test]
fn freezing_every_layer_leaves_discriminator_untouched() {
    let data = gen_gaussian_mixture(3, &[30, 20, 10], 0.7, 0.05, 0).unwrap();
    let mut m = GanModel::build(Arch::Mlp, 4, &[2], 0).unwrap();
    let d0 = m.d.clone();
    let layers = m.d.net.layer_count();
    train(&mut m, &data, &TrainConfig { freeze_d: layers, ..cfg(30) }, &TrainContext::default(), &mut |_, _| {}).unwrap();
    for (a, b) in m.d.net.params().iter().zip(d0.net.params().iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
    assert!(matches!(
        train(&mut m, &data, &TrainConfig { freeze_d: layers + 1, ..cfg(1) }, &TrainContext::default(), &mut |_, _| {}),
        Err(FganError::Usage(_))
    ));
}

#[test]
fn freezing_five_of_eight_layers() {
    let data = gen_gaussian_mixture(3, &[30, 20, 10], 0.7, 0.05, 0).unwrap();
    let mut m = GanModel::build(Arch::Mlp, 4, &[2], 0).unwrap();
    let mut rng = fgan_core::rng::stream(0, &[99]);
    m.d.net = Network::init(NetDesc::mlp(2, &[16; 7], 1, Activation::Identity), &mut rng).unwrap();
    assert_eq!(m.d.net.layer_count(), 8);
    let d0 = m.d.clone();
    train(&mut m, &data, &TrainConfig { freeze_d: 5, ..cfg(30) }, &TrainContext::default(), &mut |_, _| {}).unwrap();
    for layer in 0..8 {
        for &i in m.d.net.layer_param_indices(layer) {
            let (a, b) = (m.d.net.params().get(i), d0.net.params().get(i));
            if layer < 5 {
                assert_eq!(a.value, b.value, "layer {layer} moved");
            } else {
                assert_ne!(a.value, b.value, "layer {layer} did not train");
            }
        }
    }
}

#[test]
fn finetune_scales_learning_rate() {
    let data = gen_gaussian_mixture(3, &[30, 20, 10], 0.7, 0.05, 0).unwrap();
    let base = GanModel::build(Arch::Mlp, 4, &[2], 5).unwrap();
    let ck = Checkpoint::gan(&base, 0, "");

    // Factor 1 with nothing frozen reduces to plain training.
    let tc = TrainConfig { finetune_factor: 1.0, ..cfg(30) };
    let (tuned, _) = finetune(&ck, &data, &tc, &TrainContext::default(), &mut |_, _| {}).unwrap();
    let mut plain = base.clone();
    train(&mut plain, &data, &tc, &TrainContext::default(), &mut |_, _| {}).unwrap();
    assert_eq!(tuned, plain);

    // Factor 0.1 equals plain training at a tenth of the rate.
    let tc = TrainConfig { finetune_factor: 0.1, ..cfg(30) };
    let (tuned, _) = finetune(&ck, &data, &tc, &TrainContext::default(), &mut |_, _| {}).unwrap();
    let mut slow = base.clone();
    train(&mut slow, &data, &TrainConfig { lr: tc.lr * 0.1, ..tc.clone() }, &TrainContext::default(), &mut |_, _| {}).unwrap();
    assert_eq!(tuned, slow);
    assert_ne!(tuned, plain);
}

#[test]
fn uniform_reweighting_is_bitwise_plain() {
    for k in [2usize, 3, 5, 6] {
        let data = gen_gaussian_mixture(k, &vec![20; k], 0.7, 0.05, 0).unwrap();
        let mut a = GanModel::build(Arch::Mlp, 4, &[2], 7).unwrap();
        let mut b = a.clone();
        let la = losses(&mut a, &data, &cfg(40));
        let lb = losses(&mut b, &data, &TrainConfig { reweight: true, ..cfg(40) });
        assert_eq!(la, lb, "k = {k}");
        assert_eq!(a, b, "k = {k}");
    }
}

#[test]
fn bias_loss_requires_classifier() {
    let data = gen_gaussian_mixture(3, &[30, 20, 10], 0.7, 0.05, 0).unwrap();
    let mut m = GanModel::build(Arch::Mlp, 4, &[2], 0).unwrap();
    let err = train(&mut m, &data, &TrainConfig { bias_loss: true, ..cfg(5) }, &TrainContext::default(), &mut |_, _| {});
    assert!(matches!(err, Err(FganError::Config(_))));
}

#[test]
fn bias_loss_run_reports_the_term() {
    let data = gen_gaussian_mixture(3, &[30, 20, 10], 0.7, 0.05, 0).unwrap();
    let c = Classifier::build(Arch::Mlp, &[2], 3, 0).unwrap();
    let mut m = GanModel::build(Arch::Mlp, 4, &[2], 0).unwrap();
    let ctx = TrainContext { classifier: Some(&c), config_hash: "h" };
    let mut records = Vec::new();
    let history = train(&mut m, &data, &TrainConfig { bias_loss: true, ..cfg(50) }, &ctx, &mut |r, _| records.push(r.clone())).unwrap();
    assert!(records.iter().all(|r| r.bias >= 0.0 && r.bias.is_finite()));
    assert!(records.last().unwrap().fairness.is_some());
    assert!(history.iter().all(|ck| ck.config_hash == "h"));
    assert_eq!(history.iter().map(|ck| ck.step).collect::<Vec<_>>(), vec![0, 50]);
}

#[test]
fn classifier_separates_well_spaced_mixture() {
    let data = gen_gaussian_mixture(2, &[400, 400], 1.0, 0.05, 0).unwrap();
    let (c, acc) = train_classifier(&data, Arch::Mlp, &ClassifierConfig { steps: 300, ..ClassifierConfig::default() }).unwrap();
    assert!(acc > 0.99, "held-out accuracy {acc}");
    assert!(accuracy(&c, &data).unwrap() > 0.99);
}

#[test]
fn untrained_classifier_is_near_chance_and_refused() {
    let data = gen_gaussian_mixture(5, &[200; 5], 0.7, 0.05, 0).unwrap();
    let err = train_classifier(&data, Arch::Mlp, &ClassifierConfig { steps: 0, ..ClassifierConfig::default() }).unwrap_err();
    assert!(matches!(err, FganError::Quality(_)), "{err}");
    let c = Classifier::build(Arch::Mlp, &[2], 5, 0).unwrap();
    let acc = accuracy(&c, &data).unwrap();
    assert!(acc < 0.5, "untrained accuracy {acc}");
}
