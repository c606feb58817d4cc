//! Training loop contracts: determinism, resumption, degenerate configs and
//! numeric failure handling.

mod common;

use std::path::Path;

use sareo_core::bundle::ModelBundle;
use sareo_core::losses::{g_adv_loss, AdversarialForm};
use sareo_core::train::{checkpoint_path, fit, load_split, read_log, train_step, StepReport, TrainConfig, FINAL_CHECKPOINT, LOG_FILE};
use sareo_core::{Conditioning, Error, Manifest, Split};
use sareo_nn::conv::Needs;
use sareo_nn::ops::mix_seed;
use sareo_nn::{Mode, Tensor};

fn cfg(spec: &str, seed: u64) -> TrainConfig {
    TrainConfig::desk(spec.parse().unwrap(), seed)
}

/// Log lines without the wall-clock column.
fn timeless(log: &[StepReport]) -> Vec<StepReport> {
    log.iter().map(|r| StepReport { wall_ms: 0.0, ..r.clone() }).collect()
}

fn run(manifest: &Manifest, path: &Path, cfg: &TrainConfig, out: &Path, resume: Option<&Path>) -> (ModelBundle, Vec<StepReport>) {
    let b = fit(manifest, path, cfg, out, resume).unwrap();
    (b, timeless(&read_log(&out.join(LOG_FILE)).unwrap()))
}

#[test]
fn same_seed_runs_match_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (m, p) = common::corpus(&dir.path().join("c"), 6, 64, 3);
    let c = TrainConfig { epochs: 2, ..cfg("sar+map", 4) };
    let (a, log_a) = run(&m, &p, &c, &dir.path().join("a"), None);
    let (b, log_b) = run(&m, &p, &c, &dir.path().join("b"), None);
    assert_eq!(log_a, log_b);
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(log_a.len(), 4);
    let other = run(&m, &p, &TrainConfig { seed: 5, ..c }, &dir.path().join("c5"), None).1;
    assert_ne!(other, log_a);
}

#[test]
fn resuming_from_an_epoch_checkpoint_matches_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let (m, p) = common::corpus(&dir.path().join("c"), 6, 64, 7);
    let full = TrainConfig { epochs: 3, ..cfg("sar+ir", 2) };
    let (straight, straight_log) = run(&m, &p, &full, &dir.path().join("straight"), None);

    let first = dir.path().join("first");
    run(&m, &p, &TrainConfig { epochs: 1, ..full.clone() }, &first, None);
    let (resumed, resumed_log) = run(&m, &p, &full, &dir.path().join("resumed"), Some(&checkpoint_path(&first, 1)));
    assert_eq!(resumed.to_bytes(), straight.to_bytes());
    assert_eq!(resumed_log[..], straight_log[2..]);
}

#[test]
fn resuming_mid_epoch_matches_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let (m, p) = common::corpus(&dir.path().join("c"), 10, 64, 9);
    let base = TrainConfig { epochs: 2, ..cfg("sar", 6) };
    let (straight, straight_log) = run(&m, &p, &base, &dir.path().join("straight"), None);
    let part = dir.path().join("part");
    run(&m, &p, &TrainConfig { max_steps: Some(1), ..base.clone() }, &part, None);
    let (resumed, resumed_log) = run(&m, &p, &base, &dir.path().join("rest"), Some(&part.join(FINAL_CHECKPOINT)));
    assert_eq!(resumed.to_bytes(), straight.to_bytes());
    assert_eq!(resumed_log[..], straight_log[1..]);
}

#[test]
fn zero_epochs_returns_the_initial_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let (m, p) = common::corpus(&dir.path().join("c"), 3, 64, 1);
    let c = TrainConfig { epochs: 0, ..cfg("sar", 1) };
    let b = fit(&m, &p, &c, &dir.path().join("o"), None).unwrap();
    assert_eq!(b.step, 0);
    assert_eq!(b, ModelBundle::init(c.bundle_meta(&m)).unwrap());
    assert!(read_log(&dir.path().join("o").join(LOG_FILE)).unwrap().is_empty());
}

#[test]
fn empty_train_split_is_an_empty_corpus_error() {
    let dir = tempfile::tempdir().unwrap();
    let (mut m, p) = common::corpus(&dir.path().join("c"), 3, 64, 1);
    m.samples.iter_mut().for_each(|s| s.split = Split::Test);
    let err = fit(&m, &p, &cfg("sar", 1), &dir.path().join("o"), None).unwrap_err();
    assert!(matches!(err, Error::EmptyCorpus(_)), "{err}");
}

#[test]
fn corrupt_checkpoint_refuses_resume() {
    let dir = tempfile::tempdir().unwrap();
    let (m, p) = common::corpus(&dir.path().join("c"), 3, 64, 1);
    let c = TrainConfig { epochs: 1, ..cfg("sar", 1) };
    let out = dir.path().join("o");
    fit(&m, &p, &c, &out, None).unwrap();
    let ckpt = out.join(FINAL_CHECKPOINT);
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&ckpt, bytes).unwrap();
    let err = fit(&m, &p, &TrainConfig { epochs: 2, ..c }, &dir.path().join("r"), Some(&ckpt)).unwrap_err();
    assert!(matches!(err, Error::Integrity { .. }), "{err}");
}

#[test]
fn resume_with_a_different_configuration_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (m, p) = common::corpus(&dir.path().join("c"), 3, 64, 1);
    let out = dir.path().join("o");
    fit(&m, &p, &TrainConfig { epochs: 1, ..cfg("sar", 1) }, &out, None).unwrap();
    let err = fit(&m, &p, &cfg("sar+map", 1), &dir.path().join("r"), Some(&out.join(FINAL_CHECKPOINT))).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn non_finite_parameters_abort_with_a_dump() {
    let dir = tempfile::tempdir().unwrap();
    let (m, p) = common::corpus(&dir.path().join("c"), 3, 64, 1);
    let c = cfg("sar", 1);
    let mut poisoned = ModelBundle::init(c.bundle_meta(&m)).unwrap();
    poisoned.generator.net.params_mut()[0][0] = f32::NAN;
    let ckpt = dir.path().join("nan.ckpt");
    poisoned.save(&ckpt).unwrap();
    let out = dir.path().join("o");
    let err = fit(&m, &p, &c, &out, Some(&ckpt)).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
    let dump: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("nan_dump.json")).unwrap()).unwrap();
    assert!(!dump["batch"].as_array().unwrap().is_empty());
}

#[test]
fn frozen_discriminator_without_feature_matching_takes_a_pure_adversarial_step() {
    let dir = tempfile::tempdir().unwrap();
    let (m, p) = common::corpus(&dir.path().join("c"), 4, 64, 12);
    let conditioning: Conditioning = "sar+map".parse().unwrap();
    let mut c = cfg("sar+map", 3);
    c.freeze_discriminator = true;
    c.loss.lambda_fm = 0.0;
    let samples = load_split(&m, p.parent().unwrap(), &conditioning, Split::Train).unwrap();
    let batch = &samples[..2];
    let mut bundle = ModelBundle::init(c.bundle_meta(&m)).unwrap();
    let before = bundle.clone();

    // Independent reconstruction of the generator update.
    let signed = |f: &dyn Fn(&sareo_core::Sample) -> Tensor| Tensor::stack(&batch.iter().map(f).collect::<Vec<_>>()).unwrap();
    let x = signed(&|s| s.sar.to_unit_signed().unwrap().to_tensor());
    let map = signed(&|s| s.conditions[0].1.to_unit_signed().unwrap().to_tensor());
    let g_in = Tensor::cat_channels(&[&x, &map]).unwrap();
    let (fake, caches) = before.generator.forward(&g_in, Mode::train(mix_seed(c.seed, 0))).unwrap();
    let d_in = Tensor::cat_channels(&[&x, &map, &fake]).unwrap();
    let (outs, tape) = before.discriminator.forward(&d_in, true).unwrap();
    let logits: Vec<Tensor> = outs.iter().map(|o| o.logits.clone()).collect();
    let expected_adv = g_adv_loss(&logits, AdversarialForm::LogSigmoid).unwrap();
    let (_, adv_grads) = sareo_core::losses::g_adv_loss_grad(&logits, AdversarialForm::LogSigmoid).unwrap();
    let (d_grad, _) = before
        .discriminator
        .backward(&tape.unwrap(), &adv_grads, None, Needs { input: true, params: false })
        .unwrap();
    let d_grad = d_grad.unwrap();
    let y_grad = d_grad.narrow_channels(d_grad.channels() - 3, 3).unwrap();
    let grads = before.generator.backward(&caches, &y_grad).unwrap();
    let mut expected = before.clone();
    let mut params = expected.generator.net.params_mut();
    c.optimizer().step(&mut expected.g_opt, &mut params, &grads, 1.0);

    let report = train_step(&mut bundle, batch, &c).unwrap();
    assert_eq!(report.g_adv, expected_adv);
    assert_eq!(bundle.discriminator, before.discriminator);
    assert_eq!(bundle.d_opt, before.d_opt);
    assert_eq!(bundle.generator, expected.generator);
}
