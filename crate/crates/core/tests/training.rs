use std::collections::BTreeMap;
use std::sync::OnceLock;

use pcsc_core::channel::ChannelSpec;
use pcsc_core::dataset::{Dataset, SyntheticConfig};
use pcsc_core::eval::evaluate;
use pcsc_core::model::{Checkpoint, Model, ModelConfig, Preset, StageTag};
use pcsc_core::training::{
    clip_global_norm, is_channel_codec, is_frozen_in_stage2, joint_train, stage1_train,
    stage2_train, AdamW, FreezePolicy, Sgdr, SnrPolicy, TrainConfig, TrainReport,
};
use pcsc_core::Error;
use pcsc_tensor::Tensor;

fn small_model() -> ModelConfig {
    ModelConfig {
        preset: Preset::Custom,
        n_points: 64,
        n_keys: 8,
        group_size: 8,
        token_dim: 24,
        transformer_blocks: 1,
        heads: 2,
        channel_dim: 4,
        num_classes: 8,
        pos_hidden: 16,
        conv_widths: [16, 32, 32, 16],
        codec_hidden: 32,
        mlp_ratio: 2,
        ..ModelConfig::desk()
    }
}

fn small_data() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| {
        Dataset::synthetic(&SyntheticConfig {
            train_per_class: 16,
            test_per_class: 16,
            points_per_cloud: 64,
            ..SyntheticConfig::default()
        })
        .unwrap()
    })
}

fn quick(stage: u8, epochs: usize) -> TrainConfig {
    TrainConfig {
        stage,
        epochs,
        batch_size: 16,
        base_lr: 2e-3,
        sgdr: Sgdr {
            period: 4,
            ..Sgdr::default()
        },
        eval_every: 0,
        ..if stage == 1 { TrainConfig::stage1() } else { TrainConfig::stage2() }
    }
}

/// A stage-1 model trained once and shared by the stage-2 tests.
fn stage1() -> &'static (Checkpoint<f32>, TrainReport) {
    static S1: OnceLock<(Checkpoint<f32>, TrainReport)> = OnceLock::new();
    S1.get_or_init(|| {
        let model = Model::<f32>::new(small_model(), 3).unwrap();
        stage1_train(small_data(), model, &quick(1, 12)).unwrap()
    })
}

fn tensors_equal(a: &BTreeMap<String, Tensor<f32>>, b: &BTreeMap<String, Tensor<f32>>, pick: impl Fn(&str) -> bool) -> usize {
    let mut n = 0;
    for (name, t) in a.iter().filter(|(n, _)| pick(n)) {
        let u = &b[name];
        let same = t.data().iter().zip(u.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "{name} changed");
        n += 1;
    }
    n
}

#[test]
fn adamw_hand_evaluated_steps() {
    let mut p = BTreeMap::from([("p".to_string(), Tensor::new(&[1], vec![1.0f64]).unwrap())]);
    let mut opt = AdamW::<f64>::default();
    let g = BTreeMap::from([("p".to_string(), vec![1.0])]);
    opt.step(&mut p, &g, 0.1, 0.0).unwrap();
    assert!((p["p"].data()[0] - 0.9).abs() < 1e-6);

    let mut q = BTreeMap::from([("q".to_string(), Tensor::new(&[2], vec![2.0f64, -1.0]).unwrap())]);
    let mut opt = AdamW::<f64>::default();
    let zero = BTreeMap::from([("q".to_string(), vec![0.0, 0.0])]);
    opt.step(&mut q, &zero, 0.1, 0.0).unwrap();
    assert_eq!(q["q"].data(), &[2.0, -1.0]);
    for step in 1..=3 {
        opt.step(&mut q, &zero, 0.1, 0.5).unwrap();
        let f = 0.95f64.powi(step);
        assert!((q["q"].data()[0] - 2.0 * f).abs() < 1e-12);
        assert!((q["q"].data()[1] + f).abs() < 1e-12);
    }

    let bad = BTreeMap::from([("q".to_string(), vec![0.0])]);
    assert!(matches!(opt.step(&mut q, &bad, 0.1, 0.0), Err(Error::Contract(_))));
}

#[test]
fn optimizer_state_covers_only_stepped_parameters() {
    let mut p = BTreeMap::from([
        ("a".to_string(), Tensor::new(&[1], vec![1.0f32]).unwrap()),
        ("b".to_string(), Tensor::new(&[1], vec![1.0f32]).unwrap()),
    ]);
    let mut opt = AdamW::<f32>::default();
    opt.step(&mut p, &BTreeMap::from([("a".to_string(), vec![0.5])]), 0.1, 0.1).unwrap();
    assert!(opt.has_state("a") && !opt.has_state("b"));
    assert_eq!(p["b"].data(), &[1.0]);
}

#[test]
fn gradient_clipping_caps_global_norm() {
    let mut g = BTreeMap::from([("a".to_string(), vec![3.0f64]), ("b".to_string(), vec![4.0])]);
    let before = clip_global_norm(&mut g, 1.0);
    assert!((before - 5.0).abs() < 1e-12);
    assert!((g["a"][0] - 0.6).abs() < 1e-12 && (g["b"][0] - 0.8).abs() < 1e-12);
}

#[test]
fn sgdr_schedule_points() {
    let s = Sgdr::default();
    let base = 5e-4;
    assert_eq!(s.lr(base, 0), base);
    assert!((s.lr(base, 5) - base / 2.0).abs() < 1e-15);
    assert!((s.lr(base, 10) - base * 0.1).abs() < 1e-15);
    // Second period is twice as long, so the next restart is at epoch 30.
    assert!((s.lr(base, 20) - base * 0.1 / 2.0).abs() < 1e-15);
    assert!((s.lr(base, 30) - base * 0.01).abs() < 1e-15);
}

#[test]
fn stage1_leaves_codec_untouched_and_learns() {
    let init = Model::<f32>::new(small_model(), 3).unwrap();
    let (ck, report) = stage1();
    assert_eq!(ck.stage, StageTag::Stage1);
    let n = tensors_equal(&init.params.params, &ck.params.params, is_channel_codec);
    assert_eq!(n, 8);
    assert!(ck.params.params.iter().any(|(k, v)| !is_channel_codec(k) && v != &init.params.params[k]));

    let epochs: Vec<usize> = report.records.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, (0..12).collect::<Vec<_>>());
    // One full restart period after the first epoch.
    assert!(report.records[4].loss <= report.records[0].loss);
    assert!(report.records.iter().all(|r| r.mse == 0.0 && r.snr_db.is_none()));
}

#[test]
fn stage2_freezes_transformer_side() {
    let (s1, _) = stage1();
    let model = Model::from_checkpoint(s1.clone());
    let (s2, report) = stage2_train(small_data(), model, &quick(2, 3)).unwrap();
    assert_eq!(s2.stage, StageTag::Stage2);
    let frozen = |n: &str| is_frozen_in_stage2(n, FreezePolicy::Transformer);
    assert!(tensors_equal(&s1.params.params, &s2.params.params, frozen) > 0);
    for name in ["chenc.fc1.weight", "enc.fc.weight", "head.weight"] {
        assert_ne!(s1.params.params[name], s2.params.params[name], "{name} did not train");
    }
    for r in &report.records {
        let snr = r.snr_db.unwrap();
        assert!((0.0..=20.0).contains(&snr));
        assert!((r.loss - (r.ce + report.mse_weight * r.mse)).abs() < 1e-6);
    }
}

#[test]
fn wider_freeze_policy_also_fixes_the_trunk() {
    let (s1, _) = stage1();
    let cfg = TrainConfig {
        freeze: FreezePolicy::TransformerAndTrunk,
        ..quick(2, 1)
    };
    let (s2, _) = stage2_train(small_data(), Model::from_checkpoint(s1.clone()), &cfg).unwrap();
    let n = tensors_equal(&s1.params.params, &s2.params.params, |n| n.starts_with("enc."));
    assert!(n > 0);
    // Frozen batch norms keep their running statistics too.
    assert_eq!(s1.params.buffers, s2.params.buffers);
}

#[test]
fn loss_weight_scales_the_mse_term() {
    let (s1, _) = stage1();
    let cfg = TrainConfig {
        mse_weight: 2.5,
        ..quick(2, 1)
    };
    let (_, report) = stage2_train(small_data(), Model::from_checkpoint(s1.clone()), &cfg).unwrap();
    let r = &report.records[0];
    assert!(r.mse > 0.0);
    assert!((r.loss - (r.ce + 2.5 * r.mse)).abs() < 1e-6);
}

#[test]
fn noiseless_stage2_without_mse_keeps_accuracy() {
    let (s1, _) = stage1();
    let m1 = Model::from_checkpoint(s1.clone());
    let acc1 = evaluate(&m1, &small_data().test, &ChannelSpec::noiseless()).unwrap().accuracy();
    let cfg = TrainConfig {
        mse_weight: 0.0,
        snr_policy: SnrPolicy::Fixed,
        fixed_snr_db: f64::INFINITY,
        ..quick(2, 12)
    };
    let (s2, report) = stage2_train(small_data(), m1, &cfg).unwrap();
    assert!(report.records.iter().all(|r| r.snr_db == Some(f64::INFINITY)));
    let acc2 = evaluate(&Model::from_checkpoint(s2), &small_data().test, &ChannelSpec::noiseless())
        .unwrap()
        .accuracy();
    assert!(acc2 >= acc1 - 0.01, "stage 1 {acc1}, stage 2 {acc2}");
}

#[test]
fn stage_mismatches_are_configuration_errors() {
    let fresh = Model::<f32>::new(small_model(), 0).unwrap();
    assert!(matches!(stage2_train(small_data(), fresh, &quick(2, 1)), Err(Error::Config(_))));
    let (s1, _) = stage1();
    let trained = Model::from_checkpoint(s1.clone());
    assert!(matches!(joint_train(small_data(), trained, &quick(2, 1)), Err(Error::Config(_))));
    let other = Model::<f32>::new(ModelConfig { num_classes: 5, ..small_model() }, 0).unwrap();
    assert!(matches!(stage1_train(small_data(), other, &quick(1, 1)), Err(Error::Config(_))));
}

#[test]
fn training_is_bitwise_reproducible_in_f64() {
    let run = || {
        let model = Model::<f64>::new(small_model(), 5).unwrap();
        let (ck, report) = stage1_train(small_data(), model, &quick(1, 2)).unwrap();
        let losses: Vec<u64> = report.records.iter().map(|r| r.loss.to_bits()).collect();
        (ck.to_bytes().unwrap(), losses)
    };
    assert_eq!(run(), run());
}

#[test]
fn joint_training_runs_from_scratch() {
    let model = Model::<f32>::new(small_model(), 6).unwrap();
    let (ck, report) = joint_train(small_data(), model, &quick(2, 1)).unwrap();
    assert_eq!(ck.stage, StageTag::Joint);
    assert!(report.records[0].mse > 0.0);
}

#[test]
fn report_csv_round_trips() {
    let (_, report) = stage1();
    let text = report.to_csv().unwrap();
    let back = TrainReport::from_csv(&text).unwrap();
    assert_eq!(back.records.len(), report.records.len());
    for (a, b) in back.records.iter().zip(&report.records) {
        assert_eq!((a.epoch, a.loss.to_bits(), a.ce.to_bits()), (b.epoch, b.loss.to_bits(), b.ce.to_bits()));
        assert_eq!(a.probes, b.probes);
    }
    assert!(!report.summary().is_empty());
}
