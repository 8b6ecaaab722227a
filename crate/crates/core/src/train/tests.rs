use super::*;
use crate::data::{generate, DatasetSpec, SynthOccConfig};
use crate::net::config::{BodyModelSource, SamplingMode, SupervisionMode};
use crate::net::Architecture;

fn body() -> BodyModelSource {
    BodyModelSource::Toy { seed: 0, vertices: 200, betas: 3 }
}

fn net_cfg(arch: Architecture) -> NetConfig {
    NetConfig {
        architecture: arch,
        image_size: 32,
        backbone_channels: vec![4, 6, 8, 8],
        backbone_depth: 0,
        branch_channels: vec![6, 6, 6],
        feature_channels: 5,
        gap_hidden: 16,
        body_model: body(),
        mixed_switch_step: 3,
        ..NetConfig::default()
    }
}

fn data(size: usize) -> Dataset {
    let spec = DatasetSpec { size, seed: 1, image_size: 32, label_size: 16, body_model: body(), ..DatasetSpec::default() };
    Dataset { samples: generate(&spec).unwrap(), spec }
}

fn train_cfg(steps: u64) -> TrainConfig {
    TrainConfig { total_steps: steps, batch_size: 2, randcrop_start_step: steps / 2, eval_every: 2, eval_samples: 4, ..TrainConfig::default() }
}

fn params(net: &Network) -> Vec<Vec<f64>> {
    net.store().iter().filter(|p| p.trainable).map(|p| p.value.data().to_vec()).collect()
}

#[test]
fn zero_steps_return_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = net_cfg(Architecture::Pare);
    let out = train(&cfg, &train_cfg(0), &data(4), dir.path(), &TrainOptions::default(), |_| {}).unwrap();
    assert_eq!(out.steps, 0);
    assert_eq!(params(&out.net), params(&Network::new(cfg, 0).unwrap()));
    assert!(dir.path().join(CHECKPOINT_FILE).exists());
}

#[test]
fn zero_loss_weights_leave_parameters_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = net_cfg(Architecture::Pare);
    let tc = TrainConfig {
        loss_weights: LossWeights { lambda_3d: 0.0, lambda_2d: 0.0, lambda_smpl: 0.0, lambda_p: 0.0 },
        ..train_cfg(3)
    };
    let out = train(&cfg, &tc, &data(4), dir.path(), &TrainOptions::default(), |_| {}).unwrap();
    assert_eq!(out.steps, 3);
    assert_eq!(params(&out.net), params(&Network::new(cfg, 0).unwrap()));
}

#[test]
fn logged_components_sum_to_the_total() {
    let dir = tempfile::tempdir().unwrap();
    let mut seen = 0;
    train(&net_cfg(Architecture::Pare), &train_cfg(5), &data(6), dir.path(), &TrainOptions::default(), |r| {
        assert!((r.weighted_sum() - r.total).abs() <= 1e-10, "{r:?}");
        // parts supervised before the switch at step 3 only
        assert_eq!(r.components.contains_key("parts"), r.step <= 3);
        seen += 1;
    })
    .unwrap();
    assert_eq!(seen, 5);
    let log = read_log(dir.path().join(LOG_FILE)).unwrap();
    let steps: Vec<u64> = log.iter().filter_map(|e| matches!(e, LogEntry::Step(_)).then(|| e.step())).collect();
    assert_eq!(steps, vec![1, 2, 3, 4, 5]);
    assert!(matches!(log[0], LogEntry::Start { .. }));
}

#[test]
fn resume_continues_bit_exactly() {
    let d = data(6);
    let cfg = net_cfg(Architecture::Pare);
    let tc = train_cfg(6);
    let full = tempfile::tempdir().unwrap();
    train(&cfg, &tc, &d, full.path(), &TrainOptions::default(), |_| {}).unwrap();
    let split = tempfile::tempdir().unwrap();
    let first = train(&cfg, &tc, &d, split.path(), &TrainOptions { stop_after: Some(3), ..Default::default() }, |_| {}).unwrap();
    assert_eq!(first.steps, 3);
    let second = train(&cfg, &tc, &d, split.path(), &TrainOptions { resume: true, ..Default::default() }, |_| {}).unwrap();
    assert_eq!(second.steps, 6);
    let text = |d: &tempfile::TempDir| fs::read_to_string(d.path().join(LOG_FILE)).unwrap();
    for (a, b) in text(&full).lines().zip(text(&split).lines()) {
        assert_eq!(a, b);
    }
    assert_eq!(text(&full), text(&split));
    assert_eq!(fs::read(full.path().join(CHECKPOINT_FILE)).unwrap(), fs::read(split.path().join(CHECKPOINT_FILE)).unwrap());
}

#[test]
fn resume_rejects_a_different_schedule() {
    let d = data(4);
    let cfg = net_cfg(Architecture::Gap);
    let dir = tempfile::tempdir().unwrap();
    train(&cfg, &train_cfg(2), &d, dir.path(), &TrainOptions::default(), |_| {}).unwrap();
    let other = TrainConfig { lr: 1e-3, ..train_cfg(4) };
    assert!(train(&cfg, &other, &d, dir.path(), &TrainOptions { resume: true, ..Default::default() }, |_| {}).is_err());
}

#[test]
fn non_finite_loss_aborts_and_keeps_the_last_checkpoint() {
    let mut d = data(4);
    let cfg = net_cfg(Architecture::Pare);
    let dir = tempfile::tempdir().unwrap();
    let tc = train_cfg(4);
    train(&cfg, &tc, &d, dir.path(), &TrainOptions { stop_after: Some(2), ..Default::default() }, |_| {}).unwrap();
    let saved = fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap();
    for s in &mut d.samples {
        s.joints3d[3].x = f64::NAN;
    }
    let err = train(&cfg, &tc, &d, dir.path(), &TrainOptions { resume: true, ..Default::default() }, |_| {});
    assert!(matches!(err, Err(CoreError::NonFinite(_))));
    assert_eq!(fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap(), saved);
}

fn part_conv_grad(sampling: SamplingMode, step: u64) -> f64 {
    let cfg = NetConfig { sampling_mode: sampling, supervision_mode: SupervisionMode::Mixed, ..net_cfg(Architecture::Pare) };
    let mut net = Network::new(cfg.clone(), 0).unwrap();
    let d = data(2);
    let batch = Batch::new(&d.samples).unwrap();
    let mut tape = Tape::new();
    let (loss, _) =
        batch_loss(&net, &mut tape, &batch, &LossWeights::default(), cfg.part_supervision(step), &mut Mode::train()).unwrap();
    let grads = tape.backward(loss).unwrap();
    net.store_mut().load_grads(&tape, &grads);
    let id = net.part_output_weight().unwrap();
    net.store().get(id).grad.squared_norm()
}

#[test]
fn part_gate_after_the_switch() {
    assert!(part_conv_grad(SamplingMode::Pooling, 2) > 0.0);
    assert_eq!(part_conv_grad(SamplingMode::Pooling, 3), 0.0);
    // attention keeps a gradient path through the fusion
    assert!(part_conv_grad(SamplingMode::Attention, 3) > 0.0);
}

#[test]
fn keypoint_supervision_uses_heatmaps() {
    let cfg = NetConfig { supervision_mode: SupervisionMode::Keypoints, ..net_cfg(Architecture::Pare) };
    let net = Network::new(cfg.clone(), 0).unwrap();
    let d = data(2);
    let batch = Batch::new(&d.samples).unwrap();
    let mut tape = Tape::new();
    let (_, terms) =
        batch_loss(&net, &mut tape, &batch, &LossWeights::default(), cfg.part_supervision(0), &mut Mode::train()).unwrap();
    let names: Vec<&str> = terms.weights().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["3d", "2d", "smpl", "heatmaps"]);
}

#[test]
fn evaluation_is_deterministic_and_occlusion_free_when_prob_is_zero() {
    let d = data(5);
    let net = Network::new(net_cfg(Architecture::Pare), 3).unwrap();
    let a = evaluate(&net, &d, Some(&SynthOccConfig { prob: 0.0, ..Default::default() })).unwrap();
    assert_eq!(Some(a.clean.clone()), a.occluded);
    assert_eq!(a.degradation.as_ref().unwrap().mpjpe, 0.0);
    let b = evaluate(&net, &d, Some(&SynthOccConfig { prob: 0.0, ..Default::default() })).unwrap();
    assert_eq!(a, b);
    assert!(a.clean.seg_iou.is_some());
    let occ = evaluate(&net, &d, Some(&SynthOccConfig::default().always())).unwrap();
    assert_ne!(occ.occluded.unwrap(), occ.clean);
}

#[test]
fn checkpoint_hash_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = net_cfg(Architecture::Pare);
    train(&cfg, &train_cfg(1), &data(2), dir.path(), &TrainOptions::default(), |_| {}).unwrap();
    let path = dir.path().join(CHECKPOINT_FILE);
    let trained_cfg = NetConfig { mixed_switch_step: 3, ..cfg.clone() };
    assert!(load_checkpoint(&path, Some(&trained_cfg)).is_ok());
    assert!(matches!(load_checkpoint(&path, Some(&net_cfg(Architecture::Gap))), Err(CoreError::HashMismatch { .. })));
}

#[test]
fn incompatible_dataset_is_rejected() {
    let cfg = NetConfig { image_size: 64, ..net_cfg(Architecture::Pare) };
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        train(&cfg, &train_cfg(1), &data(2), dir.path(), &TrainOptions::default(), |_| {}),
        Err(CoreError::Config(_))
    ));
}

