//! The training loop: batch sampling, augmentation gating, the
//! mixed-supervision schedule, checkpointing and resumption.

mod config;
mod eval;
mod log;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use parelab_numerics::{Adam, Container, Tape, Tensor, Var};
use rand::Rng;

use crate::data::{rand_crop, synth_occ, Dataset, Sample};
use crate::error::{CoreError, Result};
use crate::losses::{loss_2d, loss_3d, loss_heatmaps, loss_parts, loss_smpl, LossWeights, TotalLoss};
use crate::net::{keypoint_heatmaps, Mode, NetConfig, Network, PartSupervision};
use crate::rng;

pub use config::TrainConfig;
pub use eval::{evaluate, occluded_image, predict_all, score, Degradation, EvalReport, EVAL_BATCH, PCK_FRACTION};
pub use log::{read_log, LogEntry, RunLog, StepRecord};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "log.jsonl";

/// Ground truth of one batch, as tensors.
pub struct Batch {
    pub images: Tensor,
    pub joints3d: Tensor,
    pub valid3d: Tensor,
    pub joints2d: Tensor,
    pub confidence: Tensor,
    pub rotmats: Tensor,
    pub betas: Tensor,
    pub part_labels: Vec<u32>,
}

impl Batch {
    pub fn new(samples: &[Sample]) -> Result<Self> {
        let n = samples.len();
        let first = samples.first().ok_or_else(|| CoreError::Data("empty batch".into()))?;
        let (k, b, s) = (first.pose.len(), first.betas.len(), first.image.height);
        let rot: Vec<Matrix3<f64>> = samples.iter().flat_map(|x| x.rotmats()).collect();
        Ok(Self {
            images: Tensor::new([n, 3, s, s], samples.iter().flat_map(|x| x.image.to_chw()).collect())?,
            joints3d: Tensor::new([n, k, 3], samples.iter().flat_map(|x| x.joints3d.iter().flat_map(|p| [p.x, p.y, p.z])).collect())?,
            valid3d: Tensor::ones([n, k]),
            joints2d: Tensor::new([n, k, 2], samples.iter().flat_map(|x| x.joints2d.concat()).collect())?,
            confidence: Tensor::new([n, k], samples.iter().flat_map(|x| x.confidence.clone()).collect())?,
            rotmats: Tensor::new([n, k, 3, 3], rot.iter().flat_map(|m| m.transpose().as_slice().to_vec()).collect())?,
            betas: Tensor::new([n, b], samples.iter().flat_map(|x| x.betas.clone()).collect())?,
            part_labels: samples.iter().flat_map(|x| x.part_labels.iter().copied()).collect(),
        })
    }
}

/// Total loss of a forward pass. The part term follows `supervision`.
pub fn batch_loss(
    net: &Network,
    tape: &mut Tape,
    batch: &Batch,
    weights: &LossWeights,
    supervision: PartSupervision,
    mode: &mut Mode,
) -> Result<(Var, TotalLoss)> {
    let x = tape.constant(batch.images.clone());
    let fwd = net.forward(tape, x, mode)?;
    let posed = net.pose(tape, &fwd)?;
    let mut total = TotalLoss::new();
    total.add(tape, "3d", weights.lambda_3d, |t| loss_3d(t, posed.joints3d, &batch.joints3d, &batch.valid3d))?;
    total.add(tape, "2d", weights.lambda_2d, |t| loss_2d(t, posed.joints2d, &batch.joints2d, &batch.confidence))?;
    total.add(tape, "smpl", weights.lambda_smpl, |t| {
        loss_smpl(t, fwd.rotmats, fwd.betas, &batch.rotmats, &batch.betas)
    })?;
    if let Some(parts) = fwd.parts {
        match supervision {
            PartSupervision::Off => {}
            PartSupervision::Segmentation => {
                total.add(tape, "parts", weights.lambda_p, |t| loss_parts(t, parts, &batch.part_labels))?
            }
            PartSupervision::Heatmaps => {
                let cfg = net.config();
                let hm = keypoint_heatmaps(&batch.joints2d, &batch.confidence, cfg.map_size(), cfg.heatmap_sigma)?;
                total.add(tape, "heatmaps", weights.lambda_p, |t| loss_heatmaps(t, parts, &hm))?
            }
        }
    }
    let loss = total.finish(tape)?;
    Ok((loss, total))
}

/// Applies the augmentations active at `step` to batch slot `slot`.
pub fn augment(sample: &Sample, data: &Dataset, cfg: &TrainConfig, step: u64, slot: usize) -> Sample {
    let key = step * cfg.batch_size as u64 + slot as u64;
    let mut out = if step >= cfg.randcrop_start_step {
        let mut r = rng::stream(cfg.seed, key, "randcrop");
        rand_crop(sample, &mut r, &data.spec.rand_crop).0
    } else {
        sample.clone()
    };
    if cfg.synth_occ {
        let mut r = rng::stream(cfg.seed, key, "synthocc");
        out.image = synth_occ(&out.image, &mut r, &data.spec.synth_occ).0;
    }
    out
}

/// Dataset indices drawn with replacement for `step`.
pub fn batch_indices(cfg: &TrainConfig, step: u64, len: usize) -> Vec<usize> {
    let mut r = rng::stream(cfg.seed, step, "batch");
    (0..cfg.batch_size).map(|_| r.gen_range(0..len)).collect()
}

/// Checks that a dataset matches what the network expects.
pub fn check_compatible(net: &NetConfig, data: &Dataset) -> Result<()> {
    let spec = &data.spec;
    let mismatch = |what: &str| Err(CoreError::Config(format!("dataset and network disagree on {what}")));
    if spec.image_size != net.image_size {
        return mismatch("image_size");
    }
    if spec.num_joints != net.num_joints || spec.body_model != net.body_model || spec.use_posedirs != net.use_posedirs {
        return mismatch("the body model");
    }
    if spec.label_size != net.map_size() {
        return mismatch("the part-map size");
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from the checkpoint in the output directory.
    pub resume: bool,
    /// Stop after this many completed steps, as if interrupted.
    pub stop_after: Option<u64>,
}

pub struct TrainOutcome {
    pub net: Network,
    pub log: Vec<LogEntry>,
    /// Completed steps.
    pub steps: u64,
}

fn schedule_net_config(net_cfg: &NetConfig, cfg: &TrainConfig) -> NetConfig {
    let mut c = net_cfg.clone();
    if let Some(s) = cfg.mixed_switch_step {
        c.mixed_switch_step = s;
    }
    c
}

fn write_checkpoint(dir: &Path, net: &Network, cfg: &TrainConfig) -> Result<()> {
    let mut c = net.to_container(true);
    c.meta.insert("train_config".into(), serde_json::to_value(cfg)?);
    let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
    c.write(&tmp)?;
    fs::rename(&tmp, dir.join(CHECKPOINT_FILE))?;
    Ok(())
}

/// Everything except the length of the run must match to resume.
fn same_schedule(a: &TrainConfig, b: &TrainConfig) -> bool {
    TrainConfig { total_steps: 0, ..a.clone() } == TrainConfig { total_steps: 0, ..b.clone() }
}

/// Trains `net_cfg` on `data`, writing `checkpoint.bin` and `log.jsonl` to
/// `out_dir`. `on_step` sees every logged step.
pub fn train(
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    data: &Dataset,
    out_dir: impl AsRef<Path>,
    opts: &TrainOptions,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(CoreError::Data("training dataset is empty".into()));
    }
    let net_cfg = schedule_net_config(net_cfg, cfg);
    check_compatible(&net_cfg, data)?;
    let out_dir: PathBuf = out_dir.as_ref().to_path_buf();
    fs::create_dir_all(&out_dir)?;

    let mut net = Network::new(net_cfg.clone(), cfg.seed)?;
    let mut log = if opts.resume {
        let c = Container::read(out_dir.join(CHECKPOINT_FILE))?;
        let saved: TrainConfig = serde_json::from_value(c.meta.get("train_config").cloned().unwrap_or_default())?;
        if !same_schedule(&saved, cfg) {
            return Err(CoreError::Config("checkpoint was trained with a different schedule".into()));
        }
        net.load_state(&c)?;
        RunLog::resume(out_dir.join(LOG_FILE), net.store().step())?
    } else {
        let start = LogEntry::Start { config_hash: net_cfg.hash(), net_config: net_cfg.clone(), train_config: cfg.clone() };
        RunLog::create(out_dir.join(LOG_FILE), start)?
    };

    let adam = Adam::new(cfg.lr);
    let eval_set = Dataset { spec: data.spec.clone(), samples: data.samples[..cfg.eval_samples.min(data.len())].to_vec() };
    let last = cfg.total_steps.min(opts.stop_after.unwrap_or(u64::MAX));
    let mut step = net.store().step();
    while step < last {
        let samples: Vec<Sample> = batch_indices(cfg, step, data.len())
            .into_iter()
            .enumerate()
            .map(|(slot, i)| augment(&data.samples[i], data, cfg, step, slot))
            .collect();
        let batch = Batch::new(&samples)?;
        let mut tape = Tape::new();
        let mut mode = Mode::train();
        let (loss, terms) = batch_loss(&net, &mut tape, &batch, &cfg.loss_weights, net_cfg.part_supervision(step), &mut mode)?;
        let total = tape.value(loss).item();
        if !total.is_finite() {
            return Err(CoreError::NonFinite(format!("loss at step {} is {total}", step + 1)));
        }
        net.store_mut().zero_grads();
        if tape.requires_grad(loss) {
            let grads = tape.backward(loss)?;
            net.store_mut().load_grads(&tape, &grads);
        }
        let grad_norm = net.store().grad_norm();
        if !grad_norm.is_finite() {
            return Err(CoreError::NonFinite(format!("gradient norm at step {} is {grad_norm}", step + 1)));
        }
        if cfg.grad_clip > 0.0 {
            net.store_mut().clip_grad_norm(cfg.grad_clip);
        }
        adam.step(net.store_mut())?;
        for u in &mode.bn_updates {
            u.apply(net.store_mut());
        }
        step += 1;

        let record = StepRecord {
            step,
            total,
            components: terms.components(&tape).into_iter().map(|(k, v)| (k.to_string(), v)).collect::<BTreeMap<_, _>>(),
            weights: terms.weights().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            grad_norm,
        };
        on_step(&record);
        log.push(LogEntry::Step(record))?;
        if step % cfg.eval_every == 0 || step == cfg.total_steps {
            let report = evaluate(&net, &eval_set, None)?.clean;
            log.push(LogEntry::Eval { step, report })?;
            write_checkpoint(&out_dir, &net, cfg)?;
        }
    }
    if step == 0 || step % cfg.eval_every != 0 && step != cfg.total_steps {
        write_checkpoint(&out_dir, &net, cfg)?;
    }
    Ok(TrainOutcome { net, log: log.into_entries(), steps: step })
}

/// Loads a checkpoint, optionally requiring a specific network config.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&NetConfig>) -> Result<Network> {
    let c = Container::read(path)?;
    match expected {
        Some(cfg) => Network::from_container_checked(&c, cfg),
        None => Network::from_container(&c),
    }
}

#[cfg(test)]
mod tests;
