//! Eval-mode scoring on clean and occluded copies of a dataset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body_model::lbs_rotmats;
use crate::data::{synth_occ, Dataset, Sample, SynthOccConfig};
use crate::error::Result;
use crate::metrics::{MetricAccumulator, MetricReport};
use crate::net::{Network, Prediction};
use crate::render::Image;
use crate::rng;

/// Images scored per forward pass.
pub const EVAL_BATCH: usize = 32;
/// PCK threshold as a fraction of the image side.
pub const PCK_FRACTION: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub pve: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clean: MetricReport,
    pub occluded: Option<MetricReport>,
    /// Occluded minus clean.
    pub degradation: Option<Degradation>,
}

/// The occluded copy of a test image; fixed per (dataset seed, index).
pub fn occluded_image(sample: &Sample, cfg: &SynthOccConfig) -> Image {
    let mut r = rng::stream(sample.seed, sample.index, "eval-occlusion");
    synth_occ(&sample.image, &mut r, cfg).0
}

/// Predictions for `images`, batched and computed in parallel, in input order.
pub fn predict_all(net: &Network, images: &[Image]) -> Result<Vec<Prediction>> {
    let chunks: Vec<Vec<Prediction>> = images
        .par_chunks(EVAL_BATCH)
        .map(|c| net.predict(&c.iter().collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Metrics of `net` on `samples` seen through `images`.
pub fn score(net: &Network, samples: &[Sample], images: &[Image]) -> Result<MetricReport> {
    let preds = predict_all(net, images)?;
    let size = net.config().image_size;
    let k = net.body().num_joints();
    let seg = net.has_part_branch().then_some(k + 1);
    let mut acc = MetricAccumulator::new(k, PCK_FRACTION * size as f64, seg);
    let gt_meshes: Vec<_> = samples
        .par_iter()
        .map(|s| lbs_rotmats(net.body(), &s.rotmats(), &s.betas, net.config().use_posedirs).map(|o| o.vertices))
        .collect::<Result<_>>()?;
    for ((s, p), gt_mesh) in samples.iter().zip(&preds).zip(&gt_meshes) {
        let mask: Vec<bool> = s.confidence.iter().map(|&c| c > 0.0).collect();
        let parts = p.part_labels.as_deref().map(|pl| (pl, s.part_labels.as_slice()));
        acc.add(&p.joints3d, &s.joints3d, &p.vertices, gt_mesh, &p.joints2d_px(size), &s.joints2d_px(size), &mask, parts)?;
    }
    Ok(acc.report())
}

/// Clean metrics, plus occluded metrics and their difference when `occlusion` is given.
pub fn evaluate(net: &Network, data: &Dataset, occlusion: Option<&SynthOccConfig>) -> Result<EvalReport> {
    let clean_images: Vec<Image> = data.samples.iter().map(|s| s.image.clone()).collect();
    let clean = score(net, &data.samples, &clean_images)?;
    let Some(cfg) = occlusion else {
        return Ok(EvalReport { clean, occluded: None, degradation: None });
    };
    let occ_images: Vec<Image> = data.samples.iter().map(|s| occluded_image(s, cfg)).collect();
    let occluded = score(net, &data.samples, &occ_images)?;
    let degradation = Degradation {
        mpjpe: occluded.mpjpe - clean.mpjpe,
        pa_mpjpe: occluded.pa_mpjpe - clean.pa_mpjpe,
        pve: occluded.pve - clean.pve,
    };
    Ok(EvalReport { clean, occluded: Some(occluded), degradation: Some(degradation) })
}
