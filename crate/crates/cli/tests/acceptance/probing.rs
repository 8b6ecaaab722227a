//! Occlusion-sensitivity checks on a stub model and on a trained network.

use std::path::Path;
use std::time::Instant;

use parelab_core::body_model::BodyModelDef;
use parelab_core::data::read_dataset;
use parelab_core::net::{Network, Prediction};
use parelab_core::probe::{body_mask, patches_on_body, probe_image, probe_to_mesh, ProbeConfig, Regressor};
use parelab_core::render::Image;
use parelab_core::train::{load_checkpoint, CHECKPOINT_FILE};

use crate::Outcome;

pub const IMAGES: usize = 50;
const BUDGET_S: f64 = 600.0;

/// Ignores its input and always predicts the same fixed image.
struct ConstantModel<'a> {
    net: &'a Network,
    fixed: Image,
}

impl Regressor for ConstantModel<'_> {
    fn image_size(&self) -> usize {
        self.net.config().image_size
    }

    fn body(&self) -> &BodyModelDef {
        self.net.body()
    }

    fn predict(&self, images: &[&Image]) -> parelab_core::Result<Vec<Prediction>> {
        let p = self.net.predict(&[&self.fixed])?.remove(0);
        Ok(vec![p; images.len()])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn criterion(run: &Path, test_data: &Path) -> Outcome {
    match check(run, test_data) {
        Ok(o) => o,
        Err(e) => Outcome { pass: false, detail: e },
    }
}

fn check(run: &Path, test_data: &Path) -> Result<Outcome, String> {
    let t0 = Instant::now();
    let net = load_checkpoint(run.join(CHECKPOINT_FILE), None).map_err(|e| e.to_string())?;
    let data = read_dataset(test_data).map_err(|e| e.to_string())?;
    let samples = &data.samples[..IMAGES.min(data.len())];
    let size = net.config().image_size;
    let cfg = ProbeConfig { patch: 12, stride: Some(4), gray: 0.5 };

    // a model blind to its input gives a flat map and a flat mesh
    let stub = ConstantModel { net: &net, fixed: samples[0].image.clone() };
    let mut flat = true;
    for s in &samples[..3] {
        let (map, mesh) = probe_to_mesh(&stub, s, &cfg).map_err(|e| e.to_string())?;
        flat &= (0..map.channels()).all(|c| map.channel(c).iter().all(|&v| v == map.baseline[c]));
        flat &= (0..mesh.joints).all(|j| mesh.joint_means(j).into_iter().flatten().all(|m| m == map.baseline[j]));
    }

    // the coarse grid is every other node of the fine one
    let fine = probe_image(&net, &samples[0], &ProbeConfig { stride: Some(2), ..cfg.clone() }).map_err(|e| e.to_string())?;
    let coarse = probe_image(&net, &samples[0], &cfg).map_err(|e| e.to_string())?;
    let sub = fine.subsample(2);
    let consistent = sub.rows == coarse.rows && sub.grid == coarse.grid && sub.baseline == coarse.baseline;

    let (mut on, mut off) = (Vec::new(), Vec::new());
    for s in samples {
        let map = probe_image(&net, s, &cfg).map_err(|e| e.to_string())?;
        let mask = body_mask(net.body(), s, net.config().use_posedirs).map_err(|e| e.to_string())?;
        for (&v, body) in map.aggregate().iter().zip(patches_on_body(&cfg, &mask, size)) {
            if body { on.push(v) } else { off.push(v) }
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let (m_on, m_off) = (mean(&on), mean(&off));
    let ordered = !off.is_empty() && m_off <= m_on;
    Ok(Outcome {
        pass: flat && consistent && ordered && elapsed < BUDGET_S,
        detail: format!(
            "stub map flat: {flat}; stride-2 grid subsampled equals stride-4 grid: {consistent}; mean error {m_off:.1} mm over {} background-only positions vs {m_on:.1} mm over {} body positions ({IMAGES} images); {elapsed:.0} s (limit {BUDGET_S:.0} s)",
            off.len(),
            on.len()
        ),
    })
}
