//! Supervision targets derived from ground truth for the part branch.

use parelab_numerics::Tensor;

use crate::error::{shape_err, Result};
use crate::render::camera::ndc_to_pixel;

/// Per-joint Gaussian heatmaps [N, J, H, H] centred on normalized 2D joints
/// `[N, J, 2]`. Joints with zero confidence get an all-zero map.
pub fn keypoint_heatmaps(joints2d: &Tensor, conf: &Tensor, map_size: usize, sigma: f64) -> Result<Tensor> {
    let s = joints2d.shape();
    if s.len() != 3 || s[2] != 2 || conf.shape() != [s[0], s[1]] {
        return Err(shape_err("keypoint_heatmaps", format!("joints {s:?}, conf {:?}", conf.shape())));
    }
    let (n, j, h) = (s[0], s[1], map_size);
    let denom = 2.0 * sigma * sigma;
    let mut out = vec![0.0; n * j * h * h];
    for (q, map) in out.chunks_mut(h * h).enumerate() {
        if conf.data()[q] <= 0.0 {
            continue;
        }
        let cx = ndc_to_pixel(joints2d.data()[2 * q], h);
        let cy = ndc_to_pixel(joints2d.data()[2 * q + 1], h);
        for r in 0..h {
            let dy = r as f64 - cy;
            for c in 0..h {
                let dx = c as f64 - cx;
                map[r * h + c] = (-(dx * dx + dy * dy) / denom).exp();
            }
        }
    }
    Ok(Tensor::new([n, j, h, h], out)?)
}
