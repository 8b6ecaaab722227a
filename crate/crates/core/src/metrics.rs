//! Evaluation metrics. Lengths are reported in millimeters (model units are meters).

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const MM_PER_M: f64 = 1000.0;

/// Similarity transform `y ≈ scale · R · x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.r * p) + self.t
    }
}

fn centroid(p: &[Vector3<f64>]) -> Vector3<f64> {
    p.iter().sum::<Vector3<f64>>() / p.len() as f64
}

/// Least-squares similarity transform taking `x` onto `y`.
pub fn procrustes_align(x: &[Vector3<f64>], y: &[Vector3<f64>]) -> Result<Similarity> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(CoreError::RankDeficient(format!("need ≥3 paired points, got {} and {}", x.len(), y.len())));
    }
    let (mx, my) = (centroid(x), centroid(y));
    let mut cov = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    let mut var_x = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (xc, yc) = (a - mx, b - my);
        cov += yc * xc.transpose();
        scatter += xc * xc.transpose();
        var_x += xc.norm_squared();
    }
    let mut ev = scatter.symmetric_eigenvalues().as_slice().to_vec();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[1] > 1e-12 * ev[0].max(f64::MIN_POSITIVE)) {
        return Err(CoreError::RankDeficient("source points are collinear or coincident".into()));
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * vt).determinant().signum();
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = u * s * vt;
    let trace = svd.singular_values[0] + svd.singular_values[1] + d * svd.singular_values[2];
    let scale = trace / var_x;
    Ok(Similarity { scale, r, t: my - scale * (r * mx) })
}

/// Per-joint distance after subtracting joint 0 from both sets.
pub fn root_aligned_errors(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Vec<f64> {
    let (pr, gr) = (pred[0], gt[0]);
    pred.iter().zip(gt).map(|(p, g)| ((p - pr) - (g - gr)).norm()).collect()
}

pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> f64 {
    mean(&root_aligned_errors(pred, gt))
}

pub fn pa_errors(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Vec<f64>> {
    let sim = procrustes_align(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (sim.apply(p) - g).norm()).collect())
}

pub fn pa_mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    Ok(mean(&pa_errors(pred, gt)?))
}

/// Mean vertex distance after aligning the meshes at their root joints.
pub fn pve(pred: &[Vector3<f64>], gt: &[Vector3<f64>], pred_root: &Vector3<f64>, gt_root: &Vector3<f64>) -> f64 {
    mean(&pred.iter().zip(gt).map(|(p, g)| ((p - pred_root) - (g - gt_root)).norm()).collect::<Vec<_>>())
}

/// `(hits, counted)` of 2D joints within `threshold` pixels, over joints with `mask` set.
pub fn pck_counts(pred: &[[f64; 2]], gt: &[[f64; 2]], mask: &[bool], threshold: f64) -> (usize, usize) {
    let mut hits = 0;
    let mut n = 0;
    for ((p, g), &m) in pred.iter().zip(gt).zip(mask) {
        if m {
            n += 1;
            if ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt() <= threshold {
                hits += 1;
            }
        }
    }
    (hits, n)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Per-class intersection and union pixel counts accumulated over a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SegIou {
    inter: Vec<u64>,
    union: Vec<u64>,
}

impl SegIou {
    /// `classes` counts the background, which is tracked but excluded from the mean.
    pub fn new(classes: usize) -> Self {
        Self { inter: vec![0; classes], union: vec![0; classes] }
    }

    pub fn add(&mut self, pred: &[u32], gt: &[u32]) {
        for (&p, &g) in pred.iter().zip(gt) {
            let (p, g) = (p as usize, g as usize);
            if p == g {
                self.inter[p] += 1;
                self.union[p] += 1;
            } else {
                self.union[p] += 1;
                self.union[g] += 1;
            }
        }
    }

    pub fn per_class(&self) -> Vec<Option<f64>> {
        self.inter
            .iter()
            .zip(&self.union)
            .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
            .collect()
    }

    /// Mean over part classes (1..) with nonzero union.
    pub fn mean(&self) -> Option<f64> {
        let v: Vec<f64> = self.per_class().into_iter().skip(1).flatten().collect();
        (!v.is_empty()).then(|| mean(&v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub pve: f64,
    pub pck: f64,
    /// Absent for models without a part branch.
    pub seg_iou: Option<f64>,
    pub per_joint_mpjpe: Vec<f64>,
    pub per_joint_pa_mpjpe: Vec<f64>,
}

/// Running sums behind a [`MetricReport`]; samples are added in order.
#[derive(Clone, Debug)]
pub struct MetricAccumulator {
    samples: usize,
    joint_err: Vec<f64>,
    joint_pa: Vec<f64>,
    pve_sum: f64,
    pck_hits: usize,
    pck_total: usize,
    iou: Option<SegIou>,
    pck_threshold: f64,
}

impl MetricAccumulator {
    /// `seg_classes` is `Some(J+1)` when part predictions will be supplied.
    pub fn new(joints: usize, pck_threshold_px: f64, seg_classes: Option<usize>) -> Self {
        Self {
            samples: 0,
            joint_err: vec![0.0; joints],
            joint_pa: vec![0.0; joints],
            pve_sum: 0.0,
            pck_hits: 0,
            pck_total: 0,
            iou: seg_classes.map(SegIou::new),
            pck_threshold: pck_threshold_px,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn add(
        &mut self,
        pred_j3d: &[Vector3<f64>],
        gt_j3d: &[Vector3<f64>],
        pred_mesh: &[Vector3<f64>],
        gt_mesh: &[Vector3<f64>],
        pred_j2d_px: &[[f64; 2]],
        gt_j2d_px: &[[f64; 2]],
        j2d_mask: &[bool],
        parts: Option<(&[u32], &[u32])>,
    ) -> Result<()> {
        self.samples += 1;
        for (acc, e) in self.joint_err.iter_mut().zip(root_aligned_errors(pred_j3d, gt_j3d)) {
            *acc += e;
        }
        for (acc, e) in self.joint_pa.iter_mut().zip(pa_errors(pred_j3d, gt_j3d)?) {
            *acc += e;
        }
        self.pve_sum += pve(pred_mesh, gt_mesh, &pred_j3d[0], &gt_j3d[0]);
        let (h, n) = pck_counts(pred_j2d_px, gt_j2d_px, j2d_mask, self.pck_threshold);
        self.pck_hits += h;
        self.pck_total += n;
        if let (Some(iou), Some((p, g))) = (&mut self.iou, parts) {
            iou.add(p, g);
        }
        Ok(())
    }

    pub fn report(&self) -> MetricReport {
        let n = self.samples.max(1) as f64;
        let pj: Vec<f64> = self.joint_err.iter().map(|e| e / n * MM_PER_M).collect();
        let pa: Vec<f64> = self.joint_pa.iter().map(|e| e / n * MM_PER_M).collect();
        MetricReport {
            samples: self.samples,
            mpjpe: mean(&pj),
            pa_mpjpe: mean(&pa),
            pve: self.pve_sum / n * MM_PER_M,
            pck: if self.pck_total == 0 { 1.0 } else { self.pck_hits as f64 / self.pck_total as f64 },
            seg_iou: self.iou.as_ref().map(|i| i.mean().unwrap_or(0.0)),
            per_joint_mpjpe: pj,
            per_joint_pa_mpjpe: pa,
        }
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>10}", "samples", self.samples)?;
        writeln!(f, "{:<12} {:>10.2} mm", "mpjpe", self.mpjpe)?;
        writeln!(f, "{:<12} {:>10.2} mm", "pa_mpjpe", self.pa_mpjpe)?;
        writeln!(f, "{:<12} {:>10.2} mm", "pve", self.pve)?;
        writeln!(f, "{:<12} {:>10.4}", "pck", self.pck)?;
        match self.seg_iou {
            Some(v) => writeln!(f, "{:<12} {:>10.4}", "seg_iou", v),
            None => writeln!(f, "{:<12} {:>10}", "seg_iou", "n/a"),
        }
    }
}
