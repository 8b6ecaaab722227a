//! Training losses on the tape. Squared errors are summed over joints and
//! coordinates within a sample, then averaged over the batch.

use parelab_numerics::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_3d: f64,
    pub lambda_2d: f64,
    pub lambda_smpl: f64,
    pub lambda_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_3d: 300.0, lambda_2d: 300.0, lambda_smpl: 60.0, lambda_p: 60.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_3d", self.lambda_3d),
            ("lambda_2d", self.lambda_2d),
            ("lambda_smpl", self.lambda_smpl),
            ("lambda_p", self.lambda_p),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(crate::CoreError::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

fn batch(tape: &Tape, v: Var) -> usize {
    tape.shape(v).first().copied().unwrap_or(1)
}

/// Subtracts joint 0 from every joint of `[N,K,3]`.
pub fn root_center(tape: &mut Tape, joints: Var) -> Result<Var> {
    let root = tape.narrow(joints, 1, 0, 1)?;
    Ok(tape.sub(joints, root)?)
}

/// Σ_k mask·‖Δ_k‖² per sample, mean over the batch; `weights` is [N,K].
fn weighted_sq(tape: &mut Tape, pred: Var, gt: Var, weights: &Tensor, op: &'static str) -> Result<Var> {
    let ps = tape.shape(pred).to_vec();
    if ps != tape.shape(gt) || ps.len() != 3 || weights.shape() != &ps[..2] {
        return Err(shape_err(
            op,
            format!("pred {ps:?}, target {:?}, weights {:?}", tape.shape(gt), weights.shape()),
        ));
    }
    let n = ps[0];
    let d = tape.sub(pred, gt)?;
    let d2 = tape.square(d);
    let per_joint = tape.sum_axis(d2, 2, false)?;
    let w = tape.constant(weights.clone());
    let weighted = tape.mul(per_joint, w)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, 1.0 / n as f64))
}

/// Root-centered squared joint error over valid joints; `valid` is [N,K] in {0,1}.
pub fn loss_3d(tape: &mut Tape, pred: Var, gt: &Tensor, valid: &Tensor) -> Result<Var> {
    let pc = root_center(tape, pred)?;
    let gv = tape.constant(gt.clone());
    let gc = root_center(tape, gv)?;
    weighted_sq(tape, pc, gc, valid, "loss_3d")
}

/// Confidence-weighted squared reprojection error in normalized coordinates.
pub fn loss_2d(tape: &mut Tape, pred: Var, gt: &Tensor, conf: &Tensor) -> Result<Var> {
    let gv = tape.constant(gt.clone());
    weighted_sq(tape, pred, gv, conf, "loss_2d")
}

/// Squared error over flattened rotation matrices plus shape coefficients.
pub fn loss_smpl(tape: &mut Tape, rotmats: Var, betas: Var, gt_rotmats: &Tensor, gt_betas: &Tensor) -> Result<Var> {
    if tape.shape(rotmats) != gt_rotmats.shape() || tape.shape(betas) != gt_betas.shape() {
        return Err(shape_err(
            "loss_smpl",
            format!(
                "rotmats {:?} vs {:?}, betas {:?} vs {:?}",
                tape.shape(rotmats),
                gt_rotmats.shape(),
                tape.shape(betas),
                gt_betas.shape()
            ),
        ));
    }
    let n = batch(tape, rotmats);
    let gr = tape.constant(gt_rotmats.clone());
    let gb = tape.constant(gt_betas.clone());
    let dr = tape.sub(rotmats, gr)?;
    let db = tape.sub(betas, gb)?;
    let sr = tape.square(dr);
    let sb = tape.square(db);
    let a = tape.sum(sr);
    let b = tape.sum(sb);
    let s = tape.add(a, b)?;
    Ok(tape.scale(s, 1.0 / n as f64))
}

/// Per-pixel softmax cross-entropy over the channel axis, averaged over all
/// pixels of the batch. `logits` is [N,C,H,W]; `labels` holds N·H·W ids in [0, C).
pub fn loss_parts(tape: &mut Tape, logits: Var, labels: &[u32]) -> Result<Var> {
    let s = tape.shape(logits).to_vec();
    if s.len() != 4 || labels.len() != s[0] * s[2] * s[3] {
        return Err(shape_err("loss_parts", format!("logits {s:?} with {} labels", labels.len())));
    }
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(shape_err("loss_parts", format!("label {bad} outside [0, {c})")));
    }
    let mut onehot = Tensor::zeros(s.clone());
    {
        let d = onehot.data_mut();
        for b in 0..n {
            for p in 0..hw {
                d[(b * c + labels[b * hw + p] as usize) * hw + p] = 1.0;
            }
        }
    }
    let logp = tape.log_softmax(logits, 1)?;
    let oh = tape.constant(onehot);
    let picked = tape.mul(logp, oh)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / (n * hw) as f64))
}

/// Mean squared error between part-channel logits (channels 1..) and target heatmaps [N,J,H,W].
pub fn loss_heatmaps(tape: &mut Tape, logits: Var, heatmaps: &Tensor) -> Result<Var> {
    let s = tape.shape(logits).to_vec();
    if s.len() != 4 || heatmaps.shape() != [s[0], s[1] - 1, s[2], s[3]] {
        return Err(shape_err("loss_heatmaps", format!("logits {s:?}, heatmaps {:?}", heatmaps.shape())));
    }
    let parts = tape.narrow(logits, 1, 1, s[1] - 1)?;
    let target = tape.constant(heatmaps.clone());
    let d = tape.sub(parts, target)?;
    let d2 = tape.square(d);
    Ok(tape.mean(d2))
}

/// λ-weighted sum whose zero-weight terms are never evaluated.
pub struct TotalLoss {
    terms: Vec<(&'static str, f64, Var)>,
}

impl Default for TotalLoss {
    fn default() -> Self {
        Self::new()
    }
}

impl TotalLoss {
    pub fn new() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn add(
        &mut self,
        tape: &mut Tape,
        name: &'static str,
        weight: f64,
        term: impl FnOnce(&mut Tape) -> Result<Var>,
    ) -> Result<()> {
        if weight != 0.0 {
            let v = term(tape)?;
            self.terms.push((name, weight, v));
        }
        Ok(())
    }

    /// Unweighted value of every evaluated term.
    pub fn components(&self, tape: &Tape) -> Vec<(&'static str, f64)> {
        self.terms.iter().map(|(n, _, v)| (*n, tape.value(*v).item())).collect()
    }

    pub fn weights(&self) -> Vec<(&'static str, f64)> {
        self.terms.iter().map(|(n, w, _)| (*n, *w)).collect()
    }

    pub fn finish(&self, tape: &mut Tape) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(_, w, v) in &self.terms {
            let t = tape.scale(v, w);
            acc = Some(match acc {
                None => t,
                Some(a) => tape.add(a, t)?,
            });
        }
        Ok(acc.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use parelab_numerics::gradcheck::check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn value(f: impl FnOnce(&mut Tape) -> Result<Var>) -> f64 {
        let mut t = Tape::new();
        let v = f(&mut t).unwrap();
        t.value(v).item()
    }

    #[test]
    fn loss_3d_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gt = Tensor::randn([1, 4, 3], &mut rng);
        let mask = Tensor::ones([1, 4]);
        assert_eq!(value(|t| { let p = t.constant(gt.clone()); loss_3d(t, p, &gt, &mask) }), 0.0);
        let mut shifted = gt.clone();
        shifted.data_mut()[3] += 1.0; // joint 1, x
        let l = value(|t| { let p = t.constant(shifted.clone()); loss_3d(t, p, &gt, &mask) });
        assert!((l - 1.0).abs() < 1e-12);
        let none = Tensor::zeros([1, 4]);
        assert_eq!(value(|t| { let p = t.constant(shifted.clone()); loss_3d(t, p, &gt, &none) }), 0.0);
    }

    #[test]
    fn loss_3d_matches_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, g) = (Tensor::randn([3, 5, 3], &mut rng), Tensor::randn([3, 5, 3], &mut rng));
        let mask = Tensor::from_fn([3, 5], |i| (i % 4 != 0) as u8 as f64);
        let got = value(|t| { let pv = t.constant(p.clone()); loss_3d(t, pv, &g, &mask) });
        let mut want = 0.0;
        for n in 0..3 {
            for k in 0..5 {
                for c in 0..3 {
                    let pc = p.data()[(n * 5 + k) * 3 + c] - p.data()[n * 15 + c];
                    let gc = g.data()[(n * 5 + k) * 3 + c] - g.data()[n * 15 + c];
                    want += mask.data()[n * 5 + k] * (pc - gc).powi(2);
                }
            }
        }
        assert!((got - want / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn loss_2d_examples_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p, g) = (Tensor::randn([2, 4, 2], &mut rng), Tensor::randn([2, 4, 2], &mut rng));
        let conf = Tensor::from_fn([2, 4], |_| rng.gen_range(0.0..1.0));
        assert_eq!(value(|t| { let pv = t.constant(g.clone()); loss_2d(t, pv, &g, &conf) }), 0.0);
        assert_eq!(value(|t| { let pv = t.constant(p.clone()); loss_2d(t, pv, &g, &Tensor::zeros([2, 4])) }), 0.0);
        let got = value(|t| { let pv = t.constant(p.clone()); loss_2d(t, pv, &g, &conf) });
        let want: f64 = (0..8)
            .map(|j| conf.data()[j] * (0..2).map(|c| (p.data()[j * 2 + c] - g.data()[j * 2 + c]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / 2.0;
        assert!((got - want).abs() <= 1e-12);
    }

    #[test]
    fn loss_smpl_examples_and_oracle() {
        let eye = Tensor::from_fn([1, 2, 3, 3], |i| if i % 9 % 4 == 0 { 1.0 } else { 0.0 });
        let b0 = Tensor::zeros([1, 3]);
        let b1 = Tensor::new([1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let l = value(|t| { let r = t.constant(eye.clone()); let b = t.constant(b1.clone()); loss_smpl(t, r, b, &eye, &b0) });
        assert_eq!(l, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (r1, r2) = (Tensor::randn([2, 2, 3, 3], &mut rng), Tensor::randn([2, 2, 3, 3], &mut rng));
        let (c1, c2) = (Tensor::randn([2, 3], &mut rng), Tensor::randn([2, 3], &mut rng));
        let got = value(|t| { let r = t.constant(r1.clone()); let b = t.constant(c1.clone()); loss_smpl(t, r, b, &r2, &c2) });
        let sq = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        assert!((got - (sq(&r1, &r2) + sq(&c1, &c2)) / 2.0).abs() <= 1e-12);
    }

    #[test]
    fn loss_parts_examples() {
        let labels = vec![0, 1, 2, 1];
        let mut logits = Tensor::zeros([1, 3, 2, 2]);
        let l = value(|t| { let v = t.constant(logits.clone()); loss_parts(t, v, &labels) });
        assert!((l - 3f64.ln()).abs() < 1e-12);
        for (p, &lab) in labels.iter().enumerate() {
            logits.data_mut()[lab as usize * 4 + p] = 200.0;
        }
        let l = value(|t| { let v = t.constant(logits.clone()); loss_parts(t, v, &labels) });
        assert!(l < 1e-80);
        let mut t = Tape::new();
        let v = t.constant(logits);
        assert!(loss_parts(&mut t, v, &[0, 1, 3, 0]).is_err());
    }

    #[test]
    fn loss_parts_matches_hand_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = Tensor::randn([1, 3, 2, 2], &mut rng);
        let labels = [2u32, 0, 1, 1];
        let got = value(|t| { let v = t.constant(logits.clone()); loss_parts(t, v, &labels) });
        let mut want = 0.0;
        for p in 0..4 {
            let z: Vec<f64> = (0..3).map(|c| logits.data()[c * 4 + p]).collect();
            let lse = z.iter().map(|x| x.exp()).sum::<f64>().ln();
            want += lse - z[labels[p] as usize];
        }
        assert!((got - want / 4.0).abs() <= 1e-12);
    }

    #[test]
    fn total_skips_zero_weights() {
        let mut t = Tape::new();
        let a = t.variable(Tensor::scalar(2.0));
        let mut total = TotalLoss::new();
        total.add(&mut t, "a", 3.0, |t| Ok(t.square(a))).unwrap();
        total.add(&mut t, "never", 0.0, |_| panic!("evaluated")).unwrap();
        total.add(&mut t, "b", 0.5, |t| Ok(t.scale(a, 4.0))).unwrap();
        let v = total.finish(&mut t).unwrap();
        assert_eq!(t.value(v).item(), 3.0 * 4.0 + 0.5 * 8.0);
        assert_eq!(total.components(&t), vec![("a", 4.0), ("b", 8.0)]);
        let mut t = Tape::new();
        let empty = TotalLoss::new().finish(&mut t).unwrap();
        assert_eq!(t.value(empty).item(), 0.0);
    }

    #[test]
    fn loss_gradients() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g3 = Tensor::randn([2, 4, 3], &mut rng);
            let g2 = Tensor::randn([2, 4, 2], &mut rng);
            let mask = Tensor::from_fn([2, 4], |_| rng.gen_range(0.0..1.0));
            let labels: Vec<u32> = (0..2 * 6).map(|_| rng.gen_range(0..3)).collect();
            let inputs = vec![
                Tensor::randn([2, 4, 3], &mut rng),
                Tensor::randn([2, 4, 2], &mut rng),
                Tensor::randn([2, 3, 2, 3], &mut rng),
            ];
            let err = check(&inputs, 1e-5, |t, v| {
                let a = loss_3d(t, v[0], &g3, &mask).unwrap();
                let b = loss_2d(t, v[1], &g2, &mask).unwrap();
                let c = loss_parts(t, v[2], &labels).unwrap();
                let ab = t.add(a, b)?;
                t.add(ab, c)
            })
            .unwrap();
            assert!(err <= 1e-4, "{err:e}");
        }
    }
}
