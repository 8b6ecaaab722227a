//! Closed-form and brute-force oracles: attention fusion, body model,
//! Procrustes alignment.

use nalgebra::{DMatrix, Matrix3, Vector3};
use parelab_core::body_model::rotation::{axis_angle_to_matrix, matrix_to_axis_angle, matrix_to_rot6d, rot6d_to_matrix};
use parelab_core::body_model::{generate_toy_model, lbs_rotmats};
use parelab_core::metrics::{mpjpe, pa_mpjpe, procrustes_align};
use parelab_core::net::attention_fuse;
use parelab_numerics::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

fn random_rotation(r: &mut ChaCha8Rng, max_angle: f64) -> Matrix3<f64> {
    let axis = Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)).normalize();
    let a = axis * r.gen_range(0.0..max_angle);
    axis_angle_to_matrix([a.x, a.y, a.z])
}

/// Attention fusion against a double loop over joints and pixels and against
/// the product of the attention matrix with the transposed feature matrix.
pub fn attention_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_loop, mut worst_mat) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (n, j, c, h, w) = (rng.gen_range(1..4), rng.gen_range(1..7), rng.gen_range(1..9), rng.gen_range(1..7), rng.gen_range(1..7));
        let p = Tensor::randn([n, j + 1, h, w], &mut rng).map(|x| 3.0 * x);
        let f = Tensor::randn([n, c, h, w], &mut rng);
        let mut tape = Tape::new();
        let (pv, fv) = (tape.constant(p.clone()), tape.constant(f.clone()));
        let (fused, _) = attention_fuse(&mut tape, pv, fv).unwrap();
        let got = tape.value(fused).data().to_vec();
        let (pd, fd, hw) = (p.data(), f.data(), h * w);
        for b in 0..n {
            let mut att = DMatrix::<f64>::zeros(j, hw);
            for jj in 0..j {
                // softmax over pixels of channel jj + 1, the background dropped
                let logits = &pd[(b * (j + 1) + jj + 1) * hw..(b * (j + 1) + jj + 2) * hw];
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                for q in 0..hw {
                    att[(jj, q)] = (logits[q] - m).exp() / z;
                }
                for cc in 0..c {
                    let mut acc = 0.0;
                    for q in 0..hw {
                        acc += att[(jj, q)] * fd[(b * c + cc) * hw + q];
                    }
                    worst_loop = worst_loop.max((acc - got[(b * j + jj) * c + cc]).abs());
                }
            }
            let feats = DMatrix::from_fn(c, hw, |cc, q| fd[(b * c + cc) * hw + q]);
            let prod = &att * feats.transpose();
            for jj in 0..j {
                for cc in 0..c {
                    worst_mat = worst_mat.max((prod[(jj, cc)] - got[(b * j + jj) * c + cc]).abs());
                }
            }
        }
    }
    Outcome {
        pass: worst_loop <= 1e-12 && worst_mat <= 1e-12,
        detail: format!("100 random shapes, max |diff| {worst_loop:.1e} vs double loop, {worst_mat:.1e} vs matmul form (tol 1e-12)"),
    }
}

pub fn body_model_suite() -> Outcome {
    let m = generate_toy_model(0, 1200, 24, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let template: Vec<Vector3<f64>> = (0..m.num_vertices()).map(|v| m.vertex(v)).collect();
    let ident = vec![Matrix3::identity(); 24];

    let rest = lbs_rotmats(&m, &ident, &[0.0; 10], false).unwrap();
    let rest_err = rest.vertices.iter().zip(&template).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);

    let mut lin_err = 0.0f64;
    for _ in 0..5 {
        let b1: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b2: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (a, bb) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
        let mix: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| a * x + bb * y).collect();
        let v1 = lbs_rotmats(&m, &ident, &b1, false).unwrap().vertices;
        let v2 = lbs_rotmats(&m, &ident, &b2, false).unwrap().vertices;
        let vm = lbs_rotmats(&m, &ident, &mix, false).unwrap().vertices;
        for i in 0..template.len() {
            let want = template[i] + a * (v1[i] - template[i]) + bb * (v2[i] - template[i]);
            lin_err = lin_err.max((vm[i] - want).norm());
        }
    }

    let mut rigid_err = 0.0f64;
    for _ in 0..5 {
        let betas: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut pose: Vec<Matrix3<f64>> = (0..24).map(|_| random_rotation(&mut rng, 0.6)).collect();
        pose[0] = Matrix3::identity();
        let base = lbs_rotmats(&m, &pose, &betas, false).unwrap();
        let r = random_rotation(&mut rng, 3.0);
        pose[0] = r;
        let moved = lbs_rotmats(&m, &pose, &betas, false).unwrap();
        let root = base.shaped_rest_joints[0];
        for (a, b) in moved.vertices.iter().zip(&base.vertices) {
            rigid_err = rigid_err.max((a - (r * (b - root) + root)).norm());
        }
    }

    let mut rot_err = 0.0f64;
    for _ in 0..1000 {
        let r = random_rotation(&mut rng, 3.0);
        let back = axis_angle_to_matrix(matrix_to_axis_angle(&r));
        let six = rot6d_to_matrix(matrix_to_rot6d(&r)).unwrap();
        rot_err = rot_err.max((back - r).abs().max()).max((six - r).abs().max());
        let aa = matrix_to_axis_angle(&r);
        let again = matrix_to_axis_angle(&axis_angle_to_matrix(aa));
        rot_err = rot_err.max((0..3).map(|i| (aa[i] - again[i]).abs()).fold(0.0, f64::max));
    }
    Outcome {
        pass: rest_err <= 1e-9 && lin_err <= 1e-9 && rigid_err <= 1e-9 && rot_err <= 1e-10,
        detail: format!("rest {rest_err:.1e}, shape linearity {lin_err:.1e}, rigid root {rigid_err:.1e} (tol 1e-9); rotation round trips {rot_err:.1e} (tol 1e-10)"),
    }
}

fn random_points(r: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n).map(|_| Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))).collect()
}

pub fn procrustes_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut recover, mut zero) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let x = random_points(&mut rng, 24);
        let r = random_rotation(&mut rng, 3.1);
        let s = rng.gen_range(0.2..5.0);
        let t = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let y: Vec<Vector3<f64>> = x.iter().map(|p| s * (r * p) + t).collect();
        let sim = procrustes_align(&x, &y).unwrap();
        recover = recover.max((sim.scale - s).abs()).max((sim.r - r).abs().max()).max((sim.t - t).abs().max());
        zero = zero.max(pa_mpjpe(&x, &y).unwrap().abs());
    }
    let mut violations = 0;
    for _ in 0..1000 {
        let gt = random_points(&mut rng, 24);
        let pred = random_points(&mut rng, 24);
        if pa_mpjpe(&pred, &gt).unwrap() > mpjpe(&pred, &gt) {
            violations += 1;
        }
    }
    Outcome {
        pass: recover <= 1e-9 && zero <= 1e-8 && violations == 0,
        detail: format!("similarity recovered to {recover:.1e} (tol 1e-9); PA-MPJPE of similar copies {zero:.1e} (tol 1e-8); PA-MPJPE > MPJPE in {violations}/1000 pairs"),
    }
}
