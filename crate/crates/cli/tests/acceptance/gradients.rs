//! Central finite differences against reverse-mode gradients.

use parelab_core::body_model::{generate_toy_model, lbs_tape, rot6d_to_matrix_tape, BodyTensors};
use parelab_core::data::{generate, DatasetSpec};
use parelab_core::losses::{loss_2d, loss_3d, loss_heatmaps, loss_parts, loss_smpl, LossWeights};
use parelab_core::net::{attention_fuse, pooling_fuse, BodyModelSource, Mode, NetConfig, Network, PartSupervision};
use parelab_core::render::project_tape;
use parelab_core::train::{batch_loss, Batch};
use parelab_numerics::gradcheck::check;
use parelab_numerics::{ParamId, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const H: f64 = 1e-5;
const PRIMITIVE_TOL: f64 = 1e-4;
const END_TO_END_TOL: f64 = 1e-3;
const SEEDS: [u64; 5] = [11, 12, 13, 14, 15];

type Make = fn(&mut ChaCha8Rng) -> Vec<Tensor>;
type Build = fn(&mut Tape, &[Var]) -> Var;

fn randn(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape.to_vec(), r)
}

/// Magnitudes in [lo, lo + 1.5) with random sign: clear of kinks and poles.
fn away(r: &mut ChaCha8Rng, shape: &[usize], lo: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v = r.gen_range(lo..lo + 1.5);
        if r.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn positive(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    away(r, shape, 0.3).map(f64::abs)
}

fn toy_tensors() -> BodyTensors {
    BodyTensors::new(&generate_toy_model(7, 120, 24, 3).unwrap(), false)
}

fn cases() -> Vec<(&'static str, Make, Build)> {
    vec![
        ("relu", |r| vec![away(r, &[3, 4], 0.05)], |t, v| t.relu(v[0])),
        ("square", |r| vec![randn(r, &[5])], |t, v| t.square(v[0])),
        ("sqrt", |r| vec![positive(r, &[5])], |t, v| t.sqrt(v[0])),
        ("exp", |r| vec![randn(r, &[2, 3])], |t, v| t.exp(v[0])),
        ("ln", |r| vec![positive(r, &[4])], |t, v| t.ln(v[0])),
        ("neg", |r| vec![randn(r, &[4])], |t, v| t.neg(v[0])),
        ("scale", |r| vec![randn(r, &[4])], |t, v| t.scale(v[0], -2.5)),
        ("add_scalar", |r| vec![randn(r, &[4])], |t, v| t.add_scalar(v[0], 3.0)),
        ("softplus", |r| vec![randn(r, &[6])], |t, v| t.softplus(v[0])),
        ("sigmoid", |r| vec![randn(r, &[6])], |t, v| t.sigmoid(v[0])),
        ("add", |r| vec![randn(r, &[2, 3, 4]), randn(r, &[3, 1])], |t, v| t.add(v[0], v[1]).unwrap()),
        ("sub", |r| vec![randn(r, &[2, 3, 4]), randn(r, &[3, 1])], |t, v| t.sub(v[0], v[1]).unwrap()),
        ("mul", |r| vec![randn(r, &[2, 3, 4]), randn(r, &[3, 1])], |t, v| t.mul(v[0], v[1]).unwrap()),
        ("div", |r| vec![randn(r, &[2, 3]), away(r, &[3], 0.5)], |t, v| t.div(v[0], v[1]).unwrap()),
        ("sum", |r| vec![randn(r, &[3, 2])], |t, v| t.sum(v[0])),
        ("mean", |r| vec![randn(r, &[3, 2])], |t, v| t.mean(v[0])),
        ("sum_axis", |r| vec![randn(r, &[2, 3, 4])], |t, v| t.sum_axis(v[0], 1, false).unwrap()),
        ("mean_axis", |r| vec![randn(r, &[2, 3, 4])], |t, v| t.mean_axis(v[0], 2, true).unwrap()),
        ("reshape", |r| vec![randn(r, &[2, 6])], |t, v| t.reshape(v[0], &[3, 4]).unwrap()),
        ("flatten", |r| vec![randn(r, &[2, 3, 2])], |t, v| t.flatten(v[0], 1).unwrap()),
        ("permute", |r| vec![randn(r, &[2, 3, 4])], |t, v| t.permute(v[0], &[1, 2, 0]).unwrap()),
        ("transpose", |r| vec![randn(r, &[3, 5])], |t, v| t.transpose(v[0]).unwrap()),
        ("narrow", |r| vec![randn(r, &[2, 5, 3])], |t, v| t.narrow(v[0], 1, 1, 3).unwrap()),
        ("concat", |r| vec![randn(r, &[2, 2, 3]), randn(r, &[2, 1, 3])], |t, v| t.concat(&[v[0], v[1]], 1).unwrap()),
        ("matmul", |r| vec![randn(r, &[3, 4]), randn(r, &[4, 2])], |t, v| t.matmul(v[0], v[1]).unwrap()),
        ("bmm", |r| vec![randn(r, &[2, 3, 4]), randn(r, &[2, 4, 5])], |t, v| t.bmm(v[0], v[1]).unwrap()),
        (
            "conv2d 3x3 stride 2",
            |r| vec![randn(r, &[2, 2, 5, 5]), randn(r, &[3, 2, 3, 3]), randn(r, &[3])],
            |t, v| t.conv2d(v[0], v[1], Some(v[2]), 2, 1).unwrap(),
        ),
        (
            "conv2d 1x1",
            |r| vec![randn(r, &[2, 3, 3, 2]), randn(r, &[4, 3, 1, 1]), randn(r, &[4])],
            |t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 0).unwrap(),
        ),
        ("upsample2x", |r| vec![randn(r, &[2, 2, 2, 3])], |t, v| t.upsample2x(v[0]).unwrap()),
        (
            "batchnorm train",
            |r| vec![randn(r, &[3, 2, 2, 2]), randn(r, &[2]), randn(r, &[2])],
            |t, v| t.batchnorm2d_train(v[0], v[1], v[2]).unwrap().0,
        ),
        (
            "batchnorm eval",
            |r| vec![randn(r, &[2, 2, 2, 2]), randn(r, &[2]), randn(r, &[2])],
            |t, v| t.batchnorm2d_eval(v[0], v[1], v[2], &[0.3, -0.2], &[1.5, 0.7]).unwrap(),
        ),
        ("softmax", |r| vec![randn(r, &[2, 4, 3])], |t, v| t.softmax(v[0], 1).unwrap()),
        ("log_softmax", |r| vec![randn(r, &[2, 4, 3])], |t, v| t.log_softmax(v[0], 2).unwrap()),
        (
            "bilinear_sample",
            |r| {
                let feats = randn(r, &[2, 2, 4, 5]);
                // inside the grid, clear of integer nodes
                let pts = Tensor::from_fn([2, 3, 2], |i| {
                    let hi = if i % 2 == 0 { 4.0 } else { 3.0 };
                    let x: f64 = r.gen_range(0.1..hi - 0.1);
                    if (x - x.round()).abs() < 0.05 {
                        x + 0.1
                    } else {
                        x
                    }
                });
                vec![feats, pts]
            },
            |t, v| t.bilinear_sample(v[0], v[1]).unwrap(),
        ),
        ("rot6d to matrix", |r| vec![Tensor::from_fn([3, 6], |_| r.gen_range(-1.0..1.0))], |t, v| rot6d_to_matrix_tape(t, v[0]).unwrap()),
        (
            "linear blend skinning",
            |r| {
                let six = Tensor::from_fn([2 * 24, 6], |_| r.gen_range(-1.0..1.0));
                vec![six, randn(r, &[2, 3])]
            },
            |t, v| {
                let rot = rot6d_to_matrix_tape(t, v[0]).unwrap();
                let rot = t.reshape(rot, &[2, 24, 3, 3]).unwrap();
                let out = lbs_tape(t, &toy_tensors(), rot, v[1]).unwrap();
                t.concat(&[out.vertices, out.joints], 1).unwrap()
            },
        ),
        (
            "weak-perspective projection",
            |r| vec![randn(r, &[2, 5, 3]), positive(r, &[2, 1]), randn(r, &[2, 2])],
            |t, v| project_tape(t, v[0], v[1], v[2]).unwrap(),
        ),
        (
            "3D joint loss",
            |r| vec![randn(r, &[2, 4, 3])],
            |t, v| {
                let mut r = ChaCha8Rng::seed_from_u64(1);
                loss_3d(t, v[0], &randn(&mut r, &[2, 4, 3]), &Tensor::new([2, 4], vec![1., 0., 1., 1., 1., 1., 0., 1.]).unwrap()).unwrap()
            },
        ),
        (
            "2D keypoint loss",
            |r| vec![randn(r, &[2, 4, 2])],
            |t, v| {
                let mut r = ChaCha8Rng::seed_from_u64(2);
                loss_2d(t, v[0], &randn(&mut r, &[2, 4, 2]), &Tensor::from_fn([2, 4], |i| (i % 3) as f64 * 0.5)).unwrap()
            },
        ),
        (
            "body parameter loss",
            |r| vec![randn(r, &[2, 3, 3, 3]), randn(r, &[2, 4])],
            |t, v| {
                let mut r = ChaCha8Rng::seed_from_u64(3);
                loss_smpl(t, v[0], v[1], &randn(&mut r, &[2, 3, 3, 3]), &randn(&mut r, &[2, 4])).unwrap()
            },
        ),
        (
            "part segmentation loss",
            |r| vec![randn(r, &[2, 4, 3, 3])],
            |t, v| loss_parts(t, v[0], &(0..18).map(|i| (i * 7 % 4) as u32).collect::<Vec<_>>()).unwrap(),
        ),
        (
            "keypoint heatmap loss",
            |r| vec![randn(r, &[2, 4, 3, 3])],
            |t, v| {
                let mut r = ChaCha8Rng::seed_from_u64(4);
                loss_heatmaps(t, v[0], &randn(&mut r, &[2, 3, 3, 3])).unwrap()
            },
        ),
        (
            "attention fusion",
            |r| vec![randn(r, &[2, 4, 3, 5]), randn(r, &[2, 6, 3, 5])],
            |t, v| attention_fuse(t, v[0], v[1]).unwrap().0,
        ),
        (
            // sampling locations are detached by design, so only the features are checked
            "pooling fusion",
            |r| vec![randn(r, &[2, 6, 3, 5])],
            |t, v| {
                let parts = t.constant(randn(&mut ChaCha8Rng::seed_from_u64(3), &[2, 4, 3, 5]));
                pooling_fuse(t, parts, v[0]).unwrap().0
            },
        ),
    ]
}

/// A scalar that weighs every output element differently.
fn weighted(t: &mut Tape, y: Var, seed: u64) -> Var {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = t.constant(Tensor::randn(t.shape(y).to_vec(), &mut r));
    let p = t.mul(y, w).unwrap();
    t.sum(p)
}

fn small_net(seed: u64) -> Network {
    let cfg = NetConfig {
        image_size: 32,
        backbone_channels: vec![4, 6, 8, 8],
        backbone_depth: 0,
        branch_channels: vec![6, 6, 6],
        feature_channels: 5,
        body_model: BodyModelSource::Toy { seed: 0, vertices: 200, betas: 3 },
        ..NetConfig::default()
    };
    Network::new(cfg, seed).unwrap()
}

/// Relative error of the training loss gradient over 32 sampled parameters.
fn end_to_end(seed: u64) -> f64 {
    let mut net = small_net(seed);
    let spec = DatasetSpec { size: 2, seed, image_size: 32, label_size: 16, body_model: BodyModelSource::Toy { seed: 0, vertices: 200, betas: 3 }, ..DatasetSpec::default() };
    let batch = Batch::new(&generate(&spec).unwrap()).unwrap();
    let weights = LossWeights::default();
    let loss = |net: &Network, tape: &mut Tape| batch_loss(net, tape, &batch, &weights, PartSupervision::Segmentation, &mut Mode::train()).unwrap().0;
    let mut tape = Tape::new();
    let l = loss(&net, &mut tape);
    let grads = tape.backward(l).unwrap();
    net.store_mut().load_grads(&tape, &grads);
    let trainable: Vec<ParamId> = net.store().ids().filter(|&id| net.store().get(id).trainable).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = vec![(trainable[0], 0)];
    while picks.len() < 32 {
        let id = trainable[rng.gen_range(0..trainable.len())];
        picks.push((id, rng.gen_range(0..net.store().get(id).value.numel())));
    }
    let (mut diff, mut na, mut nn) = (0.0, 0.0f64, 0.0f64);
    for (id, i) in picks {
        let analytic = net.store().get(id).grad.data()[i];
        let orig = net.store().get(id).value.data()[i];
        let mut at = |v: f64| {
            net.store_mut().get_mut(id).value.data_mut()[i] = v;
            let mut t = Tape::new();
            let l = loss(&net, &mut t);
            t.value(l).item()
        };
        let numeric = (at(orig + H) - at(orig - H)) / (2.0 * H);
        at(orig);
        diff += (analytic - numeric).powi(2);
        na += analytic * analytic;
        nn += numeric * numeric;
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-8)
}

pub fn criterion() -> Outcome {
    let mut worst = (0.0f64, "");
    let mut failures = Vec::new();
    let cases = cases();
    for (name, make, build) in &cases {
        for seed in SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = make(&mut rng);
            let err = check(&inputs, H, |t, v| {
                let y = build(t, v);
                Ok(weighted(t, y, seed))
            })
            .unwrap();
            if err > worst.0 {
                worst = (err, name);
            }
            if !(err <= PRIMITIVE_TOL) {
                failures.push(format!("{name} seed {seed}: {err:.2e}"));
            }
        }
    }
    let e2e: Vec<f64> = SEEDS.iter().map(|&s| end_to_end(s)).collect();
    let e2e_worst = e2e.iter().cloned().fold(0.0, f64::max);
    if !(e2e_worst <= END_TO_END_TOL) {
        failures.push(format!("end-to-end loss: {e2e_worst:.2e}"));
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!(
            "{} primitives x {} seeds, worst rel err {:.1e} ({}) <= {PRIMITIVE_TOL:.0e}; end-to-end worst {e2e_worst:.1e} <= {END_TO_END_TOL:.0e}{}",
            cases.len(),
            SEEDS.len(),
            worst.0,
            worst.1,
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
        ),
    }
}
