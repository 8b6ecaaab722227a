//! Desk-scale training experiments: learning, occlusion robustness,
//! supervision ordering and part IoU.

use std::collections::BTreeMap;

use parelab_core::train::EvalReport;

use crate::experiments::{Variant, Workspace, SEEDS};
use crate::Outcome;

pub const STEPS: u64 = 10_000;

/// Test-set reports of every trained run and of the untrained networks.
pub struct Results {
    pub trained: BTreeMap<(&'static str, u64), EvalReport>,
    pub untrained: BTreeMap<(&'static str, u64), EvalReport>,
}

impl Results {
    pub fn collect(ws: &Workspace) -> Result<Self, String> {
        let (mut trained, mut untrained) = (BTreeMap::new(), BTreeMap::new());
        for seed in SEEDS {
            for v in Variant::ALL {
                let run = ws.run(v, seed, STEPS)?;
                trained.insert((v.name(), seed), ws.evaluate(&run)?);
            }
            for v in [Variant::Mixed, Variant::Gap] {
                let run = ws.run(v, seed, 0)?;
                untrained.insert((v.name(), seed), ws.evaluate(&run)?);
            }
        }
        Ok(Self { trained, untrained })
    }

    fn per_seed(&self, v: Variant, f: impl Fn(&EvalReport) -> f64) -> Vec<f64> {
        SEEDS.iter().map(|&s| f(&self.trained[&(v.name(), s)])).collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation.
fn std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join("/")
}

fn occluded_mpjpe(r: &EvalReport) -> f64 {
    r.occluded.as_ref().expect("occluded report").mpjpe
}

fn degradation(r: &EvalReport) -> f64 {
    r.degradation.as_ref().expect("degradation").mpjpe
}

pub fn learning(res: &Results) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for v in [Variant::Mixed, Variant::Gap] {
        let trained = res.per_seed(v, |r| r.clean.mpjpe);
        let init: Vec<f64> = SEEDS.iter().map(|&s| res.untrained[&(v.name(), s)].clean.mpjpe).collect();
        let ratios: Vec<f64> = trained.iter().zip(&init).map(|(t, i)| t / i).collect();
        pass &= ratios.iter().all(|&r| r < 0.5);
        parts.push(format!("{} test MPJPE {} mm vs untrained {} (ratios {})", v.name(), fmt(&trained), fmt(&init), ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join("/")));
    }
    Outcome { pass, detail: format!("{}; every seed needs ratio < 0.50", parts.join("; ")) }
}

pub fn occlusion_robustness(res: &Results) -> Outcome {
    let pare = res.per_seed(Variant::Mixed, degradation);
    let gap = res.per_seed(Variant::Gap, degradation);
    let wins = pare.iter().zip(&gap).filter(|(p, g)| p < g).count();
    let gap_mean = mean(&gap) - mean(&pare);
    Outcome {
        pass: wins >= 2 && gap_mean > 0.0,
        detail: format!(
            "occluded minus clean MPJPE: PARE {} mm, GAP {} mm; PARE lower in {wins}/3 seeds (need >= 2); seed-mean gap {gap_mean:+.2} mm (need > 0)",
            fmt(&pare),
            fmt(&gap)
        ),
    }
}

pub fn supervision_ordering(res: &Results) -> Outcome {
    let mixed = res.per_seed(Variant::Mixed, occluded_mpjpe);
    let parts = res.per_seed(Variant::Parts, occluded_mpjpe);
    let none = res.per_seed(Variant::Unsupervised, occluded_mpjpe);
    // a pair is ordered when the first mean is lower or within one pooled seed std
    let ordered = |a: &[f64], b: &[f64]| {
        let pooled = ((std(a).powi(2) + std(b).powi(2)) / 2.0).sqrt();
        (mean(a) <= mean(b) || mean(a) - mean(b) <= pooled, pooled)
    };
    let (mp, s1) = ordered(&mixed, &parts);
    let (pn, s2) = ordered(&parts, &none);
    Outcome {
        pass: mp && pn,
        detail: format!(
            "occluded-test MPJPE seed means: mixed {:.1}, parts-only {:.1}, unsupervised {:.1} mm; mixed <= parts {} (std {s1:.1}), parts <= unsupervised {} (std {s2:.1})",
            mean(&mixed),
            mean(&parts),
            mean(&none),
            if mp { "holds" } else { "violated" },
            if pn { "holds" } else { "violated" }
        ),
    }
}

pub fn part_iou(res: &Results) -> Outcome {
    let iou = |v| res.per_seed(v, |r| r.clean.seg_iou.expect("part branch"));
    let (parts, none, mixed) = (iou(Variant::Parts), iou(Variant::Unsupervised), iou(Variant::Mixed));
    let (p, n, m) = (mean(&parts), mean(&none), mean(&mixed));
    Outcome {
        pass: p > 0.5 && n < 0.1 && n < m && m < p,
        detail: format!("seed-mean part IoU: parts-only {p:.3} (need > 0.5), unsupervised {n:.3} (need < 0.1), mixed {m:.3} (need strictly between)"),
    }
}
