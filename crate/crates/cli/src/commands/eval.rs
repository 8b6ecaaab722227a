use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use parelab_core::data::{read_dataset, Dataset, SynthOccConfig};
use parelab_core::train::{evaluate, load_checkpoint};
use serde::{Deserialize, Serialize};

use super::required;
use crate::config::{load_or_default, write_json, write_snapshot};

pub const REPORT_FILE: &str = "eval.json";

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Resolved-config JSON of a previous run; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory for `eval.json` and the config snapshot.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also score an occluded copy of every image.
    #[arg(long)]
    occluded: bool,
    /// Probability of an occluder on each image of the occluded copy.
    #[arg(long)]
    occ_prob: Option<f64>,
    /// Score only the first this many samples.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalRun {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Occluder settings of the occluded copy; none scores clean images only.
    pub occlusion: Option<SynthOccConfig>,
    pub limit: Option<usize>,
}

pub fn run(args: Args) -> Result<()> {
    let mut run: EvalRun = load_or_default(args.config.as_deref())?;
    for (dst, src) in [(&mut run.checkpoint, &args.checkpoint), (&mut run.dataset, &args.dataset), (&mut run.out, &args.out)] {
        if src.is_some() {
            dst.clone_from(src);
        }
    }
    if args.limit.is_some() {
        run.limit = args.limit;
    }
    let data = read_dataset(required(&run.dataset, "dataset")?)?;
    if args.occluded && run.occlusion.is_none() {
        run.occlusion = Some(data.spec.synth_occ.always());
    }
    if let (Some(p), Some(occ)) = (args.occ_prob, run.occlusion.as_mut()) {
        occ.prob = p;
    }
    if let Some(occ) = &run.occlusion {
        occ.validate()?;
    }
    let out = required(&run.out, "out")?;
    let net = load_checkpoint(required(&run.checkpoint, "checkpoint")?, None)?;
    let n = run.limit.unwrap_or(data.len()).min(data.len());
    let data = Dataset { spec: data.spec, samples: data.samples[..n].to_vec() };
    write_snapshot(out, &run)?;
    let t0 = Instant::now();
    let report = evaluate(&net, &data, run.occlusion.as_ref())?;
    write_json(&out.join(REPORT_FILE), &report)?;
    println!("scored {n} samples in {:.1} s", t0.elapsed().as_secs_f64());
    println!("clean    MPJPE {:.2}  PA-MPJPE {:.2}  PVE {:.2}", report.clean.mpjpe, report.clean.pa_mpjpe, report.clean.pve);
    if let (Some(o), Some(d)) = (&report.occluded, &report.degradation) {
        println!("occluded MPJPE {:.2}  PA-MPJPE {:.2}  PVE {:.2}  (degradation {:+.2})", o.mpjpe, o.pa_mpjpe, o.pve, d.mpjpe);
    }
    Ok(())
}
