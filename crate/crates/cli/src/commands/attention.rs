use std::path::PathBuf;

use anyhow::Result;
use parelab_core::data::read_dataset;
use parelab_core::probe::map_image;
use parelab_core::train::load_checkpoint;
use serde::{Deserialize, Serialize};

use super::required;
use crate::config::{config_error, load_or_default, write_snapshot};

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
    #[arg(long)]
    out: Option<PathBuf>,
    /// Export the first this many samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Integer enlargement of the PNGs.
    #[arg(long)]
    scale: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionRun {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub samples: usize,
    pub scale: usize,
}

impl Default for AttentionRun {
    fn default() -> Self {
        Self { checkpoint: None, dataset: None, out: None, samples: 4, scale: 8 }
    }
}

/// Writes, per image, the input and one PNG per part-branch channel: the
/// per-pixel softmax over the background and J joint channels, on a fixed
/// 0 to 1 color scale.
pub fn run(args: Args) -> Result<()> {
    let mut run: AttentionRun = load_or_default(args.config.as_deref())?;
    for (dst, src) in [(&mut run.checkpoint, &args.checkpoint), (&mut run.dataset, &args.dataset), (&mut run.out, &args.out)] {
        if src.is_some() {
            dst.clone_from(src);
        }
    }
    if let Some(n) = args.samples {
        run.samples = n;
    }
    if let Some(s) = args.scale {
        run.scale = s;
    }
    let net = load_checkpoint(required(&run.checkpoint, "checkpoint")?, None)?;
    if !net.has_part_branch() {
        return Err(config_error("the checkpoint has no part branch to export"));
    }
    let data = read_dataset(required(&run.dataset, "dataset")?)?;
    let out = required(&run.out, "out")?;
    write_snapshot(out, &run)?;
    let h = net.config().map_size();
    let n = run.samples.min(data.len());
    for s in &data.samples[..n] {
        let tag = format!("{:05}", s.index);
        s.image.upscale(run.scale).save_png(out.join(format!("{tag}_input.png")))?;
        let pred = net.predict(&[&s.image])?.remove(0);
        let probs = pred.part_probs.expect("part branch present");
        let scale = run.scale * net.config().image_size / h;
        for (c, m) in probs.chunks(h * h).enumerate() {
            map_image(m, h, h, 0.0, 1.0).upscale(scale.max(1)).save_png(out.join(format!("{tag}_attn_{c:02}.png")))?;
        }
    }
    println!("exported {} attention maps for {n} samples into {}", net.config().num_joints + 1, out.display());
    Ok(())
}
