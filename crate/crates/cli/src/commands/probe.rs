use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use parelab_core::body_model::part_names;
use parelab_core::data::read_dataset;
use parelab_core::probe::{probe_to_mesh, write_grid_csv, write_map_png, write_mesh_ply, ProbeConfig, SensitivityMesh};
use parelab_core::train::load_checkpoint;
use serde::{Deserialize, Serialize};

use super::required;
use crate::config::{load_or_default, write_json, write_snapshot};

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
    /// Occluder side in pixels.
    #[arg(long)]
    patch: Option<usize>,
    /// Occluder step in pixels; defaults to a third of the patch.
    #[arg(long)]
    stride: Option<usize>,
    /// Occluder gray level in [0, 1].
    #[arg(long)]
    gray: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Write a heatmap per joint, not only the joint mean.
    #[arg(long)]
    per_joint: bool,
    /// Pool errors onto the body mesh over all probed samples.
    #[arg(long)]
    mesh: bool,
    /// Probe the first this many samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Integer enlargement of the heatmap PNGs.
    #[arg(long, default_value_t = 4)]
    scale: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeRun {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub probe: ProbeConfig,
    pub samples: usize,
    pub per_joint: bool,
    pub mesh: bool,
}

impl Default for ProbeRun {
    fn default() -> Self {
        Self { checkpoint: None, dataset: None, out_dir: None, probe: ProbeConfig::default(), samples: 1, per_joint: false, mesh: false }
    }
}

/// Per-sample record of `summary.json`.
#[derive(Debug, Serialize)]
struct ProbeSummary {
    index: u64,
    rows: usize,
    cols: usize,
    stride: usize,
    /// Unoccluded error per joint, then the mean, in millimeters.
    baseline_mm: Vec<f64>,
    /// Min and max of each written heatmap.
    ranges_mm: Vec<(String, f64, f64)>,
}

pub fn run(args: Args) -> Result<()> {
    let mut run: ProbeRun = load_or_default(args.config.as_deref())?;
    for (dst, src) in [(&mut run.checkpoint, &args.checkpoint), (&mut run.dataset, &args.dataset), (&mut run.out_dir, &args.out_dir)] {
        if src.is_some() {
            dst.clone_from(src);
        }
    }
    if let Some(p) = args.patch {
        run.probe.patch = p;
    }
    if args.stride.is_some() {
        run.probe.stride = args.stride;
    }
    if let Some(g) = args.gray {
        run.probe.gray = g;
    }
    if let Some(n) = args.samples {
        run.samples = n;
    }
    run.per_joint |= args.per_joint;
    run.mesh |= args.mesh;
    let net = load_checkpoint(required(&run.checkpoint, "checkpoint")?, None)?;
    run.probe.validate(net.config().image_size)?;
    let data = read_dataset(required(&run.dataset, "dataset")?)?;
    let out = required(&run.out_dir, "out_dir")?;
    write_snapshot(out, &run)?;

    let names = part_names(net.body().num_joints());
    let n = run.samples.min(data.len());
    let mut pooled = SensitivityMesh::new(names.len(), net.body().num_vertices());
    let mut summary = Vec::new();
    let t0 = Instant::now();
    for s in &data.samples[..n] {
        let (map, mesh) = probe_to_mesh(&net, s, &run.probe)?;
        pooled.add(&mesh);
        let tag = format!("{:05}", s.index);
        write_grid_csv(out.join(format!("grid_{tag}.csv")), &map)?;
        let mut ranges = Vec::new();
        let (lo, hi) = write_map_png(out.join(format!("{tag}_mean.png")), &map, map.joints, args.scale)?;
        ranges.push(("mean".to_string(), lo, hi));
        if run.per_joint {
            for (j, name) in names.iter().enumerate() {
                let (lo, hi) = write_map_png(out.join(format!("{tag}_{name}.png")), &map, j, args.scale)?;
                ranges.push((name.clone(), lo, hi));
            }
        }
        println!("sample {tag}: baseline {:.1} mm, occluded range {lo:.1}–{hi:.1} mm ({:.1} s)", map.baseline[map.joints], t0.elapsed().as_secs_f64());
        summary.push(ProbeSummary { index: s.index, rows: map.rows, cols: map.cols, stride: map.stride, baseline_mm: map.baseline, ranges_mm: ranges });
    }
    write_json(&out.join("summary.json"), &summary)?;
    if run.mesh {
        // pooled errors are shown on the template body
        let verts: Vec<_> = (0..net.body().num_vertices()).map(|v| net.body().vertex(v)).collect();
        let faces = net.body().faces();
        for (j, name) in names.iter().enumerate() {
            write_mesh_ply(out.join(format!("sensitivity_mesh_{name}.ply")), &verts, faces, &pooled.joint_means(j))?;
        }
        write_mesh_ply(out.join("sensitivity_mesh_mean.ply"), &verts, faces, &pooled.overall_means())?;
        let text = serde_json::to_string(&pooled)?;
        fs::write(out.join("sensitivity_mesh.json"), text).with_context(|| format!("writing into {}", out.display()))?;
    }
    println!("probed {n} samples into {}", out.display());
    Ok(())
}
