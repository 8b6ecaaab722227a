use std::path::PathBuf;

use anyhow::Result;
use parelab_core::body_model::{lbs_rotmats, part_names};
use parelab_core::data::{rest_state, BodyState, DatasetSpec, Renderer};
use parelab_core::render::{rasterize, Image};
use serde::{Deserialize, Serialize};

use super::required;
use crate::config::{load_json, load_or_default, write_snapshot};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Resolved-config JSON of a previous run; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// DatasetSpec JSON giving the body model, image size and poses.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset indices to render besides the rest pose, comma separated.
    #[arg(long, value_delimiter = ',')]
    indices: Vec<u64>,
    /// Integer enlargement of the PNGs.
    #[arg(long)]
    scale: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderPartsRun {
    pub spec: DatasetSpec,
    pub out: Option<PathBuf>,
    pub indices: Vec<u64>,
    pub scale: usize,
}

impl Default for RenderPartsRun {
    fn default() -> Self {
        Self { spec: DatasetSpec::default(), out: None, indices: Vec::new(), scale: 4 }
    }
}

/// Part labels of `state` at image resolution in the part palette.
fn label_image(r: &Renderer, spec: &DatasetSpec, state: &BodyState) -> Result<Image> {
    let posed = lbs_rotmats(&r.model, &state.rotmats, &state.betas, spec.use_posedirs)?;
    let s = spec.image_size;
    let raster = rasterize(&posed.vertices, r.model.faces(), r.face_labels(), &state.camera, s, s);
    let mut img = Image::new(s, s);
    for (i, &l) in raster.label_map.iter().enumerate() {
        img.set_pixel(i / s, i % s, r.palette()[l as usize]);
    }
    Ok(img)
}

pub fn run(args: Args, seed: Option<u64>) -> Result<()> {
    let mut run: RenderPartsRun = load_or_default(args.config.as_deref())?;
    if let Some(p) = &args.spec {
        run.spec = load_json(p)?;
    }
    if args.out.is_some() {
        run.out.clone_from(&args.out);
    }
    if !args.indices.is_empty() {
        run.indices.clone_from(&args.indices);
    }
    if let Some(s) = args.scale {
        run.scale = s;
    }
    if let Some(s) = seed {
        run.spec.seed = s;
    }
    run.spec.validate()?;
    let out = required(&run.out, "out")?;
    write_snapshot(out, &run)?;
    let spec = &run.spec;
    let r = Renderer::new(spec.load_body_model()?);

    let rest = rest_state(&r.model, 0.8)?;
    label_image(&r, spec, &rest)?.upscale(run.scale).save_png(out.join("rest_parts.png"))?;
    let mut legend = String::from("label,part,red,green,blue\n0,background,0,0,0\n");
    for (j, name) in part_names(r.model.num_joints()).iter().enumerate() {
        let c = r.palette()[j + 1].map(|v| (v * 255.0).round() as u8);
        legend.push_str(&format!("{},{name},{},{},{}\n", j + 1, c[0], c[1], c[2]));
    }
    std::fs::write(out.join("parts.csv"), legend)?;
    for &i in &run.indices {
        let state = parelab_core::data::sample_state(spec, &r.model, i)?;
        label_image(&r, spec, &state)?.upscale(run.scale).save_png(out.join(format!("{i:05}_parts.png")))?;
        r.render_state(spec, i, &state)?.image.upscale(run.scale).save_png(out.join(format!("{i:05}_image.png")))?;
    }
    println!("rendered the rest pose and {} samples into {}", run.indices.len(), out.display());
    Ok(())
}
