use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use parelab_core::data::{generate, write_dataset, DatasetSpec};
use serde::{Deserialize, Serialize};

use super::required;
use crate::config::{load_json, load_or_default, write_snapshot};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Resolved-config JSON of a previous run; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// DatasetSpec JSON.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for shards, index and spec.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of samples.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDataRun {
    pub spec: DatasetSpec,
    pub out: Option<PathBuf>,
}

pub fn resolve(args: &Args, seed: Option<u64>) -> Result<GenDataRun> {
    let mut run: GenDataRun = load_or_default(args.config.as_deref())?;
    if let Some(p) = &args.spec {
        run.spec = load_json(p)?;
    }
    if let Some(o) = &args.out {
        run.out = Some(o.clone());
    }
    if let Some(n) = args.size {
        run.spec.size = n;
    }
    if let Some(s) = seed {
        run.spec.seed = s;
    }
    run.spec.validate()?;
    Ok(run)
}

pub fn run(args: Args, seed: Option<u64>) -> Result<()> {
    let run = resolve(&args, seed)?;
    let out = required(&run.out, "out")?;
    let t0 = Instant::now();
    let samples = generate(&run.spec)?;
    let index = write_dataset(out, &run.spec, &samples)?;
    write_snapshot(out, &run)?;
    println!(
        "wrote {} samples in {} shards to {} ({:.1} s)",
        index.num_samples,
        index.shards.len(),
        out.display(),
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
