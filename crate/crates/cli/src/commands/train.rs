use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use parelab_core::data::read_dataset;
use parelab_core::net::{Architecture, NetConfig, SamplingMode, SupervisionMode};
use parelab_core::train::{train, TrainConfig, TrainOptions};
use serde::{Deserialize, Serialize};

use super::required;
use crate::config::{load_json, load_or_default, write_snapshot};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Resolved-config JSON of a previous run; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// NetConfig JSON.
    #[arg(long)]
    model_cfg: Option<PathBuf>,
    /// TrainConfig JSON.
    #[arg(long)]
    train_cfg: Option<PathBuf>,
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for the checkpoint, log and config snapshot.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    architecture: Option<ArchArg>,
    #[arg(long, value_enum)]
    supervision: Option<SupervisionArg>,
    #[arg(long, value_enum)]
    sampling: Option<SamplingArg>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Step at which mixed supervision drops the part loss.
    #[arg(long)]
    switch_step: Option<u64>,
    #[arg(long)]
    randcrop_start: Option<u64>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Stop after this many completed steps, leaving a resumable checkpoint.
    #[arg(long)]
    stop_after: Option<u64>,
    /// Print progress every this many steps.
    #[arg(long, default_value_t = 100)]
    print_every: u64,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum ArchArg {
    Pare,
    Gap,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum SupervisionArg {
    Parts,
    Keypoints,
    None,
    Mixed,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum SamplingArg {
    Attention,
    Pooling,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRun {
    pub model: NetConfig,
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn resolve(args: &Args, seed: Option<u64>) -> Result<TrainRun> {
    let mut run: TrainRun = load_or_default(args.config.as_deref())?;
    if let Some(p) = &args.model_cfg {
        run.model = load_json(p)?;
    }
    if let Some(p) = &args.train_cfg {
        run.train = load_json(p)?;
    }
    if let Some(d) = &args.data {
        run.data = Some(d.clone());
    }
    if let Some(o) = &args.out {
        run.out = Some(o.clone());
    }
    let (m, t) = (&mut run.model, &mut run.train);
    if let Some(a) = args.architecture {
        m.architecture = match a {
            ArchArg::Pare => Architecture::Pare,
            ArchArg::Gap => Architecture::Gap,
        };
    }
    if let Some(s) = args.supervision {
        m.supervision_mode = match s {
            SupervisionArg::Parts => SupervisionMode::Parts,
            SupervisionArg::Keypoints => SupervisionMode::Keypoints,
            SupervisionArg::None => SupervisionMode::None,
            SupervisionArg::Mixed => SupervisionMode::Mixed,
        };
    }
    if let Some(s) = args.sampling {
        m.sampling_mode = match s {
            SamplingArg::Attention => SamplingMode::Attention,
            SamplingArg::Pooling => SamplingMode::Pooling,
        };
    }
    if let Some(n) = args.steps {
        t.total_steps = n;
    }
    if let Some(b) = args.batch_size {
        t.batch_size = b;
    }
    if let Some(lr) = args.lr {
        t.lr = lr;
    }
    if let Some(s) = args.switch_step {
        t.mixed_switch_step = Some(s);
    }
    if let Some(s) = args.randcrop_start {
        t.randcrop_start_step = s;
    }
    if let Some(s) = seed {
        t.seed = s;
    }
    m.validate()?;
    t.validate()?;
    Ok(run)
}

pub fn run(args: Args, seed: Option<u64>) -> Result<()> {
    let run = resolve(&args, seed)?;
    let data_dir = required(&run.data, "data")?;
    let out = required(&run.out, "out")?;
    let data = read_dataset(data_dir)?;
    write_snapshot(out, &run)?;
    let opts = TrainOptions { resume: args.resume, stop_after: args.stop_after };
    let every = args.print_every.max(1);
    let t0 = Instant::now();
    let total = run.train.total_steps;
    let outcome = train(&run.model, &run.train, &data, out, &opts, |r| {
        if r.step % every == 0 || r.step == total {
            println!("step {}/{total} loss {:.4} |g| {:.3} ({:.1} s)", r.step, r.total, r.grad_norm, t0.elapsed().as_secs_f64());
        }
    })?;
    println!("finished at step {} in {:.1} s; outputs in {}", outcome.steps, t0.elapsed().as_secs_f64(), out.display());
    Ok(())
}
