//! The desk-scale training runs, cached by configuration hash.
//!
//! Every run goes through the `parelab` binary. A run directory is reused when
//! its log already reaches the planned step count, and an interrupted run is
//! resumed, so repeated invocations only pay for missing work.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use parelab_core::data::DatasetSpec;
use parelab_core::net::{Architecture, NetConfig, SupervisionMode};
use parelab_core::train::{read_log, EvalReport, LogEntry, TrainConfig, CHECKPOINT_FILE, LOG_FILE};
use serde_json::json;
use sha2::{Digest, Sha256};

pub const SEEDS: [u64; 3] = [0, 1, 2];
pub const TEST_SIZE: usize = 500;
pub const TEST_SEED: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Part attention with mixed supervision.
    Mixed,
    /// Part attention supervised throughout.
    Parts,
    /// Part attention never supervised.
    Unsupervised,
    /// Global average pooling regressor.
    Gap,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Mixed, Variant::Gap, Variant::Parts, Variant::Unsupervised];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mixed => "pare_mixed",
            Variant::Parts => "pare_parts",
            Variant::Unsupervised => "pare_none",
            Variant::Gap => "gap",
        }
    }

    pub fn net_config(self) -> NetConfig {
        let base = NetConfig::default();
        match self {
            Variant::Mixed => base,
            Variant::Parts => NetConfig { supervision_mode: SupervisionMode::Parts, ..base },
            Variant::Unsupervised => NetConfig { supervision_mode: SupervisionMode::None, ..base },
            Variant::Gap => NetConfig { architecture: Architecture::Gap, ..base },
        }
    }
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_parelab")
}

/// Runs `parelab` with `args` in `cwd`, failing loudly on a nonzero exit.
pub fn parelab(cwd: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin()).current_dir(cwd).args(args).env_remove("PARELAB_THREADS").output().map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    if !out.status.success() {
        return Err(format!("parelab {} failed ({}): {}", args.join(" "), out.status, String::from_utf8_lossy(&out.stderr)));
    }
    Ok(stdout)
}

fn short_hash(value: &serde_json::Value) -> String {
    let digest = Sha256::digest(serde_json::to_vec(value).expect("json"));
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new() -> Self {
        let root = std::env::var_os("PARELAB_ACCEPTANCE_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
        fs::create_dir_all(&root).expect("acceptance directory");
        Self { root }
    }

    fn dataset(&self, name: &str, spec: &DatasetSpec) -> Result<PathBuf, String> {
        let dir = self.root.join(format!("data_{name}_{}", short_hash(&json!(spec))));
        if !dir.join("index.json").exists() {
            let spec_path = self.root.join(format!("spec_{name}.json"));
            fs::write(&spec_path, serde_json::to_string_pretty(spec).unwrap()).map_err(|e| e.to_string())?;
            parelab(&self.root, &["gen-data", "--spec", spec_path.to_str().unwrap(), "--out", dir.to_str().unwrap()])?;
        }
        Ok(dir)
    }

    pub fn train_data(&self) -> Result<PathBuf, String> {
        self.dataset("train", &DatasetSpec::default())
    }

    pub fn test_data(&self) -> Result<PathBuf, String> {
        self.dataset("test", &DatasetSpec::default().split(TEST_SIZE, TEST_SEED))
    }

    /// Trains (or reuses) one run; `steps` of 0 gives the initialization.
    pub fn run(&self, variant: Variant, seed: u64, steps: u64) -> Result<PathBuf, String> {
        let model = variant.net_config();
        let train = TrainConfig { seed, total_steps: steps, randcrop_start_step: TrainConfig::default().randcrop_start_step.min(steps), ..TrainConfig::default() };
        let cfg = json!({ "model": model, "train": train });
        let dir = self.root.join(format!("{}_s{seed}_n{steps}_{}", variant.name(), short_hash(&cfg)));
        if completed(&dir, steps) {
            return Ok(dir);
        }
        let data = self.train_data()?;
        let mut full = cfg.clone();
        full["data"] = json!(data);
        full["out"] = json!(dir);
        let cfg_path = self.root.join(format!("{}_s{seed}_n{steps}.json", variant.name()));
        fs::write(&cfg_path, serde_json::to_string_pretty(&full).unwrap()).map_err(|e| e.to_string())?;
        let mut args = vec!["train", "--config", cfg_path.to_str().unwrap(), "--print-every", "1000"];
        if dir.join(CHECKPOINT_FILE).exists() && dir.join(LOG_FILE).exists() {
            args.push("--resume");
        }
        let t0 = Instant::now();
        eprintln!("training {} seed {seed} for {steps} steps in {}", variant.name(), dir.display());
        parelab(&self.root, &args)?;
        eprintln!("  done in {:.0} s", t0.elapsed().as_secs_f64());
        Ok(dir)
    }

    /// Clean and occluded test metrics of a run, cached beside it.
    pub fn evaluate(&self, run: &Path) -> Result<EvalReport, String> {
        let out = run.join("eval_test");
        let report = out.join("eval.json");
        if !report.exists() {
            let test = self.test_data()?;
            let ckpt = run.join(CHECKPOINT_FILE);
            parelab(&self.root, &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", test.to_str().unwrap(), "--out", out.to_str().unwrap(), "--occluded"])?;
        }
        let text = fs::read_to_string(&report).map_err(|e| e.to_string())?;
        serde_json::from_str(&text).map_err(|e| e.to_string())
    }
}

/// The log reaches `steps` and the checkpoint exists.
fn completed(dir: &Path, steps: u64) -> bool {
    if !dir.join(CHECKPOINT_FILE).exists() {
        return false;
    }
    let Ok(entries) = read_log(dir.join(LOG_FILE)) else { return false };
    let last = entries.iter().filter_map(|e| if let LogEntry::Step(r) = e { Some(r.step) } else { None }).max().unwrap_or(0);
    last == steps
}
