//! The whole command pipeline, run twice in separate directories, must
//! produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::experiments::parelab;
use crate::Outcome;

const PIPELINE: &[&[&str]] = &[
    &["gen-data", "--out", "data", "--size", "24"],
    &["train", "--data", "data", "--out", "run", "--steps", "20", "--batch-size", "4", "--randcrop-start", "10", "--print-every", "10"],
    &["eval", "--checkpoint", "run/checkpoint.bin", "--dataset", "data", "--out", "eval", "--occluded"],
    &["probe", "--checkpoint", "run/checkpoint.bin", "--dataset", "data", "--out-dir", "probe", "--samples", "2", "--stride", "6", "--per-joint", "--mesh"],
    &["render-parts", "--out", "parts", "--indices", "0,1"],
    &["export-attention", "--checkpoint", "run/checkpoint.bin", "--dataset", "data", "--out", "attention", "--samples", "2"],
];

fn files(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

fn pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    for step in PIPELINE {
        let mut args = vec!["--threads", "1", "--seed", "7"];
        args.extend_from_slice(step);
        parelab(dir, &args)?;
    }
    files(dir)
}

pub fn criterion() -> Outcome {
    let run = || -> Result<Outcome, String> {
        let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
        let (fa, fb) = (pipeline(a.path())?, pipeline(b.path())?);
        let differing: Vec<&String> = fa.keys().chain(fb.keys()).filter(|k| fa.get(*k) != fb.get(*k)).collect();
        let bytes: usize = fa.values().map(Vec::len).sum();
        Ok(Outcome {
            pass: differing.is_empty() && !fa.is_empty(),
            detail: if differing.is_empty() {
                format!("{} commands, {} files ({bytes} bytes) identical across two runs", PIPELINE.len(), fa.len())
            } else {
                format!("{} of {} files differ, first {}", differing.len(), fa.len(), differing[0])
            },
        })
    };
    run().unwrap_or_else(|e| Outcome { pass: false, detail: e })
}
