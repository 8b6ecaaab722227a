use std::path::Path;

use anyhow::Result;
use parelab_core::data::{read_dataset, DatasetIndex};
use parelab_core::train::{read_log, LogEntry};
use parelab_numerics::Container;

use crate::config::load_json;

/// Prints a human-readable summary; writes nothing.
pub fn run(path: &Path) -> Result<()> {
    if path.is_dir() {
        let index: DatasetIndex = load_json(&path.join("index.json"))?;
        let data = read_dataset(path)?;
        let s = &data.spec;
        println!("dataset {}: {} samples in {} shards, all digests verified", path.display(), index.num_samples, index.shards.len());
        println!("  spec hash {}", index.spec_hash);
        println!("  seed {}, image {}px, labels {}px, {} joints", s.seed, s.image_size, s.label_size, s.num_joints);
        return Ok(());
    }
    if path.extension().is_some_and(|e| e == "jsonl") {
        let entries = read_log(path)?;
        let steps: Vec<_> = entries.iter().filter_map(|e| if let LogEntry::Step(r) = e { Some(r) } else { None }).collect();
        println!("run log {}: {} step records", path.display(), steps.len());
        if let Some(LogEntry::Start { config_hash, train_config, .. }) = entries.first() {
            println!("  config hash {config_hash}, {} steps planned", train_config.total_steps);
        }
        if let (Some(a), Some(b)) = (steps.first(), steps.last()) {
            println!("  loss {:.4} at step {} → {:.4} at step {}", a.total, a.step, b.total, b.step);
        }
        for e in &entries {
            if let LogEntry::Eval { step, report } = e {
                println!("  eval @{step}: {report}");
            }
        }
        return Ok(());
    }
    let c = Container::read(path)?;
    println!("container {}: config hash {}", path.display(), c.config_hash);
    for key in c.meta.keys() {
        println!("  meta {key}");
    }
    let mut total = 0;
    for name in c.names() {
        let a = c.get(name).expect("listed array");
        total += a.shape.iter().product::<usize>();
        println!("  {name} {:?}", a.shape);
    }
    println!("  {total} values");
    Ok(())
}
