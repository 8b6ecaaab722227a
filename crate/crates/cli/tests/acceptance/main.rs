//! Acceptance suite: every criterion runs at its stated tolerance and prints
//! one PASS or FAIL line. Training runs are cached under the acceptance
//! directory, so only the first invocation pays for them.
//!
//! `cargo test -p parelab-cli --test acceptance -- train-only` only trains;
//! numeric arguments such as `-- 1 4 10` select criteria.

mod desk;
mod determinism;
mod experiments;
mod gradients;
mod oracles;
mod probing;

use std::time::Instant;

use experiments::{Variant, Workspace};

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

fn report(selected: &[usize], id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    if !selected.is_empty() && !selected.contains(&id) {
        return true;
    }
    let t0 = Instant::now();
    let o = f();
    println!("{} {id:>2} {name}: {} [{:.0} s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, t0.elapsed().as_secs_f64());
    o.pass
}

fn failed(e: &str) -> Outcome {
    Outcome { pass: false, detail: format!("training runs unavailable: {e}") }
}

fn main() {
    let ws = Workspace::new();
    if std::env::args().any(|a| a == "train-only") {
        if let Err(e) = desk::Results::collect(&ws) {
            eprintln!("{e}");
            std::process::exit(1);
        }
        return;
    }

    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |ids: &[usize]| selected.is_empty() || ids.iter().any(|i| selected.contains(i));
    let mut ok = true;
    ok &= report(&selected, 1, "gradient check", gradients::criterion);
    ok &= report(&selected, 2, "attention fusion oracle", oracles::attention_oracle);
    ok &= report(&selected, 3, "body model invariants", oracles::body_model_suite);
    ok &= report(&selected, 4, "procrustes alignment", oracles::procrustes_suite);

    let results = if wanted(&[5, 6, 7, 8]) {
        eprintln!("training or loading the desk-scale runs in {}", ws.root.display());
        desk::Results::collect(&ws)
    } else {
        Err("not selected".into())
    };
    let with = |f: fn(&desk::Results) -> Outcome| match &results {
        Ok(r) => f(r),
        Err(e) => failed(e),
    };
    ok &= report(&selected, 5, "learning", || with(desk::learning));
    ok &= report(&selected, 6, "occlusion robustness", || with(desk::occlusion_robustness));
    ok &= report(&selected, 7, "supervision ordering", || with(desk::supervision_ordering));
    ok &= report(&selected, 8, "part segmentation", || with(desk::part_iou));
    ok &= report(&selected, 9, "occlusion sensitivity", || match (ws.run(Variant::Mixed, 0, desk::STEPS), ws.test_data()) {
        (Ok(run), Ok(test)) => probing::criterion(&run, &test),
        (Err(e), _) | (_, Err(e)) => failed(&e),
    });
    ok &= report(&selected, 10, "determinism", determinism::criterion);

    if !ok {
        std::process::exit(1);
    }
}
