//! Brute-force calibration sweep behind the benchmark thresholds.
//!
//! ```text
//! cargo run --release -p poco-core --example calibrate -- crates/core/tests/data/calibration_sweep.json
//! ```

use poco_core::harness::bench::{retrieval_sweep, train_comparison, BenchConfig};
use poco_core::layout::{CoordPolicy, ReferenceTime, ShotTime};
use serde_json::{json, Value};

fn sweep(cfg: &BenchConfig, seeds: &[u64]) -> Value {
    let rows: Vec<Value> = cfg
        .rhos
        .iter()
        .map(|&rho| {
            let sw = retrieval_sweep(cfg, rho, seeds).expect("retrieval sweep");
            let failing: Vec<u64> =
                sw.per_seed.iter().filter(|r| r.accuracy_with < 1.0).map(|r| r.seed).collect();
            json!({
                "rho": rho,
                "summary": sw.summary,
                "seeds_failing_with": failing,
                "accuracy_without": sw.per_seed.iter().map(|r| r.accuracy_without).collect::<Vec<_>>(),
            })
        })
        .collect();
    Value::Array(rows)
}

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "calibration_sweep.json".into());
    let base = BenchConfig::default();
    let seeds = base.sorted_seeds();

    let policies = [
        ("shared_negative/continuous", ReferenceTime::SharedNegative, ShotTime::Continuous),
        ("negative/continuous", ReferenceTime::Negative, ShotTime::Continuous),
        ("shared_negative/reset_per_shot", ReferenceTime::SharedNegative, ShotTime::ResetPerShot),
    ];
    let mut retrieval = serde_json::Map::new();
    for (name, reference_time, shot_time) in policies {
        let mut cfg = base.clone();
        cfg.task.coord_policy = CoordPolicy { reference_time, shot_time };
        eprintln!("retrieval {name}");
        retrieval.insert(name.into(), sweep(&cfg, &seeds));
    }

    let mut training = Vec::new();
    for (steps, lr) in [(30, 0.5), (60, 0.5), (100, 1.0)] {
        let mut cfg = base.clone();
        cfg.train.steps = steps;
        cfg.train.lr = lr;
        let n = cfg.train.num_seeds;
        eprintln!("training steps={steps} lr={lr}");
        let c = train_comparison(&cfg, &seeds[..n]).expect("training comparison");
        training.push(json!({ "steps": steps, "lr": lr, "seeds": n, "summary": c.summary }));
    }

    let report = json!({
        "schema_version": poco_core::SCHEMA_VERSION,
        "tool_version": poco_core::TOOL_VERSION,
        "config": base,
        "retrieval": retrieval,
        "training": training,
        "frozen": {
            "t_base_mean_accuracy_without": 0.80,
            "train_min_accuracy_with": 0.95,
            "train_strictly_better_fraction": 0.90,
        },
    });
    let mut text = serde_json::to_string_pretty(&report).expect("serialize");
    text.push('\n');
    std::fs::write(&out, text).expect("write report");
    eprintln!("wrote {out}");
}
