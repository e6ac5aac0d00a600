use std::path::Path;

use poco_core::attention::hierarchical_mask;
use poco_core::diagnostics::{AGGREGATION_NOTE, NORMALIZATION};
use poco_core::harness::bench::{RetrievalSweep, TrainComparison};
use poco_core::harness::gradcheck::FD_TOLERANCE;
use poco_core::harness::{
    gen_confusion_task, grad_check_draw, run_bench, run_retrieval, GradCheckDraw, RetrievalResult, TaskParams,
};
use poco_core::io::{sig17_vec, Sig17};
use poco_core::layout::LayoutManifest;
use poco_core::Result;
use rayon::prelude::*;
use serde::Serialize;

use crate::check::{run_suite, CheckRow};
use crate::config::RunConfig;
use crate::output::{csv_preamble, Envelope, Run};

/// What a command reports back to `main`.
pub enum Status {
    Ok,
    Failed,
}

fn status(ok: bool) -> Status {
    if ok {
        Status::Ok
    } else {
        Status::Failed
    }
}

pub fn check(cfg: &RunConfig, json: bool) -> Result<Status> {
    let rows = run_suite(&cfg.rotary, cfg.check.draws, cfg.check.seed)?;
    let ok = rows.iter().all(|r| r.passed);
    if json {
        print!("{}", Envelope::new("check", cfg, &[cfg.check.seed], &rows).to_json()?);
    } else {
        println!("{:<26} {:>6} {:>12} {:>10}  result", "invariant", "draws", "max error", "tolerance");
        for CheckRow { name, draws, max_error, tolerance, passed } in &rows {
            let verdict = if *passed { "PASS" } else { "FAIL" };
            println!("{name:<26} {draws:>6} {max_error:>12.3e} {tolerance:>10.0e}  {verdict}");
        }
    }
    Ok(status(ok))
}

#[derive(Serialize)]
struct BenchResult<'a> {
    retrieval: &'a [RetrievalSweep],
    training: &'a Option<TrainComparison>,
}

pub fn confusion_bench(cfg: &RunConfig, json: bool) -> Result<Status> {
    let mut run = Run::new("confusion-bench", &cfg.out_dir);
    let report = run_bench(&cfg.bench())?;
    let result = BenchResult { retrieval: &report.retrieval, training: &report.training };
    let text = Envelope::new("confusion-bench", cfg, &report.seeds, result).to_json()?;
    let json_path = run.write("confusion_bench.json", &text)?;
    let csv = csv_preamble("confusion-bench", cfg, &report.seeds)? + &report.to_csv();
    let csv_path = run.write("confusion_bench.csv", &csv)?;
    run.finish()?;
    if json {
        print!("{text}");
    } else {
        println!("{:>6} {:>10} {:>10} {:>9}", "rho", "acc with", "acc w/o", "perfect");
        for sweep in &report.retrieval {
            let s = &sweep.summary;
            println!(
                "{:>6} {:>10.4} {:>10.4} {:>5}/{}",
                sweep.rho,
                s.mean_accuracy_with,
                s.mean_accuracy_without,
                s.seeds_with_perfect_accuracy,
                sweep.per_seed.len()
            );
        }
        if let Some(t) = &report.training {
            let s = &t.summary;
            println!(
                "training rho={} steps={} lr={}: with {:.4}, without {:.4}, strictly better on {:.0}% of seeds",
                t.rho,
                t.steps,
                t.lr,
                s.mean_accuracy_with,
                s.mean_accuracy_without,
                100.0 * s.strictly_better_fraction
            );
        }
        println!("wrote {} and {}", json_path.display(), csv_path.display());
    }
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct GradResult<'a> {
    #[serde(serialize_with = "poco_core::io::ser_f64")]
    tolerance: f64,
    #[serde(serialize_with = "poco_core::io::ser_f64")]
    worst_rel_error: f64,
    worst_seed: u64,
    failing_seeds: Vec<u64>,
    draws: Vec<DrawOut<'a>>,
}

#[derive(Serialize)]
struct DrawOut<'a> {
    seed: u64,
    max_rel_error: Sig17,
    worst: &'a (String, usize, usize),
    passed: bool,
}

/// Draw seeds come from `--seed` when given, else `0..grad_check.draws`.
pub fn grad_check(cfg: &RunConfig, seeds_from_flags: bool, json: bool) -> Result<Status> {
    let mut run = Run::new("grad-check", &cfg.out_dir);
    let seeds: Vec<u64> = if seeds_from_flags { cfg.seeds.clone() } else { (0..cfg.grad_check.draws).collect() };
    let draws: Vec<GradCheckDraw> = seeds.par_iter().map(|&s| grad_check_draw(s)).collect::<Result<_>>()?;
    let worst = draws.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).expect("at least one draw");
    let result = GradResult {
        tolerance: FD_TOLERANCE,
        worst_rel_error: worst.max_rel_error,
        worst_seed: worst.seed,
        failing_seeds: draws.iter().filter(|d| !d.passed).map(|d| d.seed).collect(),
        draws: draws
            .iter()
            .map(|d| DrawOut { seed: d.seed, max_rel_error: Sig17(d.max_rel_error), worst: &d.worst, passed: d.passed })
            .collect(),
    };
    let ok = worst.max_rel_error < FD_TOLERANCE;
    let text = Envelope::new("grad-check", cfg, &seeds, &result).to_json()?;
    let path = run.write("grad_check.json", &text)?;
    run.finish()?;
    if json {
        print!("{text}");
    } else {
        println!(
            "{} draws, worst relative error {:.3e} (seed {}), tolerance {:e}, failing seeds {:?}",
            draws.len(),
            worst.max_rel_error,
            worst.seed,
            FD_TOLERANCE,
            result.failing_seeds
        );
        println!("wrote {}", path.display());
    }
    Ok(status(ok))
}

pub fn mask_dump(cfg: &RunConfig, manifest_path: &Path, json: bool) -> Result<Status> {
    let manifest = LayoutManifest::load(manifest_path)?;
    let built = manifest.build_with(cfg.task.coord_policy)?;
    let layout = &built.layout;
    let mask = hierarchical_mask(layout)?;
    let owner = |i: usize| match (layout.ref_of(i), layout.shot_of(i)) {
        (Some(r), _) => format!("ref_{}", r + 1),
        (_, Some(s)) => format!("shot_{}", built.shots[s].shot_id),
        _ => unreachable!("layout covers every visual token"),
    };
    let preamble = csv_preamble("mask-dump", cfg, &[])?
        + &format!("# manifest: {}\n", serde_json::to_string(&manifest)?);

    let mut mask_csv = preamble.clone() + "row,owner";
    for c in 0..mask.cols() {
        mask_csv.push_str(&format!(",txt_{c}"));
    }
    mask_csv.push('\n');
    for (r, bits) in mask.to_bit_rows().iter().enumerate() {
        let cells: Vec<String> = bits.chars().map(String::from).collect();
        mask_csv.push_str(&format!("{r},{},{}\n", owner(r), cells.join(",")));
    }

    let mut coords_csv = preamble + "token,owner,t,h,w,side\n";
    for (i, c) in built.coords.iter().enumerate() {
        coords_csv.push_str(&format!("{i},{},{},{},{},{}\n", owner(i), c.t, c.h, c.w, c.side));
    }

    let mut run = Run::new("mask-dump", &cfg.out_dir);
    let mask_path = run.write("mask.csv", &mask_csv)?;
    let coords_path = run.write("coords.csv", &coords_csv)?;
    run.finish()?;
    if json {
        let rows = mask.to_bit_rows();
        print!("{}", Envelope::new("mask-dump", cfg, &[], &rows).to_json()?);
    } else {
        println!("{}x{} mask for {} shots", mask.rows(), mask.cols(), layout.num_shots());
        println!("wrote {} and {}", mask_path.display(), coords_path.display());
    }
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct Routing<'a> {
    accuracy: Sig17,
    predictions: &'a [usize],
    confused: &'a [usize],
    values: Vec<Vec<Sig17>>,
}

#[derive(Serialize)]
struct HeatmapResult<'a> {
    seed: u64,
    rho: Sig17,
    bound: &'a [usize],
    normalization: &'static str,
    aggregation: &'static str,
    with_sideinfo: Routing<'a>,
    without_sideinfo: Routing<'a>,
}

fn routing(r: &RetrievalResult) -> Routing<'_> {
    Routing {
        accuracy: Sig17(r.accuracy),
        predictions: &r.confusion.predictions,
        confused: &r.confusion.confused,
        values: r.attn.rows_vec().iter().map(|row| sig17_vec(row)).collect(),
    }
}

/// One fixture end to end: the shot-to-reference matrices with and
/// without the side axis, for the first configured seed.
pub fn heatmap(cfg: &RunConfig, json: bool) -> Result<Status> {
    let seed = *cfg.seeds.first().expect("validated seed list");
    let rho = cfg.heatmap.rho.unwrap_or(cfg.task.rho);
    let task = gen_confusion_task(&TaskParams { rho, ..cfg.task.clone() }, seed)?;
    let with = run_retrieval(&task, &cfg.rotary, true)?;
    let without = run_retrieval(&task, &cfg.rotary, false)?;
    let result = HeatmapResult {
        seed,
        rho: Sig17(rho),
        bound: &task.bound,
        normalization: NORMALIZATION,
        aggregation: AGGREGATION_NOTE,
        with_sideinfo: routing(&with),
        without_sideinfo: routing(&without),
    };
    let seeds = [seed];
    let text = Envelope::new("heatmap", cfg, &seeds, &result).to_json()?;
    let preamble = csv_preamble("heatmap", cfg, &seeds)?;
    let mut run = Run::new("heatmap", &cfg.out_dir);
    let json_path = run.write("heatmap.json", &text)?;
    run.write("heatmap_with.csv", &(preamble.clone() + &with.attn.to_csv()))?;
    run.write("heatmap_without.csv", &(preamble + &without.attn.to_csv()))?;
    run.finish()?;
    if json {
        print!("{text}");
    } else {
        println!("seed {seed}, rho {rho}: bound references {:?}", task.bound);
        for (label, r) in [("with side info", &with), ("without side info", &without)] {
            println!("{label}: accuracy {:.4}", r.accuracy);
            for (i, row) in r.attn.rows_vec().iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
                println!("  shot {}: {}", i + 1, cells.join("  "));
            }
        }
        println!("wrote {}", json_path.display());
    }
    Ok(Status::Ok)
}
