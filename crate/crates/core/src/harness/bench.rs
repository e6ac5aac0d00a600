//! Paired with/without side-information comparisons over a seed list.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::layer::train_binding;
use crate::harness::task::{gen_confusion_task, run_retrieval, TaskParams};
use crate::io::{ser_f64, ser_f64_rows};
use crate::rng::RNG_ALGORITHM;
use crate::rope::RotaryConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub enabled: bool,
    pub rho: f64,
    pub steps: usize,
    pub lr: f64,
    /// Training runs on the first `num_seeds` of the sorted seed list.
    pub num_seeds: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { enabled: true, rho: 0.98, steps: 60, lr: 0.5, num_seeds: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub rotary: RotaryConfig,
    pub task: TaskParams,
    /// Reference similarities swept by the training-free retrieval check.
    pub rhos: Vec<f64>,
    pub seeds: Vec<u64>,
    pub train: TrainParams,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            rotary: RotaryConfig::default(),
            task: TaskParams::default(),
            rhos: vec![0.0, 0.5, 0.9, 0.95, 0.99, 1.0],
            seeds: (0..100).collect(),
            train: TrainParams::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.rotary.validate()?;
        self.task.validate()?;
        if self.rotary.num_refs != self.task.num_refs {
            return Err(Error::Config(format!(
                "rotary.num_refs = {} but task.num_refs = {}",
                self.rotary.num_refs, self.task.num_refs
            )));
        }
        if !self.rotary.has_side_axis() {
            return Err(Error::Config("the benchmark needs a side axis (realloc tlow or thigh)".into()));
        }
        if self.rotary.head_dim > self.task.feature_dim {
            return Err(Error::Config("head_dim must not exceed feature_dim".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if let Some(r) = self.rhos.iter().chain([&self.train.rho]).find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("rho {r} outside [0, 1]")));
        }
        let t = &self.train;
        if t.enabled && (t.steps == 0 || t.num_seeds == 0 || !(t.lr > 0.0 && t.lr.is_finite())) {
            return Err(Error::Config("training needs steps >= 1, num_seeds >= 1 and lr > 0".into()));
        }
        Ok(())
    }

    /// Seeds in ascending order without duplicates.
    pub fn sorted_seeds(&self) -> Vec<u64> {
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalRow {
    pub seed: u64,
    #[serde(serialize_with = "ser_f64")]
    pub accuracy_with: f64,
    #[serde(serialize_with = "ser_f64")]
    pub accuracy_without: f64,
    pub diagonal_dominant_with: bool,
    #[serde(serialize_with = "ser_f64_rows")]
    pub attn_with: Vec<Vec<f64>>,
    #[serde(serialize_with = "ser_f64_rows")]
    pub attn_without: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalSummary {
    #[serde(serialize_with = "ser_f64")]
    pub mean_accuracy_with: f64,
    #[serde(serialize_with = "ser_f64")]
    pub mean_accuracy_without: f64,
    #[serde(serialize_with = "ser_f64")]
    pub max_accuracy_without: f64,
    pub seeds_with_perfect_accuracy: usize,
    pub seeds_diagonal_dominant_with: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalSweep {
    #[serde(serialize_with = "ser_f64")]
    pub rho: f64,
    pub per_seed: Vec<RetrievalRow>,
    pub summary: RetrievalSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainRow {
    pub seed: u64,
    #[serde(serialize_with = "ser_f64")]
    pub accuracy_with: f64,
    #[serde(serialize_with = "ser_f64")]
    pub accuracy_without: f64,
    #[serde(serialize_with = "ser_f64")]
    pub loss_with: f64,
    #[serde(serialize_with = "ser_f64")]
    pub loss_without: f64,
    #[serde(serialize_with = "ser_f64_rows")]
    pub attn_with: Vec<Vec<f64>>,
    #[serde(serialize_with = "ser_f64_rows")]
    pub attn_without: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    #[serde(serialize_with = "ser_f64")]
    pub mean_accuracy_with: f64,
    #[serde(serialize_with = "ser_f64")]
    pub mean_accuracy_without: f64,
    #[serde(serialize_with = "ser_f64")]
    pub min_accuracy_with: f64,
    /// Fraction of seeds where the side-aware run ends strictly more accurate.
    #[serde(serialize_with = "ser_f64")]
    pub strictly_better_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainComparison {
    #[serde(serialize_with = "ser_f64")]
    pub rho: f64,
    pub steps: usize,
    #[serde(serialize_with = "ser_f64")]
    pub lr: f64,
    pub per_seed: Vec<TrainRow>,
    pub summary: TrainSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub rng: &'static str,
    pub config: BenchConfig,
    pub seeds: Vec<u64>,
    pub retrieval: Vec<RetrievalSweep>,
    pub training: Option<TrainComparison>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n.max(1) as f64
}

pub fn retrieval_row(cfg: &BenchConfig, rho: f64, seed: u64) -> Result<RetrievalRow> {
    let params = TaskParams { rho, ..cfg.task.clone() };
    let task = gen_confusion_task(&params, seed)?;
    let with = run_retrieval(&task, &cfg.rotary, true)?;
    let without = run_retrieval(&task, &cfg.rotary, false)?;
    Ok(RetrievalRow {
        seed,
        accuracy_with: with.accuracy,
        accuracy_without: without.accuracy,
        diagonal_dominant_with: with.attn.is_diagonally_dominant(&task.bound),
        attn_with: with.attn.rows_vec(),
        attn_without: without.attn.rows_vec(),
    })
}

pub fn retrieval_sweep(cfg: &BenchConfig, rho: f64, seeds: &[u64]) -> Result<RetrievalSweep> {
    let per_seed: Vec<RetrievalRow> = seeds
        .par_iter()
        .map(|&s| retrieval_row(cfg, rho, s))
        .collect::<Result<_>>()?;
    let summary = RetrievalSummary {
        mean_accuracy_with: mean(per_seed.iter().map(|r| r.accuracy_with)),
        mean_accuracy_without: mean(per_seed.iter().map(|r| r.accuracy_without)),
        max_accuracy_without: per_seed.iter().map(|r| r.accuracy_without).fold(0.0, f64::max),
        seeds_with_perfect_accuracy: per_seed.iter().filter(|r| r.accuracy_with == 1.0).count(),
        seeds_diagonal_dominant_with: per_seed.iter().filter(|r| r.diagonal_dominant_with).count(),
    };
    Ok(RetrievalSweep { rho, per_seed, summary })
}

pub fn train_row(cfg: &BenchConfig, seed: u64) -> Result<TrainRow> {
    let t = &cfg.train;
    let params = TaskParams { rho: t.rho, ..cfg.task.clone() };
    let task = gen_confusion_task(&params, seed)?;
    let with = train_binding(&task, &cfg.rotary, true, t.steps, t.lr, seed)?;
    let without = train_binding(&task, &cfg.rotary, false, t.steps, t.lr, seed)?;
    Ok(TrainRow {
        seed,
        accuracy_with: with.final_accuracy,
        accuracy_without: without.final_accuracy,
        loss_with: with.final_loss,
        loss_without: without.final_loss,
        attn_with: with.final_attn,
        attn_without: without.final_attn,
    })
}

pub fn train_comparison(cfg: &BenchConfig, seeds: &[u64]) -> Result<TrainComparison> {
    let per_seed: Vec<TrainRow> = seeds.par_iter().map(|&s| train_row(cfg, s)).collect::<Result<_>>()?;
    let better = per_seed.iter().filter(|r| r.accuracy_with > r.accuracy_without).count();
    let summary = TrainSummary {
        mean_accuracy_with: mean(per_seed.iter().map(|r| r.accuracy_with)),
        mean_accuracy_without: mean(per_seed.iter().map(|r| r.accuracy_without)),
        min_accuracy_with: per_seed.iter().map(|r| r.accuracy_with).fold(1.0, f64::min),
        strictly_better_fraction: better as f64 / per_seed.len().max(1) as f64,
    };
    Ok(TrainComparison { rho: cfg.train.rho, steps: cfg.train.steps, lr: cfg.train.lr, per_seed, summary })
}

/// Runs every configured sweep. Seeds are processed in parallel and
/// reported in ascending order, so output does not depend on thread count.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let seeds = cfg.sorted_seeds();
    let retrieval = cfg
        .rhos
        .iter()
        .map(|&rho| retrieval_sweep(cfg, rho, &seeds))
        .collect::<Result<Vec<_>>>()?;
    let training = if cfg.train.enabled {
        let n = cfg.train.num_seeds.min(seeds.len());
        Some(train_comparison(cfg, &seeds[..n])?)
    } else {
        None
    };
    Ok(BenchReport {
        schema_version: crate::SCHEMA_VERSION,
        tool_version: crate::TOOL_VERSION,
        rng: RNG_ALGORITHM,
        config: cfg.clone(),
        seeds,
        retrieval,
        training,
    })
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One line per (section, rho, seed).
    pub fn to_csv(&self) -> String {
        use crate::io::fmt17;
        let mut out = String::from("section,rho,seed,accuracy_with,accuracy_without,loss_with,loss_without\n");
        for sweep in &self.retrieval {
            for r in &sweep.per_seed {
                out.push_str(&format!(
                    "retrieval,{},{},{},{},,\n",
                    fmt17(sweep.rho),
                    r.seed,
                    fmt17(r.accuracy_with),
                    fmt17(r.accuracy_without)
                ));
            }
        }
        if let Some(t) = &self.training {
            for r in &t.per_seed {
                out.push_str(&format!(
                    "training,{},{},{},{},{},{}\n",
                    fmt17(t.rho),
                    r.seed,
                    fmt17(r.accuracy_with),
                    fmt17(r.accuracy_without),
                    fmt17(r.loss_with),
                    fmt17(r.loss_without)
                ));
            }
        }
        out
    }
}
