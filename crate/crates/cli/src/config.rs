use std::path::{Path, PathBuf};

use poco_core::harness::bench::{BenchConfig, TrainParams};
use poco_core::harness::TaskParams;
use poco_core::io::read_text;
use poco_core::rope::RotaryConfig;
use poco_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckOptions {
    /// Random draws per invariant.
    pub draws: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { draws: 1000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckOptions {
    /// Draw seeds are `0..draws` unless seeds are given on the command line.
    pub draws: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { draws: 200 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapOptions {
    /// Falls back to `task.rho`.
    pub rho: Option<f64>,
}

/// Everything a command reads. Loaded from one JSON document; absent
/// fields take their defaults, and command-line flags override the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rotary: RotaryConfig,
    pub task: TaskParams,
    pub rhos: Vec<f64>,
    pub seeds: Vec<u64>,
    pub train: TrainParams,
    /// Not echoed into artifacts, so identical runs in different
    /// directories produce identical bytes.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub check: CheckOptions,
    pub grad_check: GradCheckOptions,
    pub heatmap: HeatmapOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        let b = BenchConfig::default();
        Self {
            rotary: b.rotary,
            task: b.task,
            rhos: b.rhos,
            seeds: b.seeds,
            train: b.train,
            out_dir: PathBuf::from("poco-out"),
            check: CheckOptions::default(),
            grad_check: GradCheckOptions::default(),
            heatmap: HeatmapOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = read_text(p)?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// `--seed` replaces the seed list and `--out` the output directory.
    pub fn with_overrides(mut self, seeds: &[u64], out: Option<&Path>) -> Self {
        if !seeds.is_empty() {
            self.seeds = seeds.to_vec();
        }
        if let Some(o) = out {
            self.out_dir = o.to_path_buf();
        }
        self
    }

    pub fn bench(&self) -> BenchConfig {
        BenchConfig {
            rotary: self.rotary.clone(),
            task: self.task.clone(),
            rhos: self.rhos.clone(),
            seeds: self.seeds.clone(),
            train: self.train.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bench().validate()?;
        if self.check.draws == 0 || self.grad_check.draws == 0 {
            return Err(Error::Config("check.draws and grad_check.draws must be >= 1".into()));
        }
        if let Some(r) = self.heatmap.rho.filter(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config(format!("heatmap.rho {r} outside [0, 1]")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_documents_fill_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seeds": [4, 2], "task": {"rho": 0.5}}"#).unwrap();
        assert_eq!(c.seeds, vec![4, 2]);
        assert_eq!(c.task.rho, 0.5);
        assert_eq!(c.task.feature_dim, 64);
        assert_eq!(c.rotary, RotaryConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sedes": [1]}"#).is_err());
    }

    #[test]
    fn flags_override_file() {
        let c = RunConfig::default().with_overrides(&[9], Some(Path::new("x")));
        assert_eq!(c.seeds, vec![9]);
        assert_eq!(c.out_dir, PathBuf::from("x"));
        let c = RunConfig::default().with_overrides(&[], None);
        assert_eq!(c.seeds.len(), 100);
    }

    #[test]
    fn odd_head_dim_is_a_config_error() {
        let mut c = RunConfig::default();
        c.rotary.head_dim = 31;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
