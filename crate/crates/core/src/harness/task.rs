use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attention::self_attention;
use crate::diagnostics::{confusion_argmax, shot_to_ref_scores, ConfusionReport, ShotRefMatrix};
use crate::error::{arg_err, Error, Result};
use crate::layout::{assign_coords_with, build_layout, CoordPolicy, ReferenceTime, SequenceLayout, ShotSpec, TokenCoord};
use crate::matrix::{dot, DenseMatrix};
use crate::rng::{normal_vec, SeedStream};
use crate::rope::RotaryConfig;

/// Knobs for a synthetic reference-confusion task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    pub num_refs: usize,
    pub feature_dim: usize,
    /// Pairwise cosine similarity between reference features.
    pub rho: f64,
    pub shots_per_ref: usize,
    /// Shot token grid `[frames, height, width]`.
    pub shot_grid: [usize; 3],
    /// Reference token grid `[height, width]`.
    pub ref_grid: [usize; 2],
    /// Expected norm of the Gaussian perturbation added to shot tokens.
    pub noise: f64,
    /// Text tokens per shot caption.
    pub text_chunk_len: usize,
    /// Benchmark tasks put every reference at `t = -1` by default, so
    /// references differ only along the side axis.
    pub coord_policy: CoordPolicy,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            num_refs: 2,
            feature_dim: 64,
            rho: 0.95,
            shots_per_ref: 4,
            shot_grid: [2, 2, 2],
            ref_grid: [2, 2],
            noise: 0.05,
            text_chunk_len: 4,
            coord_policy: CoordPolicy { reference_time: ReferenceTime::SharedNegative, ..CoordPolicy::default() },
        }
    }
}

impl TaskParams {
    pub fn tokens_per_shot(&self) -> usize {
        self.shot_grid.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_refs < 2 {
            return bad(format!("need K >= 2 references, got {}", self.num_refs));
        }
        if self.feature_dim < self.num_refs + 1 {
            return bad(format!(
                "feature_dim {} cannot host {} orthonormal directions",
                self.feature_dim,
                self.num_refs + 1
            ));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        if self.shots_per_ref == 0 || self.tokens_per_shot() == 0 || self.ref_grid.contains(&0) {
            return bad("shot and reference grids must be non-empty".into());
        }
        if self.text_chunk_len == 0 {
            return bad("text_chunk_len must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthTask {
    pub params: TaskParams,
    pub seed: u64,
    /// One unit-norm row per reference.
    pub ref_features: DenseMatrix,
    /// Bound reference per shot, 1-based.
    pub bound: Vec<usize>,
    pub shots: Vec<ShotSpec>,
    /// Features for every visual token, references first.
    pub tokens: DenseMatrix,
    pub layout: SequenceLayout,
    pub coords: Vec<TokenCoord>,
}

impl SynthTask {
    pub fn num_refs(&self) -> usize {
        self.params.num_refs
    }

    /// Largest deviation of a pairwise reference cosine from `rho`.
    pub fn cosine_error(&self) -> f64 {
        let k = self.num_refs();
        let mut worst = 0.0f64;
        for a in 0..k {
            for b in a + 1..k {
                let c = dot(self.ref_features.row(a), self.ref_features.row(b));
                worst = worst.max((c - self.params.rho).abs());
            }
        }
        worst
    }
}

/// `count` orthonormal vectors of length `dim` via twice-applied
/// modified Gram-Schmidt on Gaussian draws.
pub(crate) fn orthonormal_rows(rng: &mut rand_chacha::ChaCha20Rng, count: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    if count > dim {
        return arg_err(format!("cannot fit {count} orthonormal vectors in {dim} dimensions"));
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = normal_vec(rng, dim);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= c * y;
                }
            }
        }
        let n = dot(&v, &v).sqrt();
        if n < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    Ok(basis)
}

/// Draws a task whose references have pairwise cosine exactly `rho`.
///
/// Reference `j` is `sqrt(rho) * u + sqrt(1 - rho) * e_j` for orthonormal
/// `u, e_1..e_K`; every token of reference `j` carries that feature. Shot
/// tokens copy their bound reference's feature plus Gaussian noise. Shots
/// are bound `shots_per_ref` times to each reference in a seeded shuffled
/// order, and each shot caption mentions only its bound reference.
pub fn gen_confusion_task(params: &TaskParams, seed: u64) -> Result<SynthTask> {
    params.validate()?;
    let stream = SeedStream::new(seed);
    let (k, f) = (params.num_refs, params.feature_dim);

    let basis = orthonormal_rows(&mut stream.substream("refs"), k + 1, f)?;
    let (shared, own) = (params.rho.sqrt(), (1.0 - params.rho).sqrt());
    let ref_rows: Vec<Vec<f64>> = (0..k)
        .map(|j| basis[0].iter().zip(&basis[j + 1]).map(|(u, e)| shared * u + own * e).collect())
        .collect();

    let mut bound: Vec<usize> = (1..=k).flat_map(|j| std::iter::repeat_n(j, params.shots_per_ref)).collect();
    bound.shuffle(&mut stream.substream("binding"));

    let [frames, h, w] = params.shot_grid;
    let shots = bound
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            ShotSpec::new(
                i + 1,
                (frames, h, w),
                format!("shot {}: @character_{j} in frame", i + 1),
                k,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let ref_tokens = params.ref_grid[0] * params.ref_grid[1];
    let layout = build_layout(&vec![ref_tokens; k], &shots, params.text_chunk_len)?;
    let grids = vec![(params.ref_grid[0], params.ref_grid[1]); k];
    let coords = assign_coords_with(&layout, &shots, &grids, params.coord_policy)?;

    let mut noise_rng = stream.substream("noise");
    let per_entry = params.noise / (f as f64).sqrt();
    let mut data = Vec::with_capacity(layout.len_visual * f);
    for row in &ref_rows {
        for _ in 0..ref_tokens {
            data.extend_from_slice(row);
        }
    }
    for &j in &bound {
        for _ in 0..params.tokens_per_shot() {
            let n = normal_vec(&mut noise_rng, f);
            data.extend(ref_rows[j - 1].iter().zip(n).map(|(x, e)| x + per_entry * e));
        }
    }
    Ok(SynthTask {
        params: params.clone(),
        seed,
        ref_features: DenseMatrix::from_rows(&ref_rows)?,
        bound,
        shots,
        tokens: DenseMatrix::new(layout.len_visual, f, data)?,
        layout,
        coords,
    })
}

/// Fixed `F x D` projection with orthonormal columns, drawn from the
/// task seed's `projection` stream.
pub fn fixed_projection(task: &SynthTask, head_dim: usize) -> Result<DenseMatrix> {
    let f = task.params.feature_dim;
    if head_dim > f {
        return arg_err(format!("head_dim {head_dim} exceeds feature_dim {f}"));
    }
    let cols = orthonormal_rows(&mut SeedStream::new(task.seed).substream("projection"), head_dim, f)?;
    Ok(DenseMatrix::from_rows(&cols)?.transpose())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult {
    pub accuracy: f64,
    pub attn: ShotRefMatrix,
    pub confusion: ConfusionReport,
}

/// Training-free routing check: one projection serves as Q, K and V,
/// and each shot is assigned the reference it attends to most.
pub fn run_retrieval(task: &SynthTask, cfg: &RotaryConfig, use_sideinfo: bool) -> Result<RetrievalResult> {
    if cfg.num_refs != task.num_refs() {
        return arg_err(format!(
            "config has K = {} but the task has {} references",
            cfg.num_refs,
            task.num_refs()
        ));
    }
    let cfg = if use_sideinfo { cfg.clone() } else { cfg.without_sideinfo() };
    let x = task.tokens.matmul(&fixed_projection(task, cfg.head_dim)?)?;
    let out = self_attention(&x, &x, &x, &task.coords, &cfg, None)?;
    let attn = shot_to_ref_scores(&out.probs, &task.layout)?;
    let confusion = confusion_argmax(&attn, &task.bound)?;
    Ok(RetrievalResult { accuracy: confusion.accuracy, attn, confusion })
}
