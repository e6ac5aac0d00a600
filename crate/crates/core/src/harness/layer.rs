//! A single trainable attention head and its binding objective.
//!
//! Forward pass: project token features with `W_q` and `W_k`, rotate by
//! token coordinates, softmax the scaled scores, pool the probabilities
//! into a shot-by-reference matrix `A`, and take the cross-entropy of each
//! shot's row of `A` (renormalised over references) against the bound
//! reference. The loss only reads attention weights, so `W_v` receives a
//! zero gradient.

use serde::Serialize;

use crate::attention::{apply_positional_with, attention_scores, default_scale, softmax_rows};
use crate::diagnostics::{confusion_argmax, ShotRefMatrix};
use crate::error::{arg_err, Error, Result};
use crate::harness::task::SynthTask;
use crate::layout::TokenCoord;
use crate::matrix::DenseMatrix;
use crate::rng::{normal_vec, SeedStream};
use crate::rope::{build_plane_schedule, rotate_in_place, PlaneSchedule, RotaryConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ToyAttnLayer {
    pub wq: DenseMatrix,
    pub wk: DenseMatrix,
    pub wv: DenseMatrix,
}

impl ToyAttnLayer {
    /// Gaussian init with standard deviation `1 / sqrt(F)`.
    pub fn init(feature_dim: usize, head_dim: usize, seed: u64) -> Result<Self> {
        let stream = SeedStream::new(seed);
        let scale = 1.0 / (feature_dim as f64).sqrt();
        let draw = |label: &str| {
            let v = normal_vec(&mut stream.substream(label), feature_dim * head_dim);
            DenseMatrix::new(feature_dim, head_dim, v.into_iter().map(|x| x * scale).collect())
        };
        Ok(Self { wq: draw("layer/wq")?, wk: draw("layer/wk")?, wv: draw("layer/wv")? })
    }

    pub fn head_dim(&self) -> usize {
        self.wq.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub wq: DenseMatrix,
    pub wk: DenseMatrix,
    pub wv: DenseMatrix,
}

/// Intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    wq: DenseMatrix,
    wk: DenseMatrix,
    x: DenseMatrix,
    coords: Vec<TokenCoord>,
    schedule: PlaneSchedule,
    qr: DenseMatrix,
    kr: DenseMatrix,
    probs: DenseMatrix,
    pooled: ShotRefMatrix,
    shot_ranges: Vec<std::ops::Range<usize>>,
    ref_ranges: Vec<std::ops::Range<usize>>,
    bound: Vec<usize>,
    scale: f64,
}

impl ForwardCache {
    pub fn pooled(&self) -> &ShotRefMatrix {
        &self.pooled
    }

    pub fn probs(&self) -> &DenseMatrix {
        &self.probs
    }

    pub fn accuracy(&self) -> f64 {
        confusion_argmax(&self.pooled, &self.bound).map_or(0.0, |r| r.accuracy)
    }
}

fn check_finite(m: &DenseMatrix, location: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric { location: location.into() })
    }
}

/// Shot-to-reference pooled probabilities.
fn pool(probs: &DenseMatrix, shots: &[std::ops::Range<usize>], refs: &[std::ops::Range<usize>]) -> Result<ShotRefMatrix> {
    let mut values = Vec::with_capacity(shots.len() * refs.len());
    for s in shots {
        for r in refs {
            let mut acc = 0.0;
            for q in s.clone() {
                for k in r.clone() {
                    acc += probs.get(q, k);
                }
            }
            values.push(acc / (s.len() * r.len()) as f64);
        }
    }
    ShotRefMatrix::new(shots.len(), refs.len(), values)
}

/// Binding loss from pooled attention: mean over shots of
/// `-ln(A[i][b_i] / sum_j A[i][j])`.
pub fn binding_loss(pooled: &ShotRefMatrix, bound: &[usize]) -> f64 {
    let s = pooled.shots();
    let mut loss = 0.0;
    for (i, &b) in bound.iter().enumerate() {
        let row = pooled.row(i);
        let total: f64 = row.iter().sum();
        loss -= (row[b - 1] / total).ln();
    }
    loss / s as f64
}

pub fn layer_forward(layer: &ToyAttnLayer, task: &SynthTask, cfg: &RotaryConfig) -> Result<(f64, ForwardCache)> {
    let schedule = build_plane_schedule(cfg)?;
    layer_forward_with(layer, task, &schedule)
}

pub fn layer_forward_with(layer: &ToyAttnLayer, task: &SynthTask, schedule: &PlaneSchedule) -> Result<(f64, ForwardCache)> {
    let x = &task.tokens;
    if layer.wq.rows() != x.cols() || layer.wk.shape() != layer.wq.shape() || layer.wv.shape() != layer.wq.shape() {
        return arg_err(format!(
            "layer weights {:?} do not fit {}-dim features",
            layer.wq.shape(),
            x.cols()
        ));
    }
    if schedule.num_refs() != task.num_refs() {
        return arg_err("schedule and task disagree on K");
    }
    let q = x.matmul(&layer.wq)?;
    let k = x.matmul(&layer.wk)?;
    check_finite(&q, "query projection")?;
    check_finite(&k, "key projection")?;
    let qr = apply_positional_with(&q, &task.coords, schedule)?;
    let kr = apply_positional_with(&k, &task.coords, schedule)?;
    let scale = default_scale(layer.head_dim());
    let scores = attention_scores(&qr, &kr, scale)?;
    check_finite(&scores, "attention scores")?;
    let probs = softmax_rows(&scores);
    check_finite(&probs, "softmax")?;
    let pooled = pool(&probs, &task.layout.shot_ranges, &task.layout.ref_ranges)?;
    let loss = binding_loss(&pooled, &task.bound);
    if !loss.is_finite() {
        return Err(Error::Numeric { location: "binding loss".into() });
    }
    let cache = ForwardCache {
        wq: layer.wq.clone(),
        wk: layer.wk.clone(),
        x: x.clone(),
        coords: task.coords.clone(),
        schedule: schedule.clone(),
        qr,
        kr,
        probs,
        pooled,
        shot_ranges: task.layout.shot_ranges.clone(),
        ref_ranges: task.layout.ref_ranges.clone(),
        bound: task.bound.clone(),
        scale,
    };
    Ok((loss, cache))
}

/// Rotates each row back by its token's angles.
fn unrotate_rows(m: &mut DenseMatrix, coords: &[TokenCoord], schedule: &PlaneSchedule) -> Result<()> {
    for (r, coord) in coords.iter().enumerate() {
        let angles: Vec<f64> = schedule.angles(coord)?.into_iter().map(|a| -a).collect();
        rotate_in_place(m.row_mut(r), &angles)?;
    }
    Ok(())
}

pub fn layer_backward(layer: &ToyAttnLayer, cache: &ForwardCache) -> Result<Gradients> {
    if layer.wq != cache.wq || layer.wk != cache.wk {
        return arg_err("stale cache: layer weights changed since the forward pass");
    }
    let s = cache.pooled.shots();
    let n = cache.probs.rows();

    // d loss / d A
    let mut d_pooled = vec![0.0; s * cache.pooled.refs()];
    for (i, &b) in cache.bound.iter().enumerate() {
        let row = cache.pooled.row(i);
        let total: f64 = row.iter().sum();
        for (j, slot) in d_pooled[i * row.len()..(i + 1) * row.len()].iter_mut().enumerate() {
            let own = if j + 1 == b { 1.0 / row[j] } else { 0.0 };
            *slot = -(own - 1.0 / total) / s as f64;
        }
    }

    // d loss / d P, then through the row softmax.
    let mut d_probs = DenseMatrix::zeros(n, n);
    let refs = cache.pooled.refs();
    for (i, shot) in cache.shot_ranges.iter().enumerate() {
        for (j, reference) in cache.ref_ranges.iter().enumerate() {
            let g = d_pooled[i * refs + j] / (shot.len() * reference.len()) as f64;
            for q in shot.clone() {
                for k in reference.clone() {
                    d_probs.set(q, k, g);
                }
            }
        }
    }
    let mut d_scores = DenseMatrix::zeros(n, n);
    for r in 0..n {
        let p = cache.probs.row(r);
        let dp = d_probs.row(r);
        let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for (slot, (pv, dv)) in d_scores.row_mut(r).iter_mut().zip(p.iter().zip(dp)) {
            *slot = pv * (dv - inner);
        }
    }

    let mut d_q = d_scores.matmul(&cache.kr)?.scale(cache.scale);
    let mut d_k = d_scores.t_matmul(&cache.qr)?.scale(cache.scale);
    unrotate_rows(&mut d_q, &cache.coords, &cache.schedule)?;
    unrotate_rows(&mut d_k, &cache.coords, &cache.schedule)?;

    let grads = Gradients {
        wq: cache.x.t_matmul(&d_q)?,
        wk: cache.x.t_matmul(&d_k)?,
        wv: DenseMatrix::zeros(layer.wv.rows(), layer.wv.cols()),
    };
    check_finite(&grads.wq, "W_q gradient")?;
    check_finite(&grads.wk, "W_k gradient")?;
    Ok(grads)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub seed: u64,
    pub task_seed: u64,
    pub use_sideinfo: bool,
    pub config: RotaryConfig,
    pub steps: usize,
    pub lr: f64,
    /// Loss before each update.
    pub loss: Vec<f64>,
    /// Binding accuracy before each update.
    pub accuracy: Vec<f64>,
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub final_attn: Vec<Vec<f64>>,
}

/// Plain gradient descent on the binding loss from a seeded init.
pub fn train_binding(
    task: &SynthTask,
    cfg: &RotaryConfig,
    use_sideinfo: bool,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainReport> {
    if steps == 0 {
        return arg_err("training needs at least one step");
    }
    if !(lr.is_finite() && lr >= 0.0) {
        return arg_err(format!("learning rate must be finite and >= 0, got {lr}"));
    }
    if cfg.num_refs != task.num_refs() {
        return arg_err("config and task disagree on K");
    }
    let cfg = if use_sideinfo { cfg.clone() } else { cfg.without_sideinfo() };
    let schedule = build_plane_schedule(&cfg)?;
    let mut layer = ToyAttnLayer::init(task.params.feature_dim, cfg.head_dim, seed)?;
    let mut loss = Vec::with_capacity(steps);
    let mut accuracy = Vec::with_capacity(steps);
    let diverged = |step: usize, e: Error| match e {
        Error::Numeric { .. } => Error::Diverged { step, loss: f64::NAN },
        other => other,
    };
    for step in 0..steps {
        let (l, cache) = layer_forward_with(&layer, task, &schedule).map_err(|e| diverged(step, e))?;
        loss.push(l);
        accuracy.push(cache.accuracy());
        let g = layer_backward(&layer, &cache).map_err(|e| diverged(step, e))?;
        if lr > 0.0 {
            layer.wq = layer.wq.sub(&g.wq.scale(lr))?;
            layer.wk = layer.wk.sub(&g.wk.scale(lr))?;
            layer.wv = layer.wv.sub(&g.wv.scale(lr))?;
        }
    }
    let (final_loss, cache) = layer_forward_with(&layer, task, &schedule).map_err(|e| diverged(steps, e))?;
    Ok(TrainReport {
        seed,
        task_seed: task.seed,
        use_sideinfo,
        config: cfg,
        steps,
        lr,
        loss,
        accuracy,
        final_loss,
        final_accuracy: cache.accuracy(),
        final_attn: cache.pooled.rows_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::task::{gen_confusion_task, TaskParams};

    #[test]
    fn uniform_attention_gives_ln2() {
        let m = ShotRefMatrix::from_rows(&[vec![0.1, 0.1], vec![0.3, 0.3]]).unwrap();
        assert!((binding_loss(&m, &[1, 2]) - std::f64::consts::LN_2).abs() < 1e-15);
        let perfect = ShotRefMatrix::from_rows(&[vec![1.0, 1e-300], vec![1e-300, 1.0]]).unwrap();
        assert!(binding_loss(&perfect, &[1, 2]) < 1e-290);
    }

    #[test]
    fn zero_weights_give_uniform_attention() {
        let task = gen_confusion_task(&TaskParams::default(), 1).unwrap();
        let layer = ToyAttnLayer {
            wq: DenseMatrix::zeros(64, 32),
            wk: DenseMatrix::zeros(64, 32),
            wv: DenseMatrix::zeros(64, 32),
        };
        let (loss, _) = layer_forward(&layer, &task, &RotaryConfig::default()).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let task = gen_confusion_task(&TaskParams::default(), 1).unwrap();
        let mut layer = ToyAttnLayer::init(64, 32, 9).unwrap();
        let (_, cache) = layer_forward(&layer, &task, &RotaryConfig::default()).unwrap();
        assert!(layer_backward(&layer, &cache).is_ok());
        layer.wq.set(0, 0, 5.0);
        assert!(layer_backward(&layer, &cache).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_loss_flat() {
        let task = gen_confusion_task(&TaskParams::default(), 2).unwrap();
        let r = train_binding(&task, &RotaryConfig::default(), true, 5, 0.0, 4).unwrap();
        assert!(r.loss.iter().all(|l| *l == r.loss[0]));
        assert_eq!(r.final_loss, r.loss[0]);
        assert!(train_binding(&task, &RotaryConfig::default(), true, 0, 0.1, 4).is_err());
    }
}
