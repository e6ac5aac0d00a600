//! Central finite-difference check of the layer gradients.

use serde::Serialize;

use crate::error::Result;
use crate::harness::layer::{layer_backward, layer_forward_with, ToyAttnLayer};
use crate::harness::task::{gen_confusion_task, TaskParams};
use crate::matrix::DenseMatrix;
use crate::rng::{normal_vec, SeedStream};
use crate::rope::{build_plane_schedule, Realloc, RotaryConfig};

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-6;

/// `|a - n| / max(1, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1.0)
}

/// Small problem used for every draw: D = 12 (T 2, S 4, H 4, W 2), K = 2,
/// F = 8, two one-token references and two 2-frame shots.
pub fn grad_check_setup() -> (TaskParams, RotaryConfig) {
    let params = TaskParams {
        num_refs: 2,
        feature_dim: 8,
        rho: 0.9,
        shots_per_ref: 1,
        shot_grid: [2, 1, 1],
        ref_grid: [1, 1],
        noise: 0.3,
        text_chunk_len: 1,
        coord_policy: TaskParams::default().coord_policy,
    };
    let cfg = RotaryConfig::reallocated(12, 10_000.0, (6, 4, 2), 2, Realloc::TLow).expect("static config");
    (params, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckDraw {
    pub seed: u64,
    pub max_rel_error: f64,
    /// `(matrix, row, col)` of the worst entry.
    pub worst: (String, usize, usize),
    pub passed: bool,
}

/// One draw: random task, random weights (std 1), full finite-difference
/// sweep over `W_q`, `W_k` and `W_v`.
pub fn grad_check_draw(seed: u64) -> Result<GradCheckDraw> {
    let (params, cfg) = grad_check_setup();
    let task = gen_confusion_task(&params, seed)?;
    let schedule = build_plane_schedule(&cfg)?;
    let stream = SeedStream::new(seed);
    let (f, d) = (params.feature_dim, cfg.head_dim);
    let draw = |label: &str| DenseMatrix::new(f, d, normal_vec(&mut stream.substream(label), f * d));
    let layer = ToyAttnLayer { wq: draw("gradcheck/wq")?, wk: draw("gradcheck/wk")?, wv: draw("gradcheck/wv")? };

    let (_, cache) = layer_forward_with(&layer, &task, &schedule)?;
    let grads = layer_backward(&layer, &cache)?;

    let mut worst = (0.0f64, (String::new(), 0, 0));
    for (name, analytic) in [("wq", &grads.wq), ("wk", &grads.wk), ("wv", &grads.wv)] {
        for r in 0..f {
            for c in 0..d {
                let probe = |delta: f64| -> Result<f64> {
                    let mut l = layer.clone();
                    let m = match name {
                        "wq" => &mut l.wq,
                        "wk" => &mut l.wk,
                        _ => &mut l.wv,
                    };
                    m.set(r, c, m.get(r, c) + delta);
                    Ok(layer_forward_with(&l, &task, &schedule)?.0)
                };
                let numeric = (probe(FD_EPS)? - probe(-FD_EPS)?) / (2.0 * FD_EPS);
                let err = relative_error(analytic.get(r, c), numeric);
                if err > worst.0 || worst.1 .0.is_empty() {
                    worst = (err, (name.to_string(), r, c));
                }
            }
        }
    }
    Ok(GradCheckDraw { seed, max_rel_error: worst.0, worst: worst.1, passed: worst.0 < FD_TOLERANCE })
}
