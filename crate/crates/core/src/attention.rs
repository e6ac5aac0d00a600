//! Single-head attention with rotary-rotated queries and keys, and the
//! shot-aware cross-attention mask.

use std::path::Path;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::layout::{SequenceLayout, TokenCoord};
use crate::matrix::{dot, DenseMatrix};
use crate::rope::{build_plane_schedule, rotate_in_place, PlaneSchedule, RotaryConfig};

/// Binary attention mask, `true` meaning the key may be attended to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl AttentionMask {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return arg_err(format!("{rows}x{cols} mask needs {} bits, got {}", rows * cols, bits.len()));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn all_ones(rows: usize, cols: usize) -> Self {
        Self { rows, cols, bits: vec![true; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.bits[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_ones(&self, r: usize) -> usize {
        self.row(r).iter().filter(|b| **b).count()
    }

    /// Rows rendered as `1`/`0` strings.
    pub fn to_bit_rows(&self) -> Vec<String> {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|&b| if b { '1' } else { '0' }).collect())
            .collect()
    }
}

/// Rotates each row of `data` (row length `dim`) by its token's angles.
pub fn rotate_rows<T: Float>(
    data: &mut [T],
    dim: usize,
    coords: &[TokenCoord],
    schedule: &PlaneSchedule,
) -> Result<()> {
    if dim != schedule.head_dim() {
        return arg_err(format!("rows have {dim} channels, schedule covers {}", schedule.head_dim()));
    }
    if data.len() != coords.len() * dim {
        return arg_err(format!(
            "{} coordinates for {} rows",
            coords.len(),
            data.len() / dim.max(1)
        ));
    }
    for (row, coord) in data.chunks_exact_mut(dim).zip(coords) {
        let angles: Vec<T> = schedule
            .angles(coord)?
            .into_iter()
            .map(|a| T::from(a).expect("angle fits in float type"))
            .collect();
        rotate_in_place(row, &angles)?;
    }
    Ok(())
}

pub fn apply_positional_with(
    mat: &DenseMatrix,
    coords: &[TokenCoord],
    schedule: &PlaneSchedule,
) -> Result<DenseMatrix> {
    if coords.len() != mat.rows() {
        return arg_err(format!("{} coordinates for {} rows", coords.len(), mat.rows()));
    }
    let mut data = mat.data().to_vec();
    rotate_rows(&mut data, mat.cols(), coords, schedule)?;
    DenseMatrix::new(mat.rows(), mat.cols(), data)
}

/// Rotates row `n` of `mat` by the absolute `(t, s, h, w)` angles of `coords[n]`.
pub fn apply_positional(mat: &DenseMatrix, coords: &[TokenCoord], cfg: &RotaryConfig) -> Result<DenseMatrix> {
    apply_positional_with(mat, coords, &build_plane_schedule(cfg)?)
}

/// `S[m][n] = scale * <q_m, k_n>`.
pub fn attention_scores(qr: &DenseMatrix, kr: &DenseMatrix, scale: f64) -> Result<DenseMatrix> {
    if qr.cols() != kr.cols() {
        return arg_err(format!("query width {} != key width {}", qr.cols(), kr.cols()));
    }
    if !(scale.is_finite() && scale > 0.0) {
        return arg_err(format!("score scale must be positive, got {scale}"));
    }
    let mut out = DenseMatrix::zeros(qr.rows(), kr.rows());
    for m in 0..qr.rows() {
        let q = qr.row(m);
        for (n, slot) in out.row_mut(m).iter_mut().enumerate() {
            *slot = scale * dot(q, kr.row(n));
        }
    }
    Ok(out)
}

pub fn default_scale(dim: usize) -> f64 {
    1.0 / (dim as f64).sqrt()
}

fn softmax_masked_row(scores: &[f64], allowed: Option<&[bool]>, out: &mut [f64]) -> bool {
    let ok = |i: usize| allowed.is_none_or(|a| a[i]);
    let mut max = f64::NEG_INFINITY;
    for (i, &s) in scores.iter().enumerate() {
        if ok(i) && s > max {
            max = s;
        }
    }
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut total = 0.0;
    for (i, (&s, o)) in scores.iter().zip(out.iter_mut()).enumerate() {
        *o = if ok(i) { (s - max).exp() } else { 0.0 };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    true
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(s: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(s.rows(), s.cols());
    for r in 0..s.rows() {
        softmax_masked_row(s.row(r), None, out.row_mut(r));
    }
    out
}

/// Row-wise softmax over unmasked entries; masked entries get exactly 0.
pub fn masked_softmax_rows(s: &DenseMatrix, mask: &AttentionMask) -> Result<DenseMatrix> {
    if (mask.rows(), mask.cols()) != s.shape() {
        return arg_err(format!(
            "mask is {}x{} but scores are {}x{}",
            mask.rows(),
            mask.cols(),
            s.rows(),
            s.cols()
        ));
    }
    let mut out = DenseMatrix::zeros(s.rows(), s.cols());
    for r in 0..s.rows() {
        if !softmax_masked_row(s.row(r), Some(mask.row(r)), out.row_mut(r)) {
            return arg_err(format!("row {r} has no unmasked keys"));
        }
    }
    Ok(out)
}

/// `probs * V`, skipping zero-probability (masked) columns.
fn mix_values(probs: &DenseMatrix, mask: Option<&AttentionMask>, v: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(probs.rows(), v.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let o = out.row_mut(r);
        for (c, &pc) in p.iter().enumerate() {
            if mask.is_some_and(|m| !m.get(r, c)) {
                continue;
            }
            for (ov, vv) in o.iter_mut().zip(v.row(c)) {
                *ov += pc * vv;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub output: DenseMatrix,
    pub probs: DenseMatrix,
}

/// Self-attention over the visual sequence with rotated queries and keys.
pub fn self_attention(
    xq: &DenseMatrix,
    xk: &DenseMatrix,
    xv: &DenseMatrix,
    coords: &[TokenCoord],
    cfg: &RotaryConfig,
    mask: Option<&AttentionMask>,
) -> Result<AttentionOutput> {
    self_attention_with(xq, xk, xv, coords, &build_plane_schedule(cfg)?, mask)
}

pub fn self_attention_with(
    xq: &DenseMatrix,
    xk: &DenseMatrix,
    xv: &DenseMatrix,
    coords: &[TokenCoord],
    schedule: &PlaneSchedule,
    mask: Option<&AttentionMask>,
) -> Result<AttentionOutput> {
    let n = xq.rows();
    if xk.rows() != n || xv.rows() != n {
        return arg_err(format!(
            "Q/K/V row counts differ: {}, {}, {}",
            n,
            xk.rows(),
            xv.rows()
        ));
    }
    let qr = apply_positional_with(xq, coords, schedule)?;
    let kr = apply_positional_with(xk, coords, schedule)?;
    let scores = attention_scores(&qr, &kr, default_scale(xq.cols()))?;
    let probs = match mask {
        Some(m) => masked_softmax_rows(&scores, m)?,
        None => softmax_rows(&scores),
    };
    let output = mix_values(&probs, mask, xv);
    if !output.is_finite() {
        return Err(Error::Numeric { location: "self-attention output".into() });
    }
    Ok(AttentionOutput { output, probs })
}

/// Independent heads sharing one plane schedule.
pub fn multi_head_self_attention(
    heads: &[(DenseMatrix, DenseMatrix, DenseMatrix)],
    coords: &[TokenCoord],
    cfg: &RotaryConfig,
    mask: Option<&AttentionMask>,
) -> Result<Vec<AttentionOutput>> {
    let schedule = build_plane_schedule(cfg)?;
    heads
        .iter()
        .map(|(q, k, v)| self_attention_with(q, k, v, coords, &schedule, mask))
        .collect()
}

/// Reference rows see all text; shot `s` rows see only text chunk `s`.
pub fn hierarchical_mask(layout: &SequenceLayout) -> Result<AttentionMask> {
    layout.validate()?;
    let (lv, lt) = (layout.len_visual, layout.len_text);
    let mut bits = vec![false; lv * lt];
    bits[..layout.len_ref() * lt].fill(true);
    for (shot, seg) in layout.shot_ranges.iter().zip(&layout.text_segments) {
        for r in shot.clone() {
            bits[r * lt + seg.start..r * lt + seg.end].fill(true);
        }
    }
    AttentionMask::new(lv, lt, bits)
}

/// Cross-attention from visual queries to text keys under `mask`.
/// Neither side is rotated.
pub fn masked_cross_attention(
    q_vis: &DenseMatrix,
    k_txt: &DenseMatrix,
    v_txt: &DenseMatrix,
    mask: &AttentionMask,
) -> Result<DenseMatrix> {
    Ok(masked_cross_attention_probs(q_vis, k_txt, v_txt, mask)?.output)
}

pub fn masked_cross_attention_probs(
    q_vis: &DenseMatrix,
    k_txt: &DenseMatrix,
    v_txt: &DenseMatrix,
    mask: &AttentionMask,
) -> Result<AttentionOutput> {
    if k_txt.rows() != v_txt.rows() {
        return arg_err("text keys and values differ in length");
    }
    if mask.rows() != q_vis.rows() || mask.cols() != k_txt.rows() {
        return arg_err(format!(
            "mask is {}x{}, expected {}x{}",
            mask.rows(),
            mask.cols(),
            q_vis.rows(),
            k_txt.rows()
        ));
    }
    let scores = attention_scores(q_vis, k_txt, default_scale(q_vis.cols()))?;
    let probs = masked_softmax_rows(&scores, mask)?;
    let output = mix_values(&probs, Some(mask), v_txt);
    Ok(AttentionOutput { output, probs })
}

fn ranges_text(ranges: &[std::ops::Range<usize>]) -> String {
    ranges
        .iter()
        .map(|r| format!("[{},{})", r.start, r.end))
        .collect::<Vec<_>>()
        .join(" ")
}

/// CSV rendering of a self-attention probability matrix. Two comment lines
/// carry the layout ranges, then a `row,k0..` header and one line per query.
pub fn probs_to_csv(probs: &DenseMatrix, layout: &SequenceLayout) -> Result<String> {
    if probs.rows() != layout.len_visual || probs.cols() != layout.len_visual {
        return arg_err("probability matrix does not match layout length");
    }
    let mut out = String::new();
    out.push_str(&format!("# refs: {}\n", ranges_text(&layout.ref_ranges)));
    out.push_str(&format!("# shots: {}\n", ranges_text(&layout.shot_ranges)));
    out.push_str("row");
    for c in 0..probs.cols() {
        out.push_str(&format!(",k{c}"));
    }
    out.push('\n');
    for (r, row) in probs.iter_rows().enumerate() {
        out.push_str(&r.to_string());
        for v in row {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Serialize)]
struct ProbsJson<'a> {
    schema_version: u32,
    layout: &'a SequenceLayout,
    rows: usize,
    cols: usize,
    data: Vec<&'a [f64]>,
}

pub fn probs_to_json(probs: &DenseMatrix, layout: &SequenceLayout) -> Result<String> {
    if probs.rows() != layout.len_visual || probs.cols() != layout.len_visual {
        return arg_err("probability matrix does not match layout length");
    }
    Ok(serde_json::to_string_pretty(&ProbsJson {
        schema_version: crate::SCHEMA_VERSION,
        layout,
        rows: probs.rows(),
        cols: probs.cols(),
        data: probs.iter_rows().collect(),
    })?)
}

pub fn write_probs_csv(probs: &DenseMatrix, layout: &SequenceLayout, path: &Path) -> Result<()> {
    crate::io::write_text(path, &probs_to_csv(probs, layout)?)
}
