//! Rotary position embedding over `(t, s, h, w)` plane groups.
//!
//! The head dimension is split into consecutive coordinate pairs ("planes").
//! Each plane belongs to one axis and rotates by `coefficient * coordinate`.
//! Temporal and spatial planes use the geometric frequencies
//! `theta^(-2i/D)` at their global plane index `i`; side planes use the
//! discrete phase codes from [`crate::sideinfo`].
//!
//! Plane order is T, then S, then H, then W. With no side planes this is
//! ordinary 3D RoPE.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::layout::TokenCoord;
use crate::sideinfo::ref_phase;

/// Which end of the original temporal subspace donated the side planes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Realloc {
    /// No side axis.
    None,
    /// Side planes take the lowest-frequency temporal planes.
    TLow,
    /// Side planes take the highest-frequency temporal planes.
    THigh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotaryConfig {
    pub head_dim: usize,
    pub theta: f64,
    pub d_t: usize,
    pub d_h: usize,
    pub d_w: usize,
    pub d_s: usize,
    pub num_refs: usize,
    pub realloc: Realloc,
}

impl Default for RotaryConfig {
    /// Desk-scale default: D = 32 with a 12/10/10 temporal/height/width
    /// split, four temporal channels reassigned to two side planes (T-low).
    fn default() -> Self {
        Self {
            head_dim: 32,
            theta: 10_000.0,
            d_t: 8,
            d_h: 10,
            d_w: 10,
            d_s: 4,
            num_refs: 2,
            realloc: Realloc::TLow,
        }
    }
}

impl RotaryConfig {
    /// Starts from a 3D-RoPE split and moves `2 * num_refs` temporal
    /// channels onto the side axis according to `realloc`.
    pub fn reallocated(
        head_dim: usize,
        theta: f64,
        (d_t, d_h, d_w): (usize, usize, usize),
        num_refs: usize,
        realloc: Realloc,
    ) -> Result<Self> {
        let d_s = if realloc == Realloc::None { 0 } else { 2 * num_refs };
        if d_s > d_t {
            return Err(Error::Config(format!(
                "cannot take {d_s} side channels from {d_t} temporal channels"
            )));
        }
        let cfg = Self {
            head_dim,
            theta,
            d_t: d_t - d_s,
            d_h,
            d_w,
            d_s,
            num_refs,
            realloc,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.head_dim == 0 || !self.head_dim.is_multiple_of(2) {
            return bad(format!("head_dim must be even and positive, got {}", self.head_dim));
        }
        if !(self.theta.is_finite() && self.theta > 1.0) {
            return bad(format!("theta must be finite and > 1, got {}", self.theta));
        }
        for (name, d) in [("d_t", self.d_t), ("d_h", self.d_h), ("d_w", self.d_w), ("d_s", self.d_s)] {
            if d % 2 != 0 {
                return bad(format!("{name} must be even, got {d}"));
            }
        }
        let sum = self.d_t + self.d_h + self.d_w + self.d_s;
        if sum != self.head_dim {
            return bad(format!(
                "d_t + d_h + d_w + d_s = {sum} but head_dim = {}",
                self.head_dim
            ));
        }
        if self.num_refs == 0 {
            return bad("num_refs must be >= 1".into());
        }
        match self.realloc {
            Realloc::None if self.d_s != 0 => {
                bad(format!("realloc = none requires d_s = 0, got {}", self.d_s))
            }
            Realloc::TLow | Realloc::THigh if self.d_s != 2 * self.num_refs => bad(format!(
                "d_s must equal 2 * num_refs = {}, got {}",
                2 * self.num_refs,
                self.d_s
            )),
            _ => Ok(()),
        }
    }

    pub fn has_side_axis(&self) -> bool {
        self.d_s > 0
    }

    /// Temporal channel count before side channels were carved out.
    pub fn original_d_t(&self) -> usize {
        self.d_t + self.d_s
    }

    /// The 3D-RoPE config this one was derived from: side channels
    /// handed back to the temporal axis.
    pub fn without_sideinfo(&self) -> Self {
        Self {
            d_t: self.original_d_t(),
            d_s: 0,
            realloc: Realloc::None,
            ..self.clone()
        }
    }

    pub fn half_dim(&self) -> usize {
        self.head_dim / 2
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `theta^(-2i/D)` for plane `i` in `1..=D/2`.
pub fn plane_frequency(i: usize, head_dim: usize, theta: f64) -> Result<f64> {
    if head_dim == 0 || !head_dim.is_multiple_of(2) {
        return arg_err(format!("head dimension must be even and positive, got {head_dim}"));
    }
    if i == 0 || i > head_dim / 2 {
        return arg_err(format!("plane index {i} outside 1..={}", head_dim / 2));
    }
    if !(theta.is_finite() && theta > 1.0) {
        return arg_err(format!("theta must be > 1, got {theta}"));
    }
    Ok(theta.powf(-2.0 * i as f64 / head_dim as f64))
}

/// A 2x2 rotation block, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot2(pub [[f64; 2]; 2]);

impl Rot2 {
    pub fn det(&self) -> f64 {
        let m = self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// Largest entry of `|R^T R - I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let m = self.0;
        let mut worst = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                let dot = m[0][i] * m[0][j] + m[1][i] * m[1][j];
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let m = self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }
}

pub fn rotation_block(angle: f64) -> Result<Rot2> {
    if !angle.is_finite() {
        return arg_err(format!("rotation angle must be finite, got {angle}"));
    }
    let (s, c) = angle.sin_cos();
    Ok(Rot2([[c, -s], [s, c]]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    T,
    S,
    H,
    W,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PlaneDescriptor {
    pub axis: Axis,
    /// Global plane index, 1-based.
    pub index: usize,
    /// Angle per unit of the axis coordinate.
    pub coefficient: f64,
    /// Position within the axis block, 0-based. For side planes this is
    /// the reference slot the plane encodes.
    pub slot: usize,
}

/// Where an emitted plane sits in the channel layout of the 3D-RoPE
/// model it was reallocated from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelProvenance {
    pub plane: usize,
    pub axis: Axis,
    pub original_axis: Axis,
    pub original_plane: usize,
    /// First of the two channels (0-based) the plane occupied originally.
    pub original_channel: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlaneSchedule {
    planes: Vec<PlaneDescriptor>,
    provenance: Vec<ChannelProvenance>,
    num_refs: usize,
}

pub fn build_plane_schedule(cfg: &RotaryConfig) -> Result<PlaneSchedule> {
    cfg.validate()?;
    let half = cfg.half_dim();
    let (nt, ns, nh) = (cfg.d_t / 2, cfg.d_s / 2, cfg.d_h / 2);
    let mut planes = Vec::with_capacity(half);
    for index in 1..=half {
        let (axis, slot) = if index <= nt {
            (Axis::T, index - 1)
        } else if index <= nt + ns {
            (Axis::S, index - 1 - nt)
        } else if index <= nt + ns + nh {
            (Axis::H, index - 1 - nt - ns)
        } else {
            (Axis::W, index - 1 - nt - ns - nh)
        };
        let coefficient = match axis {
            Axis::S => ref_phase(slot + 1, cfg.num_refs)?,
            _ => plane_frequency(index, cfg.head_dim, cfg.theta)?,
        };
        planes.push(PlaneDescriptor { axis, index, coefficient, slot });
    }
    let provenance = provenance_map(cfg, &planes);
    Ok(PlaneSchedule { planes, provenance, num_refs: cfg.num_refs })
}

/// Original temporal planes `1..=nt + ns`: T-low hands the last `ns` of
/// them to the side axis, T-high the first `ns`. Surviving temporal
/// planes keep their relative order.
fn provenance_map(cfg: &RotaryConfig, planes: &[PlaneDescriptor]) -> Vec<ChannelProvenance> {
    let (nt, ns) = (cfg.d_t / 2, cfg.d_s / 2);
    let (t_origin, s_origin): (Vec<usize>, Vec<usize>) = match cfg.realloc {
        Realloc::None | Realloc::TLow => ((1..=nt).collect(), (nt + 1..=nt + ns).collect()),
        Realloc::THigh => ((ns + 1..=nt + ns).collect(), (1..=ns).collect()),
    };
    planes
        .iter()
        .map(|p| {
            let (original_axis, original_plane) = match p.axis {
                Axis::T => (Axis::T, t_origin[p.slot]),
                Axis::S => (Axis::T, s_origin[p.slot]),
                other => (other, p.index),
            };
            ChannelProvenance {
                plane: p.index,
                axis: p.axis,
                original_axis,
                original_plane,
                original_channel: 2 * (original_plane - 1),
            }
        })
        .collect()
}

/// Per-axis displacement between two tokens, taken as key minus query.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeOffset {
    pub t: i64,
    pub h: i64,
    pub w: i64,
    /// Side offsets. Entries are in `{-1, 0, 1}`; unsigned `|s_m - s_n|`
    /// values are the special case of nonnegative entries.
    pub side: Vec<i8>,
}

impl RelativeOffset {
    pub fn zero(k: usize) -> Self {
        Self { t: 0, h: 0, w: 0, side: vec![0; k] }
    }

    /// Offset realised by rotating `query` and `key` with their own
    /// absolute coordinates: `key - query` on every axis.
    pub fn between(query: &TokenCoord, key: &TokenCoord) -> Result<Self> {
        if query.side.len() != key.side.len() {
            return arg_err("tokens carry side vectors of different length");
        }
        Ok(Self {
            t: key.t - query.t,
            h: key.h - query.h,
            w: key.w - query.w,
            side: query
                .side
                .bits()
                .iter()
                .zip(key.side.bits())
                .map(|(&q, &k)| i8::from(k) - i8::from(q))
                .collect(),
        })
    }
}

impl PlaneSchedule {
    pub fn planes(&self) -> &[PlaneDescriptor] {
        &self.planes
    }

    pub fn provenance(&self) -> &[ChannelProvenance] {
        &self.provenance
    }

    pub fn num_refs(&self) -> usize {
        self.num_refs
    }

    pub fn head_dim(&self) -> usize {
        2 * self.planes.len()
    }

    pub fn side_planes(&self) -> impl Iterator<Item = &PlaneDescriptor> {
        self.planes.iter().filter(|p| p.axis == Axis::S)
    }

    /// Same schedule with every side plane left unrotated.
    pub fn with_side_planes_frozen(&self) -> Self {
        let mut out = self.clone();
        for p in &mut out.planes {
            if p.axis == Axis::S {
                p.coefficient = 0.0;
            }
        }
        out
    }

    /// Absolute rotation angles for a token.
    pub fn angles(&self, coord: &TokenCoord) -> Result<Vec<f64>> {
        if coord.side.len() != self.num_refs {
            return arg_err(format!(
                "token side vector has length {}, schedule expects {}",
                coord.side.len(),
                self.num_refs
            ));
        }
        Ok(self
            .planes
            .iter()
            .map(|p| match p.axis {
                Axis::T => p.coefficient * coord.t as f64,
                Axis::H => p.coefficient * coord.h as f64,
                Axis::W => p.coefficient * coord.w as f64,
                Axis::S => {
                    if coord.side.get(p.slot) {
                        p.coefficient
                    } else {
                        0.0
                    }
                }
            })
            .collect())
    }

    /// Rotation angles for a relative offset.
    pub fn relative_angles(&self, delta: &RelativeOffset) -> Result<Vec<f64>> {
        if delta.side.len() != self.num_refs {
            return arg_err(format!(
                "side offset has length {}, schedule expects {}",
                delta.side.len(),
                self.num_refs
            ));
        }
        if let Some(bad) = delta.side.iter().find(|d| d.abs() > 1) {
            return arg_err(format!("side offsets must lie in {{-1, 0, 1}}, got {bad}"));
        }
        Ok(self
            .planes
            .iter()
            .map(|p| match p.axis {
                Axis::T => p.coefficient * delta.t as f64,
                Axis::H => p.coefficient * delta.h as f64,
                Axis::W => p.coefficient * delta.w as f64,
                Axis::S => p.coefficient * f64::from(delta.side[p.slot]),
            })
            .collect())
    }
}

/// Rotates coordinate pair `(2i, 2i+1)` by `angles[i]`.
pub fn apply_rotation<T: Float>(vec: &[T], angles: &[T]) -> Result<Vec<T>> {
    let mut out = vec.to_vec();
    rotate_in_place(&mut out, angles)?;
    Ok(out)
}

pub fn rotate_in_place<T: Float>(vec: &mut [T], angles: &[T]) -> Result<()> {
    if vec.len() != 2 * angles.len() {
        return arg_err(format!(
            "vector of length {} needs {} angles, got {}",
            vec.len(),
            vec.len() / 2,
            angles.len()
        ));
    }
    for (pair, &a) in vec.chunks_exact_mut(2).zip(angles) {
        let (s, c) = a.sin_cos();
        let (x, y) = (pair[0], pair[1]);
        pair[0] = c * x - s * y;
        pair[1] = s * x + c * y;
    }
    Ok(())
}

/// Materialises the full block-diagonal rotation for `delta` and returns
/// `q^T R k`. Quadratic in `D`; meant as a reference for the per-token path.
pub fn relative_score_oracle(
    q: &[f64],
    k: &[f64],
    delta: &RelativeOffset,
    cfg: &RotaryConfig,
) -> Result<f64> {
    let schedule = build_plane_schedule(cfg)?;
    let d = cfg.head_dim;
    if q.len() != d || k.len() != d {
        return arg_err(format!(
            "oracle expects vectors of length {d}, got {} and {}",
            q.len(),
            k.len()
        ));
    }
    let angles = schedule.relative_angles(delta)?;
    let mut r = vec![0.0; d * d];
    for (i, &a) in angles.iter().enumerate() {
        let b = rotation_block(a)?;
        let o = 2 * i;
        r[o * d + o] = b.0[0][0];
        r[o * d + o + 1] = b.0[0][1];
        r[(o + 1) * d + o] = b.0[1][0];
        r[(o + 1) * d + o + 1] = b.0[1][1];
    }
    let mut score = 0.0;
    for (row, qv) in q.iter().enumerate() {
        let rk: f64 = (0..d).map(|col| r[row * d + col] * k[col]).sum();
        score += qv * rk;
    }
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sideinfo::SideInfoVec;
    use std::f64::consts::PI;

    fn cfg(d: usize, t: usize, h: usize, w: usize, s: usize, k: usize, realloc: Realloc) -> RotaryConfig {
        RotaryConfig { head_dim: d, theta: 10_000.0, d_t: t, d_h: h, d_w: w, d_s: s, num_refs: k, realloc }
    }

    #[test]
    fn frequency_examples() {
        assert!((plane_frequency(1, 4, 1e4).unwrap() - 0.01).abs() < 1e-15);
        assert!((plane_frequency(2, 4, 1e4).unwrap() - 1e-4).abs() < 1e-18);
        assert!((plane_frequency(1, 2, 1e4).unwrap() - 1e-4).abs() < 1e-18);
        assert!(plane_frequency(0, 4, 1e4).is_err());
        assert!(plane_frequency(3, 4, 1e4).is_err());
        assert!(plane_frequency(1, 5, 1e4).is_err());
    }

    #[test]
    fn frequency_strictly_decreasing() {
        for d in [2, 8, 32, 64, 128] {
            let f: Vec<f64> = (1..=d / 2).map(|i| plane_frequency(i, d, 1e4).unwrap()).collect();
            assert!(f.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn rotation_block_examples() {
        assert_eq!(rotation_block(0.0).unwrap(), Rot2([[1.0, -0.0], [0.0, 1.0]]));
        let q = rotation_block(PI / 2.0).unwrap().0;
        let want = [[0.0, -1.0], [1.0, 0.0]];
        let h = rotation_block(PI).unwrap().0;
        let want_h = [[-1.0, 0.0], [0.0, -1.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((q[i][j] - want[i][j]).abs() < 1e-15);
                assert!((h[i][j] - want_h[i][j]).abs() < 1e-15);
            }
        }
        assert!(rotation_block(f64::NAN).is_err());
        assert!(rotation_block(f64::INFINITY).is_err());
    }

    #[test]
    fn schedule_plain_3d() {
        let s = build_plane_schedule(&cfg(8, 4, 2, 2, 0, 1, Realloc::None)).unwrap();
        let axes: Vec<_> = s.planes().iter().map(|p| (p.axis, p.index)).collect();
        assert_eq!(axes, vec![(Axis::T, 1), (Axis::T, 2), (Axis::H, 3), (Axis::W, 4)]);
        for p in s.planes() {
            assert_eq!(p.coefficient, plane_frequency(p.index, 8, 1e4).unwrap());
        }
    }

    #[test]
    fn schedule_single_side_plane() {
        let s = build_plane_schedule(&cfg(8, 2, 2, 2, 2, 1, Realloc::TLow)).unwrap();
        let axes: Vec<_> = s.planes().iter().map(|p| (p.axis, p.index)).collect();
        assert_eq!(axes, vec![(Axis::T, 1), (Axis::S, 2), (Axis::H, 3), (Axis::W, 4)]);
        assert_eq!(s.planes()[1].coefficient, PI);
        assert_eq!(s.planes()[2].coefficient, plane_frequency(3, 8, 1e4).unwrap());
    }

    #[test]
    fn schedule_two_side_planes() {
        let s = build_plane_schedule(&cfg(12, 4, 2, 2, 4, 2, Realloc::THigh)).unwrap();
        let side: Vec<f64> = s.side_planes().map(|p| p.coefficient).collect();
        assert_eq!(side.len(), 2);
        assert!((side[0] - PI / 2.0).abs() < 1e-15);
        assert!((side[1] - 3.0 * PI / 2.0).abs() < 1e-15);
        let h = s.planes().iter().find(|p| p.axis == Axis::H).unwrap();
        assert_eq!(h.index, 1 + 2 + 2);
    }

    #[test]
    fn provenance_low_vs_high() {
        let low = build_plane_schedule(&RotaryConfig::default()).unwrap();
        let high = build_plane_schedule(&RotaryConfig { realloc: Realloc::THigh, ..RotaryConfig::default() }).unwrap();
        let side_origin = |s: &PlaneSchedule| -> Vec<usize> {
            s.provenance().iter().filter(|p| p.axis == Axis::S).map(|p| p.original_plane).collect()
        };
        assert_eq!(side_origin(&low), vec![5, 6]);
        assert_eq!(side_origin(&high), vec![1, 2]);
        // Identical emitted planes either way.
        assert_eq!(low.planes(), high.planes());
    }

    #[test]
    fn config_validation() {
        assert!(RotaryConfig::default().validate().is_ok());
        let d = RotaryConfig::default;
        assert!(RotaryConfig { head_dim: 33, ..d() }.validate().is_err());
        assert!(RotaryConfig { d_s: 2, d_t: 10, ..d() }.validate().is_err(), "d_s must be 2K");
        assert!(RotaryConfig { realloc: Realloc::None, ..d() }.validate().is_err(), "none requires d_s = 0");
        assert!(RotaryConfig { d_h: 9, d_w: 11, ..d() }.validate().is_err());
        let base = RotaryConfig::default().without_sideinfo();
        assert_eq!((base.d_t, base.d_s, base.realloc), (12, 0, Realloc::None));
        assert!(base.validate().is_ok());
        let re = RotaryConfig::reallocated(32, 1e4, (12, 10, 10), 2, Realloc::TLow).unwrap();
        assert_eq!(re, RotaryConfig::default());
        assert!(RotaryConfig::reallocated(8, 1e4, (2, 2, 4), 2, Realloc::TLow).is_err());
    }

    #[test]
    fn config_json_field_names() {
        let text = serde_json::to_string(&RotaryConfig::default()).unwrap();
        assert_eq!(
            text,
            r#"{"head_dim":32,"theta":10000.0,"d_t":8,"d_h":10,"d_w":10,"d_s":4,"num_refs":2,"realloc":"tlow"}"#
        );
        let back = RotaryConfig::from_json(&text).unwrap();
        assert_eq!(back, RotaryConfig::default());
        assert!(RotaryConfig::from_json(&text.replace("tlow", "thigh")).is_ok());
        assert!(RotaryConfig::from_json(&text.replace("\"tlow\"", "\"mid\"")).is_err());
    }

    #[test]
    fn apply_rotation_examples() {
        assert_eq!(apply_rotation(&[1.0, 0.0], &[0.0]).unwrap(), vec![1.0, 0.0]);
        let r = apply_rotation(&[1.0, 0.0], &[PI / 2.0]).unwrap();
        assert!(r[0].abs() < 1e-15 && (r[1] - 1.0).abs() < 1e-15);
        let r = apply_rotation(&[1.0, 0.0, 1.0, 0.0], &[PI / 2.0, PI]).unwrap();
        for (g, w) in r.iter().zip([0.0, 1.0, -1.0, 0.0]) {
            assert!((g - w).abs() < 1e-15);
        }
        assert!(apply_rotation(&[1.0, 0.0, 1.0], &[0.0]).is_err());
        assert!(apply_rotation(&[1.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn oracle_examples() {
        let c = RotaryConfig::default();
        let q: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
        let k: Vec<f64> = (0..32).map(|i| (i as f64 * 0.11).cos()).collect();
        let dot: f64 = q.iter().zip(&k).map(|(a, b)| a * b).sum();
        let s = relative_score_oracle(&q, &k, &RelativeOffset::zero(2), &c).unwrap();
        assert!((s - dot).abs() < 1e-12);

        // Single temporal plane: omega = theta^-1 = pi/4, so dt = 2 is a quarter turn.
        let one = cfg(2, 2, 0, 0, 0, 1, Realloc::None);
        let one = RotaryConfig { theta: 4.0 / PI, ..one };
        let delta = RelativeOffset { t: 2, h: 0, w: 0, side: vec![0] };
        let s = relative_score_oracle(&[1.0, 0.0], &[1.0, 0.0], &delta, &one).unwrap();
        assert!(s.abs() < 1e-15);

        assert!(relative_score_oracle(&q[..30], &k, &RelativeOffset::zero(2), &c).is_err());
        assert!(relative_score_oracle(&q, &k, &RelativeOffset::zero(3), &c).is_err());
    }

    #[test]
    fn oracle_quarter_turn_side_plane() {
        // K = 1 side plane has phase pi; K = 2 first plane has pi/2.
        let c = cfg(4, 0, 0, 0, 4, 2, Realloc::TLow);
        let q = [1.0, 0.0, 0.0, 0.0];
        let delta = RelativeOffset { t: 0, h: 0, w: 0, side: vec![1, 0] };
        let s = relative_score_oracle(&q, &q, &delta, &c).unwrap();
        assert!(s.abs() < 1e-15);
    }

    #[test]
    fn absolute_angles_use_side_bits() {
        let s = build_plane_schedule(&RotaryConfig::default()).unwrap();
        let coord = TokenCoord { t: 3, h: 1, w: 2, side: SideInfoVec::one_hot(2, 2).unwrap() };
        let a = s.angles(&coord).unwrap();
        assert_eq!(a[4], 0.0);
        assert!((a[5] - 3.0 * PI / 2.0).abs() < 1e-15);
        assert_eq!(a[0], 3.0 * s.planes()[0].coefficient);
        let bad = TokenCoord { side: SideInfoVec::zeros(3).unwrap(), ..coord };
        assert!(s.angles(&bad).is_err());
    }
}
