//! Randomised invariant suite behind `poco check`.

use poco_core::attention::{
    apply_positional, attention_scores, hierarchical_mask, masked_cross_attention, masked_softmax_rows, AttentionMask,
};
use poco_core::io::ser_f64;
use poco_core::layout::{build_layout, ShotSpec, TokenCoord};
use poco_core::matrix::{norm, DenseMatrix};
use poco_core::rng::{normal_vec, SeedStream};
use poco_core::rope::{
    apply_rotation, build_plane_schedule, relative_score_oracle, Axis, Realloc, RelativeOffset, RotaryConfig,
};
use poco_core::sideinfo::SideInfoVec;
use poco_core::Result;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

type Rng20 = ChaCha20Rng;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: &'static str,
    pub draws: usize,
    #[serde(serialize_with = "ser_f64")]
    pub max_error: f64,
    #[serde(serialize_with = "ser_f64")]
    pub tolerance: f64,
    pub passed: bool,
}

fn row(name: &'static str, draws: usize, max_error: f64, tolerance: f64) -> CheckRow {
    CheckRow { name, draws, max_error, tolerance, passed: max_error <= tolerance }
}

fn side(rng: &mut Rng20, k: usize) -> SideInfoVec {
    SideInfoVec::new((0..k).map(|_| rng.random_bool(0.5)).collect()).expect("k >= 1")
}

fn coord(rng: &mut Rng20, k: usize) -> TokenCoord {
    TokenCoord::new(rng.random_range(-8..=64), rng.random_range(0..=32), rng.random_range(0..=32), side(rng, k))
        .expect("non-negative spatial coordinates")
}

/// Half the draws use the configured rotary setup, the rest a random one
/// with `D <= 64` and `K <= 4`.
fn config(rng: &mut Rng20, base: &RotaryConfig) -> RotaryConfig {
    if rng.random_bool(0.5) {
        return base.clone();
    }
    let k = rng.random_range(1..=4usize);
    let realloc = [Realloc::None, Realloc::TLow, Realloc::THigh][rng.random_range(0..3)];
    let nt = rng.random_range(k..=12);
    let nh = rng.random_range(0..=10);
    let nw = rng.random_range(0..=(32 - nt - nh).min(10));
    RotaryConfig::reallocated(2 * (nt + nh + nw), 1e4, (2 * nt, 2 * nh, 2 * nw), k, realloc).expect("valid by construction")
}

fn single(v: &[f64]) -> DenseMatrix {
    DenseMatrix::new(1, v.len(), v.to_vec()).expect("finite row")
}

fn score(q: &[f64], k: &[f64], cq: &TokenCoord, ck: &TokenCoord, cfg: &RotaryConfig) -> Result<f64> {
    let qr = apply_positional(&single(q), std::slice::from_ref(cq), cfg)?;
    let kr = apply_positional(&single(k), std::slice::from_ref(ck), cfg)?;
    Ok(attention_scores(&qr, &kr, 1.0)?.get(0, 0))
}

fn oracle_equivalence(rng: &mut Rng20, base: &RotaryConfig, draws: usize) -> Result<CheckRow> {
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let cfg = config(rng, base);
        let (q, k) = (normal_vec(rng, cfg.head_dim), normal_vec(rng, cfg.head_dim));
        let (cq, ck) = (coord(rng, cfg.num_refs), coord(rng, cfg.num_refs));
        let oracle = relative_score_oracle(&q, &k, &RelativeOffset::between(&cq, &ck)?, &cfg)?;
        worst = worst.max((score(&q, &k, &cq, &ck, &cfg)? - oracle).abs());
    }
    Ok(row("rope oracle equivalence", draws, worst, 1e-9))
}

fn rotation_invariants(rng: &mut Rng20, base: &RotaryConfig, draws: usize) -> Result<[CheckRow; 2]> {
    let (mut norm_err, mut comp_err) = (0.0f64, 0.0f64);
    for _ in 0..draws {
        let cfg = config(rng, base);
        let schedule = build_plane_schedule(&cfg)?;
        let v = normal_vec(rng, cfg.head_dim);
        let a = schedule.angles(&coord(rng, cfg.num_refs))?;
        let b = schedule.angles(&coord(rng, cfg.num_refs))?;
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let r = apply_rotation(&v, &a)?;
        norm_err = norm_err.max((norm(&r) - norm(&v)).abs());
        let twice = apply_rotation(&r, &b)?;
        let once = apply_rotation(&v, &ab)?;
        comp_err = comp_err.max(twice.iter().zip(&once).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    Ok([row("norm preservation", draws, norm_err, 1e-12), row("rotation composition", draws, comp_err, 1e-12)])
}

/// For `q = k` at shared `(t, h, w)`, side plane `i` contributes
/// `cos(phi_i * delta_i)` times its energy.
fn side_attenuation(rng: &mut Rng20, base: &RotaryConfig, draws: usize) -> Result<CheckRow> {
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let mut cfg = config(rng, base);
        if !cfg.has_side_axis() {
            cfg = RotaryConfig::reallocated(cfg.head_dim, cfg.theta, (cfg.original_d_t(), cfg.d_h, cfg.d_w), cfg.num_refs, Realloc::TLow)?;
        }
        let schedule = build_plane_schedule(&cfg)?;
        let q = normal_vec(rng, cfg.head_dim);
        let a = coord(rng, cfg.num_refs);
        let b = TokenCoord { side: side(rng, cfg.num_refs), ..a.clone() };
        let delta = RelativeOffset::between(&a, &b)?;
        let expected: f64 = schedule
            .planes()
            .iter()
            .map(|p| {
                let i = p.index - 1;
                let energy = q[2 * i].powi(2) + q[2 * i + 1].powi(2);
                match p.axis {
                    Axis::S => energy * (p.coefficient * f64::from(delta.side[p.slot])).cos(),
                    _ => energy,
                }
            })
            .sum();
        worst = worst.max((score(&q, &q, &a, &b, &cfg)? - expected).abs());
    }
    Ok(row("side-info attenuation", draws, worst, 1e-12))
}

fn masked_softmax(rng: &mut Rng20, draws: usize) -> Result<CheckRow> {
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let (r, c) = (rng.random_range(1..6usize), rng.random_range(1..8usize));
        let mut bits: Vec<bool> = (0..r * c).map(|_| rng.random_bool(0.5)).collect();
        for i in 0..r {
            bits[i * c + rng.random_range(0..c)] = true;
        }
        let mask = AttentionMask::new(r, c, bits)?;
        let scores = DenseMatrix::new(r, c, normal_vec(rng, r * c).iter().map(|x| 20.0 * x).collect())?;
        let p = masked_softmax_rows(&scores, &mask)?;
        for i in 0..r {
            worst = worst.max((p.row(i).iter().sum::<f64>() - 1.0).abs());
            if (0..c).any(|j| !mask.get(i, j) && p.get(i, j).to_bits() != 0) {
                worst = f64::INFINITY;
            }
        }
    }
    Ok(row("masked softmax", draws, worst, 1e-12))
}

/// Mask clauses against an independent re-derivation, and bit-exact
/// cross-shot independence. Errors count mismatching entries and rows.
fn mask_fuzz(rng: &mut Rng20, draws: usize) -> Result<[CheckRow; 2]> {
    let (mut wrong_entries, mut leaked_rows) = (0usize, 0usize);
    for _ in 0..draws {
        let k = rng.random_range(1..=4usize);
        let s = rng.random_range(1..=5usize);
        let t = rng.random_range(1..=4usize);
        let refs: Vec<usize> = (0..k).map(|_| rng.random_range(1..=4)).collect();
        let shots = (0..s)
            .map(|i| {
                let g = (rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(1..=2));
                ShotSpec::with_side(i + 1, g, "", side(rng, k))
            })
            .collect::<Result<Vec<_>>>()?;
        let layout = build_layout(&refs, &shots, t)?;
        let mask = hierarchical_mask(&layout)?;
        let mut owner: Vec<Option<usize>> = vec![None; refs.iter().sum()];
        for (i, sh) in shots.iter().enumerate() {
            owner.extend(std::iter::repeat_n(Some(i), sh.token_count()));
        }
        for (r, who) in owner.iter().enumerate() {
            for c in 0..s * t {
                let expected = who.is_none_or(|sh| c / t == sh);
                wrong_entries += usize::from(mask.get(r, c) != expected);
            }
        }

        let (lv, lt, d) = (owner.len(), s * t, 6);
        let q = DenseMatrix::new(lv, d, normal_vec(rng, lv * d))?;
        let kt = DenseMatrix::new(lt, d, normal_vec(rng, lt * d))?;
        let vt = DenseMatrix::new(lt, d, normal_vec(rng, lt * d))?;
        let before = masked_cross_attention(&q, &kt, &vt, &mask)?;
        let target = rng.random_range(0..s);
        let bump = normal_vec(rng, 2 * t * d);
        let (mut kt2, mut vt2) = (kt.clone(), vt.clone());
        for (n, c) in (target * t..(target + 1) * t).enumerate() {
            for j in 0..d {
                kt2.set(c, j, kt.get(c, j) + bump[2 * (n * d + j)]);
                vt2.set(c, j, vt.get(c, j) + bump[2 * (n * d + j) + 1]);
            }
        }
        let after = masked_cross_attention(&q, &kt2, &vt2, &mask)?;
        for (r, who) in owner.iter().enumerate() {
            if who.is_some_and(|sh| sh != target) && before.row(r) != after.row(r) {
                leaked_rows += 1;
            }
        }
    }
    Ok([
        row("mask clauses", draws, wrong_entries as f64, 0.0),
        row("cross-shot independence", draws, leaked_rows as f64, 0.0),
    ])
}

pub fn run_suite(base: &RotaryConfig, draws: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let stream = SeedStream::new(seed);
    let mut rows = vec![oracle_equivalence(&mut stream.substream("check/oracle"), base, draws)?];
    rows.extend(rotation_invariants(&mut stream.substream("check/rotation"), base, draws)?);
    rows.push(side_attenuation(&mut stream.substream("check/side"), base, draws)?);
    rows.push(masked_softmax(&mut stream.substream("check/softmax"), draws)?);
    rows.extend(mask_fuzz(&mut stream.substream("check/mask"), draws)?);
    Ok(rows)
}
