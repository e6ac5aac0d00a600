use poco_core::attention::{apply_positional, attention_scores, masked_softmax_rows, rotate_rows, AttentionMask};
use poco_core::diagnostics::{confusion_argmax, ShotRefMatrix};
use poco_core::harness::task::{gen_confusion_task, run_retrieval, TaskParams};
use poco_core::harness::{layer_backward, layer_forward, ToyAttnLayer};
use poco_core::layout::{build_layout, parse_shot_prompt, LayoutManifest, RefEntry, ShotEntry, ShotSpec, TokenCoord};
use poco_core::matrix::DenseMatrix;
use poco_core::rope::{
    apply_rotation, build_plane_schedule, relative_score_oracle, Realloc, RelativeOffset, RotaryConfig,
};
use poco_core::sideinfo::SideInfoVec;
use proptest::prelude::*;

fn config() -> impl Strategy<Value = RotaryConfig> {
    (1usize..=4, 0usize..=8, 0usize..=10, 0usize..=10, 0usize..3).prop_map(|(k, extra_t, nh, nw, r)| {
        let realloc = [Realloc::None, Realloc::TLow, Realloc::THigh][r];
        let nt = k + extra_t;
        RotaryConfig::reallocated(2 * (nt + nh + nw), 1e4, (2 * nt, 2 * nh, 2 * nw), k, realloc).unwrap()
    })
}

fn coord(k: usize) -> impl Strategy<Value = TokenCoord> {
    (-16i64..=64, 0i64..=32, 0i64..=32, prop::collection::vec(any::<bool>(), k))
        .prop_map(|(t, h, w, bits)| TokenCoord::new(t, h, w, SideInfoVec::new(bits).unwrap()).unwrap())
}

/// Config plus a query/key pair with coordinates.
fn scored_pair() -> impl Strategy<Value = (RotaryConfig, Vec<f64>, Vec<f64>, TokenCoord, TokenCoord)> {
    config().prop_flat_map(|cfg| {
        let d = cfg.head_dim;
        let k = cfg.num_refs;
        (
            Just(cfg),
            prop::collection::vec(-3.0f64..3.0, d),
            prop::collection::vec(-3.0f64..3.0, d),
            coord(k),
            coord(k),
        )
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn score(q: &[f64], k: &[f64], cq: &TokenCoord, ck: &TokenCoord, cfg: &RotaryConfig) -> f64 {
    let row = |v: &[f64]| DenseMatrix::new(1, v.len(), v.to_vec()).unwrap();
    let qr = apply_positional(&row(q), std::slice::from_ref(cq), cfg).unwrap();
    let kr = apply_positional(&row(k), std::slice::from_ref(ck), cfg).unwrap();
    attention_scores(&qr, &kr, 1.0).unwrap().get(0, 0)
}

proptest! {
    #[test]
    fn rotation_preserves_norm(v in prop::collection::vec(-5.0f64..5.0, 2..64usize), seed in -200.0f64..200.0) {
        let v = if v.len() % 2 == 1 { v[1..].to_vec() } else { v };
        let angles: Vec<f64> = (0..v.len() / 2).map(|i| seed * (i as f64 + 0.5).sqrt()).collect();
        let r = apply_rotation(&v, &angles).unwrap();
        prop_assert!((norm(&r) - norm(&v)).abs() < 1e-12);
    }

    #[test]
    fn rotations_compose(v in prop::collection::vec(-5.0f64..5.0, 8), a in prop::collection::vec(-50.0f64..50.0, 4), b in prop::collection::vec(-50.0f64..50.0, 4)) {
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let twice = apply_rotation(&apply_rotation(&v, &a).unwrap(), &b).unwrap();
        let once = apply_rotation(&v, &ab).unwrap();
        for (x, y) in twice.iter().zip(&once) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn efficient_path_matches_oracle((cfg, q, k, cq, ck) in scored_pair()) {
        let delta = RelativeOffset::between(&cq, &ck).unwrap();
        let oracle = relative_score_oracle(&q, &k, &delta, &cfg).unwrap();
        prop_assert!((score(&q, &k, &cq, &ck, &cfg) - oracle).abs() < 1e-9);
    }

    #[test]
    fn score_depends_only_on_offset((cfg, q, k, cq, ck) in scored_pair(), shift in -20i64..20) {
        let moved = |c: &TokenCoord| TokenCoord::new(c.t + shift, c.h + 40, c.w + 7, c.side.clone()).unwrap();
        let a = score(&q, &k, &cq, &ck, &cfg);
        let b = score(&q, &k, &moved(&cq), &moved(&ck), &cfg);
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn f32_path_tracks_f64((cfg, q, k, cq, ck) in scored_pair()) {
        let schedule = build_plane_schedule(&cfg).unwrap();
        let d = cfg.head_dim;
        let mut q32: Vec<f32> = q.iter().map(|&x| x as f32).collect();
        let mut k32: Vec<f32> = k.iter().map(|&x| x as f32).collect();
        rotate_rows(&mut q32, d, std::slice::from_ref(&cq), &schedule).unwrap();
        rotate_rows(&mut k32, d, std::slice::from_ref(&ck), &schedule).unwrap();
        let s32: f32 = q32.iter().zip(&k32).map(|(a, b)| a * b).sum();
        let n32: f32 = q32.iter().map(|x| x * x).sum::<f32>().sqrt();
        let s64 = score(&q, &k, &cq, &ck, &cfg);
        let scale = 1.0 + norm(&q) * norm(&k);
        prop_assert!((f64::from(s32) - s64).abs() <= 1e-4 * scale);
        prop_assert!((f64::from(n32) - norm(&q)).abs() <= 1e-4 * (1.0 + norm(&q)));
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries(
        (rows, cols, scores, bits) in (1usize..6, 1usize..8).prop_flat_map(|(r, c)| (
            Just(r), Just(c),
            prop::collection::vec(-30.0f64..30.0, r * c),
            prop::collection::vec(any::<bool>(), r * c),
        ))
    ) {
        let mut bits = bits;
        for r in 0..rows {
            bits[r * cols + r % cols] = true;
        }
        let mask = AttentionMask::new(rows, cols, bits).unwrap();
        let p = masked_softmax_rows(&DenseMatrix::new(rows, cols, scores).unwrap(), &mask).unwrap();
        for r in 0..rows {
            let total: f64 = p.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for c in 0..cols {
                if !mask.get(r, c) {
                    prop_assert_eq!(p.get(r, c).to_bits(), 0.0f64.to_bits());
                } else {
                    prop_assert!(p.get(r, c) >= 0.0);
                }
            }
        }
    }

    #[test]
    fn layout_partitions_visual_tokens(
        refs in prop::collection::vec(1usize..6, 1..5),
        grids in prop::collection::vec((1usize..4, 1usize..3, 1usize..3), 1..6),
        t in 1usize..5,
    ) {
        let k = refs.len();
        let shots: Vec<ShotSpec> = grids.iter().enumerate()
            .map(|(i, &g)| ShotSpec::with_side(i + 1, g, "", SideInfoVec::one_hot(i % k + 1, k).unwrap()).unwrap())
            .collect();
        let layout = build_layout(&refs, &shots, t).unwrap();
        let mut seen = 0;
        for i in 0..layout.len_visual {
            let owners = usize::from(layout.ref_of(i).is_some()) + usize::from(layout.shot_of(i).is_some());
            prop_assert_eq!(owners, 1);
            seen += 1;
        }
        prop_assert_eq!(seen, refs.iter().sum::<usize>() + shots.iter().map(ShotSpec::token_count).sum::<usize>());
        prop_assert_eq!(layout.len_text, shots.len() * t);
        for (s, r) in layout.shot_ranges.iter().enumerate() {
            prop_assert_eq!(r.len(), shots[s].token_count());
        }
    }

    #[test]
    fn manifest_round_trip(
        refs in prop::collection::vec((1usize..4, 1usize..4), 1..4),
        shots in prop::collection::vec((1usize..3, 1usize..3, 1usize..3, any::<u8>()), 1..5),
        t in 1usize..4,
    ) {
        let k = refs.len();
        let manifest = LayoutManifest {
            num_refs: k,
            text_chunk_len: t,
            refs: refs.iter().map(|&(h, w)| RefEntry { tokens: h * w, grid: [h, w] }).collect(),
            shots: shots.iter().enumerate().map(|(i, &(f, h, w, pick))| {
                let who = usize::from(pick) % k + 1;
                ShotEntry { id: i + 1, frames: f, h, w, caption: format!("@character_{who} walks"), side: None }
            }).collect(),
        };
        let text = manifest.to_json().unwrap();
        let back = LayoutManifest::from_json(&text).unwrap();
        prop_assert_eq!(back.to_json().unwrap(), text);
        prop_assert_eq!(back.build().unwrap(), manifest.build().unwrap());
    }

    #[test]
    fn prompt_bits_match_mentions(picks in prop::collection::btree_set(1usize..=6, 0..6), filler in "[a-z ]{0,8}") {
        let caption: String = picks.iter().map(|i| format!("{filler} @character_{i} ")).collect();
        let bits = parse_shot_prompt(&caption, 6).unwrap();
        prop_assert_eq!(bits, SideInfoVec::from_indices(picks.iter().copied(), 6).unwrap());
    }

    #[test]
    fn argmax_is_scale_invariant(values in prop::collection::vec(0.0f64..1.0, 12), c in 1e-3f64..1e3) {
        let m = ShotRefMatrix::new(4, 3, values.clone()).unwrap();
        let scaled = ShotRefMatrix::new(4, 3, values.iter().map(|v| v * c).collect()).unwrap();
        let bound = vec![1, 2, 3, 1];
        prop_assert_eq!(confusion_argmax(&m, &bound).unwrap().predictions, confusion_argmax(&scaled, &bound).unwrap().predictions);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn side_bits_do_not_matter_without_sideinfo(seed in 0u64..1000, rho in 0.0f64..=1.0) {
        let task = gen_confusion_task(&TaskParams { rho, ..TaskParams::default() }, seed).unwrap();
        let mut flipped = task.clone();
        for c in &mut flipped.coords {
            let mut bits = c.side.bits().to_vec();
            bits.reverse();
            c.side = SideInfoVec::new(bits).unwrap();
        }
        let cfg = RotaryConfig::default();
        let a = run_retrieval(&task, &cfg, false).unwrap();
        let b = run_retrieval(&flipped, &cfg, false).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn duplicate_feature_columns_get_equal_gradient_rows(seed in 0u64..1000) {
        let params = TaskParams { feature_dim: 40, ..TaskParams::default() };
        let mut task = gen_confusion_task(&params, seed).unwrap();
        for r in 0..task.tokens.rows() {
            let v = task.tokens.get(r, 0);
            task.tokens.set(r, 1, v);
        }
        let cfg = RotaryConfig::default();
        let layer = ToyAttnLayer::init(params.feature_dim, cfg.head_dim, seed).unwrap();
        let (_, cache) = layer_forward(&layer, &task, &cfg).unwrap();
        let g = layer_backward(&layer, &cache).unwrap();
        prop_assert_eq!(g.wq.row(0), g.wq.row(1));
        prop_assert_eq!(g.wk.row(0), g.wk.row(1));
        prop_assert!(g.wv.data().iter().all(|&x| x == 0.0));
    }
}
