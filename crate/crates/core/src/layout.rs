//! Multi-shot sequence layouts and token coordinates.
//!
//! Visual tokens are packed references first (reference 1..K in order),
//! then shots in order. Text tokens are `S` consecutive chunks of a fixed
//! length `T`, one per shot.

use std::ops::Range;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::sideinfo::SideInfoVec;

/// Position of one visual token on the `(t, h, w, s)` axes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCoord {
    pub t: i64,
    pub h: i64,
    pub w: i64,
    pub side: SideInfoVec,
}

impl TokenCoord {
    pub fn new(t: i64, h: i64, w: i64, side: SideInfoVec) -> Result<Self> {
        if h < 0 || w < 0 {
            return arg_err(format!("spatial coordinates must be non-negative, got ({h}, {w})"));
        }
        Ok(Self { t, h, w, side })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShotSpec {
    pub shot_id: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub caption: String,
    pub side: SideInfoVec,
}

impl ShotSpec {
    /// Builds a shot, deriving its side information from the caption.
    pub fn new(
        shot_id: usize,
        (frames, height, width): (usize, usize, usize),
        caption: impl Into<String>,
        num_refs: usize,
    ) -> Result<Self> {
        let caption = caption.into();
        let side = parse_shot_prompt(&caption, num_refs)?;
        Self::with_side(shot_id, (frames, height, width), caption, side)
    }

    /// Builds a shot with explicit side information.
    pub fn with_side(
        shot_id: usize,
        (frames, height, width): (usize, usize, usize),
        caption: impl Into<String>,
        side: SideInfoVec,
    ) -> Result<Self> {
        if shot_id == 0 {
            return arg_err("shot ids start at 1");
        }
        if frames == 0 || height == 0 || width == 0 {
            return arg_err(format!(
                "shot {shot_id} has an empty grid {frames}x{height}x{width}"
            ));
        }
        Ok(Self { shot_id, frames, height, width, caption: caption.into(), side })
    }

    pub fn token_count(&self) -> usize {
        self.frames * self.height * self.width
    }
}

fn mention_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@(?i:character)_([0-9]+)\b").expect("static regex"))
}

/// Collects `@character_i` mentions into a presence vector.
///
/// A mention must not be glued to a preceding word character, so
/// `foo@character_1` is ignored. Only the word `character` is
/// case-insensitive.
pub fn parse_shot_prompt(caption: &str, num_refs: usize) -> Result<SideInfoVec> {
    if num_refs == 0 {
        return arg_err("K must be >= 1");
    }
    let mut bits = vec![false; num_refs];
    let mut bad = Vec::new();
    for cap in mention_regex().captures_iter(caption) {
        let whole = cap.get(0).expect("group 0");
        let glued = caption[..whole.start()]
            .chars()
            .next_back()
            .is_some_and(|c| c.is_alphanumeric() || c == '_');
        if glued {
            continue;
        }
        match cap[1].parse::<usize>() {
            Ok(i) if (1..=num_refs).contains(&i) => bits[i - 1] = true,
            _ => bad.push(whole.as_str().to_string()),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Parse(format!(
            "mentions outside @character_1..@character_{num_refs}: {}",
            bad.join(", ")
        )));
    }
    SideInfoVec::new(bits)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceLayout {
    pub num_refs: usize,
    pub ref_ranges: Vec<Range<usize>>,
    pub shot_ranges: Vec<Range<usize>>,
    pub text_segments: Vec<Range<usize>>,
    pub shot_sides: Vec<SideInfoVec>,
    pub text_chunk_len: usize,
    pub len_visual: usize,
    pub len_text: usize,
}

impl SequenceLayout {
    pub fn num_shots(&self) -> usize {
        self.shot_ranges.len()
    }

    pub fn len_ref(&self) -> usize {
        self.ref_ranges.last().map_or(0, |r| r.end)
    }

    /// Shot index (0-based) owning visual token `i`, if it is a shot token.
    pub fn shot_of(&self, i: usize) -> Option<usize> {
        self.shot_ranges.iter().position(|r| r.contains(&i))
    }

    /// Reference index (0-based) owning visual token `i`.
    pub fn ref_of(&self, i: usize) -> Option<usize> {
        self.ref_ranges.iter().position(|r| r.contains(&i))
    }

    /// Checks the packing invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Layout(m));
        let k = self.num_refs;
        if k == 0 || self.ref_ranges.len() != k {
            return bad(format!("expected {k} reference ranges, got {}", self.ref_ranges.len()));
        }
        let s = self.shot_ranges.len();
        if s == 0 {
            return bad("layout has no shots".into());
        }
        if self.text_segments.len() != s || self.shot_sides.len() != s {
            return bad("need one text segment and one side vector per shot".into());
        }
        let mut cursor = 0;
        for (what, ranges) in [("reference", &self.ref_ranges), ("shot", &self.shot_ranges)] {
            for (i, r) in ranges.iter().enumerate() {
                if r.start != cursor || r.end <= r.start {
                    return bad(format!(
                        "{what} range {} = {}..{} is empty, overlapping or out of order",
                        i + 1,
                        r.start,
                        r.end
                    ));
                }
                cursor = r.end;
            }
        }
        if cursor != self.len_visual {
            return bad(format!("ranges cover {cursor} tokens but L_v = {}", self.len_visual));
        }
        let t = self.text_chunk_len;
        if t == 0 || self.len_text != s * t {
            return bad(format!("L_t = {} must equal S * T = {s} * {t}", self.len_text));
        }
        for (i, seg) in self.text_segments.iter().enumerate() {
            if *seg != (i * t..(i + 1) * t) {
                return bad(format!("text segment {} is {}..{}", i + 1, seg.start, seg.end));
            }
        }
        if let Some(bad_side) = self.shot_sides.iter().find(|v| v.len() != k) {
            return bad(format!("shot side vector {bad_side} does not have length {k}"));
        }
        Ok(())
    }

    /// Reference `r` (0-based) side vector.
    pub fn ref_side(&self, r: usize) -> SideInfoVec {
        SideInfoVec::one_hot(r + 1, self.num_refs).expect("validated layout")
    }

    /// Side vector of any visual token.
    pub fn side_of(&self, i: usize) -> Option<SideInfoVec> {
        if let Some(r) = self.ref_of(i) {
            return Some(self.ref_side(r));
        }
        self.shot_of(i).map(|s| self.shot_sides[s].clone())
    }
}

pub fn build_layout(
    ref_token_counts: &[usize],
    shots: &[ShotSpec],
    text_chunk_len: usize,
) -> Result<SequenceLayout> {
    let k = ref_token_counts.len();
    if k == 0 {
        return arg_err("need at least one reference");
    }
    if shots.is_empty() {
        return arg_err("need at least one shot");
    }
    if text_chunk_len == 0 {
        return arg_err("text chunk length must be >= 1");
    }
    let mut cursor = 0;
    let mut ref_ranges = Vec::with_capacity(k);
    for (i, &n) in ref_token_counts.iter().enumerate() {
        if n == 0 {
            return arg_err(format!("reference {} has no tokens", i + 1));
        }
        ref_ranges.push(cursor..cursor + n);
        cursor += n;
    }
    let mut shot_ranges = Vec::with_capacity(shots.len());
    for shot in shots {
        if shot.side.len() != k {
            return arg_err(format!(
                "shot {} side vector has length {}, expected {k}",
                shot.shot_id,
                shot.side.len()
            ));
        }
        let n = shot.token_count();
        if n == 0 {
            return arg_err(format!("shot {} has no tokens", shot.shot_id));
        }
        shot_ranges.push(cursor..cursor + n);
        cursor += n;
    }
    let s = shots.len();
    let layout = SequenceLayout {
        num_refs: k,
        ref_ranges,
        shot_ranges,
        text_segments: (0..s).map(|i| i * text_chunk_len..(i + 1) * text_chunk_len).collect(),
        shot_sides: shots.iter().map(|s| s.side.clone()).collect(),
        text_chunk_len,
        len_visual: cursor,
        len_text: s * text_chunk_len,
    };
    layout.validate()?;
    Ok(layout)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceTime {
    /// Reference `r` sits at `t = -r`.
    #[default]
    Negative,
    /// All references share `t = -1`.
    SharedNegative,
    /// All references share `t = 0`.
    Zero,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotTime {
    /// Frame indices run continuously across shots.
    #[default]
    Continuous,
    /// Every shot restarts at `t = 0`.
    ResetPerShot,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordPolicy {
    pub reference_time: ReferenceTime,
    pub shot_time: ShotTime,
}

/// Coordinates for every visual token with the default policy.
pub fn assign_coords(
    layout: &SequenceLayout,
    shots: &[ShotSpec],
    ref_grids: &[(usize, usize)],
) -> Result<Vec<TokenCoord>> {
    assign_coords_with(layout, shots, ref_grids, CoordPolicy::default())
}

pub fn assign_coords_with(
    layout: &SequenceLayout,
    shots: &[ShotSpec],
    ref_grids: &[(usize, usize)],
    policy: CoordPolicy,
) -> Result<Vec<TokenCoord>> {
    layout.validate()?;
    let k = layout.num_refs;
    if ref_grids.len() != k {
        return arg_err(format!("need {k} reference grids, got {}", ref_grids.len()));
    }
    if shots.len() != layout.num_shots() {
        return arg_err(format!(
            "layout has {} shots but {} specs were given",
            layout.num_shots(),
            shots.len()
        ));
    }
    let mut coords = Vec::with_capacity(layout.len_visual);
    for (r, (&(gh, gw), range)) in ref_grids.iter().zip(&layout.ref_ranges).enumerate() {
        if gh * gw != range.len() {
            return arg_err(format!(
                "reference {} grid {gh}x{gw} does not match its {} tokens",
                r + 1,
                range.len()
            ));
        }
        let t = match policy.reference_time {
            ReferenceTime::Negative => -(r as i64 + 1),
            ReferenceTime::SharedNegative => -1,
            ReferenceTime::Zero => 0,
        };
        let side = layout.ref_side(r);
        for h in 0..gh {
            for w in 0..gw {
                coords.push(TokenCoord { t, h: h as i64, w: w as i64, side: side.clone() });
            }
        }
    }
    let mut frame_base = 0i64;
    for (i, (shot, range)) in shots.iter().zip(&layout.shot_ranges).enumerate() {
        if shot.token_count() != range.len() {
            return arg_err(format!(
                "shot {} has {} grid tokens but its range holds {}",
                shot.shot_id,
                shot.token_count(),
                range.len()
            ));
        }
        if shot.side != layout.shot_sides[i] {
            return arg_err(format!("shot {} side bits disagree with the layout", shot.shot_id));
        }
        let base = match policy.shot_time {
            ShotTime::Continuous => frame_base,
            ShotTime::ResetPerShot => 0,
        };
        for f in 0..shot.frames {
            for h in 0..shot.height {
                for w in 0..shot.width {
                    coords.push(TokenCoord {
                        t: base + f as i64,
                        h: h as i64,
                        w: w as i64,
                        side: shot.side.clone(),
                    });
                }
            }
        }
        frame_base += shot.frames as i64;
    }
    Ok(coords)
}

/// One reference image in a layout manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefEntry {
    pub tokens: usize,
    /// `[height, width]` in tokens.
    pub grid: [usize; 2],
}

/// One shot in a layout manifest. `side` is derived from the caption and
/// written out on serialisation; when present on input it must agree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotEntry {
    pub id: usize,
    pub frames: usize,
    pub h: usize,
    pub w: usize,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<SideInfoVec>,
}

/// JSON layout manifest consumed by the command-line tool.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutManifest {
    #[serde(rename = "K")]
    pub num_refs: usize,
    #[serde(rename = "T")]
    pub text_chunk_len: usize,
    pub refs: Vec<RefEntry>,
    pub shots: Vec<ShotEntry>,
}

/// Everything derived from a manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct BuiltLayout {
    pub layout: SequenceLayout,
    pub shots: Vec<ShotSpec>,
    pub coords: Vec<TokenCoord>,
}

impl LayoutManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    /// Pretty JSON with every shot's side bits filled in.
    pub fn to_json(&self) -> Result<String> {
        let mut out = self.clone();
        for shot in &mut out.shots {
            shot.side = Some(parse_shot_prompt(&shot.caption, self.num_refs)?);
        }
        Ok(serde_json::to_string_pretty(&out)?)
    }

    pub fn build(&self) -> Result<BuiltLayout> {
        self.build_with(CoordPolicy::default())
    }

    pub fn build_with(&self, policy: CoordPolicy) -> Result<BuiltLayout> {
        if self.refs.len() != self.num_refs {
            return Err(Error::Layout(format!(
                "manifest declares K = {} but lists {} references",
                self.num_refs,
                self.refs.len()
            )));
        }
        for (i, r) in self.refs.iter().enumerate() {
            if r.grid[0] * r.grid[1] != r.tokens {
                return Err(Error::Layout(format!(
                    "reference {} grid {:?} does not hold {} tokens",
                    i + 1,
                    r.grid,
                    r.tokens
                )));
            }
        }
        let shots = self
            .shots
            .iter()
            .map(|e| {
                let spec = ShotSpec::new(e.id, (e.frames, e.h, e.w), e.caption.clone(), self.num_refs)?;
                if let Some(given) = &e.side {
                    if *given != spec.side {
                        return Err(Error::Layout(format!(
                            "shot {} lists side bits {given} but its caption gives {}",
                            e.id, spec.side
                        )));
                    }
                }
                Ok(spec)
            })
            .collect::<Result<Vec<_>>>()?;
        let counts: Vec<usize> = self.refs.iter().map(|r| r.tokens).collect();
        let layout = build_layout(&counts, &shots, self.text_chunk_len)?;
        let grids: Vec<(usize, usize)> = self.refs.iter().map(|r| (r.grid[0], r.grid[1])).collect();
        let coords = assign_coords_with(&layout, &shots, &grids, policy)?;
        Ok(BuiltLayout { layout, shots, coords })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(s: &str) -> SideInfoVec {
        s.parse().unwrap()
    }

    #[test]
    fn prompt_examples() {
        assert_eq!(
            parse_shot_prompt("@character_1 walks in while @character_2 waves", 2).unwrap(),
            sv("11")
        );
        assert_eq!(parse_shot_prompt("an empty hallway", 2).unwrap(), sv("00"));
        assert_eq!(
            parse_shot_prompt("@character_2 turns; @character_2 smiles", 2).unwrap(),
            sv("01")
        );
    }

    #[test]
    fn prompt_edge_cases() {
        assert_eq!(parse_shot_prompt("@CHARACTER_1 and @Character_2", 2).unwrap(), sv("11"));
        assert_eq!(parse_shot_prompt("@character_1@character_2", 2).unwrap(), sv("10"));
        assert_eq!(parse_shot_prompt("email me@character_1", 2).unwrap(), sv("00"));
        assert_eq!(parse_shot_prompt("@character_1x is not a mention", 2).unwrap(), sv("00"));
        assert_eq!(parse_shot_prompt("(@character_01)", 2).unwrap(), sv("10"));
        let err = parse_shot_prompt("@character_3 and @character_0", 2).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("@character_3") && msg.contains("@character_0"), "{msg}");
        assert!(parse_shot_prompt("@character_99999999999999999999999", 2).is_err());
        assert!(parse_shot_prompt("x", 0).is_err());
    }

    fn two_by_two() -> (Vec<ShotSpec>, SequenceLayout) {
        let shots = vec![
            ShotSpec::new(1, (2, 1, 1), "@character_1 enters", 2).unwrap(),
            ShotSpec::new(2, (2, 1, 1), "@character_2 leaves", 2).unwrap(),
        ];
        let layout = build_layout(&[1, 1], &shots, 2).unwrap();
        (shots, layout)
    }

    #[test]
    fn sequential_packing() {
        let (_, l) = two_by_two();
        assert_eq!(l.ref_ranges, vec![0..1, 1..2]);
        assert_eq!(l.shot_ranges, vec![2..4, 4..6]);
        assert_eq!(l.text_segments, vec![0..2, 2..4]);
        assert_eq!((l.len_visual, l.len_text, l.len_ref()), (6, 4, 2));
        assert_eq!(l.shot_sides, vec![sv("10"), sv("01")]);
        assert_eq!(l.side_of(1), Some(sv("01")));
        assert_eq!(l.side_of(5), Some(sv("01")));
        assert_eq!(l.side_of(6), None);
    }

    #[test]
    fn build_layout_errors() {
        let (shots, _) = two_by_two();
        assert!(build_layout(&[1, 0], &shots, 2).is_err());
        assert!(build_layout(&[], &shots, 2).is_err());
        assert!(build_layout(&[1, 1], &[], 2).is_err());
        assert!(build_layout(&[1, 1], &shots, 0).is_err());
        assert!(ShotSpec::new(1, (0, 1, 1), "", 2).is_err());
        assert!(build_layout(&[1, 1, 1], &shots, 2).is_err(), "side length != K");
    }

    #[test]
    fn validate_rejects_overlap() {
        let (_, mut l) = two_by_two();
        l.shot_ranges[1] = 3..6;
        assert!(matches!(l.validate(), Err(Error::Layout(_))));
        let (_, mut l) = two_by_two();
        l.shot_ranges.swap(0, 1);
        assert!(l.validate().is_err());
        let (_, mut l) = two_by_two();
        l.len_text = 5;
        assert!(l.validate().is_err());
    }

    #[test]
    fn coords_examples() {
        let shots = vec![ShotSpec::new(1, (1, 1, 1), "", 1).unwrap()];
        let l = build_layout(&[1], &shots, 1).unwrap();
        let c = assign_coords(&l, &shots, &[(1, 1)]).unwrap();
        assert_eq!(c[1], TokenCoord { t: 0, h: 0, w: 0, side: sv("0") });

        let (shots, l) = two_by_two();
        let c = assign_coords(&l, &shots, &[(1, 1), (1, 1)]).unwrap();
        assert_eq!((c[0].t, c[1].t), (-1, -2));
        assert_eq!((c[0].side.clone(), c[1].side.clone()), (sv("10"), sv("01")));
        let shot2: Vec<i64> = c[4..6].iter().map(|c| c.t).collect();
        assert_eq!(shot2, vec![2, 3]);

        let reset = CoordPolicy { shot_time: ShotTime::ResetPerShot, reference_time: ReferenceTime::Zero };
        let c = assign_coords_with(&l, &shots, &[(1, 1), (1, 1)], reset).unwrap();
        assert_eq!(c[0].t, 0);
        assert_eq!(c[4].t, 0);

        assert!(assign_coords(&l, &shots, &[(1, 2), (1, 1)]).is_err());
        assert!(assign_coords(&l, &shots, &[(1, 1)]).is_err());
        let mut wrong = shots.clone();
        wrong[0].frames = 3;
        assert!(assign_coords(&l, &wrong, &[(1, 1), (1, 1)]).is_err());
    }

    #[test]
    fn coords_grid_order() {
        let shots = vec![ShotSpec::new(1, (2, 2, 3), "@character_1", 1).unwrap()];
        let l = build_layout(&[4], &shots, 3).unwrap();
        let c = assign_coords(&l, &shots, &[(2, 2)]).unwrap();
        let refs: Vec<(i64, i64)> = c[..4].iter().map(|c| (c.h, c.w)).collect();
        assert_eq!(refs, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!((c[4].t, c[4].h, c[4].w), (0, 0, 0));
        assert_eq!((c[9].t, c[9].h, c[9].w), (0, 1, 2));
        assert_eq!((c[10].t, c[10].h, c[10].w), (1, 0, 0));
    }

    const MANIFEST: &str = r#"{
        "K": 2, "T": 3,
        "refs": [{"tokens": 2, "grid": [1, 2]}, {"tokens": 2, "grid": [2, 1]}],
        "shots": [
            {"id": 1, "frames": 2, "h": 1, "w": 2, "caption": "@character_1 opens the door"},
            {"id": 2, "frames": 1, "h": 2, "w": 2, "caption": "@character_2 and @character_1 talk", "side": "11"}
        ]
    }"#;

    #[test]
    fn manifest_build_and_round_trip() {
        let m = LayoutManifest::from_json(MANIFEST).unwrap();
        let built = m.build().unwrap();
        assert_eq!(built.layout.shot_ranges, vec![4..8, 8..12]);
        assert_eq!(built.coords.len(), 12);
        let text = m.to_json().unwrap();
        assert!(text.contains("\"side\": \"10\""));
        let again = LayoutManifest::from_json(&text).unwrap().build().unwrap();
        assert_eq!(again.layout, built.layout);
        assert_eq!(again.coords, built.coords);
    }

    #[test]
    fn manifest_errors() {
        let bad_side = MANIFEST.replace("\"side\": \"11\"", "\"side\": \"01\"");
        assert!(LayoutManifest::from_json(&bad_side).unwrap().build().is_err());
        let bad_grid = MANIFEST.replace("\"grid\": [1, 2]", "\"grid\": [1, 3]");
        assert!(LayoutManifest::from_json(&bad_grid).unwrap().build().is_err());
        let bad_k = MANIFEST.replace("\"K\": 2", "\"K\": 1");
        assert!(LayoutManifest::from_json(&bad_k).unwrap().build().is_err());
        assert!(LayoutManifest::from_json("{\"K\": 1}").is_err());
    }
}
