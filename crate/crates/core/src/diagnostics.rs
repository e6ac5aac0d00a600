//! Shot-to-reference attention aggregation and confusion reporting.
//!
//! Entry `(i, j)` of a [`ShotRefMatrix`] is the mean post-softmax
//! probability from the query tokens of shot `i` to the key tokens of
//! reference `j`. Scores come from a single head of a single layer, so no
//! head or layer averaging is involved.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::io::{fmt17, read_text, sig17_vec, write_text, Sig17};
use crate::layout::SequenceLayout;
use crate::matrix::DenseMatrix;

pub const NORMALIZATION: &str = "post_softmax_mean";
pub const AGGREGATION_NOTE: &str = "single head, single layer; no head/layer averaging";

#[derive(Clone, Debug, PartialEq)]
pub struct ShotRefMatrix {
    shots: usize,
    refs: usize,
    values: Vec<f64>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub normalization: String,
}

impl ShotRefMatrix {
    pub fn new(shots: usize, refs: usize, values: Vec<f64>) -> Result<Self> {
        if shots == 0 || refs == 0 || values.len() != shots * refs {
            return arg_err(format!("{shots}x{refs} matrix with {} values", values.len()));
        }
        Ok(Self {
            shots,
            refs,
            values,
            row_labels: (1..=shots).map(|i| format!("shot_{i}")).collect(),
            col_labels: (1..=refs).map(|j| format!("ref_{j}")).collect(),
            normalization: NORMALIZATION.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let refs = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != refs) {
            return arg_err("ragged rows");
        }
        Self::new(rows.len(), refs, rows.concat())
    }

    pub fn shots(&self) -> usize {
        self.shots
    }

    pub fn refs(&self) -> usize {
        self.refs
    }

    pub fn get(&self, shot: usize, reference: usize) -> f64 {
        self.values[shot * self.refs + reference]
    }

    pub fn row(&self, shot: usize) -> &[f64] {
        &self.values[shot * self.refs..(shot + 1) * self.refs]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows_vec(&self) -> Vec<Vec<f64>> {
        self.values.chunks_exact(self.refs).map(<[f64]>::to_vec).collect()
    }

    /// Every row's bound reference strictly beats all other references.
    pub fn is_diagonally_dominant(&self, bound: &[usize]) -> bool {
        bound.len() == self.shots
            && (0..self.shots).all(|i| {
                let b = bound[i] - 1;
                (0..self.refs).all(|j| j == b || self.get(i, b) > self.get(i, j))
            })
    }
}

/// Mean post-softmax attention from each shot's queries to each reference's keys.
pub fn shot_to_ref_scores(probs: &DenseMatrix, layout: &SequenceLayout) -> Result<ShotRefMatrix> {
    layout.validate()?;
    if probs.rows() != layout.len_visual || probs.cols() != layout.len_visual {
        return arg_err(format!(
            "probabilities are {}x{} but the layout has {} visual tokens",
            probs.rows(),
            probs.cols(),
            layout.len_visual
        ));
    }
    let mut values = Vec::with_capacity(layout.num_shots() * layout.num_refs);
    for shot in &layout.shot_ranges {
        for reference in &layout.ref_ranges {
            let mut acc = 0.0;
            for q in shot.clone() {
                for k in reference.clone() {
                    acc += probs.get(q, k);
                }
            }
            values.push(acc / (shot.len() * reference.len()) as f64);
        }
    }
    ShotRefMatrix::new(layout.num_shots(), layout.num_refs, values)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfusionReport {
    /// Predicted reference per shot, 1-based.
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    /// Shots (1-based) whose prediction differs from the bound reference.
    pub confused: Vec<usize>,
}

/// Argmax reference per shot. Ties go to the lowest reference index.
pub fn confusion_argmax(m: &ShotRefMatrix, bound: &[usize]) -> Result<ConfusionReport> {
    if bound.len() != m.shots() {
        return arg_err(format!("{} labels for {} shots", bound.len(), m.shots()));
    }
    if let Some(b) = bound.iter().find(|b| **b == 0 || **b > m.refs()) {
        return arg_err(format!("label {b} outside 1..={}", m.refs()));
    }
    let predictions: Vec<usize> = (0..m.shots())
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best + 1
        })
        .collect();
    let confused: Vec<usize> = predictions
        .iter()
        .zip(bound)
        .enumerate()
        .filter(|(_, (p, b))| p != b)
        .map(|(i, _)| i + 1)
        .collect();
    let accuracy = (m.shots() - confused.len()) as f64 / m.shots() as f64;
    Ok(ConfusionReport { predictions, accuracy, confused })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Serialize)]
struct MatrixJsonOut<'a> {
    schema_version: u32,
    normalization: &'a str,
    aggregation: &'a str,
    row_labels: &'a [String],
    col_labels: &'a [String],
    values: Vec<Vec<Sig17>>,
}

#[derive(Deserialize)]
struct MatrixJsonIn {
    schema_version: u32,
    normalization: String,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl ShotRefMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("shot");
        for label in &self.col_labels {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
        for (i, label) in self.row_labels.iter().enumerate() {
            out.push_str(label);
            for v in self.row(i) {
                out.push(',');
                out.push_str(&fmt17(*v));
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`Self::to_csv`] output. Lines starting with `#` are skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
        let mut cols = header.split(',');
        if cols.next() != Some("shot") {
            return Err(Error::Parse(format!("unexpected CSV header {header:?}")));
        }
        let col_labels: Vec<String> = cols.map(str::to_string).collect();
        let mut row_labels = Vec::new();
        let mut values = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let mut fields = line.split(',');
            row_labels.push(fields.next().unwrap_or_default().to_string());
            let row = fields
                .map(|f| f.parse::<f64>().map_err(|e| Error::Parse(format!("{f:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != col_labels.len() {
                return Err(Error::Parse(format!("row {line:?} has {} values", row.len())));
            }
            values.extend(row);
        }
        let mut m = Self::new(row_labels.len(), col_labels.len(), values)?;
        m.row_labels = row_labels;
        m.col_labels = col_labels;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MatrixJsonOut {
            schema_version: crate::SCHEMA_VERSION,
            normalization: &self.normalization,
            aggregation: AGGREGATION_NOTE,
            row_labels: &self.row_labels,
            col_labels: &self.col_labels,
            values: self.values.chunks_exact(self.refs).map(sig17_vec).collect(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: MatrixJsonIn = serde_json::from_str(text)?;
        if parsed.schema_version != crate::SCHEMA_VERSION {
            return Err(Error::Parse(format!("unsupported schema_version {}", parsed.schema_version)));
        }
        let mut m = Self::from_rows(&parsed.values)?;
        m.row_labels = parsed.row_labels;
        m.col_labels = parsed.col_labels;
        m.normalization = parsed.normalization;
        Ok(m)
    }
}

pub fn export(m: &ShotRefMatrix, format: ExportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ExportFormat::Csv => m.to_csv(),
        ExportFormat::Json => m.to_json()?,
    };
    write_text(path, &text)
}

pub fn import(format: ExportFormat, path: &Path) -> Result<ShotRefMatrix> {
    let text = read_text(path)?;
    match format {
        ExportFormat::Csv => ShotRefMatrix::from_csv(&text),
        ExportFormat::Json => ShotRefMatrix::from_json(&text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::softmax_rows;
    use crate::layout::{build_layout, ShotSpec};
    use crate::sideinfo::SideInfoVec;

    fn layout(ref_tokens: &[usize], shot_tokens: &[usize]) -> SequenceLayout {
        let shots: Vec<ShotSpec> = shot_tokens
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                ShotSpec::with_side(i + 1, (n, 1, 1), "", SideInfoVec::zeros(ref_tokens.len()).unwrap()).unwrap()
            })
            .collect();
        build_layout(ref_tokens, &shots, 1).unwrap()
    }

    #[test]
    fn uniform_probs() {
        let l = layout(&[2, 3], &[2, 3]);
        let probs = softmax_rows(&DenseMatrix::zeros(10, 10));
        let m = shot_to_ref_scores(&probs, &l).unwrap();
        for v in m.values() {
            assert!((v - 0.1).abs() < 1e-15);
        }
        assert!(shot_to_ref_scores(&DenseMatrix::zeros(9, 9), &l).is_err());
    }

    #[test]
    fn concentrated_mass() {
        let l = layout(&[1, 1], &[2]);
        let mut probs = DenseMatrix::zeros(4, 4);
        for q in 2..4 {
            probs.set(q, 0, 1.0);
        }
        let m = shot_to_ref_scores(&probs, &l).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn argmax_and_ties() {
        let m = ShotRefMatrix::from_rows(&[vec![0.6, 0.1], vec![0.2, 0.7]]).unwrap();
        let r = confusion_argmax(&m, &[1, 2]).unwrap();
        assert_eq!((r.predictions.clone(), r.accuracy), (vec![1, 2], 1.0));
        assert!(m.is_diagonally_dominant(&[1, 2]));

        let flat = ShotRefMatrix::from_rows(&vec![vec![0.3, 0.3, 0.3]; 3]).unwrap();
        let r = confusion_argmax(&flat, &[1, 2, 3]).unwrap();
        assert_eq!(r.predictions, vec![1, 1, 1]);
        assert_eq!(r.confused, vec![2, 3]);
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert!(!flat.is_diagonally_dominant(&[1, 2, 3]));

        assert!(confusion_argmax(&m, &[1]).is_err());
        assert!(confusion_argmax(&m, &[1, 3]).is_err());
    }

    #[test]
    fn csv_json_round_trip() {
        let m = ShotRefMatrix::from_rows(&[vec![0.1, 1.0 / 3.0], vec![2.0 / 7.0, 1e-17]]).unwrap();
        let csv = m.to_csv();
        assert!(csv.starts_with("shot,ref_1,ref_2\nshot_1,1.0000000000000001e-1,"));
        assert_eq!(ShotRefMatrix::from_csv(&csv).unwrap(), m);
        assert_eq!(ShotRefMatrix::from_csv(&format!("# seed 4\n{csv}")).unwrap(), m);
        let json = m.to_json().unwrap();
        assert!(json.contains("\"schema_version\": 1"));
        assert!(json.contains("post_softmax_mean"));
        assert_eq!(ShotRefMatrix::from_json(&json).unwrap(), m);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/m.json");
        export(&m, ExportFormat::Json, &p).unwrap();
        assert_eq!(import(ExportFormat::Json, &p).unwrap(), m);
        let p = dir.path().join("m.csv");
        export(&m, ExportFormat::Csv, &p).unwrap();
        assert_eq!(import(ExportFormat::Csv, &p).unwrap(), m);
    }

    #[test]
    fn export_reports_path_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let m = ShotRefMatrix::from_rows(&[vec![1.0]]).unwrap();
        let err = export(&m, ExportFormat::Csv, &blocker.join("m.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("file"));
    }
}
