//! RoI-importance aggregation of voxel attributions.
//!
//! The importance of RoI `R_b` for explained class `a` is the share of the
//! attribution mass of `e_a` that falls inside `R_b`:
//!
//! ```text
//! e_{b→a} = ‖e_a|_{R_b}‖₁ / ‖e_a‖₁
//! ```
//!
//! Signed modes keep only positive (or only negative) attributions, in both
//! numerator and denominator. Because region values are broadcast to voxels,
//! KernelSHAP regions are weighted by their size here.
//!
//! A local matrix holds one row per explained class and one column per RoI;
//! the global matrix is the cell-wise mean of local matrices over the inputs
//! where a cell is defined.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::AttributionField;
use crate::volume::{ClassMask, RoiSet, VolumeError};

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("label mismatch: {0}")]
    LabelMismatch(String),
    #[error("no matrices to aggregate")]
    Empty,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("malformed matrix: {0}")]
    Malformed(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    #[default]
    Absolute,
    PositiveOnly,
    NegativeOnly,
}

impl SignMode {
    /// Contribution of one attribution value to the L1 mass.
    pub fn mass(self, v: f64) -> f64 {
        match self {
            SignMode::Absolute => v.abs(),
            SignMode::PositiveOnly => v.max(0.0),
            SignMode::NegativeOnly => (-v).max(0.0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SignMode::Absolute => "absolute",
            SignMode::PositiveOnly => "positive_only",
            SignMode::NegativeOnly => "negative_only",
        }
    }
}

impl std::str::FromStr for SignMode {
    type Err = AggregateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "absolute" => Ok(SignMode::Absolute),
            "positive_only" | "positive" => Ok(SignMode::PositiveOnly),
            "negative_only" | "negative" => Ok(SignMode::NegativeOnly),
            _ => Err(AggregateError::InvalidParam(format!("unknown sign mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Local,
    Global,
}

/// Attribution mass of `e` inside `roi` (the whole field when `None`).
pub fn roi_mass(e: &AttributionField, roi: Option<&ClassMask>, mode: SignMode) -> Result<f64, VolumeError> {
    match roi {
        None => Ok(e.data.iter().map(|&v| mode.mass(v)).sum()),
        Some(mask) => {
            e.dims.ensure_same(&mask.dims())?;
            Ok(e.data.iter().zip(mask.data()).filter(|(_, &m)| m != 0).map(|(&v, _)| mode.mass(v)).sum())
        }
    }
}

/// `e_{b→a}`; NaN when the field has no mass of the requested sign.
pub fn roi_importance(e: &AttributionField, roi: &ClassMask, mode: SignMode) -> Result<f64, VolumeError> {
    let inside = roi_mass(e, Some(roi), mode)?;
    let total = roi_mass(e, None, mode)?;
    Ok(if total > 0.0 { inside / total } else { f64::NAN })
}

/// Share of attribution mass inside the explained class's own mask; one minus
/// this is the share the model draws from context.
pub fn context_fraction(e: &AttributionField, own_mask: &ClassMask) -> Result<f64, VolumeError> {
    roi_importance(e, own_mask, SignMode::Absolute)
}

/// Rows are explained classes, columns RoIs. NaN marks undefined cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub scope: Scope,
    pub sign_mode: SignMode,
    /// Number of inputs behind each cell.
    pub support: Vec<Vec<usize>>,
}

/// Local matrix of one input. `fields` holds at most one field per class;
/// classes in `class_names` without a field (nothing predicted) get NaN rows.
pub fn local_matrix(
    fields: &[AttributionField],
    class_names: &[String],
    rois: &RoiSet,
    mode: SignMode,
) -> Result<ExplanationMatrix, AggregateError> {
    let cols = rois.names();
    let mut values = vec![vec![f64::NAN; cols.len()]; class_names.len()];
    let mut seen = vec![false; class_names.len()];
    for field in fields {
        let row = field.class_id;
        if row >= class_names.len() {
            return Err(AggregateError::LabelMismatch(format!(
                "field for class {row} but only {} class names",
                class_names.len()
            )));
        }
        if std::mem::replace(&mut seen[row], true) {
            return Err(AggregateError::LabelMismatch(format!("two fields for class {row}")));
        }
        let total = roi_mass(field, None, mode)?;
        for (cell, roi) in values[row].iter_mut().zip(rois.entries()) {
            let inside = roi_mass(field, Some(&roi.mask), mode)?;
            *cell = if total > 0.0 { inside / total } else { f64::NAN };
        }
    }
    let support = values.iter().map(|row| row.iter().map(|v| usize::from(!v.is_nan())).collect()).collect();
    Ok(ExplanationMatrix {
        row_labels: class_names.to_vec(),
        col_labels: cols,
        values,
        scope: Scope::Local,
        sign_mode: mode,
        support,
    })
}

/// Cell-wise mean over the local matrices where the cell is defined.
pub fn global_matrix(locals: &[ExplanationMatrix]) -> Result<ExplanationMatrix, AggregateError> {
    let first = locals.first().ok_or(AggregateError::Empty)?;
    let (rows, cols) = (first.row_labels.len(), first.col_labels.len());
    let mut sums = vec![vec![0.0; cols]; rows];
    let mut support = vec![vec![0usize; cols]; rows];
    for m in locals {
        if m.row_labels != first.row_labels || m.col_labels != first.col_labels {
            return Err(AggregateError::LabelMismatch("local matrices have different labels".into()));
        }
        if m.sign_mode != first.sign_mode {
            return Err(AggregateError::LabelMismatch("local matrices mix sign modes".into()));
        }
        for (a, row) in m.values.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                if !v.is_nan() {
                    sums[a][b] += v;
                    support[a][b] += 1;
                }
            }
        }
    }
    let values = sums
        .iter()
        .zip(&support)
        .map(|(row, n)| row.iter().zip(n).map(|(&s, &k)| if k > 0 { s / k as f64 } else { f64::NAN }).collect())
        .collect();
    Ok(ExplanationMatrix {
        row_labels: first.row_labels.clone(),
        col_labels: first.col_labels.clone(),
        values,
        scope: Scope::Global,
        sign_mode: first.sign_mode,
        support,
    })
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: Vec<String>,
    cols: Vec<String>,
    values: Vec<Vec<Option<f64>>>,
    support: Vec<Vec<usize>>,
    sign_mode: SignMode,
    #[serde(default = "default_scope")]
    scope: Scope,
}

fn default_scope() -> Scope {
    Scope::Local
}

impl ExplanationMatrix {
    pub fn row(&self, label: &str) -> Option<&[f64]> {
        self.row_labels.iter().position(|l| l == label).map(|a| self.values[a].as_slice())
    }

    /// Row label column first, one column per RoI; NaN as an empty cell.
    pub fn to_csv(&self) -> Result<String, AggregateError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("class").chain(self.col_labels.iter().map(String::as_str)))?;
        for (label, row) in self.row_labels.iter().zip(&self.values) {
            let cells = row.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() });
            w.write_record(std::iter::once(label.clone()).chain(cells))?;
        }
        let bytes = w.into_inner().map_err(|e| AggregateError::Malformed(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> String {
        let json = MatrixJson {
            rows: self.row_labels.clone(),
            cols: self.col_labels.clone(),
            values: self.values.iter().map(|r| r.iter().map(|v| (!v.is_nan()).then_some(*v)).collect()).collect(),
            support: self.support.clone(),
            sign_mode: self.sign_mode,
            scope: self.scope,
        };
        serde_json::to_string_pretty(&json).expect("matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AggregateError> {
        let json: MatrixJson = serde_json::from_str(text).map_err(|e| AggregateError::Malformed(e.to_string()))?;
        let shape_ok = json.values.len() == json.rows.len()
            && json.support.len() == json.rows.len()
            && json.values.iter().chain(std::iter::empty()).all(|r| r.len() == json.cols.len())
            && json.support.iter().all(|r| r.len() == json.cols.len());
        if !shape_ok {
            return Err(AggregateError::Malformed("values/support shape does not match labels".into()));
        }
        Ok(ExplanationMatrix {
            row_labels: json.rows,
            col_labels: json.cols,
            values: json.values.into_iter().map(|r| r.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect()).collect(),
            scope: json.scope,
            sign_mode: json.sign_mode,
            support: json.support,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiGroup {
    Cardiovascular,
    Muscle,
    Bone,
    Other,
    Pathology,
}

impl RoiGroup {
    pub fn label(self) -> &'static str {
        match self {
            RoiGroup::Cardiovascular => "cardiovascular",
            RoiGroup::Muscle => "muscle",
            RoiGroup::Bone => "bone",
            RoiGroup::Other => "other",
            RoiGroup::Pathology => "pathology",
        }
    }

    /// Keyword guess from an anatomical name; unknown names are `Other`.
    pub fn guess(name: &str) -> RoiGroup {
        const CARDIO: &[&str] = &["heart", "aorta", "arter", "vein", "vena", "ventric", "atri", "trunk", "vessel"];
        const MUSCLE: &[&str] = &["muscle", "iliopsoas", "autochthon", "gluteus", "psoas"];
        const BONE: &[&str] = &["bone", "rib", "vertebra", "spine", "sternum", "femur", "hip", "clavic", "scapula", "humerus", "sacrum"];
        const PATHOLOGY: &[&str] = &["consolidation", "effusion", "lesion", "tumor", "tumour", "nodule", "patholog"];
        let name = name.to_ascii_lowercase();
        let hit = |keys: &[&str]| keys.iter().any(|k| name.contains(k));
        if hit(PATHOLOGY) {
            RoiGroup::Pathology
        } else if hit(CARDIO) {
            RoiGroup::Cardiovascular
        } else if hit(MUSCLE) {
            RoiGroup::Muscle
        } else if hit(BONE) {
            RoiGroup::Bone
        } else {
            RoiGroup::Other
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub name: String,
    pub group: RoiGroup,
}

/// `from` is the RoI column, `to` the explained class row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: String,
    pub to: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceGraph {
    pub k: usize,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

/// Keeps, for every row, the `k` largest defined cells as edges into that
/// row's node. Equal values keep column order. Names missing from `groups`
/// fall back to [`RoiGroup::guess`].
pub fn topk_graph(
    m: &ExplanationMatrix,
    k: usize,
    groups: &BTreeMap<String, RoiGroup>,
) -> Result<ImportanceGraph, AggregateError> {
    if k == 0 {
        return Err(AggregateError::InvalidParam("k must be >= 1".into()));
    }
    let mut names: Vec<&String> = m.col_labels.iter().collect();
    for r in &m.row_labels {
        if !names.contains(&r) {
            names.push(r);
        }
    }
    let nodes = names
        .into_iter()
        .map(|n| GraphNode { name: n.clone(), group: groups.get(n).copied().unwrap_or_else(|| RoiGroup::guess(n)) })
        .collect();
    let mut edges = Vec::new();
    for (a, row) in m.values.iter().enumerate() {
        let mut cells: Vec<(usize, f64)> = row.iter().copied().enumerate().filter(|(_, v)| !v.is_nan()).collect();
        cells.sort_by(|x, y| y.1.total_cmp(&x.1));
        edges.extend(cells.into_iter().take(k).map(|(b, weight)| GraphEdge {
            from: m.col_labels[b].clone(),
            to: m.row_labels[a].clone(),
            weight,
        }));
    }
    Ok(ImportanceGraph { k, nodes, edges })
}

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

impl ImportanceGraph {
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph importance {\n");
        for n in &self.nodes {
            let _ = writeln!(out, "  {} [group=\"{}\"];", dot_id(&n.name), n.group.label());
        }
        for e in &self.edges {
            let _ = writeln!(out, "  {} -> {} [weight=\"{:.4}\"];", dot_id(&e.from), dot_id(&e.to), e.weight);
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn in_degree(&self, node: &str) -> usize {
        self.edges.iter().filter(|e| e.to == node).count()
    }
}
