//! Outlier mining on RoI-importance rows.
//!
//! One isolation forest is trained per explained class on that class's rows
//! of the training explanation matrices. Evaluation rows are scored with
//!
//! ```text
//! s(x) = 2^(−E[h(x)] / c(ψ)),   c(n) = 2 H(n − 1) − 2 (n − 1) / n
//! ```
//!
//! where `h` is the isolation depth (plus `c(size)` for unresolved leaves)
//! and `ψ` the subsample size. Anomaly scores are then rank-correlated with
//! Dice scores.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::ExplanationMatrix;
use crate::rng::RngSpec;
use crate::volume::{ClassMask, VolumeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OutlierError {
    #[error("need at least {needed} usable rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("feature {0} is NaN in every training row")]
    AllNanFeature(usize),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("label mismatch: {0}")]
    LabelMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// One explanation-matrix row: the RoI importances for class `class_id` of
/// input `input_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub input_id: String,
    pub class_id: usize,
    pub features: Vec<f64>,
}

fn harmonic(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

/// Average path length of an unsuccessful search in a binary search tree of
/// `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => 2.0 * harmonic(n - 1) - 2.0 * (n - 1) as f64 / n as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { size: usize },
    Split { feature: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    nodes: Vec<Node>,
}

impl IsolationTree {
    fn grow<R: Rng>(data: &[Vec<f64>], rows: Vec<usize>, height_limit: usize, rng: &mut R) -> Self {
        let mut tree = IsolationTree { nodes: Vec::new() };
        tree.build(data, rows, 0, height_limit, rng);
        tree
    }

    fn build<R: Rng>(&mut self, data: &[Vec<f64>], rows: Vec<usize>, depth: usize, limit: usize, rng: &mut R) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: rows.len() });
        if depth >= limit || rows.len() <= 1 {
            return id;
        }
        // Features that still separate the rows at this node.
        let ranges: Vec<(usize, f64, f64)> = (0..data[rows[0]].len())
            .filter_map(|f| {
                let (lo, hi) = rows
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &r| (l.min(data[r][f]), h.max(data[r][f])));
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let mut value = lo;
        while value <= lo {
            value = lo + rng.random::<f64>() * (hi - lo);
        }
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&r| data[r][feature] < value);
        let left = self.build(data, left_rows, depth + 1, limit, rng);
        let right = self.build(data, right_rows, depth + 1, limit, rng);
        self.nodes[id] = Node::Split { feature, value, left, right };
        id
    }

    pub fn height(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Isolation depth of `x`, with `c(size)` added at unresolved leaves.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[id] {
                Node::Leaf { size } => return depth + average_path_length(size),
                Node::Split { feature, value, left, right } => {
                    id = if x[feature] < value { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }
}

fn default_trees() -> usize {
    100
}
fn default_subsample() -> usize {
    256
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    #[serde(default = "default_trees")]
    pub num_trees: usize,
    #[serde(default = "default_subsample")]
    pub subsample_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { num_trees: default_trees(), subsample_size: default_subsample(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub trees: Vec<IsolationTree>,
    /// Effective subsample size `ψ = min(subsample_size, rows)`.
    pub subsample_size: usize,
    pub height_limit: usize,
    pub dim: usize,
    /// Training means used to fill NaN cells.
    pub feature_means: Vec<f64>,
    /// Rows left out because every feature was NaN.
    pub excluded_rows: usize,
    pub seed: u64,
}

impl IsolationForest {
    /// Rows whose features are all NaN are dropped; remaining NaN cells are
    /// replaced by the per-feature training mean. At each node the split
    /// feature is drawn uniformly among features not constant on the node.
    pub fn train(rows: &[Vec<f64>], config: &ForestConfig) -> Result<Self, OutlierError> {
        if config.num_trees == 0 || config.subsample_size < 2 {
            return Err(OutlierError::InvalidParam("need num_trees >= 1 and subsample_size >= 2".into()));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(OutlierError::DimMismatch { expected: dim, got: bad.len() });
        }
        let usable: Vec<&Vec<f64>> = rows.iter().filter(|r| r.iter().any(|v| !v.is_nan())).collect();
        if usable.len() < 2 || dim == 0 {
            return Err(OutlierError::TooFewRows { needed: 2, got: usable.len() });
        }
        let feature_means = (0..dim)
            .map(|f| {
                let vals: Vec<f64> = usable.iter().map(|r| r[f]).filter(|v| !v.is_nan()).collect();
                if vals.is_empty() {
                    Err(OutlierError::AllNanFeature(f))
                } else {
                    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let data: Vec<Vec<f64>> = usable
            .iter()
            .map(|r| r.iter().zip(&feature_means).map(|(&v, &m)| if v.is_nan() { m } else { v }).collect())
            .collect();
        let psi = config.subsample_size.min(data.len());
        let height_limit = (psi as f64).log2().ceil() as usize;
        let mut rng = RngSpec::new(config.seed).derive_tag("isolation-forest").rng();
        let trees = (0..config.num_trees)
            .map(|_| {
                let sample = index::sample(&mut rng, data.len(), psi).into_vec();
                IsolationTree::grow(&data, sample, height_limit, &mut rng)
            })
            .collect();
        Ok(IsolationForest {
            trees,
            subsample_size: psi,
            height_limit,
            dim,
            feature_means,
            excluded_rows: rows.len() - usable.len(),
            seed: config.seed,
        })
    }

    pub fn mean_path_length(&self, row: &[f64]) -> Result<f64, OutlierError> {
        if row.len() != self.dim {
            return Err(OutlierError::DimMismatch { expected: self.dim, got: row.len() });
        }
        let filled: Vec<f64> = row.iter().zip(&self.feature_means).map(|(&v, &m)| if v.is_nan() { m } else { v }).collect();
        Ok(self.trees.iter().map(|t| t.path_length(&filled)).sum::<f64>() / self.trees.len() as f64)
    }

    /// Anomaly score in `(0, 1]`; higher is more anomalous.
    pub fn score(&self, row: &[f64]) -> Result<f64, OutlierError> {
        let h = self.mean_path_length(row)?;
        let c = average_path_length(self.subsample_size);
        Ok(if c > 0.0 { (-h / c).exp2() } else { 0.5 })
    }
}

pub fn dice(pred: &ClassMask, truth: &ClassMask) -> Result<f64, VolumeError> {
    let both = pred.intersect(truth)?.count();
    let total = pred.count() + truth.count();
    Ok(if total == 0 { 1.0 } else { 2.0 * both as f64 / total as f64 })
}

/// Ranks starting at 1; tied values share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + G + 0.5;
    let series = COEF[1..].iter().enumerate().fold(COEF[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

/// Continued fraction of the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability `P(|T| ≥ |t|)` of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankTestResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
    /// A series was constant; `rho` and `p_value` are NaN.
    pub degenerate: bool,
}

pub fn spearman_test(a: &[f64], b: &[f64]) -> Result<RankTestResult, OutlierError> {
    if a.len() != b.len() {
        return Err(OutlierError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 3 {
        return Err(OutlierError::TooFewRows { needed: 3, got: n });
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean).powi(2);
        sbb += (y - mean).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(RankTestResult { rho: f64::NAN, p_value: f64::NAN, n, degenerate: true });
    }
    let rho = (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0);
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        student_t_two_sided(rho * (df / (1.0 - rho * rho)).sqrt(), df)
    };
    Ok(RankTestResult { rho, p_value, n, degenerate: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub input_id: String,
    pub class: String,
    pub anomaly_score: f64,
    pub dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub label: String,
    pub result: RankTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFailure {
    pub class: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub scores: Vec<ScoreRow>,
    /// Present only when Dice scores were supplied.
    pub rank_tests: Option<Vec<RankRow>>,
    pub failures: Vec<ClassFailure>,
}

/// Label of the test between label-averaged anomaly and Dice scores.
pub const AVERAGE_LABEL: &str = "average";

/// Dice lookup keyed by `(input_id, class label)`.
pub type DiceTable = BTreeMap<(String, String), f64>;

/// Trains one forest per class on `train` and scores every row of `eval`.
/// Class failures are recorded and the remaining classes still run.
pub fn outlier_pipeline(
    train: &[ExplanationMatrix],
    eval: &[(String, ExplanationMatrix)],
    dice_scores: Option<&DiceTable>,
    config: &ForestConfig,
) -> Result<OutlierReport, OutlierError> {
    let first = train.first().ok_or(OutlierError::TooFewRows { needed: 2, got: 0 })?;
    let labels = |m: &ExplanationMatrix| (m.row_labels.clone(), m.col_labels.clone());
    if let Some(m) = train.iter().chain(eval.iter().map(|(_, m)| m)).find(|m| labels(m) != labels(first)) {
        return Err(OutlierError::LabelMismatch(format!(
            "expected rows {:?} / cols {:?}, found rows {:?} / cols {:?}",
            first.row_labels, first.col_labels, m.row_labels, m.col_labels
        )));
    }
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    let mut rank_tests = Vec::new();
    for (a, class) in first.row_labels.iter().enumerate() {
        let rows: Vec<Vec<f64>> = train.iter().map(|m| m.values[a].clone()).collect();
        let class_config = ForestConfig { seed: RngSpec::new(config.seed).derive(a as u64).seed, ..*config };
        let forest = match IsolationForest::train(&rows, &class_config) {
            Ok(f) => f,
            Err(e) => {
                failures.push(ClassFailure { class: class.clone(), error: e.to_string() });
                continue;
            }
        };
        let mut pairs = (Vec::new(), Vec::new());
        for (input_id, m) in eval {
            let row = &m.values[a];
            if row.iter().all(|v| v.is_nan()) {
                continue;
            }
            let score = forest.score(row)?;
            let dice = dice_scores.and_then(|d| d.get(&(input_id.clone(), class.clone())).copied());
            if let Some(d) = dice.filter(|d| !d.is_nan()) {
                pairs.0.push(score);
                pairs.1.push(d);
            }
            scores.push(ScoreRow { input_id: input_id.clone(), class: class.clone(), anomaly_score: score, dice });
        }
        if dice_scores.is_some() {
            match spearman_test(&pairs.0, &pairs.1) {
                Ok(result) => rank_tests.push(RankRow { label: class.clone(), result }),
                Err(e) => failures.push(ClassFailure { class: class.clone(), error: format!("rank test: {e}") }),
            }
        }
    }
    if dice_scores.is_some() {
        let mut by_input: BTreeMap<&str, (f64, usize, f64, usize)> = BTreeMap::new();
        for s in &scores {
            let entry = by_input.entry(s.input_id.as_str()).or_default();
            entry.0 += s.anomaly_score;
            entry.1 += 1;
            if let Some(d) = s.dice.filter(|d| !d.is_nan()) {
                entry.2 += d;
                entry.3 += 1;
            }
        }
        let (avg_score, avg_dice): (Vec<f64>, Vec<f64>) = eval
            .iter()
            .filter_map(|(id, _)| by_input.get(id.as_str()))
            .filter(|e| e.1 > 0 && e.3 > 0)
            .map(|e| (e.0 / e.1 as f64, e.2 / e.3 as f64))
            .unzip();
        match spearman_test(&avg_score, &avg_dice) {
            Ok(result) => rank_tests.push(RankRow { label: AVERAGE_LABEL.into(), result }),
            Err(e) => failures.push(ClassFailure { class: AVERAGE_LABEL.into(), error: format!("rank test: {e}") }),
        }
    }
    Ok(OutlierReport { scores, rank_tests: dice_scores.map(|_| rank_tests), failures })
}

fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

impl OutlierReport {
    /// `input_id,class,anomaly_score,dice`.
    pub fn scores_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["input_id", "class", "anomaly_score", "dice"]).expect("in-memory write");
        for s in &self.scores {
            w.write_record([s.input_id.clone(), s.class.clone(), cell(s.anomaly_score), s.dice.map_or(String::new(), cell)])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// `Label,p-value,Spearman Correlation`; `None` without Dice scores.
    pub fn rank_tests_csv(&self) -> Option<String> {
        let tests = self.rank_tests.as_ref()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["Label", "p-value", "Spearman Correlation"]).expect("in-memory write");
        for t in tests {
            w.write_record([t.label.clone(), cell(t.result.p_value), cell(t.result.rho)]).expect("in-memory write");
        }
        Some(String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{Scope, SignMode};
    use crate::volume::Dims;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = RngSpec::new(seed).rng();
        (0..n).map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
    }

    #[test]
    fn path_length_normalizer() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        // c(3) = 2(1 + 1/2) − 4/3
        assert!((average_path_length(3) - (3.0 - 4.0 / 3.0)).abs() < 1e-15);
        let exact: f64 = 2.0 * (1..256).rev().map(|k| 1.0 / k as f64).sum::<f64>() - 2.0 * 255.0 / 256.0;
        assert!((average_path_length(256) - exact).abs() < 1e-12);
        // Close to the asymptotic 2(ln(n−1) + γ) − 2(n−1)/n.
        let asymptotic = 2.0 * (255f64.ln() + 0.577_215_664_9) - 2.0 * 255.0 / 256.0;
        assert!((average_path_length(256) - asymptotic).abs() < 1e-2);
    }

    #[test]
    fn identical_rows_score_half() {
        let rows = vec![vec![0.3, 0.7]; 10];
        let f = IsolationForest::train(&rows, &ForestConfig::default()).unwrap();
        for r in &rows {
            assert!((f.score(r).unwrap() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_and_height_capped() {
        let rows = gaussian_rows(300, 4, 1);
        let config = ForestConfig { seed: 9, ..Default::default() };
        let a = IsolationForest::train(&rows, &config).unwrap();
        let b = IsolationForest::train(&rows, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.subsample_size, 256);
        assert_eq!(a.height_limit, 8);
        assert!(a.trees.iter().all(|t| t.height() <= 8));
    }

    #[test]
    fn far_point_scores_highest() {
        let mut rows = gaussian_rows(200, 2, 3);
        rows.push(vec![8.0, -8.0]);
        let f = IsolationForest::train(&rows, &ForestConfig { seed: 2, ..Default::default() }).unwrap();
        let scores: Vec<f64> = rows.iter().map(|r| f.score(r).unwrap()).collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(scores[200], top);
        assert!(scores.iter().all(|&s| s > 0.0 && s <= 1.0));
    }

    #[test]
    fn nan_handling() {
        let mut rows = gaussian_rows(20, 3, 4);
        rows[0][1] = f64::NAN;
        rows.push(vec![f64::NAN; 3]);
        let f = IsolationForest::train(&rows, &ForestConfig::default()).unwrap();
        assert_eq!(f.excluded_rows, 1);
        assert!(f.feature_means.iter().all(|m| m.is_finite()));
        assert!(f.score(&[f64::NAN, 0.0, 0.0]).unwrap().is_finite());
        let mut all_nan = gaussian_rows(5, 2, 1);
        for r in &mut all_nan {
            r[1] = f64::NAN;
        }
        assert_eq!(IsolationForest::train(&all_nan, &ForestConfig::default()), Err(OutlierError::AllNanFeature(1)));
        assert!(matches!(f.score(&[0.0]), Err(OutlierError::DimMismatch { .. })));
    }

    #[test]
    fn dice_examples() {
        let m = |b: &[u8]| ClassMask::new(Dims::new(b.len(), 1, 1), b.to_vec()).unwrap();
        assert_eq!(dice(&m(&[1, 1, 0, 0]), &m(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(dice(&m(&[1, 0, 0, 0]), &m(&[0, 1, 0, 0])).unwrap(), 0.0);
        assert_eq!(dice(&m(&[1, 1, 0, 0]), &m(&[1, 0, 1, 0])).unwrap(), 0.5);
        assert_eq!(dice(&m(&[0, 0]), &m(&[0, 0])).unwrap(), 1.0);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn spearman_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = spearman_test(&a, &a).unwrap();
        assert_eq!((r.rho, r.p_value), (1.0, 0.0));
        let rev: Vec<f64> = a.iter().rev().copied().collect();
        assert_eq!(spearman_test(&a, &rev).unwrap().rho, -1.0);
        let r = spearman_test(&a, &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap();
        assert_eq!(r.rho, 0.8);
        assert!((r.p_value - 0.104).abs() < 1e-3, "{}", r.p_value);
        let flat = spearman_test(&a, &[2.0; 5]).unwrap();
        assert!(flat.degenerate && flat.rho.is_nan());
        assert!(spearman_test(&a[..2], &a[..2]).is_err());
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a; t with 1 df is Cauchy.
        assert!((incomplete_beta(1.0, 1.0, 0.3) - 0.3).abs() < 1e-14);
        assert!((incomplete_beta(2.5, 1.0, 0.4) - 0.4f64.powf(2.5)).abs() < 1e-14);
        let cauchy = 1.0 - 2.0 * 2.0f64.atan() / std::f64::consts::PI;
        assert!((student_t_two_sided(2.0, 1.0) - cauchy).abs() < 1e-12);
    }

    fn matrix(rows: &[&str], values: Vec<Vec<f64>>) -> ExplanationMatrix {
        let cols = (0..values[0].len()).map(|i| format!("roi{i}")).collect();
        let support = values.iter().map(|r| r.iter().map(|v| usize::from(!v.is_nan())).collect()).collect();
        ExplanationMatrix {
            row_labels: rows.iter().map(|s| s.to_string()).collect(),
            col_labels: cols,
            values,
            scope: Scope::Local,
            sign_mode: SignMode::Absolute,
            support,
        }
    }

    #[test]
    fn pipeline_ranks_planted_rows_first() {
        let normal = gaussian_rows(120, 4, 5);
        let train: Vec<ExplanationMatrix> =
            normal.chunks(2).map(|c| matrix(&["a", "b"], vec![c[0].clone(), c[1].clone()])).collect();
        let mut eval: Vec<(String, ExplanationMatrix)> = gaussian_rows(20, 4, 6)
            .chunks(2)
            .enumerate()
            .map(|(i, c)| (format!("e{i}"), matrix(&["a", "b"], vec![c[0].clone(), c[1].clone()])))
            .collect();
        eval[3].1.values[0] = vec![6.0; 4];
        eval[7].1.values[1] = vec![-6.0; 4];
        let report = outlier_pipeline(&train, &eval, None, &ForestConfig::default()).unwrap();
        for (class, planted) in [("a", "e3"), ("b", "e7")] {
            let top = report
                .scores
                .iter()
                .filter(|s| s.class == class)
                .max_by(|x, y| x.anomaly_score.total_cmp(&y.anomaly_score))
                .unwrap();
            assert_eq!(top.input_id, planted);
        }
        assert!(report.rank_tests_csv().is_none());
        assert!(report.scores_csv().starts_with("input_id,class,anomaly_score,dice\n"));
    }

    #[test]
    fn pipeline_anti_monotone_dice_and_label_mismatch() {
        let train: Vec<ExplanationMatrix> = gaussian_rows(60, 3, 7).chunks(1).map(|c| matrix(&["a"], c.to_vec())).collect();
        let eval: Vec<(String, ExplanationMatrix)> =
            gaussian_rows(8, 3, 8).into_iter().enumerate().map(|(i, r)| (format!("e{i}"), matrix(&["a"], vec![r]))).collect();
        let config = ForestConfig { seed: 1, ..Default::default() };
        let scores = outlier_pipeline(&train, &eval, None, &config).unwrap().scores;
        let mut dice = DiceTable::new();
        for s in &scores {
            dice.insert((s.input_id.clone(), s.class.clone()), 1.0 - s.anomaly_score);
        }
        let report = outlier_pipeline(&train, &eval, Some(&dice), &config).unwrap();
        let tests = report.rank_tests.as_ref().unwrap();
        assert_eq!(tests[0].label, "a");
        assert_eq!(tests[0].result.rho, -1.0);
        assert_eq!(tests[1].label, AVERAGE_LABEL);
        let csv = report.rank_tests_csv().unwrap();
        assert!(csv.starts_with("Label,p-value,Spearman Correlation\na,0,-1\n"), "{csv}");

        let other = vec![("x".to_string(), matrix(&["z"], vec![vec![0.0; 3]]))];
        assert!(matches!(outlier_pipeline(&train, &other, None, &config), Err(OutlierError::LabelMismatch(_))));
    }

    proptest! {
        #[test]
        fn spearman_invariant_under_monotone_maps(a in prop::collection::vec(-100.0f64..100.0, 3..30), seed in any::<u64>()) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + ((seed >> (i % 64)) & 7) as f64).collect();
            let base = spearman_test(&a, &b).unwrap();
            let mapped: Vec<f64> = a.iter().map(|v| (v / 50.0).exp() * 3.0 + 1.0).collect();
            let other = spearman_test(&mapped, &b).unwrap();
            if base.degenerate {
                prop_assert!(other.degenerate);
            } else {
                prop_assert!((base.rho - other.rho).abs() < 1e-12);
                prop_assert!(base.rho.abs() <= 1.0);
            }
        }

        #[test]
        fn dice_symmetric(bits_a in prop::collection::vec(0u8..2, 1..40), seed in any::<u64>()) {
            let n = bits_a.len();
            let bits_b: Vec<u8> = (0..n).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
            let a = ClassMask::new(Dims::new(n, 1, 1), bits_a).unwrap();
            let b = ClassMask::new(Dims::new(n, 1, 1), bits_b).unwrap();
            prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn scores_in_unit_interval(seed in 0u64..50) {
            let rows = gaussian_rows(40, 3, seed);
            let f = IsolationForest::train(&rows, &ForestConfig { num_trees: 20, seed, ..Default::default() }).unwrap();
            for r in &rows {
                let s = f.score(r).unwrap();
                prop_assert!(s > 0.0 && s <= 1.0);
            }
        }
    }
}
