//! Attribution quality metrics and the benchmark runner.
//!
//! * faithfulness: Pearson correlation, over `n` random voxel subsets `S` of
//!   size `m`, between the attribution mass `Σ_{j∈S} g_j` and the proxy drop
//!   `f̂_c(x) − f̂_c(x_S)` where `x_S` zeroes the subset;
//! * sensitivity: mean relative distance `‖g(x') − g(x)‖₂ / ‖g(x)‖₂` between
//!   normalized attributions at `x` and at `n` Gaussian perturbations `x'`;
//! * complexity: fraction of normalized attributions above `θ`;
//! * efficiency: wall-clock seconds of one attribution.
//!
//! Perturbed inputs keep the proxy mask predicted on `x`. Attributions of
//! perturbed inputs reuse the random stream of the reference attribution, so
//! stochastic methods see the same noise draws and a zero radius gives zero.

use std::time::Instant;

use rand::seq::index;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute, AttributionError, AttributionField, Method, MethodKind};
use crate::model::{forward, proxy_value_raw, ModelError, SegmentationModel};
use crate::rng::RngSpec;
use crate::volume::{argmax_masks, ClassMask, Volume};

/// Attributions min-max scaled into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAttribution {
    pub data: Vec<f64>,
    /// The input was constant; `data` is all zeros.
    pub constant: bool,
}

pub fn normalize(e: &[f64]) -> NormalizedAttribution {
    let (lo, hi) = e.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > lo) {
        return NormalizedAttribution { data: vec![0.0; e.len()], constant: true };
    }
    let span = hi - lo;
    NormalizedAttribution { data: e.iter().map(|v| (v - lo) / span).collect(), constant: false }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub value: f64,
    /// One series had zero variance; `value` is 0.
    pub degenerate: bool,
}

pub fn pearson(a: &[f64], b: &[f64]) -> Correlation {
    assert_eq!(a.len(), b.len(), "correlated series differ in length");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 || !(saa * sbb).is_finite() {
        return Correlation { value: 0.0, degenerate: true };
    }
    Correlation { value: (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0), degenerate: false }
}

pub const REFERENCE_SUBSET: usize = 224 * 224;

/// `min(224², p/2)`, at least 1.
pub fn default_subset_size(p: usize) -> usize {
    REFERENCE_SUBSET.min(p / 2).max(1)
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MetricError {
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

#[allow(clippy::too_many_arguments)]
pub fn faithfulness(
    g: &[f64],
    model: &dyn SegmentationModel,
    x: &Volume,
    class_id: usize,
    mask: &ClassMask,
    n: usize,
    m: usize,
    rng: RngSpec,
) -> Result<Correlation, MetricError> {
    let p = x.len();
    if g.len() != p {
        return Err(MetricError::InvalidParam(format!("attribution has {} values for {p} voxels", g.len())));
    }
    if n < 3 || m == 0 || m > p {
        return Err(MetricError::InvalidParam(format!("need n >= 3 and 1 <= m <= {p}, got n = {n}, m = {m}")));
    }
    let base = x.to_f64();
    let full = crate::model::proxy_value(model, x, class_id, mask)?.value;
    let mut rng = rng.rng();
    let mut mass = Vec::with_capacity(n);
    let mut drop = Vec::with_capacity(n);
    let mut masked = base.clone();
    for _ in 0..n {
        let subset = index::sample(&mut rng, p, m);
        masked.copy_from_slice(&base);
        let mut sum = 0.0;
        for j in subset.iter() {
            masked[j] = 0.0;
            sum += g[j];
        }
        mass.push(sum);
        drop.push(full - proxy_value_raw(model, &masked, class_id, mask.data())?);
    }
    Ok(pearson(&mass, &drop))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    pub value: f64,
    /// `‖g(x)‖₂ = 0`, so distances are absolute.
    pub absolute: bool,
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|d| d * d).sum::<f64>().sqrt()
}

fn perturbed_distances(
    reference: &[f64],
    method: &Method,
    model: &dyn SegmentationModel,
    x: &Volume,
    class_id: usize,
    mask: &ClassMask,
    n: usize,
    radius: f64,
    rng: RngSpec,
) -> Result<Sensitivity, MetricError> {
    if n == 0 || !(radius >= 0.0 && radius.is_finite()) {
        return Err(MetricError::InvalidParam(format!("need n >= 1 and a finite radius >= 0, got n = {n}, radius = {radius}")));
    }
    let noise = Normal::new(0.0, radius).expect("radius checked");
    let mut noise_rng = rng.derive_tag("perturb").rng();
    let norm = l2(reference.iter().copied());
    let base = x.to_f64();
    let mut total = 0.0;
    for _ in 0..n {
        let shifted: Vec<f64> = base.iter().map(|v| v + noise.sample(&mut noise_rng)).collect();
        let xp = Volume::from_f64(x.dims(), &shifted).map_err(AttributionError::from)?;
        let g = normalize(&attribute(model, &xp, class_id, mask, method, rng.derive_tag("attribute"))?.data);
        let dist = l2(g.data.iter().zip(reference).map(|(a, b)| a - b));
        total += if norm > 0.0 { dist / norm } else { dist };
    }
    Ok(Sensitivity { value: total / n as f64, absolute: norm == 0.0 })
}

/// Mean distance between the normalized attribution at `x` and at `n`
/// perturbations `x + N(0, radius²)`; attributions are recomputed each time.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity(
    method: &Method,
    model: &dyn SegmentationModel,
    x: &Volume,
    class_id: usize,
    mask: &ClassMask,
    n: usize,
    radius: f64,
    rng: RngSpec,
) -> Result<Sensitivity, MetricError> {
    let reference = normalize(&attribute(model, x, class_id, mask, method, rng.derive_tag("attribute"))?.data);
    perturbed_distances(&reference.data, method, model, x, class_id, mask, n, radius, rng)
}

pub fn complexity(g: &[f64], theta: f64) -> f64 {
    if g.is_empty() {
        return 0.0;
    }
    g.iter().filter(|&&v| v > theta).count() as f64 / g.len() as f64
}

/// Runs one attribution and returns it with its wall-clock duration.
pub fn efficiency(
    method: &Method,
    model: &dyn SegmentationModel,
    x: &Volume,
    class_id: usize,
    mask: &ClassMask,
    rng: RngSpec,
) -> Result<(AttributionField, f64), AttributionError> {
    let start = Instant::now();
    let field = attribute(model, x, class_id, mask, method, rng)?;
    Ok((field, start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE)))
}

fn default_faithfulness_n() -> usize {
    100
}
fn default_sensitivity_n() -> usize {
    3
}
fn default_point_one() -> f64 {
    0.1
}

/// Metric hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    #[serde(default = "default_faithfulness_n")]
    pub faithfulness_n: usize,
    /// Faithfulness subset size; `min(224², p/2)` when unset.
    #[serde(default)]
    pub subset_size: Option<usize>,
    #[serde(default = "default_sensitivity_n")]
    pub sensitivity_n: usize,
    #[serde(default = "default_point_one")]
    pub radius: f64,
    #[serde(default = "default_point_one")]
    pub theta: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            faithfulness_n: default_faithfulness_n(),
            subset_size: None,
            sensitivity_n: default_sensitivity_n(),
            radius: default_point_one(),
            theta: default_point_one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub method: MethodKind,
    pub input_id: String,
    pub class: String,
    pub class_id: usize,
    pub faithfulness: f64,
    pub sensitivity: f64,
    pub complexity: f64,
    pub efficiency_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// All four metrics for one (method, input, class).
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    method: &Method,
    model: &dyn SegmentationModel,
    x: &Volume,
    class_id: usize,
    mask: &ClassMask,
    config: &MetricConfig,
    rng: RngSpec,
) -> Result<(f64, f64, f64, f64, Vec<String>), MetricError> {
    let (field, seconds) = efficiency(method, model, x, class_id, mask, rng.derive_tag("attribute"))?;
    let g = normalize(&field.data);
    let m = config.subset_size.unwrap_or_else(|| default_subset_size(x.len()));
    let faith = faithfulness(&g.data, model, x, class_id, mask, config.faithfulness_n, m, rng.derive_tag("faithfulness"))?;
    let sens = perturbed_distances(&g.data, method, model, x, class_id, mask, config.sensitivity_n, config.radius, rng)?;
    let mut flags = Vec::new();
    if g.constant {
        flags.push("constant_attribution".to_owned());
    }
    if faith.degenerate {
        flags.push("degenerate_correlation".to_owned());
    }
    if sens.absolute {
        flags.push("absolute_sensitivity".to_owned());
    }
    Ok((faith.value, sens.value, complexity(&g.data, config.theta), seconds, flags))
}

/// One input of a benchmark run.
pub struct BenchmarkInput<'a> {
    pub input_id: String,
    pub model: &'a dyn SegmentationModel,
    pub x: Volume,
}

/// One (input, method, class) evaluation of a benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkUnit {
    pub input_index: usize,
    pub method_index: usize,
    pub class_id: usize,
    pub mask: ClassMask,
}

/// Enumerates units input-major, then method, then class. Classes without a
/// predicted voxel are left out.
pub fn plan_benchmark(
    inputs: &[BenchmarkInput],
    methods: &[Method],
    classes: Option<&[usize]>,
) -> Result<Vec<BenchmarkUnit>, MetricError> {
    if inputs.is_empty() || methods.is_empty() {
        return Err(MetricError::InvalidParam("benchmark needs at least one input and one method".into()));
    }
    let mut units = Vec::new();
    for (input_index, input) in inputs.iter().enumerate() {
        let masks = argmax_masks(&forward(input.model, &input.x)?);
        let all: Vec<usize> = (0..masks.len()).collect();
        for method_index in 0..methods.len() {
            for &class_id in classes.unwrap_or(&all) {
                let mask = masks.get(class_id).ok_or(ModelError::ClassOutOfRange { class_id, num_classes: masks.len() })?;
                if !mask.is_empty() {
                    units.push(BenchmarkUnit { input_index, method_index, class_id, mask: mask.clone() });
                }
            }
        }
    }
    Ok(units)
}

/// Evaluates one unit; failures become a record carrying the error.
pub fn run_unit(
    inputs: &[BenchmarkInput],
    methods: &[Method],
    unit: &BenchmarkUnit,
    class_names: &[String],
    config: &MetricConfig,
    rng: RngSpec,
) -> MetricRecord {
    let input = &inputs[unit.input_index];
    let method = &methods[unit.method_index];
    let unit_rng = rng.for_unit("benchmark", unit.input_index as u64, unit.class_id as u64).derive_tag(method.kind().label());
    let class = class_names.get(unit.class_id).cloned().unwrap_or_else(|| unit.class_id.to_string());
    let mut record = MetricRecord {
        method: method.kind(),
        input_id: input.input_id.clone(),
        class,
        class_id: unit.class_id,
        faithfulness: f64::NAN,
        sensitivity: f64::NAN,
        complexity: f64::NAN,
        efficiency_s: f64::NAN,
        flags: Vec::new(),
        error: None,
    };
    match evaluate(method, input.model, &input.x, unit.class_id, &unit.mask, config, unit_rng) {
        Ok((f, s, c, e, flags)) => {
            record.faithfulness = f;
            record.sensitivity = s;
            record.complexity = c;
            record.efficiency_s = e;
            record.flags = flags;
        }
        Err(err) => record.error = Some(err.to_string()),
    }
    record
}

pub fn run_benchmark(
    inputs: &[BenchmarkInput],
    methods: &[Method],
    classes: Option<&[usize]>,
    class_names: &[String],
    config: &MetricConfig,
    dataset: &str,
    rng: RngSpec,
) -> Result<MetricReport, MetricError> {
    let units = plan_benchmark(inputs, methods, classes)?;
    let records = units.iter().map(|u| run_unit(inputs, methods, u, class_names, config, rng)).collect();
    Ok(MetricReport { dataset: dataset.to_owned(), records })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation of the non-NaN values.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> Stat {
    let v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return Stat { mean: f64::NAN, std: f64::NAN };
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Stat { mean, std: var.sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: MethodKind,
    pub records: usize,
    pub failures: usize,
    pub faithfulness: Stat,
    pub sensitivity: Stat,
    pub complexity: Stat,
    pub efficiency_s: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub records: Vec<MetricRecord>,
}

fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

impl MetricReport {
    /// Per-method statistics in order of first appearance.
    pub fn summary(&self) -> Vec<MethodSummary> {
        let mut order: Vec<MethodKind> = Vec::new();
        for r in &self.records {
            if !order.contains(&r.method) {
                order.push(r.method);
            }
        }
        order
            .into_iter()
            .map(|method| {
                let rs: Vec<&MetricRecord> = self.records.iter().filter(|r| r.method == method).collect();
                MethodSummary {
                    method,
                    records: rs.len(),
                    failures: rs.iter().filter(|r| r.error.is_some()).count(),
                    faithfulness: mean_std(rs.iter().map(|r| r.faithfulness)),
                    sensitivity: mean_std(rs.iter().map(|r| r.sensitivity)),
                    complexity: mean_std(rs.iter().map(|r| r.complexity)),
                    efficiency_s: mean_std(rs.iter().map(|r| r.efficiency_s)),
                }
            })
            .collect()
    }

    /// `method,input_id,class,faithfulness,sensitivity,complexity,efficiency_s`.
    pub fn records_csv(&self, with_timing: bool) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "input_id", "class", "faithfulness", "sensitivity", "complexity", "efficiency_s"])
            .expect("in-memory write");
        for r in &self.records {
            let timing = if with_timing { cell(r.efficiency_s) } else { String::new() };
            w.write_record([
                r.method.label().to_owned(),
                r.input_id.clone(),
                r.class.clone(),
                cell(r.faithfulness),
                cell(r.sensitivity),
                cell(r.complexity),
                timing,
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// One row per method with `mean ± std` cells, as in the benchmark table.
    pub fn table_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["dataset", "method", "faithfulness", "sensitivity", "complexity", "efficiency_s"])
            .expect("in-memory write");
        let fmt = |s: Stat| format!("{:.3} ± {:.3}", s.mean, s.std);
        for s in self.summary() {
            w.write_record([
                self.dataset.clone(),
                s.method.label().to_owned(),
                fmt(s.faithfulness),
                fmt(s.sensitivity),
                fmt(s.complexity),
                fmt(s.efficiency_s),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "dataset": self.dataset,
            "records": self.records.len(),
            "methods": self.summary(),
        }))
        .expect("summary serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Nonlinearity, SyntheticModel, SyntheticModelSpec};
    use crate::volume::Dims;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[-1.0, 0.0, 1.0]).data, vec![0.0, 0.5, 1.0]);
        let c = normalize(&[3.0; 4]);
        assert!(c.constant);
        assert_eq!(c.data, vec![0.0; 4]);
        let unit = [0.0, 0.25, 1.0];
        assert_eq!(normalize(&unit).data, unit.to_vec());
    }

    #[test]
    fn complexity_examples() {
        assert_eq!(complexity(&[0.0; 5], 0.1), 0.0);
        assert_eq!(complexity(&[0.05, 0.5, 0.95, 0.2], 0.1), 0.75);
        assert_eq!(complexity(&[0.3, 0.01, 1.0], 0.0), 1.0);
    }

    #[test]
    fn pearson_degenerate_and_perfect() {
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).degenerate);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).value, 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).value, -1.0);
    }

    fn linear(d: Dims) -> (SyntheticModel, SyntheticModelSpec) {
        let mut spec = SyntheticModelSpec::random(d, 3, Nonlinearity::Identity, 4);
        spec.context = vec![0.0; 3];
        (SyntheticModel::new(spec.clone()).unwrap(), spec)
    }

    #[test]
    fn faithfulness_of_exact_contributions() {
        let d = Dims::cube(6);
        let (model, spec) = linear(d);
        let x = crate::synthetic::smooth_volume(d, 1);
        let mask = ClassMask::full(d);
        let exact: Vec<f64> = (0..d.len()).map(|i| spec.weights[2][i] * f64::from(x.data()[i])).collect();
        let f = faithfulness(&exact, &model, &x, 2, &mask, 100, 50, RngSpec::new(1)).unwrap();
        assert!(f.value >= 0.99, "{f:?}");
        let negated: Vec<f64> = exact.iter().map(|v| -v).collect();
        let f = faithfulness(&normalize(&negated).data, &model, &x, 2, &mask, 100, 50, RngSpec::new(1)).unwrap();
        assert!(f.value <= -0.99, "{f:?}");
        let flat = faithfulness(&[0.5; 216], &model, &x, 2, &mask, 100, 50, RngSpec::new(1)).unwrap();
        assert_eq!(flat, Correlation { value: 0.0, degenerate: true });
        assert!(faithfulness(&exact, &model, &x, 2, &mask, 2, 50, RngSpec::new(1)).is_err());
    }

    #[test]
    fn sensitivity_examples() {
        let d = Dims::cube(4);
        let (model, _) = linear(d);
        let x = crate::synthetic::smooth_volume(d, 2);
        let mask = ClassMask::full(d);
        let s = sensitivity(&Method::VanillaGradient, &model, &x, 1, &mask, 3, 0.1, RngSpec::new(0)).unwrap();
        assert_eq!(s.value, 0.0);
        let smooth = SyntheticModel::new(SyntheticModelSpec::random(d, 3, Nonlinearity::SmoothSaturating, 4)).unwrap();
        for method in [Method::VanillaGradient, Method::smoothgrad()] {
            let s = sensitivity(&method, &smooth, &x, 1, &mask, 2, 0.0, RngSpec::new(0)).unwrap();
            assert_eq!(s.value, 0.0, "{method:?}");
            let s = sensitivity(&method, &smooth, &x, 1, &mask, 2, 0.1, RngSpec::new(0)).unwrap();
            assert!(s.value > 0.0);
        }
    }

    #[test]
    fn efficiency_is_positive_and_orders_call_counts() {
        let d = Dims::cube(8);
        let model = SyntheticModel::new(SyntheticModelSpec::random(d, 3, Nonlinearity::SmoothSaturating, 1)).unwrap();
        let x = crate::synthetic::smooth_volume(d, 1);
        let mask = ClassMask::full(d);
        let vg = efficiency(&Method::VanillaGradient, &model, &x, 0, &mask, RngSpec::new(0)).unwrap().1;
        assert!(vg > 0.0);
        let ig = efficiency(&Method::IntegratedGradients { n: 200, baseline: 0.0 }, &model, &x, 0, &mask, RngSpec::new(0))
            .unwrap()
            .1;
        assert!(ig >= vg, "IG {ig} vs VG {vg}");
    }

    #[test]
    fn report_layout_and_single_record() {
        let d = Dims::cube(4);
        let model = SyntheticModel::new(SyntheticModelSpec::random(d, 2, Nonlinearity::SmoothSaturating, 6)).unwrap();
        let inputs = vec![BenchmarkInput { input_id: "a".into(), model: &model, x: crate::synthetic::smooth_volume(d, 1) }];
        let names = vec!["bg".to_owned(), "organ".to_owned()];
        let config = MetricConfig::default();
        let report =
            run_benchmark(&inputs, &[Method::VanillaGradient], Some(&[0]), &names, &config, "synthetic", RngSpec::new(3))
                .unwrap();
        assert_eq!(report.records.len(), 1);
        let s = &report.summary()[0];
        assert_eq!(s.faithfulness.std, 0.0);
        assert_eq!(s.records, 1);
        let csv = report.records_csv(true);
        assert!(csv.starts_with("method,input_id,class,faithfulness,sensitivity,complexity,efficiency_s\nVG,a,bg,"));
        let table = report.table_csv();
        assert!(table.starts_with("dataset,method,faithfulness,sensitivity,complexity,efficiency_s\nsynthetic,VG,"));
        let again =
            run_benchmark(&inputs, &[Method::VanillaGradient], Some(&[0]), &names, &config, "synthetic", RngSpec::new(3))
                .unwrap();
        assert_eq!(again.records_csv(false), report.records_csv(false));
    }

    #[test]
    fn identical_inputs_average_to_single_values() {
        let d = Dims::cube(4);
        let model = SyntheticModel::new(SyntheticModelSpec::random(d, 2, Nonlinearity::SmoothSaturating, 6)).unwrap();
        let x = crate::synthetic::smooth_volume(d, 1);
        let inputs: Vec<BenchmarkInput> =
            ["a", "b"].iter().map(|id| BenchmarkInput { input_id: id.to_string(), model: &model, x: x.clone() }).collect();
        let report = run_benchmark(&inputs, &[Method::VanillaGradient], Some(&[1]), &[], &MetricConfig::default(), "s", RngSpec::new(0))
            .unwrap();
        // VG is deterministic and the per-unit streams only differ in the faithfulness subsets.
        assert_eq!(report.records[0].complexity, report.records[1].complexity);
        assert_eq!(report.summary()[0].complexity.mean, report.records[0].complexity);
        assert_eq!(report.summary()[0].complexity.std, 0.0);
    }
}
