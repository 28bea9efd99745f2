//! Desk-scale synthetic inputs: smooth random volumes paired with random
//! synthetic models, reproducible from a seed.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::model::{Nonlinearity, SyntheticModel, SyntheticModelSpec};
use crate::rng::RngSpec;
use crate::volume::{Dims, Volume};

/// A smooth field in `[0, 1]`: a few Gaussian blobs over a low-amplitude
/// noise floor, min-max scaled.
pub fn smooth_volume(dims: Dims, seed: u64) -> Volume {
    let mut rng = RngSpec::new(seed).derive_tag("smooth-volume").rng();
    let noise = Normal::new(0.0, 0.05).expect("valid scale");
    let extent = dims.0.map(|n| n as f64);
    let radius = extent.iter().cloned().fold(1.0, f64::max) / 3.0;
    let blobs: Vec<([f64; 3], f64)> = (0..4)
        .map(|_| {
            let centre = extent.map(|n| rng.random::<f64>() * n);
            (centre, rng.random_range(0.3..1.0))
        })
        .collect();
    let raw: Vec<f64> = (0..dims.len())
        .map(|i| {
            let (x, y, z) = dims.coords(i);
            let p = [x as f64, y as f64, z as f64];
            let signal: f64 = blobs
                .iter()
                .map(|(c, a)| {
                    let d2: f64 = (0..3).map(|k| (p[k] - c[k]).powi(2)).sum();
                    a * (-d2 / (2.0 * radius * radius)).exp()
                })
                .sum();
            signal + noise.sample(&mut rng)
        })
        .collect();
    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data: Vec<f64> = raw.iter().map(|v| (v - lo) / span).collect();
    Volume::from_f64(dims, &data).expect("finite by construction")
}

/// One input of the synthetic suite.
#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub input_id: String,
    pub x: Volume,
    pub model: SyntheticModelSpec,
}

impl SyntheticCase {
    pub fn build_model(&self) -> SyntheticModel {
        SyntheticModel::new(self.model.clone()).expect("suite specs are valid")
    }
}

/// Description of a reproducible suite of `count` cases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteSpec {
    pub dims: Dims,
    pub num_classes: usize,
    pub nonlinearity: Nonlinearity,
    pub count: usize,
    pub seed: u64,
    /// One model for all cases instead of one per case.
    pub shared_model: bool,
}

pub fn synthetic_suite(spec: &SuiteSpec) -> Vec<SyntheticCase> {
    let root = RngSpec::new(spec.seed);
    let shared = SyntheticModelSpec::random(spec.dims, spec.num_classes, spec.nonlinearity, root.derive_tag("model").seed);
    (0..spec.count)
        .map(|i| {
            let unit = root.derive(i as u64);
            let model = if spec.shared_model {
                shared.clone()
            } else {
                SyntheticModelSpec::random(spec.dims, spec.num_classes, spec.nonlinearity, unit.derive_tag("model").seed)
            };
            SyntheticCase { input_id: format!("case{i:03}"), x: smooth_volume(spec.dims, unit.derive_tag("input").seed), model }
        })
        .collect()
}
