use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Backend, ModelError, ModelInfo, SegmentationModel};
use crate::rng::RngSpec;
use crate::volume::Dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Identity,
    /// `tanh`, with derivative `1 − tanh²`.
    SmoothSaturating,
}

impl Nonlinearity {
    fn apply(self, z: f64) -> f64 {
        match self {
            Nonlinearity::Identity => z,
            Nonlinearity::SmoothSaturating => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Nonlinearity::Identity => 1.0,
            Nonlinearity::SmoothSaturating => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Parameters of the analytic test model
///
/// ```text
/// logit(i, c) = nl( w_c[i] · x[i] + κ_c · mean_{j ∈ N6(i)} x[j] + b_c )
/// ```
///
/// `N6(i)` are the face neighbours of voxel `i` inside the grid; the mean
/// over an empty neighbourhood is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelSpec {
    pub dims: Dims,
    /// One weight volume per class.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Neighbourhood coupling `κ_c` per class.
    pub context: Vec<f64>,
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
}

impl SyntheticModelSpec {
    /// A model without neighbourhood coupling.
    pub fn linear(dims: Dims, weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Self {
        let l = weights.len();
        SyntheticModelSpec {
            dims,
            weights,
            bias,
            context: vec![0.0; l],
            nonlinearity: Nonlinearity::Identity,
            seed: 0,
        }
    }

    /// Draws a model whose classes each dominate a blob around a random
    /// centre, so argmax segmentations contain every class on typical inputs.
    /// Class 0 plays the background with a flat weight.
    pub fn random(dims: Dims, num_classes: usize, nonlinearity: Nonlinearity, seed: u64) -> Self {
        let mut rng = RngSpec::new(seed).derive_tag("synthetic-model").rng();
        let noise = Normal::new(0.0, 0.15).unwrap();
        let p = dims.len();
        let [w, h, d] = dims.0.map(|n| n as f64);
        let radius = (w.max(h).max(d) / 3.0).max(1.0);
        let mut weights = Vec::with_capacity(num_classes);
        for c in 0..num_classes {
            let centre = [rng.random::<f64>() * w, rng.random::<f64>() * h, rng.random::<f64>() * d];
            let volume = (0..p)
                .map(|i| {
                    let eps = noise.sample(&mut rng);
                    if c == 0 {
                        return 0.9 + eps;
                    }
                    let (x, y, z) = dims.coords(i);
                    let d2 = (x as f64 + 0.5 - centre[0]).powi(2)
                        + (y as f64 + 0.5 - centre[1]).powi(2)
                        + (z as f64 + 0.5 - centre[2]).powi(2);
                    2.0 * (-d2 / (2.0 * radius * radius)).exp() + eps
                })
                .collect();
            weights.push(volume);
        }
        let bias = (0..num_classes).map(|_| rng.random_range(-0.2..0.2)).collect();
        let context = (0..num_classes).map(|_| rng.random_range(0.3..1.2)).collect();
        SyntheticModelSpec { dims, weights, bias, context, nonlinearity, seed }
    }
}

/// Compressed face-neighbour lists.
#[derive(Debug, Clone)]
struct Neighbourhood {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Neighbourhood {
    fn new(dims: Dims) -> Self {
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut indices = Vec::with_capacity(dims.len() * 6);
        offsets.push(0);
        for i in 0..dims.len() {
            indices.extend(dims.neighbors6(i));
            offsets.push(indices.len());
        }
        Neighbourhood { offsets, indices }
    }

    fn of(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticModel {
    spec: SyntheticModelSpec,
    neighbours: Neighbourhood,
}

impl SyntheticModel {
    pub fn new(spec: SyntheticModelSpec) -> Result<Self, ModelError> {
        let l = spec.weights.len();
        let p = spec.dims.len();
        if l < 2 {
            return Err(ModelError::Invalid(format!("need at least 2 classes, got {l}")));
        }
        if p == 0 {
            return Err(ModelError::Invalid("empty grid".into()));
        }
        if spec.bias.len() != l || spec.context.len() != l {
            return Err(ModelError::Invalid("bias and context need one entry per class".into()));
        }
        if let Some(c) = spec.weights.iter().position(|w| w.len() != p) {
            return Err(ModelError::Invalid(format!("weight volume of class {c} does not have {p} voxels")));
        }
        let all = spec.weights.iter().flatten().chain(&spec.bias).chain(&spec.context);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(ModelError::Invalid("non-finite parameter".into()));
        }
        let neighbours = Neighbourhood::new(spec.dims);
        Ok(SyntheticModel { spec, neighbours })
    }

    pub fn spec(&self) -> &SyntheticModelSpec {
        &self.spec
    }

    fn check_len(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.spec.dims.len() {
            return Err(ModelError::Invalid(format!(
                "input has {} voxels, model expects {}",
                x.len(),
                self.spec.dims.len()
            )));
        }
        Ok(())
    }

    fn neighbour_means(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let n = self.neighbours.of(i);
                if n.is_empty() {
                    0.0
                } else {
                    n.iter().map(|&j| x[j]).sum::<f64>() / n.len() as f64
                }
            })
            .collect()
    }

    fn pre_activation(&self, x: &[f64], means: &[f64], c: usize) -> Vec<f64> {
        let w = &self.spec.weights[c];
        let (kappa, b) = (self.spec.context[c], self.spec.bias[c]);
        x.iter().zip(w).zip(means).map(|((xi, wi), mi)| wi * xi + kappa * mi + b).collect()
    }
}

impl SegmentationModel for SyntheticModel {
    fn info(&self) -> ModelInfo {
        ModelInfo {
            backend: Backend::Synthetic,
            dims: self.spec.dims,
            num_classes: self.spec.weights.len(),
            has_gradient: true,
        }
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_len(x)?;
        let l = self.spec.weights.len();
        let means = self.neighbour_means(x);
        let mut out = vec![0.0; x.len() * l];
        for c in 0..l {
            for (i, z) in self.pre_activation(x, &means, c).into_iter().enumerate() {
                out[i * l + c] = self.spec.nonlinearity.apply(z);
            }
        }
        Ok(out)
    }

    fn class_logits(&self, x: &[f64], class_id: usize) -> Result<Vec<f64>, ModelError> {
        self.check_len(x)?;
        let means = self.neighbour_means(x);
        let nl = self.spec.nonlinearity;
        Ok(self.pre_activation(x, &means, class_id).into_iter().map(|z| nl.apply(z)).collect())
    }

    /// ```text
    /// ∂f̂_c/∂x_j = m_j s_j w_c[j] + κ_c Σ_{i ∈ N6(j)} m_i s_i / |N6(i)|
    /// ```
    /// with `s_i = nl'(z_ic)`.
    fn proxy_gradient(&self, x: &[f64], class_id: usize, mask: &[u8]) -> Result<Vec<f64>, ModelError> {
        self.check_len(x)?;
        if mask.len() != x.len() {
            return Err(ModelError::Invalid("mask length differs from input".into()));
        }
        let means = self.neighbour_means(x);
        let nl = self.spec.nonlinearity;
        let slope: Vec<f64> = self
            .pre_activation(x, &means, class_id)
            .into_iter()
            .zip(mask)
            .map(|(z, &m)| if m == 1 { nl.derivative(z) } else { 0.0 })
            .collect();
        let w = &self.spec.weights[class_id];
        let kappa = self.spec.context[class_id];
        let grad = (0..x.len())
            .map(|j| {
                let coupled: f64 = self
                    .neighbours
                    .of(j)
                    .iter()
                    .map(|&i| slope[i] / self.neighbours.of(i).len() as f64)
                    .sum();
                slope[j] * w[j] + kappa * coupled
            })
            .collect();
        Ok(grad)
    }
}
