//! Voxel attribution methods for the class proxy `f̂_c`.
//!
//! Gradient methods (vanilla gradient, SmoothGrad, integrated gradients) need
//! a gradient-capable model. KernelSHAP only queries the proxy value and
//! works on supervoxels, either even cubes or the predicted segmentation.

mod gradient;
mod kernelshap;
mod partition;

pub use gradient::{integrated_gradients, smoothgrad, vanilla_gradient};
pub use kernelshap::{kernelshap, plan_coalitions, Coalition, ShapleyEstimate, CoalitionPlan, DEFAULT_RIDGE, MAX_CONDITION};
pub use partition::{partition_cubes, partition_semantic, PartitionScheme, SupervoxelPartition};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{Container, ContainerError};
use crate::model::{forward, ModelError, SegmentationModel};
use crate::rng::RngSpec;
use crate::volume::{argmax_masks, ClassMask, Dims, Volume, VolumeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttributionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("singular KernelSHAP system (condition estimate {condition:.3e})")]
    Singular { condition: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    #[serde(rename = "VG")]
    VanillaGradient,
    #[serde(rename = "SG")]
    SmoothGrad,
    #[serde(rename = "IG")]
    IntegratedGradients,
    #[serde(rename = "KSHAP_CUBES")]
    KernelShapCubes,
    #[serde(rename = "KSHAP_SEMANTIC")]
    KernelShapSemantic,
}

impl MethodKind {
    pub fn label(self) -> &'static str {
        match self {
            MethodKind::VanillaGradient => "VG",
            MethodKind::SmoothGrad => "SG",
            MethodKind::IntegratedGradients => "IG",
            MethodKind::KernelShapCubes => "KSHAP_CUBES",
            MethodKind::KernelShapSemantic => "KSHAP_SEMANTIC",
        }
    }
}

fn default_n() -> usize {
    20
}

fn default_sigma_fraction() -> f64 {
    0.1
}

fn default_cube_edge() -> usize {
    4
}

fn default_cube_samples() -> usize {
    1000
}

fn default_semantic_samples() -> usize {
    200
}

fn default_lambda() -> f64 {
    kernelshap::DEFAULT_RIDGE
}

/// A fully parameterised attribution method. Defaults follow the reference
/// benchmark setup: `n = 20` for SmoothGrad and integrated gradients, noise
/// `σ = 0.1 · (max x − min x)`, a zero baseline, 1000 KernelSHAP samples for
/// cubes and 200 for semantic supervoxels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Method {
    #[serde(alias = "vg")]
    VanillaGradient,
    #[serde(alias = "sg")]
    SmoothGrad {
        #[serde(default = "default_n")]
        n: usize,
        /// Noise scale relative to the input's value range.
        #[serde(default = "default_sigma_fraction")]
        sigma_fraction: f64,
        /// Absolute noise scale; overrides `sigma_fraction` when set.
        #[serde(default)]
        sigma: Option<f64>,
    },
    #[serde(alias = "ig")]
    IntegratedGradients {
        #[serde(default = "default_n")]
        n: usize,
        /// Constant baseline value.
        #[serde(default)]
        baseline: f64,
    },
    #[serde(alias = "kshap_cubes")]
    KernelShapCubes {
        #[serde(default = "default_cube_edge")]
        cube_edge: usize,
        #[serde(default = "default_cube_samples")]
        n_samples: usize,
        #[serde(default = "default_lambda")]
        ridge_lambda: f64,
    },
    #[serde(alias = "kshap_semantic")]
    KernelShapSemantic {
        #[serde(default = "default_semantic_samples")]
        n_samples: usize,
        #[serde(default = "default_lambda")]
        ridge_lambda: f64,
    },
}

impl Method {
    pub fn smoothgrad() -> Self {
        Method::SmoothGrad { n: default_n(), sigma_fraction: default_sigma_fraction(), sigma: None }
    }

    pub fn integrated_gradients() -> Self {
        Method::IntegratedGradients { n: default_n(), baseline: 0.0 }
    }

    pub fn kernelshap_cubes(cube_edge: usize) -> Self {
        Method::KernelShapCubes { cube_edge, n_samples: default_cube_samples(), ridge_lambda: default_lambda() }
    }

    pub fn kernelshap_semantic() -> Self {
        Method::KernelShapSemantic { n_samples: default_semantic_samples(), ridge_lambda: default_lambda() }
    }

    /// The five configurations of the benchmark table.
    pub fn benchmark_suite(cube_edge: usize) -> Vec<Method> {
        vec![
            Method::kernelshap_cubes(cube_edge),
            Method::kernelshap_semantic(),
            Method::VanillaGradient,
            Method::integrated_gradients(),
            Method::smoothgrad(),
        ]
    }

    pub fn kind(&self) -> MethodKind {
        match self {
            Method::VanillaGradient => MethodKind::VanillaGradient,
            Method::SmoothGrad { .. } => MethodKind::SmoothGrad,
            Method::IntegratedGradients { .. } => MethodKind::IntegratedGradients,
            Method::KernelShapCubes { .. } => MethodKind::KernelShapCubes,
            Method::KernelShapSemantic { .. } => MethodKind::KernelShapSemantic,
        }
    }

    pub fn needs_gradient(&self) -> bool {
        matches!(self, Method::VanillaGradient | Method::SmoothGrad { .. } | Method::IntegratedGradients { .. })
    }

    pub fn validate(&self) -> Result<(), AttributionError> {
        let bad = |msg: String| Err(AttributionError::InvalidParam(msg));
        match *self {
            Method::VanillaGradient => Ok(()),
            Method::SmoothGrad { n, sigma_fraction, sigma } => {
                if n == 0 {
                    return bad("SmoothGrad needs n >= 1".into());
                }
                let s = sigma.unwrap_or(sigma_fraction);
                if !(s >= 0.0 && s.is_finite()) {
                    return bad(format!("SmoothGrad noise must be finite and non-negative, got {s}"));
                }
                Ok(())
            }
            Method::IntegratedGradients { n, baseline } => {
                if n == 0 {
                    return bad("integrated gradients needs n >= 1".into());
                }
                if !baseline.is_finite() {
                    return bad("baseline must be finite".into());
                }
                Ok(())
            }
            Method::KernelShapCubes { cube_edge, ridge_lambda, .. } => {
                if cube_edge == 0 {
                    return bad("cube_edge must be >= 1".into());
                }
                check_lambda(ridge_lambda)
            }
            Method::KernelShapSemantic { ridge_lambda, .. } => check_lambda(ridge_lambda),
        }
    }
}

fn check_lambda(lambda: f64) -> Result<(), AttributionError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(AttributionError::InvalidParam(format!("ridge_lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

/// Per-voxel attributions `e_c` for one explained class.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionField {
    pub dims: Dims,
    pub class_id: usize,
    pub method: MethodKind,
    pub data: Vec<f64>,
    /// Hyperparameters and method-specific extras (e.g. KernelSHAP base value).
    pub params: serde_json::Value,
}

impl AttributionField {
    pub fn new(dims: Dims, class_id: usize, method: MethodKind, data: Vec<f64>) -> Result<Self, AttributionError> {
        if data.len() != dims.len() {
            return Err(VolumeError::LengthMismatch { dims, expected: dims.len(), got: data.len() }.into());
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite { index }.into());
        }
        Ok(AttributionField { dims, class_id, method, data, params: serde_json::Value::Null })
    }

    pub fn with_params(mut self, params: serde_json::Value) -> Self {
        self.params = params;
        self
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Container form: a `volume` payload (values rounded to f32) plus
    /// `{"method", "class_id", "params"}` metadata.
    pub fn to_container(&self) -> Result<Container, AttributionError> {
        let volume = Volume::from_f64(self.dims, &self.data)?;
        Ok(Container::new(volume).with_meta(serde_json::json!({
            "method": self.method,
            "class_id": self.class_id,
            "params": self.params,
        })))
    }

    pub fn from_container(container: Container) -> Result<Self, ContainerError> {
        let meta = container.meta.clone().unwrap_or_default();
        let method: MethodKind = serde_json::from_value(meta["method"].clone())
            .map_err(|e| ContainerError::Header(format!("attribution meta lacks a method: {e}")))?;
        let class_id = meta["class_id"]
            .as_u64()
            .ok_or_else(|| ContainerError::Header("attribution meta lacks class_id".into()))?
            as usize;
        let volume = container.into_volume()?;
        Ok(AttributionField {
            dims: volume.dims(),
            class_id,
            method,
            data: volume.to_f64(),
            params: meta["params"].clone(),
        })
    }
}

/// Computes one attribution field for class `class_id` with proxy mask `mask`.
pub fn attribute(
    model: &dyn SegmentationModel,
    x: &Volume,
    class_id: usize,
    mask: &ClassMask,
    method: &Method,
    rng: RngSpec,
) -> Result<AttributionField, AttributionError> {
    method.validate()?;
    let params = serde_json::to_value(method).expect("method serializes");
    let field = match *method {
        Method::VanillaGradient => vanilla_gradient(model, x, class_id, mask)?,
        Method::SmoothGrad { n, sigma_fraction, sigma } => {
            let sigma = sigma.unwrap_or_else(|| {
                let (lo, hi) = x.min_max();
                sigma_fraction * f64::from(hi - lo)
            });
            smoothgrad(model, x, class_id, mask, n, sigma, rng)?
        }
        Method::IntegratedGradients { n, baseline } => {
            let baseline = Volume::filled(x.dims(), baseline as f32);
            integrated_gradients(model, x, class_id, mask, n, &baseline)?
        }
        Method::KernelShapCubes { cube_edge, n_samples, ridge_lambda } => {
            let partition = partition_cubes(x.dims(), cube_edge)?;
            kernelshap(model, x, class_id, mask, &partition, n_samples, ridge_lambda, rng)?.0
        }
        Method::KernelShapSemantic { n_samples, ridge_lambda } => {
            let partition = partition_semantic(&forward(model, x)?);
            kernelshap(model, x, class_id, mask, &partition, n_samples, ridge_lambda, rng)?.0
        }
    };
    let merged = match (params, field.params.clone()) {
        (serde_json::Value::Object(mut base), serde_json::Value::Object(extra)) => {
            base.extend(extra);
            serde_json::Value::Object(base)
        }
        (base, _) => base,
    };
    Ok(field.with_params(merged))
}

/// Attributions for every class with a non-empty predicted mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAttributions {
    pub fields: Vec<AttributionField>,
    /// Classes skipped because nothing was predicted for them.
    pub skipped: Vec<usize>,
    pub masks: Vec<ClassMask>,
}

/// Runs `method` for each class (or the given subset); class `c` draws from
/// `rng.derive(c)`.
pub fn attribute_all_classes(
    model: &dyn SegmentationModel,
    x: &Volume,
    method: &Method,
    classes: Option<&[usize]>,
    rng: RngSpec,
) -> Result<ClassAttributions, AttributionError> {
    method.validate()?;
    let masks = argmax_masks(&forward(model, x)?);
    let all: Vec<usize> = (0..masks.len()).collect();
    let classes = classes.unwrap_or(&all);
    let mut fields = Vec::new();
    let mut skipped = Vec::new();
    for &c in classes {
        let mask = masks.get(c).ok_or(ModelError::ClassOutOfRange { class_id: c, num_classes: masks.len() })?;
        if mask.is_empty() {
            skipped.push(c);
            continue;
        }
        fields.push(attribute(model, x, c, mask, method, rng.derive(c as u64))?);
    }
    Ok(ClassAttributions { fields, skipped, masks })
}
