//! The segmentation-model contract and the scalar proxy every attribution
//! method explains.
//!
//! A model maps an image `x ∈ R^p` to logits `R^{p×l}`. Attribution methods
//! do not explain that tensor directly; they explain the aggregated proxy
//!
//! ```text
//! f̂_c(x) = Σ_i logits(i, c) · mask(i)
//! ```
//!
//! where `mask` is the predicted mask of class `c` on the explained input and
//! stays fixed while `x` is perturbed. All model arithmetic is `f64`; volumes
//! are widened on the way in.

mod remote;
mod synthetic;

pub use remote::{Endpoint, RemoteModel};
pub use synthetic::{Nonlinearity, SyntheticModel, SyntheticModelSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{ClassMask, Dims, LogitField, Volume, VolumeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("model server error: {0}")]
    Remote(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("input dims {got:?} do not match model dims {expected:?}")]
    DimMismatch { expected: Dims, got: Dims },
    #[error("class {class_id} out of range for a {num_classes}-class model")]
    ClassOutOfRange { class_id: usize, num_classes: usize },
    #[error("model backend has no gradient capability")]
    NoGradient,
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Synthetic,
    Remote,
}

/// What a model handle reports about itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub backend: Backend,
    pub dims: Dims,
    pub num_classes: usize,
    pub has_gradient: bool,
}

/// A segmentation model `f : R^p → R^{p×l}`.
///
/// Implementations must be deterministic. The methods take `&self`; backends
/// holding a connection serialize requests internally.
pub trait SegmentationModel: Send + Sync {
    fn info(&self) -> ModelInfo;

    /// Voxel-major logits, `p · l` values.
    fn logits(&self, x: &[f64]) -> Result<Vec<f64>, ModelError>;

    /// Logits of one class, `p` values.
    fn class_logits(&self, x: &[f64], class_id: usize) -> Result<Vec<f64>, ModelError> {
        let l = self.info().num_classes;
        Ok(self.logits(x)?.chunks_exact(l).map(|row| row[class_id]).collect())
    }

    /// `∂f̂_c / ∂x` for the proxy defined by `mask` (one `u8` per voxel).
    fn proxy_gradient(&self, _x: &[f64], _class_id: usize, _mask: &[u8]) -> Result<Vec<f64>, ModelError> {
        Err(ModelError::NoGradient)
    }
}

/// The proxy `f̂_c(x)` for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyValue {
    pub class_id: usize,
    pub value: f64,
    /// Set when the mask selects no voxel; `value` is then 0.
    pub empty_mask: bool,
}

fn check_input(model: &dyn SegmentationModel, dims: Dims, class_id: usize) -> Result<ModelInfo, ModelError> {
    let info = model.info();
    if dims != info.dims {
        return Err(ModelError::DimMismatch { expected: info.dims, got: dims });
    }
    if class_id >= info.num_classes {
        return Err(ModelError::ClassOutOfRange { class_id, num_classes: info.num_classes });
    }
    Ok(info)
}

pub fn forward(model: &dyn SegmentationModel, x: &Volume) -> Result<LogitField, ModelError> {
    let info = model.info();
    if x.dims() != info.dims {
        return Err(ModelError::DimMismatch { expected: info.dims, got: x.dims() });
    }
    let logits = model.logits(&x.to_f64())?;
    Ok(LogitField::from_f64(info.dims, info.num_classes, &logits)?)
}

pub fn proxy_value(
    model: &dyn SegmentationModel,
    x: &Volume,
    class_id: usize,
    mask: &ClassMask,
) -> Result<ProxyValue, ModelError> {
    check_input(model, x.dims(), class_id)?;
    check_input(model, mask.dims(), class_id)?;
    if mask.is_empty() {
        return Ok(ProxyValue { class_id, value: 0.0, empty_mask: true });
    }
    let value = proxy_value_raw(model, &x.to_f64(), class_id, mask.data())?;
    Ok(ProxyValue { class_id, value, empty_mask: false })
}

/// `f̂_c` on an unchecked `f64` buffer; the hot path for perturbation methods.
pub(crate) fn proxy_value_raw(
    model: &dyn SegmentationModel,
    x: &[f64],
    class_id: usize,
    mask: &[u8],
) -> Result<f64, ModelError> {
    if mask.iter().all(|&m| m == 0) {
        return Ok(0.0);
    }
    let logits = model.class_logits(x, class_id)?;
    Ok(logits.iter().zip(mask).filter(|(_, &m)| m == 1).map(|(v, _)| v).sum())
}

pub fn proxy_gradient(
    model: &dyn SegmentationModel,
    x: &Volume,
    class_id: usize,
    mask: &ClassMask,
) -> Result<Vec<f64>, ModelError> {
    proxy_gradient_at(model, x.dims(), &x.to_f64(), class_id, mask)
}

pub(crate) fn proxy_gradient_at(
    model: &dyn SegmentationModel,
    dims: Dims,
    x: &[f64],
    class_id: usize,
    mask: &ClassMask,
) -> Result<Vec<f64>, ModelError> {
    let info = check_input(model, dims, class_id)?;
    check_input(model, mask.dims(), class_id)?;
    if !info.has_gradient {
        return Err(ModelError::NoGradient);
    }
    if mask.is_empty() {
        return Ok(vec![0.0; x.len()]);
    }
    let grad = model.proxy_gradient(x, class_id, mask.data())?;
    if grad.len() != x.len() {
        return Err(ModelError::Protocol(format!("gradient has {} values, expected {}", grad.len(), x.len())));
    }
    Ok(grad)
}

/// Default central-difference step for inputs scaled to `[0, 1]`.
pub const FD_STEP: f64 = 1e-3;

/// Central differences `(f̂(x + h e_i) − f̂(x − h e_i)) / 2h`, one pair of
/// forward passes per voxel.
pub fn finite_difference_gradient(
    model: &dyn SegmentationModel,
    x: &Volume,
    class_id: usize,
    mask: &ClassMask,
    h: f64,
) -> Result<Vec<f64>, ModelError> {
    check_input(model, x.dims(), class_id)?;
    check_input(model, mask.dims(), class_id)?;
    if !(h > 0.0) {
        return Err(ModelError::Invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut point = x.to_f64();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let centre = point[i];
        point[i] = centre + h;
        let up = proxy_value_raw(model, &point, class_id, mask.data())?;
        point[i] = centre - h;
        let down = proxy_value_raw(model, &point, class_id, mask.data())?;
        point[i] = centre;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}
