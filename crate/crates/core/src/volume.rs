//! Dense 3D containers and the mask operations built on top of them.
//!
//! Every field in this module stores its voxels in x-fastest order, i.e. the
//! voxel at `(x, y, z)` lives at index `x + W * (y + H * z)`. Class-valued
//! fields ([`LogitField`]) are voxel-major: the `l` logits of voxel `i` are
//! contiguous at `i * l .. (i + 1) * l`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("dimensions must be positive, got {0:?}")]
    ZeroDim(Dims),
    #[error("data length {got} does not match dims {dims:?} (expected {expected})")]
    LengthMismatch { dims: Dims, expected: usize, got: usize },
    #[error("non-finite value at voxel {index}")]
    NonFinite { index: usize },
    #[error("mask value {value} at voxel {index} is not binary")]
    NonBinary { index: usize, value: u8 },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch { left: Dims, right: Dims },
    #[error("a logit field needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("invalid clip range [{lo}, {hi}]")]
    ClipRange { lo: f64, hi: f64 },
    #[error("duplicate RoI name {0:?}")]
    DuplicateRoi(String),
}

/// Grid extent `(width, height, depth)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims(pub [usize; 3]);

impl Dims {
    pub fn new(width: usize, height: usize, depth: usize) -> Self {
        Dims([width, height, depth])
    }

    pub fn cube(edge: usize) -> Self {
        Dims([edge; 3])
    }

    pub fn width(&self) -> usize {
        self.0[0]
    }

    pub fn height(&self) -> usize {
        self.0[1]
    }

    pub fn depth(&self) -> usize {
        self.0[2]
    }

    /// Number of voxels `p`.
    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.0[0] * (y + self.0[1] * z)
    }

    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.0[0];
        let rest = index / self.0[0];
        (x, rest % self.0[1], rest / self.0[1])
    }

    /// Indices of the face-adjacent (6-connected) neighbours of `index`.
    pub fn neighbors6(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y, z) = self.coords(index);
        let [w, h, d] = self.0;
        let candidates = [
            (x > 0).then(|| index - 1),
            (x + 1 < w).then(|| index + 1),
            (y > 0).then(|| index - w),
            (y + 1 < h).then(|| index + w),
            (z > 0).then(|| index - w * h),
            (z + 1 < d).then(|| index + w * h),
        ];
        candidates.into_iter().flatten()
    }

    fn validate(&self) -> Result<(), VolumeError> {
        if self.0.iter().any(|&n| n == 0) {
            return Err(VolumeError::ZeroDim(*self));
        }
        Ok(())
    }

    pub fn ensure_same(&self, other: &Dims) -> Result<(), VolumeError> {
        if self != other {
            return Err(VolumeError::DimMismatch { left: *self, right: *other });
        }
        Ok(())
    }
}

/// A dense scalar image `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: Option<[f64; 3]>,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self, VolumeError> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(VolumeError::LengthMismatch {
                dims,
                expected: dims.len(),
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite { index });
        }
        Ok(Volume { dims, spacing: None, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Volume { dims, spacing: None, data: vec![0.0; dims.len()] }
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        Volume { dims, spacing: None, data: vec![value; dims.len()] }
    }

    /// Builds a volume from `f64` values, rounding each to `f32`.
    pub fn from_f64(dims: Dims, data: &[f64]) -> Result<Self, VolumeError> {
        Volume::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn with_spacing(mut self, spacing: Option<[f64; 3]>) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Option<[f64; 3]> {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The voxel values widened to `f64`, the precision all model code works in.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Per-voxel, per-class model output `ŷ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitField {
    dims: Dims,
    num_classes: usize,
    data: Vec<f32>,
}

impl LogitField {
    pub fn new(dims: Dims, num_classes: usize, data: Vec<f32>) -> Result<Self, VolumeError> {
        dims.validate()?;
        if num_classes < 2 {
            return Err(VolumeError::TooFewClasses(num_classes));
        }
        let expected = dims.len() * num_classes;
        if data.len() != expected {
            return Err(VolumeError::LengthMismatch { dims, expected, got: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite { index: index / num_classes });
        }
        Ok(LogitField { dims, num_classes, data })
    }

    pub fn from_f64(dims: Dims, num_classes: usize, data: &[f64]) -> Result<Self, VolumeError> {
        LogitField::new(dims, num_classes, data.iter().map(|&v| v as f32).collect())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn voxel(&self, index: usize) -> &[f32] {
        &self.data[index * self.num_classes..(index + 1) * self.num_classes]
    }

    /// Winning class per voxel; ties go to the lowest class index.
    pub fn argmax_labels(&self) -> Vec<usize> {
        self.data
            .chunks_exact(self.num_classes)
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// A binary voxel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    dims: Dims,
    data: Vec<u8>,
}

impl ClassMask {
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self, VolumeError> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(VolumeError::LengthMismatch {
                dims,
                expected: dims.len(),
                got: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(VolumeError::NonBinary { index, value });
        }
        Ok(ClassMask { dims, data })
    }

    pub fn from_bools(dims: Dims, bits: impl IntoIterator<Item = bool>) -> Result<Self, VolumeError> {
        ClassMask::new(dims, bits.into_iter().map(u8::from).collect())
    }

    pub fn empty(dims: Dims) -> Self {
        ClassMask { dims, data: vec![0; dims.len()] }
    }

    pub fn full(dims: Dims) -> Self {
        ClassMask { dims, data: vec![1; dims.len()] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn contains(&self, index: usize) -> bool {
        self.data[index] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| usize::from(v)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn iter_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data.iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i)
    }

    pub fn intersect(&self, other: &ClassMask) -> Result<ClassMask, VolumeError> {
        mask_algebra(self, Some(other), MaskOp::Intersect)
    }

    pub fn union(&self, other: &ClassMask) -> Result<ClassMask, VolumeError> {
        mask_algebra(self, Some(other), MaskOp::Union)
    }

    pub fn complement(&self) -> ClassMask {
        ClassMask { dims: self.dims, data: self.data.iter().map(|&v| 1 - v).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskOp {
    Intersect,
    Union,
    Complement,
}

/// Element-wise boolean combination of masks. `Complement` ignores `b`.
pub fn mask_algebra(a: &ClassMask, b: Option<&ClassMask>, op: MaskOp) -> Result<ClassMask, VolumeError> {
    let combine = |f: fn(u8, u8) -> u8| -> Result<ClassMask, VolumeError> {
        let b = b.unwrap_or(a);
        a.dims.ensure_same(&b.dims)?;
        Ok(ClassMask {
            dims: a.dims,
            data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        })
    };
    match op {
        MaskOp::Intersect => combine(|x, y| x & y),
        MaskOp::Union => combine(|x, y| x | y),
        MaskOp::Complement => Ok(a.complement()),
    }
}

/// Clamps to `[clip_lo, clip_hi]` and maps that interval linearly onto `[0, 1]`.
pub fn preprocess(raw: &Volume, clip_lo: f64, clip_hi: f64) -> Result<Volume, VolumeError> {
    if !(clip_lo < clip_hi) || !clip_lo.is_finite() || !clip_hi.is_finite() {
        return Err(VolumeError::ClipRange { lo: clip_lo, hi: clip_hi });
    }
    if let Some(index) = raw.data.iter().position(|v| !v.is_finite()) {
        return Err(VolumeError::NonFinite { index });
    }
    let span = clip_hi - clip_lo;
    let data = raw
        .data
        .iter()
        .map(|&v| ((f64::from(v).clamp(clip_lo, clip_hi) - clip_lo) / span) as f32)
        .collect();
    Ok(Volume { dims: raw.dims, spacing: raw.spacing, data })
}

/// Hounsfield-unit window used for CT inputs.
pub const HU_CLIP: (f64, f64) = (-1024.0, 1024.0);

/// One binary mask per class, marking the voxels where that class wins the argmax.
pub fn argmax_masks(logits: &LogitField) -> Vec<ClassMask> {
    let labels = logits.argmax_labels();
    (0..logits.num_classes)
        .map(|c| ClassMask {
            dims: logits.dims,
            data: labels.iter().map(|&l| u8::from(l == c)).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiSource {
    Predicted,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roi {
    pub name: String,
    pub mask: ClassMask,
    pub source: RoiSource,
}

/// Ordered, uniquely named regions of interest sharing one grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoiSet {
    entries: Vec<Roi>,
}

impl RoiSet {
    pub fn new() -> Self {
        RoiSet::default()
    }

    /// Predicted class masks as RoIs, one per class name.
    pub fn from_predictions(logits: &LogitField, class_names: &[String]) -> Result<Self, VolumeError> {
        let mut set = RoiSet::new();
        for (c, mask) in argmax_masks(logits).into_iter().enumerate() {
            let name = class_names.get(c).cloned().unwrap_or_else(|| format!("class_{c}"));
            set.push(name, mask, RoiSource::Predicted)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, name: impl Into<String>, mask: ClassMask, source: RoiSource) -> Result<(), VolumeError> {
        let name = name.into();
        if let Some(first) = self.entries.first() {
            first.mask.dims.ensure_same(&mask.dims)?;
        }
        if self.entries.iter().any(|r| r.name == name) {
            return Err(VolumeError::DuplicateRoi(name));
        }
        self.entries.push(Roi { name, mask, source });
        Ok(())
    }

    pub fn entries(&self) -> &[Roi] {
        &self.entries
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|r| r.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dims(&self) -> Option<Dims> {
        self.entries.first().map(|r| r.mask.dims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vol1(v: f32) -> Volume {
        Volume::new(Dims::cube(1), vec![v]).unwrap()
    }

    #[test]
    fn preprocess_hu_window() {
        let (lo, hi) = HU_CLIP;
        assert_eq!(preprocess(&vol1(-2000.0), lo, hi).unwrap().data(), &[0.0]);
        assert_eq!(preprocess(&vol1(1024.0), lo, hi).unwrap().data(), &[1.0]);
        assert_eq!(preprocess(&vol1(0.0), lo, hi).unwrap().data(), &[0.5]);
    }

    #[test]
    fn preprocess_rejects_bad_range() {
        assert!(matches!(preprocess(&vol1(0.0), 1.0, 1.0), Err(VolumeError::ClipRange { .. })));
    }

    #[test]
    fn non_finite_reports_index() {
        let err = Volume::new(Dims::new(3, 1, 1), vec![0.0, f32::NAN, 1.0]).unwrap_err();
        assert_eq!(err, VolumeError::NonFinite { index: 1 });
    }

    #[test]
    fn argmax_examples() {
        let one = Dims::cube(1);
        let m = argmax_masks(&LogitField::new(one, 2, vec![0.1, 0.9]).unwrap());
        assert_eq!((m[0].data(), m[1].data()), (&[0u8][..], &[1u8][..]));

        let tie = argmax_masks(&LogitField::new(one, 2, vec![0.5, 0.5]).unwrap());
        assert_eq!((tie[0].data(), tie[1].data()), (&[1u8][..], &[0u8][..]));

        let two = argmax_masks(&LogitField::new(Dims::new(2, 1, 1), 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        assert_eq!(two[0].data(), &[1, 0]);
        assert_eq!(two[1].data(), &[0, 1]);
    }

    #[test]
    fn mask_algebra_examples() {
        let d = Dims::new(2, 1, 1);
        let a = ClassMask::new(d, vec![1, 1]).unwrap();
        let b = ClassMask::new(d, vec![0, 1]).unwrap();
        assert_eq!(mask_algebra(&a, Some(&b), MaskOp::Intersect).unwrap().data(), &[0, 1]);
        let c = ClassMask::new(d, vec![1, 0]).unwrap();
        let z = ClassMask::empty(d);
        assert_eq!(mask_algebra(&c, Some(&z), MaskOp::Union).unwrap().data(), &[1, 0]);
        assert_eq!(mask_algebra(&c, None, MaskOp::Complement).unwrap().data(), &[0, 1]);
    }

    #[test]
    fn mask_algebra_dim_mismatch() {
        let a = ClassMask::full(Dims::new(2, 1, 1));
        let b = ClassMask::full(Dims::new(1, 2, 1));
        assert!(matches!(a.intersect(&b), Err(VolumeError::DimMismatch { .. })));
    }

    #[test]
    fn roi_names_unique() {
        let d = Dims::cube(2);
        let mut set = RoiSet::new();
        set.push("a", ClassMask::full(d), RoiSource::External).unwrap();
        assert_eq!(
            set.push("a", ClassMask::empty(d), RoiSource::External),
            Err(VolumeError::DuplicateRoi("a".into()))
        );
    }

    #[test]
    fn neighbor_counts() {
        let d = Dims::cube(3);
        assert_eq!(d.neighbors6(d.index(0, 0, 0)).count(), 3);
        assert_eq!(d.neighbors6(d.index(1, 1, 1)).count(), 6);
        assert_eq!(Dims::cube(1).neighbors6(0).count(), 0);
        for i in 0..d.len() {
            let (x, y, z) = d.coords(i);
            assert_eq!(d.index(x, y, z), i);
        }
    }

    proptest! {
        #[test]
        fn argmax_masks_partition(
            (p, l, data) in (1usize..30, 2usize..6).prop_flat_map(|(p, l)| {
                (Just(p), Just(l), proptest::collection::vec(-3i8..3, p * l))
            })
        ) {
            // Small integer logits make ties frequent.
            let logits = LogitField::new(
                Dims::new(p, 1, 1), l, data.iter().map(|&v| f32::from(v)).collect()
            ).unwrap();
            let masks = argmax_masks(&logits);
            for i in 0..p {
                let total: u8 = masks.iter().map(|m| m.data()[i]).sum();
                prop_assert_eq!(total, 1);
            }
        }

        #[test]
        fn preprocess_idempotent_on_unit_range(data in proptest::collection::vec(0.0f32..=1.0, 1..40)) {
            let v = Volume::new(Dims::new(data.len(), 1, 1), data).unwrap();
            let out = preprocess(&v, 0.0, 1.0).unwrap();
            prop_assert_eq!(out.data(), v.data());
        }

        #[test]
        fn preprocess_lands_in_unit_interval(data in proptest::collection::vec(-5000.0f32..5000.0, 1..40)) {
            let v = Volume::new(Dims::new(data.len(), 1, 1), data).unwrap();
            let out = preprocess(&v, HU_CLIP.0, HU_CLIP.1).unwrap();
            prop_assert!(out.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
