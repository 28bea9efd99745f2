use rand_distr::{Distribution, Normal};

use super::{AttributionError, AttributionField, MethodKind};
use crate::model::{proxy_gradient_at, SegmentationModel};
use crate::rng::RngSpec;
use crate::volume::{ClassMask, Volume};

pub fn vanilla_gradient(
    model: &dyn SegmentationModel,
    x: &Volume,
    class_id: usize,
    mask: &ClassMask,
) -> Result<AttributionField, AttributionError> {
    let grad = proxy_gradient_at(model, x.dims(), &x.to_f64(), class_id, mask)?;
    AttributionField::new(x.dims(), class_id, MethodKind::VanillaGradient, grad)
}

/// Running mean `m_k = m_{k−1} + (g − m_{k−1}) / k`; exact when all samples agree.
fn accumulate_mean(mean: &mut [f64], sample: &[f64], k: usize) {
    let k = k as f64;
    for (m, &g) in mean.iter_mut().zip(sample) {
        *m += (g - *m) / k;
    }
}

/// Mean vanilla gradient over `n` copies of `x` with i.i.d. `N(0, σ²)` noise
/// per voxel. The noise is not clipped to the input range.
pub fn smoothgrad(
    model: &dyn SegmentationModel,
    x: &Volume,
    class_id: usize,
    mask: &ClassMask,
    n: usize,
    sigma: f64,
    rng: RngSpec,
) -> Result<AttributionField, AttributionError> {
    if n == 0 {
        return Err(AttributionError::InvalidParam("SmoothGrad needs n >= 1".into()));
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|_| AttributionError::InvalidParam(format!("invalid noise scale {sigma}")))?;
    if sigma == 0.0 {
        // Every sample is x itself.
        let field = vanilla_gradient(model, x, class_id, mask)?;
        return Ok(AttributionField { method: MethodKind::SmoothGrad, ..field });
    }
    let base = x.to_f64();
    let mut rng = rng.rng();
    let mut mean = vec![0.0; base.len()];
    let mut noisy = vec![0.0; base.len()];
    for k in 1..=n {
        for (v, &b) in noisy.iter_mut().zip(&base) {
            *v = b + normal.sample(&mut rng);
        }
        let grad = proxy_gradient_at(model, x.dims(), &noisy, class_id, mask)?;
        accumulate_mean(&mut mean, &grad, k);
    }
    AttributionField::new(x.dims(), class_id, MethodKind::SmoothGrad, mean)
}

/// Right Riemann sum of the gradient along the straight path from `baseline`
/// to `x`:
///
/// ```text
/// IG = (x − x') ⊙ (1/n) Σ_{k=1..n} ∇f̂(x' + (k/n)(x − x'))
/// ```
pub fn integrated_gradients(
    model: &dyn SegmentationModel,
    x: &Volume,
    class_id: usize,
    mask: &ClassMask,
    n: usize,
    baseline: &Volume,
) -> Result<AttributionField, AttributionError> {
    if n == 0 {
        return Err(AttributionError::InvalidParam("integrated gradients needs n >= 1".into()));
    }
    if baseline.dims() != x.dims() {
        return Err(crate::volume::VolumeError::DimMismatch { left: x.dims(), right: baseline.dims() }.into());
    }
    let end = x.to_f64();
    let start = baseline.to_f64();
    let delta: Vec<f64> = end.iter().zip(&start).map(|(a, b)| a - b).collect();
    let mut mean = vec![0.0; end.len()];
    let mut point = vec![0.0; end.len()];
    for k in 1..=n {
        let alpha = k as f64 / n as f64;
        for ((p, &s), &d) in point.iter_mut().zip(&start).zip(&delta) {
            *p = s + alpha * d;
        }
        let grad = proxy_gradient_at(model, x.dims(), &point, class_id, mask)?;
        accumulate_mean(&mut mean, &grad, k);
    }
    let data = delta.iter().zip(&mean).map(|(d, g)| d * g).collect();
    AttributionField::new(x.dims(), class_id, MethodKind::IntegratedGradients, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{proxy_value, Nonlinearity, SyntheticModel, SyntheticModelSpec};
    use crate::volume::{argmax_masks, Dims};

    fn linear(d: Dims) -> (SyntheticModel, SyntheticModelSpec) {
        let mut spec = SyntheticModelSpec::random(d, 3, Nonlinearity::Identity, 21);
        spec.context = vec![0.0; 3];
        (SyntheticModel::new(spec.clone()).unwrap(), spec)
    }

    fn smooth(d: Dims) -> SyntheticModel {
        SyntheticModel::new(SyntheticModelSpec::random(d, 3, Nonlinearity::SmoothSaturating, 22)).unwrap()
    }

    #[test]
    fn vg_on_linear_model_is_masked_weights() {
        let d = Dims::cube(3);
        let (model, spec) = linear(d);
        let x = crate::synthetic::smooth_volume(d, 1);
        let mask = ClassMask::new(d, (0..d.len()).map(|i| (i % 2) as u8).collect()).unwrap();
        let vg = vanilla_gradient(&model, &x, 1, &mask).unwrap();
        for i in 0..d.len() {
            let expected = if i % 2 == 1 { spec.weights[1][i] } else { 0.0 };
            assert_eq!(vg.data[i], expected);
        }
        let zero = vanilla_gradient(&model, &x, 1, &ClassMask::empty(d)).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sg_degenerate_cases_equal_vg() {
        let d = Dims::cube(4);
        let x = crate::synthetic::smooth_volume(d, 2);
        let model = smooth(d);
        let mask = ClassMask::full(d);
        let vg = vanilla_gradient(&model, &x, 0, &mask).unwrap();
        for n in [1, 7] {
            let sg = smoothgrad(&model, &x, 0, &mask, n, 0.0, RngSpec::new(1)).unwrap();
            assert_eq!(sg.data, vg.data);
        }
        let (lin, _) = linear(d);
        let vg = vanilla_gradient(&lin, &x, 2, &mask).unwrap();
        let sg = smoothgrad(&lin, &x, 2, &mask, 20, 0.5, RngSpec::new(1)).unwrap();
        assert_eq!(sg.data, vg.data);
    }

    #[test]
    fn sg_converges_as_n_grows() {
        let d = Dims::cube(3);
        let x = crate::synthetic::smooth_volume(d, 3);
        let model = smooth(d);
        let mask = ClassMask::full(d);
        let a = smoothgrad(&model, &x, 1, &mask, 200, 0.1, RngSpec::new(5)).unwrap();
        let b = smoothgrad(&model, &x, 1, &mask, 201, 0.1, RngSpec::new(5)).unwrap();
        // Same stream: the 201-sample mean moves by (g_201 − m_200)/201.
        let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gap = a.data.iter().zip(&b.data).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(gap <= 2.0 * scale / 201.0, "gap {gap} vs scale {scale}");
    }

    #[test]
    fn ig_zero_path_is_zero() {
        let d = Dims::cube(3);
        let x = crate::synthetic::smooth_volume(d, 4);
        let ig = integrated_gradients(&smooth(d), &x, 0, &ClassMask::full(d), 20, &x).unwrap();
        assert!(ig.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ig_linear_closed_form() {
        let d = Dims::cube(3);
        let (model, spec) = linear(d);
        let x = crate::synthetic::smooth_volume(d, 5);
        let mask = ClassMask::full(d);
        for n in [1, 3, 20] {
            let ig = integrated_gradients(&model, &x, 0, &mask, n, &Volume::zeros(d)).unwrap();
            for i in 0..d.len() {
                assert_eq!(ig.data[i], f64::from(x.data()[i]) * spec.weights[0][i]);
            }
        }
    }

    #[test]
    fn ig_completeness_on_smooth_model() {
        let d = Dims::cube(4);
        let model = smooth(d);
        let x = crate::synthetic::smooth_volume(d, 6);
        let masks = argmax_masks(&crate::model::forward(&model, &x).unwrap());
        let zero = Volume::zeros(d);
        for (c, mask) in masks.iter().enumerate().filter(|(_, m)| !m.is_empty()) {
            let ig = integrated_gradients(&model, &x, c, mask, 512, &zero).unwrap();
            let total: f64 = ig.data.iter().sum();
            let gap = proxy_value(&model, &x, c, mask).unwrap().value - proxy_value(&model, &zero, c, mask).unwrap().value;
            assert!((total - gap).abs() <= 0.01 * gap.abs(), "class {c}: {total} vs {gap}");
        }
    }
}
