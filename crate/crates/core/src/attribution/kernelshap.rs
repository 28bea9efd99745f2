//! KernelSHAP over supervoxels.
//!
//! Players are the regions of a [`SupervoxelPartition`]. A coalition
//! `z ∈ {0,1}^r` keeps the voxels of its member regions and zeroes the rest;
//! its worth is `f̂_c` of that input. Attributions solve
//!
//! ```text
//! min_φ  Σ_z π(z) (v(z) − v(∅) − z·φ)² + λ‖φ‖²   s.t.  Σ_j φ_j = v(N) − v(∅)
//! π(z) = (r − 1) / (C(r, |z|) · |z| · (r − |z|))
//! ```
//!
//! The empty and full coalitions carry infinite kernel weight; they are
//! always evaluated and enter as the intercept `v(∅)` and the equality
//! constraint. With every coalition enumerated and `λ = 0` the solution is
//! exactly the Shapley value.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AttributionError, AttributionField, MethodKind, PartitionScheme, SupervoxelPartition};
use crate::model::{proxy_value_raw, ModelError, SegmentationModel};
use crate::rng::RngSpec;
use crate::volume::{ClassMask, Volume};

pub const DEFAULT_RIDGE: f64 = 1e-6;
/// Systems with a larger condition estimate are reported as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct Coalition {
    pub members: Vec<bool>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionPlan {
    pub coalitions: Vec<Coalition>,
    /// Every non-trivial coalition is present with its exact kernel weight.
    pub enumerated: bool,
}

/// Per-region Shapley estimates before they are spread onto voxels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyEstimate {
    pub values: Vec<f64>,
    /// Coalitions evaluated, including the empty and the full one.
    pub num_samples: usize,
    pub base_value: f64,
    pub full_value: f64,
    pub enumerated: bool,
    pub condition: f64,
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of one coalition of size `k` among `r` players.
pub fn kernel_weight(r: usize, k: usize) -> f64 {
    (r - 1) as f64 / (binomial(r, k) * (k * (r - k)) as f64)
}

/// Calls `f` with every size-`k` subset of `0..r` as a membership vector.
fn for_each_subset(r: usize, k: usize, mut f: impl FnMut(Vec<bool>)) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut members = vec![false; r];
        for &i in &idx {
            members[i] = true;
        }
        f(members);
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + r - k) else {
            return;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Chooses which coalitions to evaluate for `r` players given a budget of
/// `n_samples` evaluations (the empty and full coalitions included).
///
/// With `n_samples >= 2^r` every coalition is enumerated. Otherwise sizes are
/// taken in complementary pairs `(k, r − k)` starting from the heaviest kernel
/// mass; a pair is enumerated outright while the budget, split by kernel mass,
/// covers all of it. The remaining budget samples distinct coalitions from
/// the leftover sizes in proportion to their kernel mass, each draw paired
/// with its complement, and shares the leftover mass equally.
pub fn plan_coalitions<R: Rng>(r: usize, n_samples: usize, rng: &mut R) -> CoalitionPlan {
    assert!(r >= 2, "coalition planning needs at least two players");
    let all = if r < 63 { Some((1u64 << r) - 2) } else { None };
    let budget = n_samples.saturating_sub(2);
    let mut coalitions = Vec::new();
    if all.is_some_and(|all| budget as u64 >= all) {
        for k in 1..r {
            let w = kernel_weight(r, k);
            for_each_subset(r, k, |members| coalitions.push(Coalition { members, weight: w }));
        }
        return CoalitionPlan { coalitions, enumerated: true };
    }

    let size_mass: Vec<f64> = (0..=r)
        .map(|k| if k == 0 || k == r { 0.0 } else { (r - 1) as f64 / (k * (r - k)) as f64 })
        .collect();
    let total_mass: f64 = size_mass.iter().sum();
    let size_mass: Vec<f64> = size_mass.iter().map(|m| m / total_mass).collect();
    let pair_mass = |k: usize| if 2 * k == r { size_mass[k] } else { size_mass[k] + size_mass[r - k] };

    let mut left = budget;
    let mut left_mass = 1.0;
    let mut open: Vec<usize> = Vec::new();
    let mut k = 1;
    while 2 * k <= r {
        let sizes: &[usize] = if 2 * k == r { &[k] } else { &[k, r - k] };
        let count: f64 = sizes.iter().map(|&s| binomial(r, s)).sum();
        let share = left as f64 * pair_mass(k) / left_mass;
        if open.is_empty() && share >= count - 1e-8 {
            for &s in sizes {
                let w = size_mass[s] / binomial(r, s);
                for_each_subset(r, s, |members| coalitions.push(Coalition { members, weight: w }));
            }
            left -= count as usize;
            left_mass -= pair_mass(k);
        } else {
            open.push(k);
        }
        k += 1;
    }

    if left > 0 && !open.is_empty() {
        let masses: Vec<f64> = open.iter().map(|&k| pair_mass(k)).collect();
        let mass_sum: f64 = masses.iter().sum();
        let capacity: f64 = open
            .iter()
            .map(|&k| if 2 * k == r { binomial(r, k) } else { 2.0 * binomial(r, k) })
            .sum();
        let target = (left as f64).min(capacity) as usize;
        let mut seen: HashSet<Vec<bool>> = HashSet::new();
        let mut sampled: Vec<Vec<bool>> = Vec::new();
        let mut attempts = 0usize;
        let max_attempts = 1000 + 100 * target;
        while sampled.len() < target && attempts < max_attempts {
            attempts += 1;
            let mut u = rng.random::<f64>() * mass_sum;
            let mut pick = open.len() - 1;
            for (i, m) in masses.iter().enumerate() {
                if u < *m {
                    pick = i;
                    break;
                }
                u -= m;
            }
            let mut size = open[pick];
            if 2 * size != r && rng.random::<bool>() {
                size = r - size;
            }
            let mut members = vec![false; r];
            for i in index::sample(rng, r, size) {
                members[i] = true;
            }
            let complement: Vec<bool> = members.iter().map(|b| !b).collect();
            for candidate in [members, complement] {
                if sampled.len() < target && seen.insert(candidate.clone()) {
                    sampled.push(candidate);
                }
            }
        }
        if !sampled.is_empty() {
            let w = left_mass / sampled.len() as f64;
            coalitions.extend(sampled.into_iter().map(|members| Coalition { members, weight: w }));
        }
    }
    CoalitionPlan { coalitions, enumerated: false }
}

/// The game `v(z)`: the proxy on `x` with non-member regions zeroed.
struct RegionGame<'a> {
    model: &'a dyn SegmentationModel,
    x: Vec<f64>,
    labels: &'a [usize],
    class_id: usize,
    mask: &'a [u8],
}

impl RegionGame<'_> {
    fn value(&self, members: &[bool]) -> Result<f64, ModelError> {
        let input: Vec<f64> =
            self.x.iter().zip(self.labels).map(|(&v, &l)| if members[l] { v } else { 0.0 }).collect();
        proxy_value_raw(self.model, &input, self.class_id, self.mask)
    }
}

/// Solves the constrained weighted ridge problem through its KKT system.
fn solve_constrained(
    r: usize,
    rows: &[(&[bool], f64, f64)],
    lambda: f64,
    total: f64,
) -> Result<(Vec<f64>, f64), AttributionError> {
    let n = r + 1;
    let mut kkt = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for &(members, weight, target) in rows {
        let active: Vec<usize> = (0..r).filter(|&j| members[j]).collect();
        for &a in &active {
            rhs[a] += weight * target;
            for &b in &active {
                kkt[(a, b)] += weight;
            }
        }
    }
    for j in 0..r {
        kkt[(j, j)] += lambda;
        kkt[(j, r)] = 1.0;
        kkt[(r, j)] = 1.0;
    }
    rhs[r] = total;

    let singular = kkt.clone().svd(false, false).singular_values;
    let (smax, smin) = singular.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(AttributionError::Singular { condition });
    }
    let solution = kkt.lu().solve(&rhs).ok_or(AttributionError::Singular { condition })?;
    let phi: Vec<f64> = solution.iter().take(r).copied().collect();
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(AttributionError::Singular { condition });
    }
    Ok((phi, condition))
}

/// KernelSHAP attributions of class `class_id` over `partition`.
///
/// `n_samples` counts evaluated coalitions including the empty and full ones;
/// it must be at least `r + 2` unless it reaches `2^r` (full enumeration).
#[allow(clippy::too_many_arguments)]
pub fn kernelshap(
    model: &dyn SegmentationModel,
    x: &Volume,
    class_id: usize,
    mask: &ClassMask,
    partition: &SupervoxelPartition,
    n_samples: usize,
    ridge_lambda: f64,
    rng: RngSpec,
) -> Result<(AttributionField, ShapleyEstimate), AttributionError> {
    let r = partition.num_regions;
    if r == 0 || partition.dims != x.dims() {
        return Err(AttributionError::InvalidParam("partition does not match the input".into()));
    }
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(AttributionError::InvalidParam(format!("ridge_lambda must be >= 0, got {ridge_lambda}")));
    }
    let exhaustive = r < 63 && n_samples as u64 >= 1u64 << r;
    if r > 1 && !exhaustive && n_samples < r + 2 {
        return Err(AttributionError::InvalidParam(format!(
            "{n_samples} samples cannot identify {r} regions (need at least {})",
            r + 2
        )));
    }
    // Validates dims and class before any game evaluation.
    crate::model::proxy_value(model, x, class_id, mask)?;

    let game = RegionGame { model, x: x.to_f64(), labels: &partition.labels, class_id, mask: mask.data() };
    let base_value = game.value(&vec![false; r])?;
    let full_value = game.value(&vec![true; r])?;
    let total = full_value - base_value;

    let (values, num_samples, enumerated, condition) = if r == 1 {
        (vec![total], 2, true, 1.0)
    } else {
        let plan = plan_coalitions(r, n_samples, &mut rng.rng());
        let targets = plan
            .coalitions
            .iter()
            .map(|c| Ok(game.value(&c.members)? - base_value))
            .collect::<Result<Vec<f64>, ModelError>>()?;
        let rows: Vec<(&[bool], f64, f64)> = plan
            .coalitions
            .iter()
            .zip(&targets)
            .map(|(c, &t)| (c.members.as_slice(), c.weight, t))
            .collect();
        let (phi, condition) = solve_constrained(r, &rows, ridge_lambda, total)?;
        (phi, plan.coalitions.len() + 2, plan.enumerated, condition)
    };

    let estimate = ShapleyEstimate { values, num_samples, base_value, full_value, enumerated, condition };
    let method = match partition.scheme {
        PartitionScheme::Cubes => MethodKind::KernelShapCubes,
        PartitionScheme::Semantic => MethodKind::KernelShapSemantic,
    };
    let field = AttributionField::new(x.dims(), class_id, method, partition.broadcast(&estimate.values))?
        .with_params(serde_json::json!({
            "num_regions": r,
            "num_samples": estimate.num_samples,
            "base_value": base_value,
            "full_value": full_value,
            "enumerated": enumerated,
        }));
    Ok((field, estimate))
}
