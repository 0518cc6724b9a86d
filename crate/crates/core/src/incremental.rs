//! Updating a trained model without retraining.
//!
//! New rows go through the Woodbury identity, costing `O(D²·ΔN + ΔN³)` for
//! `D = n + M`; a change of `c1` is a rank-one correction through the cached
//! unsafe feature sum. Both return a new model and leave the input untouched.

use core::time::Duration;

use nalgebra::DMatrix;

use crate::linalg::{cholesky, relative_frobenius, spd_inverse, symmetrize};
use crate::rvfl::{class_feature_sum, design_matrix, target_matrix, Label, LabeledSamples, TrainedModel};
use crate::{Error, Result};

/// Incremental updates between re-verifications of `k_cache`.
pub const REBASE_INTERVAL: usize = 50;
/// Relative Frobenius drift of `k_cache` that triggers a re-factorization.
pub const REBASE_TOLERANCE: f64 = 1e-6;

/// Newly labeled rows to fold into a model.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateBatch {
    pub samples: LabeledSamples,
    /// Advisory; timing is left to the caller since the core has no clock.
    pub wall_time_budget: Option<Duration>,
}

impl UpdateBatch {
    pub fn new(samples: LabeledSamples) -> Self {
        Self { samples, wall_time_budget: None }
    }
}

/// Appends `ΔN` labeled rows.
///
/// `ΔK = K ΔAᵀ (I + ΔA K ΔAᵀ)⁻¹ ΔA K`, `ΔQ = ΔAᵀ(ΔY − ΔY C)`, and
/// `W_b ← W_b + K ΔQ − ΔK Q − ΔK ΔQ`, after which `K ← K − ΔK`, `Q ← Q + ΔQ`.
pub fn append_samples(model: &TrainedModel, batch: &UpdateBatch) -> Result<TrainedModel> {
    let samples = &batch.samples;
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let cfg = &model.config;
    let da = design_matrix(samples, &model.layer, cfg)?;
    let dr = target_matrix(samples.labels(), &model.cost);

    let k = &model.k_cache;
    // P = K ΔAᵀ, S = I + ΔA P.
    let p = k * da.transpose();
    let mut s = &da * &p;
    symmetrize(&mut s);
    for i in 0..s.nrows() {
        s[(i, i)] += 1.0;
    }
    let chol = cholesky(s).map_err(|_| Error::DegenerateBatch)?;
    let x = chol.solve(&p.transpose());
    let mut dk = &p * x;
    symmetrize(&mut dk);

    let dq = da.tr_mul(&dr);
    let w_b = &model.w_b + k * &dq - &dk * &model.q_cache - &dk * &dq;
    let mut k_cache = k - &dk;
    symmetrize(&mut k_cache);
    let q_cache = &model.q_cache + dq;
    let mut gram = &model.gram + da.tr_mul(&da);
    symmetrize(&mut gram);
    let unsafe_feature_sum = &model.unsafe_feature_sum + class_feature_sum(&da, samples.labels(), Label::Unsafe);

    let mut next = TrainedModel {
        config: *cfg,
        layer: model.layer.clone(),
        cost: model.cost,
        w_b,
        k_cache,
        q_cache,
        gram,
        sample_count: model.sample_count + samples.len(),
        unsafe_count: model.unsafe_count + samples.unsafe_count(),
        unsafe_feature_sum,
        updates_since_rebase: model.updates_since_rebase + 1,
    };
    if next.updates_since_rebase >= REBASE_INTERVAL {
        refresh_caches(&mut next)?;
    }
    Ok(next)
}

/// Re-inverts `gram` and replaces `k_cache` (and `w_b`) when drift exceeds
/// [`REBASE_TOLERANCE`]. Returns the measured drift.
pub fn refresh_caches(model: &mut TrainedModel) -> Result<f64> {
    let fresh = spd_inverse(model.gram.clone())?;
    let drift = relative_frobenius(&model.k_cache, &fresh);
    if drift > REBASE_TOLERANCE {
        model.k_cache = fresh;
        model.w_b = &model.k_cache * &model.q_cache;
    }
    model.updates_since_rebase = 0;
    Ok(drift)
}

/// Raises the cost of every unsafe row by `delta_c1`:
/// `W_b' = W_b + Δc1 · K · A_uᵀ1 · [0, −1]`.
pub fn update_cost(model: &TrainedModel, delta_c1: f64) -> Result<TrainedModel> {
    let c1 = model.cost.c1 + delta_c1;
    if !(c1 >= 0.0) || !c1.is_finite() {
        return Err(Error::NegativeCost(c1));
    }
    let mut next = model.clone();
    if delta_c1 == 0.0 {
        return Ok(next);
    }
    let shift = &model.k_cache * &model.unsafe_feature_sum;
    {
        let mut col = next.w_b.column_mut(1);
        col.axpy(-delta_c1, &shift, 1.0);
    }
    {
        let mut col = next.q_cache.column_mut(1);
        col.axpy(-delta_c1, &model.unsafe_feature_sum, 1.0);
    }
    next.cost.c1 = c1;
    Ok(next)
}

/// Directly re-inverted `(λI + AᵀA + ΔAᵀΔA)` for comparison against the
/// Woodbury path. Mostly useful in checks.
pub fn direct_updated_inverse(model: &TrainedModel, samples: &LabeledSamples) -> Result<DMatrix<f64>> {
    let da = design_matrix(samples, &model.layer, &model.config)?;
    spd_inverse(&model.gram + da.tr_mul(&da))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rvfl::{train, CostMatrix, RvflConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, seed: u64) -> LabeledSamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: DMatrix<f64> = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-15.0..15.0));
        let labels = (0..n)
            .map(|i| if pts[(i, 0)].abs() < 4.0 && pts[(i, 1)] > 0.0 { Label::Unsafe } else { Label::Safe })
            .collect();
        LabeledSamples::new(pts, labels).unwrap()
    }

    fn cfg() -> RvflConfig {
        RvflConfig { groups: 2, nodes_per_group: 4, seed: 11, ..RvflConfig::default() }
    }

    #[test]
    fn zero_cost_increment_is_identity() {
        let m = train(&data(60, 1), &cfg(), &CostMatrix::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(update_cost(&m, 0.0).unwrap(), m);
    }

    #[test]
    fn cost_increment_is_reversible() {
        let m = train(&data(80, 2), &cfg(), &CostMatrix::new(2.0, 1.0).unwrap()).unwrap();
        let back = update_cost(&update_cost(&m, 0.5).unwrap(), -0.5).unwrap();
        assert!((back.w_b() - m.w_b()).amax() <= 1e-9);
        assert_eq!(back.cost().c1, 2.0);
    }

    #[test]
    fn negative_cost_is_rejected() {
        let m = train(&data(40, 3), &cfg(), &CostMatrix::new(0.2, 1.0).unwrap()).unwrap();
        assert!(matches!(update_cost(&m, -0.5), Err(Error::NegativeCost(_))));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let m = train(&data(40, 4), &cfg(), &CostMatrix::zero()).unwrap();
        let batch = UpdateBatch::new(LabeledSamples::empty(2));
        assert_eq!(append_samples(&m, &batch), Err(Error::EmptySamples));
    }

    #[test]
    fn rebase_resets_counter() {
        let full = data(120, 5);
        let mut m = train(&full.slice(0, 60), &cfg(), &CostMatrix::new(2.0, 1.0).unwrap()).unwrap();
        for i in 0..REBASE_INTERVAL {
            let row = full.slice(60 + i, 61 + i);
            m = append_samples(&m, &UpdateBatch::new(row)).unwrap();
        }
        assert_eq!(m.updates_since_rebase(), 0);
        assert_eq!(m.sample_count(), 110);
        let fresh = train(&full.slice(0, 110), &cfg(), &CostMatrix::new(2.0, 1.0).unwrap()).unwrap();
        assert!(relative_frobenius(m.k_cache(), fresh.k_cache()) < 1e-8);
    }
}
