//! Verification math on a trained barrier: analytic Lipschitz constants,
//! hat-matrix influence of the unsafe set, Lipschitz coverage balls around
//! unsafe samples, and Monte-Carlo conservativeness against ground truth.

use alloc::vec::Vec;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rvfl::{class_feature_sum, design_matrix, Label, LabeledSamples, TrainedModel};
use crate::scenario::{uniform_in_union, Scenario};
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// Analytic bound on `|B(x) − B(y)| / ‖x − y‖`.
    pub l_b: f64,
    /// Analytic bound on `‖∇B(x) − ∇B(y)‖ / ‖x − y‖`.
    pub l_grad: f64,
    /// Largest sampled `|ΔB| / ‖Δx‖`.
    pub empirical_max_ratio: f64,
    /// Largest sampled `‖Δ∇B‖ / ‖Δx‖`.
    pub empirical_grad_ratio: f64,
    pub pairs: usize,
}

/// Random pairs drawn in the box `[lo, hi]ⁿ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeBox {
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
}

impl Default for ProbeBox {
    fn default() -> Self {
        Self { lo: -15.0, hi: 15.0, seed: 0 }
    }
}

/// `(l_b, l_grad)` from the weights alone.
///
/// With normalized input `x/s`, `l_b = (2/s)(‖w₀‖ + Σₖ L_φ‖w_e,k‖·|w_b,k|)`
/// and `l_grad = (2/s²) Σₖ L_φ′‖w_e,k‖²·|w_b,k|`, using only the safe column
/// of `W_b`.
pub fn analytic_lipschitz(model: &TrainedModel) -> (f64, f64) {
    let cfg = model.config();
    let n = cfg.input_dim;
    let inv = 1.0 / cfg.input_scale;
    let phi = cfg.activation();
    let w2 = model.w_b().column(1);
    let linear = w2.rows(0, n).norm();
    let mut first = 0.0;
    let mut second = 0.0;
    for k in 0..model.layer().nodes() {
        let we = model.layer().weights.column(k).norm();
        let wb = libm::fabs(w2[n + k]);
        first += phi.lipschitz() * we * wb;
        second += phi.first_lipschitz() * we * we * wb;
    }
    (2.0 * inv * (linear + first), 2.0 * inv * inv * second)
}

/// Analytic bounds plus the empirical maxima over `pairs` random pairs.
pub fn lipschitz_bound(model: &TrainedModel, probe: &ProbeBox, pairs: usize) -> Result<LipschitzReport> {
    let (l_b, l_grad) = analytic_lipschitz(model);
    let n = model.config().input_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(probe.seed, 1));
    let mut ratio: f64 = 0.0;
    let mut grad_ratio: f64 = 0.0;
    let mut x = alloc::vec![0.0; n];
    let mut y = alloc::vec![0.0; n];
    for _ in 0..pairs {
        for j in 0..n {
            x[j] = rng.gen_range(probe.lo..probe.hi);
            y[j] = rng.gen_range(probe.lo..probe.hi);
        }
        let dist = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let dist = libm::sqrt(dist);
        if dist == 0.0 {
            continue;
        }
        let ex = model.evaluate(&x)?;
        let ey = model.evaluate(&y)?;
        ratio = ratio.max(libm::fabs(ex.value - ey.value) / dist);
        grad_ratio = grad_ratio.max((ex.gradient - ey.gradient).norm() / dist);
    }
    Ok(LipschitzReport { l_b, l_grad, empirical_max_ratio: ratio, empirical_grad_ratio: grad_ratio, pairs })
}

/// Per unsafe training row `k`: `S_k = Σ_{i unsafe} H[k, i]` with
/// `H = A K Aᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HatInfluence {
    /// Row indices (into the training data) of the unsafe samples.
    pub unsafe_indices: Vec<usize>,
    pub sums: Vec<f64>,
}

impl HatInfluence {
    pub fn min(&self) -> f64 {
        self.sums.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// How many `S_k ≤ 0`; these rows are not pushed down by raising `c1`.
    pub fn nonpositive(&self) -> usize {
        self.sums.iter().filter(|s| **s <= 0.0).count()
    }
}

/// `S_k` for every unsafe row, without forming the `N × N` hat matrix:
/// `Σ_{i∈u} H[k,i] = Ã_k · K · (A_uᵀ 1)`.
pub fn hat_row_unsafe_sum(model: &TrainedModel, data: &LabeledSamples) -> Result<HatInfluence> {
    if data.len() != model.sample_count() {
        return Err(Error::DataMismatch("sample count differs from the model"));
    }
    if data.unsafe_count() != model.unsafe_count() {
        return Err(Error::DataMismatch("unsafe count differs from the model"));
    }
    let a = design_matrix(data, model.layer(), model.config())?;
    let s = class_feature_sum(&a, data.labels(), Label::Unsafe);
    let cached = model.unsafe_feature_sum();
    if (&s - cached).norm() > 1e-8 * (1.0 + cached.norm()) {
        return Err(Error::DataMismatch("unsafe feature sum differs from the model"));
    }
    let v: DVector<f64> = model.k_cache() * s;
    let mut unsafe_indices = Vec::new();
    let mut sums = Vec::new();
    for (i, l) in data.labels().iter().enumerate() {
        if *l == Label::Unsafe {
            unsafe_indices.push(i);
            sums.push(a.row(i).transpose().dot(&v));
        }
    }
    Ok(HatInfluence { unsafe_indices, sums })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// `δ_i = |B(x_i)| / l_b` for each unsafe sample with `B(x_i) < 0`, else 0.
    pub radii: Vec<f64>,
    /// Probes inside some ball with `B ≥ 0`.
    pub violations: usize,
    pub probes: usize,
    pub l_b: f64,
}

impl CoverageReport {
    pub fn covered_samples(&self) -> usize {
        self.radii.iter().filter(|r| **r > 0.0).count()
    }
}

/// Lipschitz balls around unsafe samples, each probed with
/// `probes_per_ball` uniform points strictly inside it.
pub fn coverage_radii(
    model: &TrainedModel,
    data: &LabeledSamples,
    l_b: f64,
    probes_per_ball: usize,
    seed: u64,
) -> Result<CoverageReport> {
    let n = model.config().input_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let mut radii = Vec::new();
    let mut violations = 0;
    let mut probes = 0;
    let mut offset = alloc::vec![0.0; n];
    let mut q = alloc::vec![0.0; n];
    for (i, l) in data.labels().iter().enumerate() {
        if *l != Label::Unsafe {
            continue;
        }
        let x = data.point(i);
        let b = model.cbf_value(&x)?;
        let delta = if b < 0.0 && l_b > 0.0 { -b / l_b } else { 0.0 };
        radii.push(delta);
        if delta == 0.0 {
            continue;
        }
        for _ in 0..probes_per_ball {
            sample_open_ball(&mut rng, &mut offset);
            for j in 0..n {
                q[j] = x[j] + delta * offset[j];
            }
            probes += 1;
            if model.cbf_value(&q)? >= 0.0 {
                violations += 1;
            }
        }
    }
    Ok(CoverageReport { radii, violations, probes, l_b })
}

/// Uniform point in the open unit ball by rejection from the cube.
fn sample_open_ball<R: Rng>(rng: &mut R, out: &mut [f64]) {
    loop {
        for v in out.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let r2: f64 = out.iter().map(|v| v * v).sum();
        if r2 < 1.0 {
            return;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservativenessReport {
    pub covered: bool,
    pub miss_points: Vec<[f64; 2]>,
    pub probes: usize,
    pub time: f64,
}

/// Uniform probes over the true unsafe region at time `t`; `covered` iff
/// `B < 0` at all of them. An empty region is covered vacuously.
pub fn conservativeness_check(
    model: &TrainedModel,
    scenario: &Scenario,
    t: f64,
    probe_count: usize,
    seed: u64,
) -> Result<ConservativenessReport> {
    if model.config().input_dim != 2 {
        return Err(Error::DimensionMismatch { expected: 2, actual: model.config().input_dim });
    }
    let rects = scenario.active_rects(t);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let points = uniform_in_union(&rects, if rects.is_empty() { 0 } else { probe_count }, &mut rng);
    let mut miss_points = Vec::new();
    for p in &points {
        if model.cbf_value(p)? >= 0.0 {
            miss_points.push(*p);
        }
    }
    Ok(ConservativenessReport { covered: miss_points.is_empty(), miss_points, probes: points.len(), time: t })
}

/// Sign-rule confusion counts on a labeled set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// Unsafe samples with `B ≥ 0`.
    pub unsafe_as_safe: usize,
    /// Safe samples with `B < 0`.
    pub safe_as_unsafe: usize,
    pub total: usize,
}

impl ConfusionCounts {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            return 1.0;
        }
        1.0 - (self.unsafe_as_safe + self.safe_as_unsafe) as f64 / self.total as f64
    }
}

pub fn confusion(model: &TrainedModel, data: &LabeledSamples) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts { unsafe_as_safe: 0, safe_as_unsafe: 0, total: data.len() };
    for (i, l) in data.labels().iter().enumerate() {
        let predicted = model.classify(&data.point(i))?;
        match (l, predicted) {
            (Label::Unsafe, Label::Safe) => counts.unsafe_as_safe += 1,
            (Label::Safe, Label::Unsafe) => counts.safe_as_unsafe += 1,
            _ => {}
        }
    }
    Ok(counts)
}
