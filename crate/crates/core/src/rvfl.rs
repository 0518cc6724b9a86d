//! Cost-sensitive RVFL classifier used as a control barrier function.
//!
//! A point `x ∈ ℝⁿ` is normalized by `input_scale`, concatenated with `M`
//! random sigmoid features, and mapped through a closed-form ridge solution
//! with an extra cost-matrix term. The barrier is `B(x) = 2·ŷ₂(x) − 1`, where
//! `ŷ₂` is the "safe" confidence. Unsafe training rows target `[1, −c1]` and
//! safe rows `[−c2, 1]`, so raising `c1` pushes `B` down around unsafe data.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix2, RowVector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{spd_inverse, symmetrize};
use crate::{Error, Result};

/// Hyperparameters of the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RvflConfig {
    /// Dimension `n` of classifier inputs.
    pub input_dim: usize,
    /// Number of enhancement node groups (`N1`).
    pub groups: usize,
    /// Nodes per group (`N2`).
    pub nodes_per_group: usize,
    /// Ridge parameter `λ > 0`.
    pub ridge: f64,
    /// `s` in `φ(t) = sigmoid(s·t)`.
    pub activation_scale: f64,
    /// Enhancement weights and biases are drawn from `U[−r, r]`.
    pub init_range: f64,
    /// Inputs are divided by this before feature extension.
    pub input_scale: f64,
    pub seed: u64,
}

impl Default for RvflConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            groups: 10,
            nodes_per_group: 10,
            ridge: 1e-3,
            activation_scale: 5.0,
            init_range: 1.0,
            input_scale: 15.0,
            seed: 0,
        }
    }
}

impl RvflConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be positive"));
        }
        if self.groups == 0 || self.nodes_per_group == 0 {
            return Err(Error::InvalidConfig("groups and nodes_per_group must be positive"));
        }
        if !(self.ridge > 0.0) || !self.ridge.is_finite() {
            return Err(Error::InvalidConfig("ridge must be positive"));
        }
        if !(self.activation_scale > 0.0) || !self.activation_scale.is_finite() {
            return Err(Error::InvalidConfig("activation_scale must be positive"));
        }
        if !(self.init_range >= 0.0) || !self.init_range.is_finite() {
            return Err(Error::InvalidConfig("init_range must be a finite nonnegative half-width"));
        }
        if !(self.input_scale > 0.0) || !self.input_scale.is_finite() {
            return Err(Error::InvalidConfig("input_scale must be positive"));
        }
        Ok(())
    }

    /// `M = N1·N2`.
    pub fn enhancement_nodes(&self) -> usize {
        self.groups * self.nodes_per_group
    }

    /// `n + M`, the width of an extended feature row.
    pub fn feature_dim(&self) -> usize {
        self.input_dim + self.enhancement_nodes()
    }

    pub fn activation(&self) -> ScaledSigmoid {
        ScaledSigmoid { scale: self.activation_scale }
    }
}

/// `φ(t) = 1 / (1 + exp(−s·t))` and its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledSigmoid {
    pub scale: f64,
}

impl ScaledSigmoid {
    #[inline]
    fn logistic(z: f64) -> f64 {
        if z >= 0.0 {
            1.0 / (1.0 + libm::exp(-z))
        } else {
            let e = libm::exp(z);
            e / (1.0 + e)
        }
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        Self::logistic(self.scale * t)
    }

    #[inline]
    pub fn first(&self, t: f64) -> f64 {
        let s = self.value(t);
        self.scale * s * (1.0 - s)
    }

    #[inline]
    pub fn second(&self, t: f64) -> f64 {
        let s = self.value(t);
        self.scale * self.scale * s * (1.0 - s) * (1.0 - 2.0 * s)
    }

    /// Value, first and second derivative from a single exponential.
    #[inline]
    pub fn all(&self, t: f64) -> (f64, f64, f64) {
        let s = self.value(t);
        let d = s * (1.0 - s);
        (s, self.scale * d, self.scale * self.scale * d * (1.0 - 2.0 * s))
    }

    /// Lipschitz constant of `φ`: `s/4`.
    pub fn lipschitz(&self) -> f64 {
        self.scale / 4.0
    }

    /// Lipschitz constant of `φ′`: `s²·max|σ(1−σ)(1−2σ)| = s²/(6√3)`.
    pub fn first_lipschitz(&self) -> f64 {
        self.scale * self.scale / (6.0 * libm::sqrt(3.0))
    }
}

/// Fixed random layer: column `k` of `weights` and `biases[k]` define node `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancementLayer {
    /// `n × M`.
    pub weights: DMatrix<f64>,
    /// Length `M`.
    pub biases: DVector<f64>,
}

impl EnhancementLayer {
    pub fn nodes(&self) -> usize {
        self.biases.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn check(&self, config: &RvflConfig) -> Result<()> {
        let m = config.enhancement_nodes();
        if self.weights.nrows() != config.input_dim {
            return Err(Error::DimensionMismatch { expected: config.input_dim, actual: self.weights.nrows() });
        }
        if self.weights.ncols() != m {
            return Err(Error::DimensionMismatch { expected: m, actual: self.weights.ncols() });
        }
        if self.biases.len() != m {
            return Err(Error::DimensionMismatch { expected: m, actual: self.biases.len() });
        }
        Ok(())
    }
}

/// Draws the enhancement layer i.i.d. from `U[−init_range, init_range]`.
///
/// Deterministic in `config.seed`: node weights are drawn node by node, then
/// all biases.
pub fn init_enhancement(config: &RvflConfig) -> EnhancementLayer {
    let n = config.input_dim;
    let m = config.enhancement_nodes();
    let r = config.init_range;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw = || (2.0 * rng.gen::<f64>() - 1.0) * r;
    let mut weights = DMatrix::zeros(n, m);
    for k in 0..m {
        for j in 0..n {
            weights[(j, k)] = draw();
        }
    }
    let biases = DVector::from_fn(m, |_, _| draw());
    EnhancementLayer { weights, biases }
}

/// Extended feature row `[x/s_in, φ(x/s_in · W + b)]`.
pub fn extend_features(x: &[f64], layer: &EnhancementLayer, config: &RvflConfig) -> Result<DVector<f64>> {
    check_input(x, config.input_dim)?;
    let mut out = DVector::zeros(config.feature_dim());
    write_features(x, layer, config, out.as_mut_slice());
    Ok(out)
}

fn check_input(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, actual: x.len() });
    }
    Ok(())
}

/// Writes the extended row of `x` into `out` (length `n + M`).
fn write_features(x: &[f64], layer: &EnhancementLayer, config: &RvflConfig, out: &mut [f64]) {
    let n = config.input_dim;
    let inv = 1.0 / config.input_scale;
    let phi = config.activation();
    for j in 0..n {
        out[j] = x[j] * inv;
    }
    for k in 0..layer.nodes() {
        out[n + k] = phi.value(pre_activation(&out[..n], layer, k));
    }
}

#[inline]
fn pre_activation(xn: &[f64], layer: &EnhancementLayer, k: usize) -> f64 {
    let col = layer.weights.column(k);
    let mut acc = layer.biases[k];
    for (j, xj) in xn.iter().enumerate() {
        acc += xj * col[j];
    }
    acc
}

/// Ground-truth class of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Unsafe,
    Safe,
}

impl Label {
    /// Row of the one-hot label matrix.
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Label::Unsafe => [1.0, 0.0],
            Label::Safe => [0.0, 1.0],
        }
    }

    /// `+1 → Safe`, `−1 → Unsafe`.
    pub fn from_sign(sign: i8) -> Option<Label> {
        match sign {
            1 => Some(Label::Safe),
            -1 => Some(Label::Unsafe),
            _ => None,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Label::Unsafe => -1,
            Label::Safe => 1,
        }
    }
}

/// `C = [[0, c1], [c2, 0]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    /// Penalty for predicting an unsafe sample as safe.
    pub c1: f64,
    /// Penalty for predicting a safe sample as unsafe.
    pub c2: f64,
}

impl CostMatrix {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !(c1 >= 0.0) || !(c2 >= 0.0) || !c1.is_finite() || !c2.is_finite() {
            return Err(Error::InvalidConfig("cost entries must be finite and nonnegative"));
        }
        Ok(Self { c1, c2 })
    }

    pub fn zero() -> Self {
        Self { c1: 0.0, c2: 0.0 }
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(0.0, self.c1, self.c2, 0.0)
    }

    /// Row of `Y − YC` for a sample with this label.
    pub fn target(&self, label: Label) -> [f64; 2] {
        match label {
            Label::Unsafe => [1.0, -self.c1],
            Label::Safe => [-self.c2, 1.0],
        }
    }
}

/// Points (one per row) with their ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSamples {
    points: DMatrix<f64>,
    labels: Vec<Label>,
}

impl LabeledSamples {
    pub fn new(points: DMatrix<f64>, labels: Vec<Label>) -> Result<Self> {
        if points.nrows() != labels.len() {
            return Err(Error::DimensionMismatch { expected: points.nrows(), actual: labels.len() });
        }
        Ok(Self { points, labels })
    }

    /// Builds from 2-D points.
    pub fn from_planar(points: &[[f64; 2]], labels: Vec<Label>) -> Result<Self> {
        let m = DMatrix::from_fn(points.len(), 2, |i, j| points[i][j]);
        Self::new(m, labels)
    }

    pub fn empty(dim: usize) -> Self {
        Self { points: DMatrix::zeros(0, dim), labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    pub fn unsafe_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Unsafe).count()
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &LabeledSamples) -> Result<LabeledSamples> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: other.dim() });
        }
        let n = self.len();
        let points = DMatrix::from_fn(n + other.len(), self.dim(), |i, j| {
            if i < n {
                self.points[(i, j)]
            } else {
                other.points[(i - n, j)]
            }
        });
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(LabeledSamples { points, labels })
    }

    /// Rows `range`, as a new sample set.
    pub fn slice(&self, start: usize, end: usize) -> LabeledSamples {
        let points = self.points.rows(start, end - start).into_owned();
        LabeledSamples { points, labels: self.labels[start..end].to_vec() }
    }
}

/// Extended data matrix `A` (`N × (n+M)`).
pub fn design_matrix(samples: &LabeledSamples, layer: &EnhancementLayer, config: &RvflConfig) -> Result<DMatrix<f64>> {
    if samples.dim() != config.input_dim {
        return Err(Error::DimensionMismatch { expected: config.input_dim, actual: samples.dim() });
    }
    let d = config.feature_dim();
    let n = config.input_dim;
    let mut a = DMatrix::zeros(samples.len(), d);
    let mut x = alloc::vec![0.0; n];
    let mut row = alloc::vec![0.0; d];
    for i in 0..samples.len() {
        for j in 0..n {
            x[j] = samples.points[(i, j)];
        }
        write_features(&x, layer, config, &mut row);
        for (c, v) in row.iter().enumerate() {
            a[(i, c)] = *v;
        }
    }
    Ok(a)
}

/// `Y − YC` (`N × 2`).
pub fn target_matrix(labels: &[Label], cost: &CostMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(labels.len(), 2, |i, j| cost.target(labels[i])[j])
}

/// One-hot `Y` (`N × 2`).
pub fn label_matrix(labels: &[Label]) -> DMatrix<f64> {
    DMatrix::from_fn(labels.len(), 2, |i, j| labels[i].one_hot()[j])
}

/// `Aᵀ·1` over the given label class.
pub(crate) fn class_feature_sum(a: &DMatrix<f64>, labels: &[Label], class: Label) -> DVector<f64> {
    let mut sum = DVector::zeros(a.ncols());
    for (i, l) in labels.iter().enumerate() {
        if *l == class {
            for c in 0..a.ncols() {
                sum[c] += a[(i, c)];
            }
        }
    }
    sum
}

/// Value, gradient and Hessian of the barrier at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct CbfEvaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// All the fields of a trained model, for archiving.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParts {
    pub config: RvflConfig,
    pub layer: EnhancementLayer,
    pub cost: CostMatrix,
    pub w_b: DMatrix<f64>,
    pub k_cache: DMatrix<f64>,
    pub q_cache: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub sample_count: usize,
    pub unsafe_count: usize,
    pub unsafe_feature_sum: DVector<f64>,
    pub updates_since_rebase: usize,
}

/// Trained barrier model plus the caches needed for incremental updates.
///
/// `k_cache = (λI + AᵀA)⁻¹`, `q_cache = Aᵀ(Y − YC)`, `w_b = k_cache·q_cache`.
/// `gram` keeps `λI + AᵀA` itself so the inverse can be re-verified after
/// many Woodbury steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub(crate) config: RvflConfig,
    pub(crate) layer: EnhancementLayer,
    pub(crate) cost: CostMatrix,
    pub(crate) w_b: DMatrix<f64>,
    pub(crate) k_cache: DMatrix<f64>,
    pub(crate) q_cache: DMatrix<f64>,
    pub(crate) gram: DMatrix<f64>,
    pub(crate) sample_count: usize,
    pub(crate) unsafe_count: usize,
    pub(crate) unsafe_feature_sum: DVector<f64>,
    pub(crate) updates_since_rebase: usize,
}

/// Closed-form cost-sensitive training: `W_b = (λI + AᵀA)⁻¹ Aᵀ(Y − YC)`.
pub fn train(samples: &LabeledSamples, config: &RvflConfig, cost: &CostMatrix) -> Result<TrainedModel> {
    let layer = init_enhancement(config);
    train_with_layer(samples, config, layer, cost)
}

/// Training against an explicit enhancement layer.
pub fn train_with_layer(
    samples: &LabeledSamples,
    config: &RvflConfig,
    layer: EnhancementLayer,
    cost: &CostMatrix,
) -> Result<TrainedModel> {
    config.validate()?;
    layer.check(config)?;
    CostMatrix::new(cost.c1, cost.c2)?;
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let a = design_matrix(samples, &layer, config)?;
    let mut gram = a.tr_mul(&a);
    symmetrize(&mut gram);
    for i in 0..gram.nrows() {
        gram[(i, i)] += config.ridge;
    }
    let k_cache = spd_inverse(gram.clone())?;
    let r = target_matrix(samples.labels(), cost);
    let q_cache = a.tr_mul(&r);
    let w_b = &k_cache * &q_cache;
    let unsafe_feature_sum = class_feature_sum(&a, samples.labels(), Label::Unsafe);
    Ok(TrainedModel {
        config: *config,
        layer,
        cost: *cost,
        w_b,
        k_cache,
        q_cache,
        gram,
        sample_count: samples.len(),
        unsafe_count: samples.unsafe_count(),
        unsafe_feature_sum,
        updates_since_rebase: 0,
    })
}

impl TrainedModel {
    pub fn from_parts(parts: ModelParts) -> Result<Self> {
        parts.config.validate()?;
        parts.layer.check(&parts.config)?;
        let d = parts.config.feature_dim();
        let shape_ok = parts.w_b.shape() == (d, 2)
            && parts.k_cache.shape() == (d, d)
            && parts.q_cache.shape() == (d, 2)
            && parts.gram.shape() == (d, d)
            && parts.unsafe_feature_sum.len() == d;
        if !shape_ok {
            return Err(Error::DimensionMismatch { expected: d, actual: parts.w_b.nrows() });
        }
        Ok(Self {
            config: parts.config,
            layer: parts.layer,
            cost: parts.cost,
            w_b: parts.w_b,
            k_cache: parts.k_cache,
            q_cache: parts.q_cache,
            gram: parts.gram,
            sample_count: parts.sample_count,
            unsafe_count: parts.unsafe_count,
            unsafe_feature_sum: parts.unsafe_feature_sum,
            updates_since_rebase: parts.updates_since_rebase,
        })
    }

    pub fn to_parts(&self) -> ModelParts {
        ModelParts {
            config: self.config,
            layer: self.layer.clone(),
            cost: self.cost,
            w_b: self.w_b.clone(),
            k_cache: self.k_cache.clone(),
            q_cache: self.q_cache.clone(),
            gram: self.gram.clone(),
            sample_count: self.sample_count,
            unsafe_count: self.unsafe_count,
            unsafe_feature_sum: self.unsafe_feature_sum.clone(),
            updates_since_rebase: self.updates_since_rebase,
        }
    }

    pub fn config(&self) -> &RvflConfig {
        &self.config
    }

    pub fn layer(&self) -> &EnhancementLayer {
        &self.layer
    }

    pub fn cost(&self) -> &CostMatrix {
        &self.cost
    }

    pub fn w_b(&self) -> &DMatrix<f64> {
        &self.w_b
    }

    pub fn k_cache(&self) -> &DMatrix<f64> {
        &self.k_cache
    }

    pub fn q_cache(&self) -> &DMatrix<f64> {
        &self.q_cache
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn unsafe_count(&self) -> usize {
        self.unsafe_count
    }

    pub fn unsafe_feature_sum(&self) -> &DVector<f64> {
        &self.unsafe_feature_sum
    }

    pub fn updates_since_rebase(&self) -> usize {
        self.updates_since_rebase
    }

    pub fn features(&self, x: &[f64]) -> Result<DVector<f64>> {
        extend_features(x, &self.layer, &self.config)
    }

    /// `ŷ(x) = x̃ᵀ·W_b`.
    pub fn predict_confidence(&self, x: &[f64]) -> Result<RowVector2<f64>> {
        let f = self.features(x)?;
        let mut out = RowVector2::zeros();
        for c in 0..2 {
            out[c] = f.dot(&self.w_b.column(c));
        }
        Ok(out)
    }

    /// `B(x) = 2·ŷ₂(x) − 1`.
    pub fn cbf_value(&self, x: &[f64]) -> Result<f64> {
        Ok(2.0 * self.predict_confidence(x)?[1] - 1.0)
    }

    pub fn cbf_gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.evaluate(x)?.gradient)
    }

    pub fn cbf_hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.evaluate(x)?.hessian)
    }

    /// Barrier value with analytic gradient and Hessian in input coordinates.
    pub fn evaluate(&self, x: &[f64]) -> Result<CbfEvaluation> {
        check_input(x, self.config.input_dim)?;
        let n = self.config.input_dim;
        let inv = 1.0 / self.config.input_scale;
        let phi = self.config.activation();
        let xn: Vec<f64> = x.iter().map(|v| v * inv).collect();
        let w2 = self.w_b.column(1);

        let mut value = 0.0;
        let mut gradient = DVector::zeros(n);
        let mut hessian = DMatrix::zeros(n, n);
        for j in 0..n {
            value += xn[j] * w2[j];
            gradient[j] = w2[j];
        }
        for k in 0..self.layer.nodes() {
            let wk = w2[n + k];
            let (f0, f1, f2) = phi.all(pre_activation(&xn, &self.layer, k));
            value += f0 * wk;
            let col = self.layer.weights.column(k);
            let g = wk * f1;
            let h = wk * f2;
            for j in 0..n {
                gradient[j] += g * col[j];
                for l in 0..=j {
                    hessian[(j, l)] += h * col[j] * col[l];
                }
            }
        }
        for j in 0..n {
            for l in 0..j {
                hessian[(l, j)] = hessian[(j, l)];
            }
        }
        gradient *= 2.0 * inv;
        hessian *= 2.0 * inv * inv;
        Ok(CbfEvaluation { value: 2.0 * value - 1.0, gradient, hessian })
    }

    /// `Unsafe` iff `B(x) < 0`; the zero level set counts as safe.
    pub fn classify(&self, x: &[f64]) -> Result<Label> {
        Ok(classify_value(self.cbf_value(x)?))
    }
}

/// The sign rule on a barrier value.
pub fn classify_value(b: f64) -> Label {
    if b < 0.0 {
        Label::Unsafe
    } else {
        Label::Safe
    }
}
