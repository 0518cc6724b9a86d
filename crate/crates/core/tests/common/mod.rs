#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safelink_core::filter::ConstraintRow;
use safelink_core::rvfl::{train, Label, LabeledSamples};
use safelink_core::{CostMatrix, RvflConfig, TrainedModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform points in `[-15, 15]^n` with roughly `p_unsafe` unsafe labels.
pub fn random_data(n: usize, dim: usize, p_unsafe: f64, seed: u64) -> LabeledSamples {
    let mut r = rng(seed);
    let pts = DMatrix::from_fn(n, dim, |_, _| r.gen_range(-15.0..15.0));
    let labels = (0..n).map(|_| if r.gen::<f64>() < p_unsafe { Label::Unsafe } else { Label::Safe }).collect();
    LabeledSamples::new(pts, labels).unwrap()
}

pub fn small_config(dim: usize, groups: usize, nodes: usize, seed: u64) -> RvflConfig {
    RvflConfig { input_dim: dim, groups, nodes_per_group: nodes, seed, ..RvflConfig::default() }
}

pub fn trained(n: usize, groups: usize, nodes: usize, cost: CostMatrix, seed: u64) -> (LabeledSamples, TrainedModel) {
    let data = random_data(n, 2, 0.3, seed);
    let model = train(&data, &small_config(2, groups, nodes, seed), &cost).unwrap();
    (data, model)
}

/// One feature row evaluated node by node with `exp`.
pub fn feature_row(model: &TrainedModel, x: &[f64]) -> Vec<f64> {
    let cfg = model.config();
    let layer = model.layer();
    let xn: Vec<f64> = x.iter().map(|v| v / cfg.input_scale).collect();
    let mut row = xn.clone();
    for k in 0..layer.nodes() {
        let mut z = layer.biases[k];
        for (j, v) in xn.iter().enumerate() {
            z += v * layer.weights[(j, k)];
        }
        row.push(1.0 / (1.0 + (-cfg.activation_scale * z).exp()));
    }
    row
}

/// Minimizer of `λ‖W‖² + ‖AW − Y‖² + 2 tr(A W Cᵀ Yᵀ)` from its stationarity
/// condition `(λI + AᵀA) W = AᵀY − AᵀY C`, solved by LU.
pub fn normal_equation_oracle(model: &TrainedModel, data: &LabeledSamples, cost: &CostMatrix) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = (0..data.len()).map(|i| feature_row(model, &data.point(i))).collect();
    let d = rows[0].len();
    let a = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let y = DMatrix::from_fn(data.len(), 2, |i, j| {
        let hot = match data.labels()[i] {
            Label::Unsafe => [1.0, 0.0],
            Label::Safe => [0.0, 1.0],
        };
        hot[j]
    });
    let c = DMatrix::from_row_slice(2, 2, &[0.0, cost.c1, cost.c2, 0.0]);
    let lhs = DMatrix::identity(d, d) * model.config().ridge + a.transpose() * &a;
    let rhs = a.transpose() * &y - a.transpose() * &y * c;
    lhs.lu().solve(&rhs).expect("nonsingular")
}

pub fn barrier_from(model: &TrainedModel, w_b: &DMatrix<f64>, x: &[f64]) -> f64 {
    let row = feature_row(model, x);
    2.0 * row.iter().enumerate().map(|(i, v)| v * w_b[(i, 1)]).sum::<f64>() - 1.0
}

pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

pub fn rel_fro(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Entrywise `|a − b| / max(|b|, 1)`.
pub fn entrywise_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

pub fn vec_rel(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] += h;
            b[j] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

pub fn central_hessian(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        let at = |si: f64, sj: f64| {
            let mut p = x.to_vec();
            p[i] += si * h;
            p[j] += sj * h;
            f(&p)
        };
        (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h)
    })
}

/// Every subset of at most two rows treated as equalities; the cheapest
/// feasible candidate wins. In two variables the optimum has at most two
/// linearly independent active rows.
pub fn enumerate_qp(u_ref: Vector2<f64>, rows: &[ConstraintRow]) -> Option<(Vector2<f64>, f64)> {
    let ok = |u: &Vector2<f64>| rows.iter().all(|r| r.a[0] * u[0] + r.a[1] * u[1] - r.b >= -1e-9 * (1.0 + r.b.abs()));
    let mut best: Option<(Vector2<f64>, f64)> = None;
    let mut consider = |u: Vector2<f64>| {
        if ok(&u) {
            let f = (u - u_ref).norm_squared();
            if best.map_or(true, |(_, g)| f < g) {
                best = Some((u, f));
            }
        }
    };
    consider(u_ref);
    for r in rows {
        let a = Vector2::new(r.a[0], r.a[1]);
        if a.norm_squared() > 0.0 {
            consider(u_ref - a * ((a.dot(&u_ref) - r.b) / a.norm_squared()));
        }
    }
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let m = nalgebra::Matrix2::new(rows[i].a[0], rows[i].a[1], rows[j].a[0], rows[j].a[1]);
            if m.determinant().abs() > 1e-12 {
                if let Some(inv) = m.try_inverse() {
                    consider(inv * Vector2::new(rows[i].b, rows[j].b));
                }
            }
        }
    }
    best
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
