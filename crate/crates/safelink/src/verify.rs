//! Self-checks for `safelink verify`: every fast path compared against a
//! slow, separately written computation.

use nalgebra::{DMatrix, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use safelink_core::analysis::{analytic_lipschitz, hat_row_unsafe_sum, lipschitz_bound, ProbeBox};
use safelink_core::dynamics::{lift_cbf, ControlInput, ManipulatorState, TwoLinkArm};
use safelink_core::filter::{kkt_residuals, solve_qp, ConstraintRow, LinearConstraintSet};
use safelink_core::incremental::{append_samples, update_cost, UpdateBatch};
use safelink_core::mpc::{rollout_cost, rollout_gradient, MpcConfig};
use safelink_core::rvfl::{train, Label, LabeledSamples};
use safelink_core::{relative_frobenius, CostMatrix, RvflConfig, TrainedModel};

use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Worst observed error (or ratio, for bound checks).
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.to_string(), value, tolerance, passed: value <= tolerance }
    }
}

/// Gaussian elimination with partial pivoting on a dense copy.
pub fn gauss_solve(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    let mut aug: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, s)| r.iter().chain(s).copied().collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs())).expect("nonempty");
        aug.swap(col, piv);
        let p = aug[col][col];
        for row in (col + 1)..n {
            let f = aug[row][col] / p;
            if f != 0.0 {
                for c in col..(n + m) {
                    aug[row][c] -= f * aug[col][c];
                }
            }
        }
    }
    let mut x = vec![vec![0.0; m]; n];
    for row in (0..n).rev() {
        for c in 0..m {
            let mut s = aug[row][n + c];
            for k in (row + 1)..n {
                s -= aug[row][k] * x[k][c];
            }
            x[row][c] = s / aug[row][row];
        }
    }
    x
}

/// Features computed from scratch: `[x/s, 1/(1+e^{−a(x/s·w_k+b_k)})]`.
pub fn features_by_hand(model: &TrainedModel, x: &[f64]) -> Vec<f64> {
    let cfg = model.config();
    let xs: Vec<f64> = x.iter().map(|v| v / cfg.input_scale).collect();
    let layer = model.layer();
    let mut out = xs.clone();
    for k in 0..layer.nodes() {
        let z: f64 = (0..xs.len()).map(|j| xs[j] * layer.weights[(j, k)]).sum::<f64>() + layer.biases[k];
        out.push(1.0 / (1.0 + (-cfg.activation_scale * z).exp()));
    }
    out
}

/// `W_b` from the normal equations, built row by row.
pub fn normal_equation_weights(model: &TrainedModel, data: &LabeledSamples, cost: &CostMatrix) -> DMatrix<f64> {
    let d = model.config().feature_dim();
    let mut g = vec![vec![0.0; d]; d];
    let mut r = vec![vec![0.0; 2]; d];
    for i in 0..data.len() {
        let a = features_by_hand(model, &data.point(i));
        let t = match data.labels()[i] {
            Label::Unsafe => [1.0, -cost.c1],
            Label::Safe => [-cost.c2, 1.0],
        };
        for p in 0..d {
            for q in 0..d {
                g[p][q] += a[p] * a[q];
            }
            r[p][0] += a[p] * t[0];
            r[p][1] += a[p] * t[1];
        }
    }
    for (p, row) in g.iter_mut().enumerate() {
        row[p] += model.config().ridge;
    }
    let w = gauss_solve(&g, &r);
    DMatrix::from_fn(d, 2, |i, j| w[i][j])
}

/// Barrier from hand-built features and given weights.
pub fn barrier_by_hand(model: &TrainedModel, w_b: &DMatrix<f64>, x: &[f64]) -> f64 {
    let a = features_by_hand(model, x);
    let y2: f64 = a.iter().enumerate().map(|(i, v)| v * w_b[(i, 1)]).sum();
    2.0 * y2 - 1.0
}

/// The best feasible point over every active set of size ≤ 2.
pub fn qp_by_enumeration(u_ref: &Vector2<f64>, rows: &[ConstraintRow]) -> Option<(Vector2<f64>, f64)> {
    let feasible = |u: &Vector2<f64>| rows.iter().all(|r| r.slack(u) >= -1e-9 * (1.0 + r.b.abs()));
    let mut cands = vec![*u_ref];
    for r in rows {
        let a = Vector2::new(r.a[0], r.a[1]);
        let nn = a.norm_squared();
        if nn > 0.0 {
            cands.push(u_ref - a * ((a.dot(u_ref) - r.b) / nn));
        }
    }
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let (p, q) = (&rows[i], &rows[j]);
            let det = p.a[0] * q.a[1] - p.a[1] * q.a[0];
            if det.abs() > 1e-12 {
                cands.push(Vector2::new((p.b * q.a[1] - q.b * p.a[1]) / det, (p.a[0] * q.b - q.a[0] * p.b) / det));
            }
        }
    }
    cands
        .into_iter()
        .filter(feasible)
        .map(|u| (u, (u - u_ref).norm_squared()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

fn vec_rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

/// Uniform points on the default workspace with about 30% unsafe labels.
pub fn random_labeled(n: usize, seed: u64) -> LabeledSamples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        pts.push([rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0)]);
        labels.push(if rng.gen::<f64>() < 0.3 { Label::Unsafe } else { Label::Safe });
    }
    LabeledSamples::from_planar(&pts, labels).expect("planar")
}

fn random_problem(
    n: usize,
    delta_n: usize,
    rvfl: &RvflConfig,
    cost: &CostMatrix,
    seed: u64,
) -> Result<(LabeledSamples, LabeledSamples, TrainedModel)> {
    let all = random_labeled(n + delta_n, seed);
    let base = all.slice(0, n);
    let delta = all.slice(n, n + delta_n);
    let model = train(&base, &RvflConfig { seed, ..*rvfl }, cost)?;
    Ok((base, delta, model))
}

/// Central-difference gradient and Hessian errors at `points` random
/// workspace points.
pub fn derivative_errors(model: &TrainedModel, points: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut g_err, mut h_err) = (0.0f64, 0.0f64);
    for _ in 0..points {
        let x = [rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0)];
        let f = |p: [f64; 2]| model.cbf_value(&p).expect("2-D");
        let h = 1e-4;
        let fd_g: Vec<f64> = (0..2)
            .map(|j| {
                let (mut a, mut b) = (x, x);
                a[j] += h;
                b[j] -= h;
                (f(a) - f(b)) / (2.0 * h)
            })
            .collect();
        let g = model.cbf_gradient(&x)?;
        g_err = g_err.max(vec_rel(g.as_slice(), &fd_g));
        let hh = 1e-3;
        let mut fd_h = [0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                let at = |si: f64, sj: f64| {
                    let mut p = x;
                    p[i] += si * hh;
                    p[j] += sj * hh;
                    f(p)
                };
                fd_h[i * 2 + j] = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * hh * hh);
            }
        }
        let hm = model.cbf_hessian(&x)?;
        let an = [hm[(0, 0)], hm[(0, 1)], hm[(1, 0)], hm[(1, 1)]];
        h_err = h_err.max(vec_rel(&an, &fd_h));
    }
    Ok((g_err, h_err))
}

/// Directional checks of the lifted Lie derivatives: `L_fB` against
/// `d/ds B(k(θ + sω))`, and `L_f²B` against its second directional
/// difference, both relative to scale.
pub fn lift_errors(model: &TrainedModel, arm: &TwoLinkArm, points: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let s = ManipulatorState {
            theta1: rng.gen_range(-3.0..3.0),
            theta2: rng.gen_range(-3.0..3.0),
            omega1: rng.gen_range(-0.5..0.5),
            omega2: rng.gen_range(-0.5..0.5),
        };
        let b_along = |h: f64| {
            let (x, y) = arm.forward_kinematics(s.theta1 + h * s.omega1, s.theta2 + h * s.omega2);
            model.cbf_value(&[x, y]).expect("2-D")
        };
        let p = arm.endpoint(&s);
        let lift = lift_cbf(&model.evaluate(p.as_slice())?, &arm.kinematics_derivatives(s.theta1, s.theta2), &s);
        let h = 1e-4;
        let d1 = (b_along(h) - b_along(-h)) / (2.0 * h);
        let h2 = 1e-3;
        let d2 = (b_along(h2) - 2.0 * b_along(0.0) + b_along(-h2)) / (h2 * h2);
        let scale = 1.0 + lift.lf_b.abs();
        worst = worst.max((lift.lf_b - d1).abs() / scale);
        worst = worst.max((lift.lf2_b - d2).abs() / (1.0 + lift.lf2_b.abs()));
    }
    Ok(worst)
}

fn random_qp(rng: &mut ChaCha8Rng) -> (ControlInput, LinearConstraintSet) {
    let rows: Vec<ConstraintRow> = (0..rng.gen_range(1..=5))
        .map(|_| ConstraintRow::new([rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)], rng.gen_range(-2.0..1.0)))
        .collect();
    let u = ControlInput::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    (u, LinearConstraintSet { rows, box_lo: [-2.0, -2.0], box_hi: [2.0, 2.0] })
}

/// Objective gap and worst KKT residual over feasible random QPs, and how
/// many were feasible.
pub fn qp_errors(instances: usize, seed: u64) -> (f64, f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut gap, mut kkt) = (0.0f64, 0.0f64);
    let mut feasible = 0;
    for _ in 0..instances {
        let (u, set) = random_qp(&mut rng);
        let target = u.as_vector();
        let sol = solve_qp(&u, &set);
        match qp_by_enumeration(&target, &set.all_rows()) {
            Some((_, best)) => {
                feasible += 1;
                let obj = (sol.u.as_vector() - target).norm_squared();
                gap = gap.max((obj - best).abs() / (1.0 + best));
                kkt = kkt.max(kkt_residuals(&u, &set, &sol).max());
            }
            None => gap = gap.max(if sol.status == safelink_core::filter::QpStatus::Infeasible { 0.0 } else { 1.0 }),
        }
    }
    (gap, kkt, feasible)
}

/// Worst relative error of the adjoint MPC gradient against central
/// differences of the rollout cost.
pub fn mpc_gradient_error(seed: u64) -> f64 {
    let arm = TwoLinkArm::default();
    let cfg = MpcConfig { horizon: 8, ..MpcConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = ManipulatorState { theta1: 0.3, theta2: -0.4, omega1: 0.1, omega2: 0.2 };
    let inputs: Vec<ControlInput> =
        (0..cfg.horizon).map(|_| ControlInput::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect();
    let target = [-4.1, 6.9];
    let (_, g) = rollout_gradient(&arm, &s, &inputs, target, &cfg);
    let mut an = Vec::new();
    let mut fd = Vec::new();
    let h = 1e-5;
    for k in 0..cfg.horizon {
        for j in 0..2 {
            let bump = |d: f64| {
                let mut v = inputs.clone();
                if j == 0 {
                    v[k].u1 += d;
                } else {
                    v[k].u2 += d;
                }
                rollout_cost(&arm, &s, &v, target, &cfg)
            };
            fd.push((bump(h) - bump(-h)) / (2.0 * h));
            an.push(g[k][j]);
        }
    }
    vec_rel(&an, &fd)
}

/// Runs every check on instances sized from `cfg`'s RVFL settings.
pub fn run_checks(rvfl: &RvflConfig, cost: &CostMatrix, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();

    // elimination is only trusted to 1e-9 on small, well-conditioned systems
    let tiny = RvflConfig { groups: 2, nodes_per_group: 4, ..*rvfl };
    let (small, _, m_small) = random_problem(50, 0, &tiny, cost, seed)?;
    let w_oracle = normal_equation_weights(&m_small, &small, cost);
    let entry = (m_small.w_b() - &w_oracle).abs().max();
    out.push(Check::at_most("train/normal_equations", entry, 1e-9));

    let (base, delta, model) = random_problem(600, 50, rvfl, cost, seed)?;

    let (g, h) = derivative_errors(&model, 100, seed)?;
    out.push(Check::at_most("cbf/gradient_fd", g, 1e-5));
    out.push(Check::at_most("cbf/hessian_fd", h, 1e-3));
    out.push(Check::at_most("lift/directional_fd", lift_errors(&model, &TwoLinkArm::default(), 100, seed)?, 1e-4));

    let updated = append_samples(&model, &UpdateBatch::new(delta.clone()))?;
    let retrained = train(&base.concat(&delta)?, model.config(), cost)?;
    out.push(Check::at_most("update/append_vs_retrain", relative_frobenius(updated.w_b(), retrained.w_b()), 1e-8));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = [rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0)];
        worst = worst.max((updated.cbf_value(&x)? - retrained.cbf_value(&x)?).abs());
    }
    out.push(Check::at_most("update/append_values", worst, 1e-7));

    let bumped = update_cost(&model, 0.5)?;
    let direct = train(&base, model.config(), &CostMatrix::new(cost.c1 + 0.5, cost.c2)?)?;
    out.push(Check::at_most("update/cost_vs_retrain", relative_frobenius(bumped.w_b(), direct.w_b()), 1e-9));

    let (gap, kkt, _) = qp_errors(1000, seed);
    out.push(Check::at_most("qp/enumeration_objective", gap, 1e-8));
    out.push(Check::at_most("qp/kkt", kkt, 1e-8));

    out.push(Check::at_most("mpc/gradient_fd", mpc_gradient_error(seed), 1e-5));

    let lip = lipschitz_bound(&model, &ProbeBox { seed, ..ProbeBox::default() }, 10_000)?;
    out.push(Check::at_most("analysis/lipschitz_ratio", lip.empirical_max_ratio / lip.l_b, 1.0));
    let (_, l_grad) = analytic_lipschitz(&model);
    out.push(Check::at_most("analysis/gradient_lipschitz_ratio", lip.empirical_grad_ratio / l_grad, 1.0));

    // dB(x_k)/dc1 = −2 S_k, by differencing two exact trainings
    let (hundred, _, m0) = random_problem(100, 0, rvfl, cost, seed)?;
    let hat = hat_row_unsafe_sum(&m0, &hundred)?;
    let m1 = train(&hundred, m0.config(), &CostMatrix::new(cost.c1 + 0.25, cost.c2)?)?;
    let mut worst = 0.0f64;
    for (idx, s) in hat.unsafe_indices.iter().zip(&hat.sums) {
        let x = hundred.point(*idx);
        let slope = (m1.cbf_value(&x)? - m0.cbf_value(&x)?) / 0.25;
        worst = worst.max((slope + 2.0 * s).abs() / (2.0 * s.abs()).max(1.0));
    }
    out.push(Check::at_most("analysis/hat_slope", worst, 1e-8));
    Ok(out)
}
