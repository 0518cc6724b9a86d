//! HOCBF safety filter: `min ‖u − u_ref‖²` subject to affine rows `a·u ≥ b`
//! and a box on `u`.
//!
//! With two inputs and a handful of rows the QP is solved by a dual
//! active-set (Goldfarb–Idnani) iteration started from `u_ref`, so no
//! feasible starting point is needed and infeasibility is detected directly.
//! Exhaustive enumeration of active sets is kept as a fallback.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, LiftedCbf, ManipulatorState};
use crate::{Error, Result};

/// `a·u ≥ b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub a: [f64; 2],
    pub b: f64,
}

impl ConstraintRow {
    pub fn new(a: [f64; 2], b: f64) -> Self {
        Self { a, b }
    }

    fn normal(&self) -> Vector2<f64> {
        Vector2::new(self.a[0], self.a[1])
    }

    /// `a·u − b`; negative when violated.
    pub fn slack(&self, u: &Vector2<f64>) -> f64 {
        self.a[0] * u[0] + self.a[1] * u[1] - self.b
    }
}

/// Rows plus box bounds. Box faces are indexed after the rows as
/// `u1 ≥ lo1`, `u1 ≤ hi1`, `u2 ≥ lo2`, `u2 ≤ hi2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraintSet {
    pub rows: Vec<ConstraintRow>,
    pub box_lo: [f64; 2],
    pub box_hi: [f64; 2],
}

impl LinearConstraintSet {
    pub fn new(rows: Vec<ConstraintRow>, box_lo: [f64; 2], box_hi: [f64; 2]) -> Result<Self> {
        let set = Self { rows, box_lo, box_hi };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.box_lo[0] <= self.box_hi[0] && self.box_lo[1] <= self.box_hi[1]) {
            return Err(Error::InvalidConfig("box_lo must not exceed box_hi"));
        }
        let finite = self.rows.iter().all(|r| r.a[0].is_finite() && r.a[1].is_finite() && r.b.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("constraint rows must be finite"));
        }
        Ok(())
    }

    /// Rows followed by the four box faces.
    pub fn all_rows(&self) -> Vec<ConstraintRow> {
        let mut rows = self.rows.clone();
        rows.push(ConstraintRow::new([1.0, 0.0], self.box_lo[0]));
        rows.push(ConstraintRow::new([-1.0, 0.0], -self.box_hi[0]));
        rows.push(ConstraintRow::new([0.0, 1.0], self.box_lo[1]));
        rows.push(ConstraintRow::new([0.0, -1.0], -self.box_hi[1]));
        rows
    }

    /// Largest violation of any row or box face at `u` (0 when feasible).
    pub fn max_violation(&self, u: &ControlInput) -> f64 {
        let v = u.as_vector();
        self.all_rows().iter().map(|r| -r.slack(&v)).fold(0.0, f64::max)
    }
}

/// Class-K gains and actuator limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub alpha1_gain: f64,
    pub alpha2_gain: f64,
    /// Joint speed bound in rad/s.
    pub velocity_limit: f64,
    /// Symmetric bound on each input in rad/s².
    pub input_limit: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { alpha1_gain: 1.0, alpha2_gain: 1.0, velocity_limit: 0.5, input_limit: 2.0 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1_gain > 0.0 && self.alpha2_gain > 0.0) {
            return Err(Error::InvalidConfig("class-K gains must be positive"));
        }
        if !(self.velocity_limit > 0.0 && self.input_limit > 0.0) {
            return Err(Error::InvalidConfig("velocity and input limits must be positive"));
        }
        Ok(())
    }
}

/// `L_gL_fB·u ≥ −(L_f²B + (k1+k2)·L_fB + k1·k2·B)`, i.e.
/// `ψ̇1 + k2·ψ1 ≥ 0` with `ψ1 = Ḃ + k1·B`.
pub fn hocbf_row(lift: &LiftedCbf, cfg: &FilterConfig) -> ConstraintRow {
    let (k1, k2) = (cfg.alpha1_gain, cfg.alpha2_gain);
    ConstraintRow::new(lift.lglf_b, -(lift.lf2_b + (k1 + k2) * lift.lf_b + k1 * k2 * lift.b))
}

/// `±u_i ≤ limit ∓ ω_i` written as `a·u ≥ b`.
pub fn velocity_rows(state: &ManipulatorState, cfg: &FilterConfig) -> [ConstraintRow; 4] {
    let lim = cfg.velocity_limit;
    [
        ConstraintRow::new([-1.0, 0.0], state.omega1 - lim),
        ConstraintRow::new([1.0, 0.0], -(lim + state.omega1)),
        ConstraintRow::new([0.0, -1.0], state.omega2 - lim),
        ConstraintRow::new([0.0, 1.0], -(lim + state.omega2)),
    ]
}

/// The full filter constraint set for one control step.
pub fn filter_constraints(lift: &LiftedCbf, state: &ManipulatorState, cfg: &FilterConfig) -> LinearConstraintSet {
    let mut rows = Vec::with_capacity(5);
    rows.push(hocbf_row(lift, cfg));
    rows.extend_from_slice(&velocity_rows(state, cfg));
    let l = cfg.input_limit;
    LinearConstraintSet { rows, box_lo: [-l, -l], box_hi: [l, l] }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub u: ControlInput,
    pub status: QpStatus,
    /// Indices into [`LinearConstraintSet::all_rows`].
    pub active_set: Vec<usize>,
    /// Multipliers of `½‖u − u_ref‖²`, aligned with `active_set`.
    pub multipliers: Vec<f64>,
    /// Max row violation at `u`; 0 on `Optimal`.
    pub violation: f64,
}

const FEAS_TOL: f64 = 1e-12;
const MAX_ITERS: usize = 64;

/// Solves the filter QP. On infeasibility the returned point minimizes the
/// largest row violation inside the box, and is the closest such point to
/// `u_ref`.
pub fn solve_qp(u_ref: &ControlInput, set: &LinearConstraintSet) -> QpSolution {
    let rows = set.all_rows();
    let target = u_ref.as_vector();
    // box faces are satisfied only to tolerance; snap onto them
    let snap = |u: Vector2<f64>| {
        ControlInput::new(u[0].clamp(set.box_lo[0], set.box_hi[0]), u[1].clamp(set.box_lo[1], set.box_hi[1]))
    };
    match dual_active_set(&target, &rows) {
        DualOutcome::Optimal(u, active, mult) => QpSolution {
            u: snap(u),
            status: QpStatus::Optimal,
            active_set: active,
            multipliers: mult,
            violation: 0.0,
        },
        DualOutcome::Stalled => match enumerate_active_sets(&target, &rows) {
            Some((u, active, mult)) => QpSolution {
                u: snap(u),
                status: QpStatus::Optimal,
                active_set: active,
                multipliers: mult,
                violation: 0.0,
            },
            None => least_violation(&target, set),
        },
        DualOutcome::Infeasible => least_violation(&target, set),
    }
}

enum DualOutcome {
    Optimal(Vector2<f64>, Vec<usize>, Vec<f64>),
    Infeasible,
    Stalled,
}

fn row_tol(row: &ConstraintRow) -> f64 {
    FEAS_TOL * (1.0 + row.b.abs() + row.normal().norm())
}

/// Goldfarb–Idnani with identity Hessian. Active normals stay linearly
/// independent, so at most two are active.
fn dual_active_set(target: &Vector2<f64>, rows: &[ConstraintRow]) -> DualOutcome {
    let mut u = *target;
    let mut active: Vec<usize> = Vec::with_capacity(2);
    let mut mult: Vec<f64> = Vec::with_capacity(2);
    for _ in 0..MAX_ITERS {
        // most violated inactive row
        let mut pick = None;
        let mut worst = 0.0;
        for (i, r) in rows.iter().enumerate() {
            if active.contains(&i) {
                continue;
            }
            let s = r.slack(&u);
            if s < -row_tol(r) && s < worst {
                worst = s;
                pick = Some(i);
            }
        }
        let Some(p) = pick else {
            return DualOutcome::Optimal(u, active, mult);
        };
        let np = rows[p].normal();
        let mut mp = 0.0;
        let mut inner = 0;
        loop {
            inner += 1;
            if inner > MAX_ITERS {
                return DualOutcome::Stalled;
            }
            let (z, r) = directions(rows, &active, &np);
            // blocking dual step
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, rj) in r.iter().enumerate() {
                if *rj > 0.0 {
                    let t = mult[j] / rj;
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let zz = z.dot(&np);
            if zz <= 1e-14 * np.norm_squared().max(1e-300) {
                // a_p lies in the span of the active normals
                let Some(j) = drop else {
                    return DualOutcome::Infeasible;
                };
                for (m, rj) in mult.iter_mut().zip(r.iter()) {
                    *m -= t1 * rj;
                }
                mp += t1;
                active.remove(j);
                mult.remove(j);
                continue;
            }
            let t2 = -rows[p].slack(&u) / zz;
            let t = t1.min(t2);
            u += z * t;
            for (m, rj) in mult.iter_mut().zip(r.iter()) {
                *m -= t * rj;
            }
            mp += t;
            if t2 <= t1 {
                active.push(p);
                mult.push(mp);
                break;
            }
            let j = drop.expect("finite t1 has a blocking index");
            active.remove(j);
            mult.remove(j);
        }
    }
    DualOutcome::Stalled
}

/// Primal step `z = (I − N(NᵀN)⁻¹Nᵀ)·a_p` and dual step `r = (NᵀN)⁻¹Nᵀ·a_p`.
fn directions(rows: &[ConstraintRow], active: &[usize], np: &Vector2<f64>) -> (Vector2<f64>, Vec<f64>) {
    match active.len() {
        0 => (*np, Vec::new()),
        1 => {
            let n1 = rows[active[0]].normal();
            let r = n1.dot(np) / n1.norm_squared();
            (np - n1 * r, alloc::vec![r])
        }
        _ => {
            let n1 = rows[active[0]].normal();
            let n2 = rows[active[1]].normal();
            let g = nalgebra::Matrix2::new(n1.dot(&n1), n1.dot(&n2), n2.dot(&n1), n2.dot(&n2));
            let rhs = Vector2::new(n1.dot(np), n2.dot(np));
            let r = g.try_inverse().map(|gi| gi * rhs).unwrap_or_else(Vector2::zeros);
            (Vector2::zeros(), alloc::vec![r[0], r[1]])
        }
    }
}

/// Brute-force QP over all active sets of size ≤ 2. Returns `None` when
/// no candidate is feasible.
pub fn enumerate_active_sets(target: &Vector2<f64>, rows: &[ConstraintRow]) -> Option<(Vector2<f64>, Vec<usize>, Vec<f64>)> {
    let feasible = |u: &Vector2<f64>| rows.iter().all(|r| r.slack(u) >= -1e3 * row_tol(r));
    let mut best: Option<(f64, Vector2<f64>, Vec<usize>, Vec<f64>)> = None;
    let mut consider = |u: Vector2<f64>, act: Vec<usize>, mult: Vec<f64>| {
        if !feasible(&u) {
            return;
        }
        let obj = (u - target).norm_squared();
        if best.as_ref().map_or(true, |b| obj < b.0) {
            best = Some((obj, u, act, mult));
        }
    };
    consider(*target, Vec::new(), Vec::new());
    for i in 0..rows.len() {
        let n = rows[i].normal();
        let nn = n.norm_squared();
        if nn == 0.0 {
            continue;
        }
        let mu = -rows[i].slack(target) / nn;
        consider(target + n * mu, alloc::vec![i], alloc::vec![mu]);
        for j in (i + 1)..rows.len() {
            let m = rows[j].normal();
            let mat = nalgebra::Matrix2::new(n[0], n[1], m[0], m[1]);
            let Some(inv) = mat.try_inverse() else { continue };
            let u = inv * Vector2::new(rows[i].b, rows[j].b);
            // u − target = μi·n + μj·m
            let Some(mi) = mat.transpose().try_inverse() else { continue };
            let mus = mi * (u - target);
            consider(u, alloc::vec![i, j], alloc::vec![mus[0], mus[1]]);
        }
    }
    best.map(|(_, u, a, m)| (u, a, m))
}

/// Minimizes the largest row violation over the box (a 3-variable LP solved
/// by vertex enumeration), then projects `u_ref` onto the rows relaxed by
/// that violation.
fn least_violation(target: &Vector2<f64>, set: &LinearConstraintSet) -> QpSolution {
    // variables (u1, u2, t): rows a·u + t ≥ b, box faces with zero t weight
    let mut lp: Vec<(Vector3<f64>, f64)> = Vec::new();
    for r in &set.rows {
        lp.push((Vector3::new(r.a[0], r.a[1], 1.0), r.b));
    }
    lp.push((Vector3::new(1.0, 0.0, 0.0), set.box_lo[0]));
    lp.push((Vector3::new(-1.0, 0.0, 0.0), -set.box_hi[0]));
    lp.push((Vector3::new(0.0, 1.0, 0.0), set.box_lo[1]));
    lp.push((Vector3::new(0.0, -1.0, 0.0), -set.box_hi[1]));
    let ok = |v: &Vector3<f64>| lp.iter().all(|(a, b)| a.dot(v) - b >= -1e-9 * (1.0 + b.abs()));
    let mut best_t = f64::INFINITY;
    for i in 0..lp.len() {
        for j in (i + 1)..lp.len() {
            for k in (j + 1)..lp.len() {
                let mat = Matrix3::from_rows(&[lp[i].0.transpose(), lp[j].0.transpose(), lp[k].0.transpose()]);
                let Some(inv) = mat.try_inverse() else { continue };
                let v = inv * Vector3::new(lp[i].1, lp[j].1, lp[k].1);
                if v.iter().all(|x| x.is_finite()) && ok(&v) && v[2] < best_t {
                    best_t = v[2];
                }
            }
        }
    }
    if !best_t.is_finite() {
        // rows with no usable normals: only the box matters
        best_t = set.rows.iter().map(|r| r.b).fold(0.0, f64::max);
    }
    let relax = best_t.max(0.0) + 1e-12 * (1.0 + best_t.abs());
    let relaxed = LinearConstraintSet {
        rows: set.rows.iter().map(|r| ConstraintRow::new(r.a, r.b - relax)).collect(),
        box_lo: set.box_lo,
        box_hi: set.box_hi,
    };
    let rows = relaxed.all_rows();
    let (u, active, multipliers) = match dual_active_set(target, &rows) {
        DualOutcome::Optimal(u, a, mlt) => (u, a, mlt),
        _ => enumerate_active_sets(target, &rows).unwrap_or_else(|| {
            let clamp = Vector2::new(
                target[0].clamp(set.box_lo[0], set.box_hi[0]),
                target[1].clamp(set.box_lo[1], set.box_hi[1]),
            );
            (clamp, Vec::new(), Vec::new())
        }),
    };
    let u = ControlInput::from_vector(u);
    QpSolution { u, status: QpStatus::Infeasible, active_set: active, multipliers, violation: set.max_violation(&u) }
}

/// KKT residuals of a solution: stationarity `‖(u − u_ref) − Σ μ a‖`,
/// complementarity `max |μ·slack|`, worst primal violation, and the most
/// negative multiplier (0 if none).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub complementarity: f64,
    pub primal: f64,
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.complementarity).max(self.primal).max(self.dual)
    }
}

pub fn kkt_residuals(u_ref: &ControlInput, set: &LinearConstraintSet, sol: &QpSolution) -> KktResiduals {
    let rows = set.all_rows();
    let u = sol.u.as_vector();
    let mut grad = u - u_ref.as_vector();
    let mut complementarity: f64 = 0.0;
    let mut dual: f64 = 0.0;
    for (idx, mu) in sol.active_set.iter().zip(sol.multipliers.iter()) {
        grad -= rows[*idx].normal() * *mu;
        complementarity = complementarity.max((mu * rows[*idx].slack(&u)).abs());
        dual = dual.max(-mu);
    }
    KktResiduals { stationarity: grad.norm(), complementarity, primal: set.max_violation(&sol.u), dual }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(rows: Vec<ConstraintRow>) -> LinearConstraintSet {
        LinearConstraintSet::new(rows, [-2.0, -2.0], [2.0, 2.0]).unwrap()
    }

    #[test]
    fn satisfied_reference_passes_through() {
        let set = unit_box(alloc::vec![ConstraintRow::new([1.0, 1.0], -1.0)]);
        let u_ref = ControlInput::new(0.3, -0.2);
        let sol = solve_qp(&u_ref, &set);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_eq!(sol.u, u_ref);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn single_row_projection() {
        let set = unit_box(alloc::vec![ConstraintRow::new([1.0, 0.0], 1.0)]);
        let sol = solve_qp(&ControlInput::ZERO, &set);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.u.u1 - 1.0).abs() < 1e-12 && sol.u.u2.abs() < 1e-12);
    }

    #[test]
    fn single_violated_row_matches_closed_form() {
        let row = ConstraintRow::new([0.6, -1.3], 0.9);
        let set = unit_box(alloc::vec![row]);
        let u_ref = ControlInput::new(0.1, 0.2);
        let sol = solve_qp(&u_ref, &set);
        let a: Vector2<f64> = Vector2::new(0.6, -1.3);
        let d = row.slack(&u_ref.as_vector());
        let expect = u_ref.as_vector() - a * (d / a.norm_squared());
        assert!((sol.u.as_vector() - expect).norm() < 1e-10);
    }

    #[test]
    fn box_is_enforced() {
        let set = unit_box(Vec::new());
        let sol = solve_qp(&ControlInput::new(5.0, -7.0), &set);
        assert_eq!(sol.u, ControlInput::new(2.0, -2.0));
        assert!(kkt_residuals(&ControlInput::new(5.0, -7.0), &set, &sol).max() < 1e-12);
    }

    #[test]
    fn infeasible_rows_report_least_violation() {
        // u1 ≥ 1 and u1 ≤ −1: the best compromise violates each by 1
        let set = unit_box(alloc::vec![ConstraintRow::new([1.0, 0.0], 1.0), ConstraintRow::new([-1.0, 0.0], 1.0)]);
        let sol = solve_qp(&ControlInput::new(0.5, 0.7), &set);
        assert_eq!(sol.status, QpStatus::Infeasible);
        assert!(sol.u.u1.abs() < 1e-8);
        assert!((sol.u.u2 - 0.7).abs() < 1e-8);
        assert!((sol.violation - 1.0).abs() < 1e-8);
    }

    #[test]
    fn row_outside_box_is_infeasible() {
        let set = unit_box(alloc::vec![ConstraintRow::new([1.0, 0.0], 3.0)]);
        let sol = solve_qp(&ControlInput::ZERO, &set);
        assert_eq!(sol.status, QpStatus::Infeasible);
        assert!((sol.u.u1 - 2.0).abs() < 1e-9, "{:?}", sol);
    }

    #[test]
    fn velocity_rows_cases() {
        let cfg = FilterConfig::default();
        let rest = velocity_rows(&ManipulatorState::default(), &cfg);
        let set = unit_box(rest.to_vec());
        let sol = solve_qp(&ControlInput::new(2.0, -2.0), &set);
        assert!((sol.u.u1 - 0.5).abs() < 1e-12 && (sol.u.u2 + 0.5).abs() < 1e-12);

        let at_bound = ManipulatorState { omega1: 0.5, ..Default::default() };
        let sol = solve_qp(&ControlInput::new(1.0, 0.0), &unit_box(velocity_rows(&at_bound, &cfg).to_vec()));
        assert!(sol.u.u1.abs() < 1e-12);

        let over = ManipulatorState { omega1: 0.6, ..Default::default() };
        let sol = solve_qp(&ControlInput::new(1.0, 0.0), &unit_box(velocity_rows(&over, &cfg).to_vec()));
        assert!((sol.u.u1 + 0.1).abs() < 1e-12);
    }

    #[test]
    fn unit_gain_hocbf_row() {
        let lift = LiftedCbf { b: 0.4, lf_b: -0.3, lf2_b: 0.2, lglf_b: [1.5, -0.5] };
        let row = hocbf_row(&lift, &FilterConfig::default());
        assert_eq!(row.a, [1.5, -0.5]);
        assert!((row.b - -(0.2 + 2.0 * -0.3 + 0.4)).abs() < 1e-15);
    }

    #[test]
    fn rest_hocbf_row_is_slack_for_large_barrier() {
        let lift = LiftedCbf { b: 3.0, lf_b: 0.0, lf2_b: 0.0, lglf_b: [0.2, 0.1] };
        let row = hocbf_row(&lift, &FilterConfig::default());
        assert_eq!(row.b, -3.0);
        assert!(row.slack(&Vector2::new(2.0, -2.0)) > 0.0);
    }

    #[test]
    fn hocbf_row_at_equality_keeps_psi1_to_first_order() {
        use crate::dynamics::{step, TwoLinkArm};
        // quadratic barrier around an obstacle center, evaluated analytically
        let center = Vector2::new(5.0, 4.0);
        let radius2 = 4.0;
        let arm = TwoLinkArm::default();
        let barrier = |s: &ManipulatorState| {
            let p = arm.endpoint(s);
            let d = p - center;
            let eval = crate::rvfl::CbfEvaluation {
                value: d.norm_squared() - radius2,
                gradient: nalgebra::DVector::from_vec(alloc::vec![2.0 * d[0], 2.0 * d[1]]),
                hessian: nalgebra::DMatrix::from_vec(2, 2, alloc::vec![2.0, 0.0, 0.0, 2.0]),
            };
            let kin = arm.kinematics_derivatives(s.theta1, s.theta2);
            crate::dynamics::lift_cbf(&eval, &kin, s)
        };
        let cfg = FilterConfig::default();
        let s0 = ManipulatorState { theta1: 0.3, theta2: 0.4, omega1: 0.3, omega2: 0.2 };
        let lift = barrier(&s0);
        let row = hocbf_row(&lift, &cfg);
        // pick u on the boundary of the row: a·u = b, closest to zero
        let a = Vector2::new(row.a[0], row.a[1]);
        let u = ControlInput::from_vector(a * (row.b / a.norm_squared()));
        let dt = 1e-4;
        let s1 = step(&s0, &u, dt);
        let psi0 = lift.psi1(cfg.alpha1_gain);
        let psi1 = barrier(&s1).psi1(cfg.alpha1_gain);
        // ψ̇1 + k2 ψ1 = 0 at equality
        let rate = (psi1 - psi0) / dt;
        assert!((rate + cfg.alpha2_gain * psi0).abs() < 1e-2, "rate {rate}, psi {psi0}");
    }
}
