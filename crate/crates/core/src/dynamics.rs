//! Planar two-link arm driven as a double integrator in joint space.
//!
//! `θ̈ = u`, and the endpoint is `k(θ) = (L1 cos θ1 + L2 cos(θ1+θ2),
//! L1 sin θ1 + L2 sin(θ1+θ2))`. A barrier defined on the endpoint has
//! relative degree two with respect to `u`.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::rvfl::CbfEvaluation;

/// Joint state `z = [θ1, θ2, ω1, ω2]`. Angles are never wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ManipulatorState {
    pub theta1: f64,
    pub theta2: f64,
    pub omega1: f64,
    pub omega2: f64,
}

impl ManipulatorState {
    pub fn at_rest(theta1: f64, theta2: f64) -> Self {
        Self { theta1, theta2, omega1: 0.0, omega2: 0.0 }
    }

    pub fn angles(&self) -> Vector2<f64> {
        Vector2::new(self.theta1, self.theta2)
    }

    pub fn velocities(&self) -> Vector2<f64> {
        Vector2::new(self.omega1, self.omega2)
    }

    pub fn is_finite(&self) -> bool {
        self.theta1.is_finite() && self.theta2.is_finite() && self.omega1.is_finite() && self.omega2.is_finite()
    }
}

/// Joint accelerations in rad/s².
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub u1: f64,
    pub u2: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { u1: 0.0, u2: 0.0 };

    pub fn new(u1: f64, u2: f64) -> Self {
        Self { u1, u2 }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.u1, self.u2)
    }

    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self { u1: v[0], u2: v[1] }
    }
}

/// Endpoint position with its first and second derivatives in `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicsDerivatives {
    pub position: Vector2<f64>,
    /// `∂(x, y)/∂(θ1, θ2)`; row 0 is `∇x`, row 1 is `∇y`.
    pub jacobian: Matrix2<f64>,
    /// `[∇²x, ∇²y]`.
    pub hessians: [Matrix2<f64>; 2],
}

/// Link lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLinkArm {
    pub l1: f64,
    pub l2: f64,
}

impl Default for TwoLinkArm {
    fn default() -> Self {
        Self { l1: 4.0, l2: 4.0 }
    }
}

impl TwoLinkArm {
    pub fn reach(&self) -> f64 {
        self.l1 + self.l2
    }

    pub fn forward_kinematics(&self, theta1: f64, theta2: f64) -> (f64, f64) {
        let (s1, c1) = libm::sincos(theta1);
        let (s12, c12) = libm::sincos(theta1 + theta2);
        (self.l1 * c1 + self.l2 * c12, self.l1 * s1 + self.l2 * s12)
    }

    pub fn endpoint(&self, state: &ManipulatorState) -> Vector2<f64> {
        let (x, y) = self.forward_kinematics(state.theta1, state.theta2);
        Vector2::new(x, y)
    }

    pub fn kinematics_derivatives(&self, theta1: f64, theta2: f64) -> KinematicsDerivatives {
        let (s1, c1) = libm::sincos(theta1);
        let (s12, c12) = libm::sincos(theta1 + theta2);
        let (l1, l2) = (self.l1, self.l2);
        let x = l1 * c1 + l2 * c12;
        let y = l1 * s1 + l2 * s12;
        let jacobian = Matrix2::new(-y, -l2 * s12, x, l2 * c12);
        let hx = Matrix2::new(-x, -l2 * c12, -l2 * c12, -l2 * c12);
        let hy = Matrix2::new(-y, -l2 * s12, -l2 * s12, -l2 * s12);
        KinematicsDerivatives { position: Vector2::new(x, y), jacobian, hessians: [hx, hy] }
    }
}

/// Exact zero-order-hold step: `θ += ω dt + ½ u dt²`, `ω += u dt`.
pub fn step(state: &ManipulatorState, input: &ControlInput, dt: f64) -> ManipulatorState {
    let half = 0.5 * dt * dt;
    ManipulatorState {
        theta1: state.theta1 + state.omega1 * dt + input.u1 * half,
        theta2: state.theta2 + state.omega2 * dt + input.u2 * half,
        omega1: state.omega1 + input.u1 * dt,
        omega2: state.omega2 + input.u2 * dt,
    }
}

/// Lie derivatives of a workspace barrier along the joint dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftedCbf {
    pub b: f64,
    /// `L_f B = ∇_θB · ω`.
    pub lf_b: f64,
    /// `L_f² B = ωᵀ ∇²_θB ω`.
    pub lf2_b: f64,
    /// `L_g L_f B = ∇_θB`, the coefficient of `u` in `B̈`.
    pub lglf_b: [f64; 2],
}

impl LiftedCbf {
    /// `ψ1 = Ḃ + k1·B`.
    pub fn psi1(&self, alpha1_gain: f64) -> f64 {
        self.lf_b + alpha1_gain * self.b
    }
}

/// Chain rule from an endpoint-space evaluation to joint space.
///
/// `eval` must be a 2-D evaluation taken at `k(θ)` of `state`.
pub fn lift_cbf(eval: &CbfEvaluation, kin: &KinematicsDerivatives, state: &ManipulatorState) -> LiftedCbf {
    debug_assert_eq!(eval.gradient.len(), 2);
    let grad_p = Vector2::new(eval.gradient[0], eval.gradient[1]);
    let hess_p = Matrix2::new(eval.hessian[(0, 0)], eval.hessian[(0, 1)], eval.hessian[(1, 0)], eval.hessian[(1, 1)]);
    let j = kin.jacobian;
    let grad_theta = j.transpose() * grad_p;
    let hess_theta = j.transpose() * hess_p * j + kin.hessians[0] * grad_p[0] + kin.hessians[1] * grad_p[1];
    let w = state.velocities();
    LiftedCbf {
        b: eval.value,
        lf_b: grad_theta.dot(&w),
        lf2_b: w.dot(&(hess_theta * w)),
        lglf_b: [grad_theta[0], grad_theta[1]],
    }
}
