//! Safety-blind reference controller.
//!
//! Minimizes
//! `J = Σₖ ‖p_k − p*‖² + w_u Σₖ ‖u_k‖² + w_T ‖p_T − p*‖²` over a `T`-step
//! input sequence in the input box, where `p_k` is the endpoint after the
//! `k`-th input. The terminal term uses the state after the last input.
//! Projected gradient descent with step halving; gradients come from a
//! backward (adjoint) pass through the exact integrator.

use alloc::vec::Vec;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::{step, ControlInput, ManipulatorState, TwoLinkArm};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    pub input_weight: f64,
    pub terminal_weight: f64,
    pub max_iters: usize,
    pub step_size: f64,
    pub dt: f64,
    pub input_limit: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            input_weight: 0.01,
            terminal_weight: 10.0,
            max_iters: 100,
            step_size: 0.1,
            dt: 0.05,
            input_limit: 2.0,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1"));
        }
        if !(self.input_weight >= 0.0 && self.terminal_weight >= 0.0) {
            return Err(Error::InvalidConfig("MPC weights must be nonnegative"));
        }
        if !(self.step_size > 0.0 && self.dt > 0.0 && self.input_limit > 0.0) {
            return Err(Error::InvalidConfig("step_size, dt and input_limit must be positive"));
        }
        Ok(())
    }
}

/// Evaluates `J` for an input sequence of length `cfg.horizon`.
pub fn rollout_cost(
    arm: &TwoLinkArm,
    state: &ManipulatorState,
    inputs: &[ControlInput],
    target: [f64; 2],
    cfg: &MpcConfig,
) -> f64 {
    let goal = Vector2::new(target[0], target[1]);
    let mut s = *state;
    let mut cost = 0.0;
    for (k, u) in inputs.iter().enumerate() {
        s = step(&s, u, cfg.dt);
        let e = (arm.endpoint(&s) - goal).norm_squared();
        cost += e + cfg.input_weight * (u.u1 * u.u1 + u.u2 * u.u2);
        if k + 1 == inputs.len() {
            cost += cfg.terminal_weight * e;
        }
    }
    cost
}

/// Cost and its gradient with respect to every input.
pub fn rollout_gradient(
    arm: &TwoLinkArm,
    state: &ManipulatorState,
    inputs: &[ControlInput],
    target: [f64; 2],
    cfg: &MpcConfig,
) -> (f64, Vec<Vector2<f64>>) {
    let t = inputs.len();
    let goal = Vector2::new(target[0], target[1]);
    let dt = cfg.dt;
    let mut s = *state;
    let mut cost = 0.0;
    // ∂(stage + terminal)/∂θ_k for every post-step state
    let mut theta_grad = Vec::with_capacity(t);
    for (k, u) in inputs.iter().enumerate() {
        s = step(&s, u, dt);
        let kin = arm.kinematics_derivatives(s.theta1, s.theta2);
        let e = kin.position - goal;
        let weight = if k + 1 == t { 1.0 + cfg.terminal_weight } else { 1.0 };
        cost += weight * e.norm_squared() + cfg.input_weight * (u.u1 * u.u1 + u.u2 * u.u2);
        theta_grad.push(kin.jacobian.transpose() * e * (2.0 * weight));
    }
    let mut grads = alloc::vec![Vector2::zeros(); t];
    let mut lam_theta = Vector2::zeros();
    let mut lam_omega = Vector2::zeros();
    for k in (0..t).rev() {
        lam_theta += theta_grad[k];
        grads[k] = lam_theta * (0.5 * dt * dt) + lam_omega * dt + inputs[k].as_vector() * (2.0 * cfg.input_weight);
        lam_omega += lam_theta * dt;
    }
    (cost, grads)
}

fn project(u: Vector2<f64>, limit: f64) -> ControlInput {
    ControlInput::new(u[0].clamp(-limit, limit), u[1].clamp(-limit, limit))
}

/// Projected gradient descent from `initial`; returns the best sequence
/// found and its cost. Accepted iterates never increase the cost.
pub fn optimize(
    arm: &TwoLinkArm,
    state: &ManipulatorState,
    initial: &[ControlInput],
    target: [f64; 2],
    cfg: &MpcConfig,
) -> (Vec<ControlInput>, f64) {
    let mut inputs: Vec<ControlInput> = initial.iter().map(|u| project(u.as_vector(), cfg.input_limit)).collect();
    let (mut cost, mut grads) = rollout_gradient(arm, state, &inputs, target, cfg);
    let mut trial = inputs.clone();
    for _ in 0..cfg.max_iters {
        let mut alpha = cfg.step_size;
        let mut accepted = false;
        for _ in 0..40 {
            for (k, u) in inputs.iter().enumerate() {
                trial[k] = project(u.as_vector() - grads[k] * alpha, cfg.input_limit);
            }
            let c = rollout_cost(arm, state, &trial, target, cfg);
            if c < cost {
                core::mem::swap(&mut inputs, &mut trial);
                let (c2, g2) = rollout_gradient(arm, state, &inputs, target, cfg);
                cost = c2;
                grads = g2;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (inputs, cost)
}

/// Reference input from a zero-initialized solve.
pub fn mpc_reference(arm: &TwoLinkArm, state: &ManipulatorState, target: [f64; 2], cfg: &MpcConfig) -> ControlInput {
    let zeros = alloc::vec![ControlInput::ZERO; cfg.horizon];
    optimize(arm, state, &zeros, target, cfg).0[0]
}

/// Receding-horizon planner that warm-starts from the previous solution
/// shifted by one step.
#[derive(Debug, Clone)]
pub struct MpcPlanner {
    arm: TwoLinkArm,
    cfg: MpcConfig,
    warm: Vec<ControlInput>,
}

impl MpcPlanner {
    pub fn new(arm: TwoLinkArm, cfg: MpcConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { arm, cfg, warm: alloc::vec![ControlInput::ZERO; cfg.horizon] })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn plan(&mut self, state: &ManipulatorState, target: [f64; 2]) -> ControlInput {
        let (inputs, _) = optimize(&self.arm, state, &self.warm, target, &self.cfg);
        let first = inputs[0];
        self.warm.clear();
        self.warm.extend_from_slice(&inputs[1..]);
        self.warm.push(*inputs.last().expect("horizon ≥ 1"));
        first
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cost_at_target() {
        let arm = TwoLinkArm::default();
        let s = ManipulatorState::at_rest(0.7, 0.4);
        let (x, y) = arm.forward_kinematics(0.7, 0.4);
        let cfg = MpcConfig::default();
        let zeros = alloc::vec![ControlInput::ZERO; cfg.horizon];
        assert_eq!(rollout_cost(&arm, &s, &zeros, [x, y], &cfg), 0.0);
        let u = mpc_reference(&arm, &s, [x, y], &cfg);
        assert!(u.as_vector().norm() <= 1e-3);
    }

    #[test]
    fn zero_inputs_from_rest_closed_form() {
        let arm = TwoLinkArm::default();
        let s = ManipulatorState::default();
        let cfg = MpcConfig::default();
        let zeros = alloc::vec![ControlInput::ZERO; cfg.horizon];
        let target = [5.0, 4.0];
        let d2 = 3.0 * 3.0 + 4.0 * 4.0;
        let j = rollout_cost(&arm, &s, &zeros, target, &cfg);
        assert!((j - 30.0 * d2).abs() < 1e-10);
    }

    #[test]
    fn reference_stays_in_box_and_improves() {
        let arm = TwoLinkArm::default();
        let s = ManipulatorState { theta1: 0.1, theta2: 0.5, omega1: 0.2, omega2: -0.1 };
        let cfg = MpcConfig::default();
        let zeros = alloc::vec![ControlInput::ZERO; cfg.horizon];
        let target = [-4.1, 6.9];
        let (best, cost) = optimize(&arm, &s, &zeros, target, &cfg);
        assert!(cost <= rollout_cost(&arm, &s, &zeros, target, &cfg));
        assert!(best.iter().all(|u| u.u1.abs() <= 2.0 && u.u2.abs() <= 2.0));
    }

    #[test]
    fn planner_rejects_bad_config() {
        let cfg = MpcConfig { horizon: 0, ..MpcConfig::default() };
        assert!(MpcPlanner::new(TwoLinkArm::default(), cfg).is_err());
    }
}
