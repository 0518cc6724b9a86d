//! Closed-loop run: offline training, then MPC reference, learned-barrier
//! filter and integration at every step, with model updates at each region
//! expansion.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use safelink_core::dynamics::{lift_cbf, step, ControlInput, ManipulatorState, TwoLinkArm};
use safelink_core::filter::{filter_constraints, solve_qp, FilterConfig, QpStatus};
use safelink_core::incremental::{append_samples, UpdateBatch};
use safelink_core::mpc::{MpcConfig, MpcPlanner};
use safelink_core::rvfl::train;
use safelink_core::scenario::{Scenario, TIME_EPS};
use safelink_core::{CostMatrix, RvflConfig, TrainedModel};

use crate::{Error, Result};

/// Loop timing and termination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub dt: f64,
    pub max_time: f64,
    pub goal_tolerance: f64,
    /// `false` runs the ablation: regions still expand but the model is
    /// never updated.
    pub updates_enabled: bool,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self { dt: 0.05, max_time: 30.0, goal_tolerance: 0.1, updates_enabled: true }
    }
}

/// Everything a run needs. `mpc.dt` and `mpc.input_limit` are overridden by
/// `sim.dt` and `filter.input_limit` so the planner and plant agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub arm: TwoLinkArm,
    pub rvfl: RvflConfig,
    pub cost: CostMatrix,
    pub filter: FilterConfig,
    pub mpc: MpcConfig,
    pub sim: SimSettings,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            arm: TwoLinkArm::default(),
            rvfl: RvflConfig::default(),
            cost: CostMatrix { c1: 2.0, c2: 1.0 },
            filter: FilterConfig::default(),
            mpc: MpcConfig::default(),
            sim: SimSettings::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sim.dt > 0.0 && self.sim.goal_tolerance > 0.0 && self.sim.max_time >= 0.0) {
            return Err(Error::Config("sim needs dt > 0, goal_tolerance > 0 and max_time >= 0".into()));
        }
        self.rvfl.validate()?;
        CostMatrix::new(self.cost.c1, self.cost.c2)?;
        self.filter.validate()?;
        self.planner_config().validate()?;
        self.scenario.validate(&self.arm)?;
        Ok(())
    }

    pub fn planner_config(&self) -> MpcConfig {
        MpcConfig { dt: self.sim.dt, input_limit: self.filter.input_limit, ..self.mpc }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub x: f64,
    pub y: f64,
    pub u1: f64,
    pub u2: f64,
    pub u_ref1: f64,
    pub u_ref2: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub psi1: f64,
    pub qp_status: QpStatus,
    /// `none`, `region_expand`, or `region_expand+model_update`.
    pub event: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    RegionExpand,
    ModelUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub kind: EventKind,
    /// Wall time of the update; 0 for expansions.
    pub update_wall_ms: f64,
    pub delta_n: usize,
    /// Barrier at the current endpoint right after the update.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub b_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub reached: bool,
    pub final_error_m: f64,
    #[serde(rename = "min_B")]
    pub min_b: f64,
    pub true_region_violations: usize,
    pub total_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub steps: Vec<StepRecord>,
    pub events: Vec<EventRecord>,
    pub summary: SimSummary,
    /// Human-readable notes such as an endpoint left outside the new safe set.
    pub warnings: Vec<String>,
}

impl SimLog {
    /// Steps at or after `t` whose endpoint lies in the true region.
    pub fn violations_after(&self, t: f64, scenario: &Scenario) -> usize {
        self.steps.iter().filter(|s| s.t >= t - TIME_EPS && scenario.contains([s.x, s.y], s.t)).count()
    }
}

/// Trains the offline model and runs the loop.
pub fn run(cfg: &SimConfig) -> Result<SimLog> {
    cfg.validate()?;
    let offline = cfg.scenario.sample_offline();
    let model = train(&offline, &cfg.rvfl, &cfg.cost)?;
    run_with_model(cfg, model)
}

/// Runs the loop from an already trained offline model.
pub fn run_with_model(cfg: &SimConfig, mut model: TrainedModel) -> Result<SimLog> {
    cfg.validate()?;
    let sc = &cfg.scenario;
    let arm = cfg.arm;
    let dt = cfg.sim.dt;
    let mut planner = MpcPlanner::new(arm, cfg.planner_config())?;
    let events_due = sc.event_times();
    let mut next_event = 0;

    let mut state: ManipulatorState = sc.initial_state;
    let mut steps = Vec::new();
    let mut events = Vec::new();
    let mut warnings = Vec::new();
    let mut violations = 0;
    let mut min_b = f64::INFINITY;
    let mut reached = false;
    let goal = nalgebra::Vector2::new(sc.target[0], sc.target[1]);

    let mut k: u64 = 0;
    loop {
        let t = k as f64 * dt;
        let p = arm.endpoint(&state);
        if (p - goal).norm() <= cfg.sim.goal_tolerance {
            reached = true;
            if sc.contains([p[0], p[1]], t) {
                violations += 1;
            }
            break;
        }
        if t > cfg.sim.max_time + TIME_EPS {
            break;
        }

        let mut event = "none";
        while next_event < events_due.len() && events_due[next_event] <= t + TIME_EPS {
            let et = events_due[next_event];
            next_event += 1;
            let delta = sc.sample_region_delta(et)?;
            let delta_n = delta.len();
            events.push(EventRecord { t, kind: EventKind::RegionExpand, update_wall_ms: 0.0, delta_n, b_after: None });
            event = "region_expand";
            if cfg.sim.updates_enabled {
                let batch = UpdateBatch::new(delta);
                let start = Instant::now();
                model = append_samples(&model, &batch)?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                let b_after = model.cbf_value(p.as_slice())?;
                if b_after < 0.0 {
                    warnings.push(format!("t={t:.3}: endpoint outside the updated safe set (B = {b_after:.4})"));
                }
                events.push(EventRecord { t, kind: EventKind::ModelUpdate, update_wall_ms: ms, delta_n, b_after: Some(b_after) });
                event = "region_expand+model_update";
            }
        }

        let u_ref = planner.plan(&state, sc.target);
        let eval = model.evaluate(p.as_slice())?;
        let kin = arm.kinematics_derivatives(state.theta1, state.theta2);
        let lift = lift_cbf(&eval, &kin, &state);
        let set = filter_constraints(&lift, &state, &cfg.filter);
        let sol = solve_qp(&u_ref, &set);
        let u = clamp_input(sol.u, cfg.filter.input_limit);

        if sc.contains([p[0], p[1]], t) {
            violations += 1;
        }
        min_b = min_b.min(eval.value);
        steps.push(StepRecord {
            t,
            theta1: state.theta1,
            theta2: state.theta2,
            omega1: state.omega1,
            omega2: state.omega2,
            x: p[0],
            y: p[1],
            u1: u.u1,
            u2: u.u2,
            u_ref1: u_ref.u1,
            u_ref2: u_ref.u2,
            b: eval.value,
            psi1: lift.psi1(cfg.filter.alpha1_gain),
            qp_status: sol.status,
            event: event.to_string(),
        });
        state = step(&state, &u, dt);
        k += 1;
    }

    let p = arm.endpoint(&state);
    let summary = SimSummary {
        reached,
        final_error_m: (p - goal).norm(),
        min_b: if min_b.is_finite() { min_b } else { 0.0 },
        true_region_violations: violations,
        total_steps: steps.len(),
    };
    Ok(SimLog { steps, events, summary, warnings })
}

// Rounding in the QP can leave u a few ulps past the box.
fn clamp_input(u: ControlInput, limit: f64) -> ControlInput {
    ControlInput::new(u.u1.clamp(-limit, limit), u.u2.clamp(-limit, limit))
}
