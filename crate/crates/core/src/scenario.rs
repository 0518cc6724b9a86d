//! Ground-truth unsafe geometry: a union of closed axis-aligned rectangles,
//! each active from some time on.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ManipulatorState, TwoLinkArm};
use crate::rvfl::{Label, LabeledSamples};
use crate::{derive_seed, Error, Result};

/// Activation times closer than this are the same event.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedRect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub active_from: f64,
}

impl TimedRect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, active_from: f64) -> Self {
        Self { x_min, x_max, y_min, y_max, active_from }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(Error::InvalidScenario("rect needs x_min < x_max and y_min < y_max"));
        }
        if !(self.active_from >= 0.0) || !self.active_from.is_finite() {
            return Err(Error::InvalidScenario("rect active_from must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Closed-set membership.
    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    pub fn is_active(&self, t: f64) -> bool {
        self.active_from <= t
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub rects: Vec<TimedRect>,
    /// Square sampling workspace `[lo, hi]²`.
    pub workspace_lo: f64,
    pub workspace_hi: f64,
    pub target: [f64; 2],
    pub initial_state: ManipulatorState,
    pub offline_sample_count: usize,
    pub online_sample_count: usize,
    pub seed: u64,
}

impl Default for Scenario {
    /// Three stacked base blocks plus expansions at 1.1 s and 7.5 s, all
    /// inside the arm's reach and between the start endpoint (8, 0) and the
    /// target (−4.1, 6.9).
    fn default() -> Self {
        Self {
            rects: alloc::vec![
                TimedRect::new(2.0, 5.0, 0.5, 2.0, 0.0),
                TimedRect::new(2.5, 4.5, 2.0, 3.0, 0.0),
                TimedRect::new(3.0, 4.0, 3.0, 4.0, 0.0),
                TimedRect::new(4.0, 6.0, 3.8, 5.2, 1.1),
                TimedRect::new(-1.5, 0.5, 5.5, 7.0, 7.5),
            ],
            workspace_lo: -15.0,
            workspace_hi: 15.0,
            target: [-4.1, 6.9],
            initial_state: ManipulatorState::default(),
            offline_sample_count: 5000,
            online_sample_count: 100,
            seed: 0,
        }
    }
}

impl Scenario {
    /// Checks every rect, the workspace, and that target and start are clear.
    pub fn validate(&self, arm: &TwoLinkArm) -> Result<()> {
        for r in &self.rects {
            r.validate()?;
        }
        if !(self.workspace_lo < self.workspace_hi) {
            return Err(Error::InvalidScenario("workspace lo must be below hi"));
        }
        if self.rects.iter().any(|r| r.contains_point(self.target)) {
            return Err(Error::InvalidScenario("target lies inside an unsafe rect"));
        }
        if !self.initial_state.is_finite() {
            return Err(Error::InvalidScenario("initial state must be finite"));
        }
        let p = arm.endpoint(&self.initial_state);
        if self.contains([p[0], p[1]], 0.0) {
            return Err(Error::InvalidScenario("initial endpoint lies inside the unsafe region"));
        }
        Ok(())
    }

    /// `true` iff `p` is in some rect active at `t`.
    pub fn contains(&self, p: [f64; 2], t: f64) -> bool {
        self.rects.iter().any(|r| r.is_active(t) && r.contains_point(p))
    }

    pub fn active_rects(&self, t: f64) -> Vec<TimedRect> {
        self.rects.iter().copied().filter(|r| r.is_active(t)).collect()
    }

    /// Sorted distinct activation times after t = 0.
    pub fn event_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self.rects.iter().map(|r| r.active_from).filter(|t| *t > 0.0).collect();
        times.sort_by(|a, b| a.total_cmp(b));
        times.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS);
        times
    }

    /// Rects that switch on exactly at `event_time`.
    pub fn rects_activating_at(&self, event_time: f64) -> Vec<TimedRect> {
        self.rects.iter().copied().filter(|r| (r.active_from - event_time).abs() <= TIME_EPS).collect()
    }

    /// `offline_sample_count` uniform workspace points labeled at t = 0.
    pub fn sample_offline(&self) -> LabeledSamples {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 0));
        let n = self.offline_sample_count;
        let (lo, hi) = (self.workspace_lo, self.workspace_hi);
        let mut pts = DMatrix::zeros(n, 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let p = [rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
            pts[(i, 0)] = p[0];
            pts[(i, 1)] = p[1];
            labels.push(if self.contains(p, 0.0) { Label::Unsafe } else { Label::Safe });
        }
        LabeledSamples::new(pts, labels).expect("shapes agree")
    }

    /// `online_sample_count` unsafe points uniform over the rects switching
    /// on at `event_time`.
    pub fn sample_region_delta(&self, event_time: f64) -> Result<LabeledSamples> {
        let rects = self.rects_activating_at(event_time);
        if rects.is_empty() {
            return Err(Error::NoActivation(event_time));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, event_time.to_bits()));
        let pts = uniform_in_union(&rects, self.online_sample_count, &mut rng);
        let labels = alloc::vec![Label::Unsafe; pts.len()];
        LabeledSamples::from_planar(&pts, labels)
    }
}

/// Exactly uniform samples over a union of (possibly overlapping) rects:
/// pick a rect by area, draw inside it, and accept with probability
/// `1 / (number of rects covering the point)`.
pub fn uniform_in_union<R: Rng>(rects: &[TimedRect], count: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(count);
    if rects.is_empty() {
        return out;
    }
    let total: f64 = rects.iter().map(TimedRect::area).sum();
    while out.len() < count {
        let mut pick = rng.gen::<f64>() * total;
        let mut chosen = rects[rects.len() - 1];
        for r in rects {
            if pick < r.area() {
                chosen = *r;
                break;
            }
            pick -= r.area();
        }
        let p = [rng.gen_range(chosen.x_min..=chosen.x_max), rng.gen_range(chosen.y_min..=chosen.y_max)];
        let cover = rects.iter().filter(|r| r.contains_point(p)).count().max(1);
        if cover == 1 || rng.gen::<f64>() * (cover as f64) < 1.0 {
            out.push(p);
        }
    }
    out
}
