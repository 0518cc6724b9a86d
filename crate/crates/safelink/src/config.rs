//! Keyed text configuration.
//!
//! ```text
//! # comment
//! [workspace]
//! lo = -15
//! hi = 15
//! [rect]
//! x_min = 2
//! x_max = 5
//! y_min = 0.5
//! y_max = 2
//! active_from = 0
//! ```
//!
//! Sections: `workspace`, `target`, `initial`, `rect` (repeatable),
//! `sampling`, `arm`, `rvfl`, `cost`, `filter`, `mpc`, `sim`. Keys not given
//! keep their defaults. If any `[rect]` block appears, the file's rects
//! replace the default ones.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use safelink_core::scenario::TimedRect;

use crate::sim::SimConfig;
use crate::{Error, Result};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

#[derive(Default)]
struct RectDraft {
    line: usize,
    x_min: Option<f64>,
    x_max: Option<f64>,
    y_min: Option<f64>,
    y_max: Option<f64>,
    active_from: Option<f64>,
}

impl RectDraft {
    fn finish(self) -> Result<TimedRect> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| parse_err(self.line, format!("[rect] is missing `{name}`")));
        let r = TimedRect::new(
            need(self.x_min, "x_min")?,
            need(self.x_max, "x_max")?,
            need(self.y_min, "y_min")?,
            need(self.y_max, "y_max")?,
            self.active_from.unwrap_or(0.0),
        );
        r.validate().map_err(|e| parse_err(self.line, e.to_string()))?;
        Ok(r)
    }
}

fn real(v: &str, line: usize) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| parse_err(line, format!("expected a number, got `{v}`")))?;
    if !x.is_finite() {
        return Err(parse_err(line, format!("value `{v}` is not finite")));
    }
    Ok(x)
}

fn count(v: &str, line: usize) -> Result<usize> {
    v.parse().map_err(|_| parse_err(line, format!("expected a nonnegative integer, got `{v}`")))
}

fn seed(v: &str, line: usize) -> Result<u64> {
    v.parse().map_err(|_| parse_err(line, format!("expected a u64 seed, got `{v}`")))
}

fn boolean(v: &str, line: usize) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(parse_err(line, format!("expected true or false, got `{v}`"))),
    }
}

/// Parses a config over the defaults.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let mut cfg = SimConfig::default();
    let mut rects: Vec<TimedRect> = Vec::new();
    let mut saw_rect = false;
    let mut draft: Option<RectDraft> = None;
    let mut section: Option<String> = None;
    let mut seen: HashSet<String> = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line, "section header needs a closing `]`"))?
                .trim()
                .to_string();
            const KNOWN: [&str; 11] =
                ["workspace", "target", "initial", "rect", "sampling", "arm", "rvfl", "cost", "filter", "mpc", "sim"];
            if !KNOWN.contains(&name.as_str()) {
                return Err(parse_err(line, format!("unknown section [{name}]")));
            }
            if let Some(d) = draft.take() {
                rects.push(d.finish()?);
            }
            if name == "rect" {
                saw_rect = true;
                draft = Some(RectDraft { line, ..RectDraft::default() });
            } else if !seen.insert(name.clone()) {
                return Err(parse_err(line, format!("section [{name}] appears twice")));
            }
            section = Some(name);
            // keys are tracked per section instance
            seen.retain(|k| !k.contains('.'));
            continue;
        }
        let (key, value) =
            body.split_once('=').ok_or_else(|| parse_err(line, format!("expected `key = value`, got `{body}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let sec = section.as_deref().ok_or_else(|| parse_err(line, "key outside of any section"))?;
        if !seen.insert(format!("{sec}.{key}")) {
            return Err(parse_err(line, format!("key `{key}` repeated in [{sec}]")));
        }
        let unknown = || parse_err(line, format!("unknown key `{key}` in [{sec}]"));
        match sec {
            "workspace" => match key {
                "lo" => cfg.scenario.workspace_lo = real(value, line)?,
                "hi" => cfg.scenario.workspace_hi = real(value, line)?,
                _ => return Err(unknown()),
            },
            "target" => match key {
                "x" => cfg.scenario.target[0] = real(value, line)?,
                "y" => cfg.scenario.target[1] = real(value, line)?,
                _ => return Err(unknown()),
            },
            "initial" => {
                let s = &mut cfg.scenario.initial_state;
                match key {
                    "theta1" => s.theta1 = real(value, line)?,
                    "theta2" => s.theta2 = real(value, line)?,
                    "omega1" => s.omega1 = real(value, line)?,
                    "omega2" => s.omega2 = real(value, line)?,
                    _ => return Err(unknown()),
                }
            }
            "rect" => {
                let d = draft.as_mut().expect("rect section has a draft");
                let v = Some(real(value, line)?);
                match key {
                    "x_min" => d.x_min = v,
                    "x_max" => d.x_max = v,
                    "y_min" => d.y_min = v,
                    "y_max" => d.y_max = v,
                    "active_from" => d.active_from = v,
                    _ => return Err(unknown()),
                }
            }
            "sampling" => match key {
                "offline_count" => cfg.scenario.offline_sample_count = count(value, line)?,
                "online_count" => cfg.scenario.online_sample_count = count(value, line)?,
                "seed" => cfg.scenario.seed = seed(value, line)?,
                _ => return Err(unknown()),
            },
            "arm" => match key {
                "l1" => cfg.arm.l1 = real(value, line)?,
                "l2" => cfg.arm.l2 = real(value, line)?,
                _ => return Err(unknown()),
            },
            "rvfl" => {
                let r = &mut cfg.rvfl;
                match key {
                    "groups" => r.groups = count(value, line)?,
                    "nodes_per_group" => r.nodes_per_group = count(value, line)?,
                    "ridge" => r.ridge = real(value, line)?,
                    "activation_scale" => r.activation_scale = real(value, line)?,
                    "init_range" => r.init_range = real(value, line)?,
                    "input_scale" => r.input_scale = real(value, line)?,
                    "seed" => r.seed = seed(value, line)?,
                    _ => return Err(unknown()),
                }
            }
            "cost" => match key {
                "c1" => cfg.cost.c1 = real(value, line)?,
                "c2" => cfg.cost.c2 = real(value, line)?,
                _ => return Err(unknown()),
            },
            "filter" => {
                let f = &mut cfg.filter;
                match key {
                    "alpha1_gain" => f.alpha1_gain = real(value, line)?,
                    "alpha2_gain" => f.alpha2_gain = real(value, line)?,
                    "velocity_limit" => f.velocity_limit = real(value, line)?,
                    "input_limit" => f.input_limit = real(value, line)?,
                    _ => return Err(unknown()),
                }
            }
            "mpc" => {
                let m = &mut cfg.mpc;
                match key {
                    "horizon" => m.horizon = count(value, line)?,
                    "input_weight" => m.input_weight = real(value, line)?,
                    "terminal_weight" => m.terminal_weight = real(value, line)?,
                    "max_iters" => m.max_iters = count(value, line)?,
                    "step_size" => m.step_size = real(value, line)?,
                    _ => return Err(unknown()),
                }
            }
            "sim" => {
                let s = &mut cfg.sim;
                match key {
                    "dt" => s.dt = real(value, line)?,
                    "max_time" => s.max_time = real(value, line)?,
                    "goal_tolerance" => s.goal_tolerance = real(value, line)?,
                    "updates" => s.updates_enabled = boolean(value, line)?,
                    _ => return Err(unknown()),
                }
            }
            _ => unreachable!("section names are checked on entry"),
        }
    }
    if let Some(d) = draft.take() {
        rects.push(d.finish()?);
    }
    if saw_rect {
        cfg.scenario.rects = rects;
    }
    cfg.mpc = cfg.planner_config();
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Writes `cfg` in the format read by [`parse_config`].
pub fn render_config(cfg: &SimConfig) -> String {
    let sc = &cfg.scenario;
    let mut out = String::new();
    let _ = writeln!(out, "[workspace]\nlo = {}\nhi = {}\n", sc.workspace_lo, sc.workspace_hi);
    let _ = writeln!(out, "[target]\nx = {}\ny = {}\n", sc.target[0], sc.target[1]);
    let s = &sc.initial_state;
    let _ = writeln!(
        out,
        "[initial]\ntheta1 = {}\ntheta2 = {}\nomega1 = {}\nomega2 = {}\n",
        s.theta1, s.theta2, s.omega1, s.omega2
    );
    for r in &sc.rects {
        let _ = writeln!(
            out,
            "[rect]\nx_min = {}\nx_max = {}\ny_min = {}\ny_max = {}\nactive_from = {}\n",
            r.x_min, r.x_max, r.y_min, r.y_max, r.active_from
        );
    }
    let _ = writeln!(
        out,
        "[sampling]\noffline_count = {}\nonline_count = {}\nseed = {}\n",
        sc.offline_sample_count, sc.online_sample_count, sc.seed
    );
    let _ = writeln!(out, "[arm]\nl1 = {}\nl2 = {}\n", cfg.arm.l1, cfg.arm.l2);
    let r = &cfg.rvfl;
    let _ = writeln!(
        out,
        "[rvfl]\ngroups = {}\nnodes_per_group = {}\nridge = {}\nactivation_scale = {}\ninit_range = {}\ninput_scale = {}\nseed = {}\n",
        r.groups, r.nodes_per_group, r.ridge, r.activation_scale, r.init_range, r.input_scale, r.seed
    );
    let _ = writeln!(out, "[cost]\nc1 = {}\nc2 = {}\n", cfg.cost.c1, cfg.cost.c2);
    let f = &cfg.filter;
    let _ = writeln!(
        out,
        "[filter]\nalpha1_gain = {}\nalpha2_gain = {}\nvelocity_limit = {}\ninput_limit = {}\n",
        f.alpha1_gain, f.alpha2_gain, f.velocity_limit, f.input_limit
    );
    let m = &cfg.mpc;
    let _ = writeln!(
        out,
        "[mpc]\nhorizon = {}\ninput_weight = {}\nterminal_weight = {}\nmax_iters = {}\nstep_size = {}\n",
        m.horizon, m.input_weight, m.terminal_weight, m.max_iters, m.step_size
    );
    let s = &cfg.sim;
    let _ = write!(
        out,
        "[sim]\ndt = {}\nmax_time = {}\ngoal_tolerance = {}\nupdates = {}\n",
        s.dt, s.max_time, s.goal_tolerance, s.updates_enabled
    );
    out
}
