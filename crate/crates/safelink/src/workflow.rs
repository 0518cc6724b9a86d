//! The file-producing side of each CLI command.

use std::fs;
use std::path::Path;

use serde::Serialize;

use safelink_core::analysis::{
    conservativeness_check, coverage_radii, hat_row_unsafe_sum, lipschitz_bound, ConservativenessReport,
    CoverageReport, LipschitzReport, ProbeBox,
};
use safelink_core::rvfl::train;
use safelink_core::TrainedModel;

use crate::archive;
use crate::sim::{SimConfig, SimLog};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize)]
pub struct HatReport {
    pub unsafe_samples: usize,
    pub min_sum: f64,
    pub nonpositive: usize,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: TrainedModel,
    pub lipschitz: LipschitzReport,
    pub coverage: CoverageReport,
    pub conservativeness: ConservativenessReport,
    pub hat: HatReport,
}

impl TrainReport {
    /// The sampled Lipschitz ratio stays under the analytic bound and no
    /// coverage ball contains a point with `B ≥ 0`.
    pub fn invariants_hold(&self) -> bool {
        self.lipschitz.empirical_max_ratio <= self.lipschitz.l_b
            && self.lipschitz.empirical_grad_ratio <= self.lipschitz.l_grad
            && self.coverage.violations == 0
    }
}

pub fn train_with_reports(cfg: &SimConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let data = cfg.scenario.sample_offline();
    let model = train(&data, &cfg.rvfl, &cfg.cost)?;
    let probe = ProbeBox { lo: cfg.scenario.workspace_lo, hi: cfg.scenario.workspace_hi, seed: cfg.scenario.seed };
    let lipschitz = lipschitz_bound(&model, &probe, 10_000)?;
    let coverage = coverage_radii(&model, &data, lipschitz.l_b, 100, cfg.scenario.seed)?;
    let conservativeness = conservativeness_check(&model, &cfg.scenario, 0.0, 10_000, cfg.scenario.seed)?;
    let h = hat_row_unsafe_sum(&model, &data)?;
    let hat = HatReport { unsafe_samples: h.sums.len(), min_sum: h.min(), nonpositive: h.nonpositive() };
    Ok(TrainReport { model, lipschitz, coverage, conservativeness, hat })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct CoverageSummary<'a> {
    l_b: f64,
    unsafe_samples: usize,
    covered_samples: usize,
    probes: usize,
    violations: usize,
    radii: &'a [f64],
}

pub fn write_train_outputs(report: &TrainReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out.join("reports"))?;
    archive::save(&report.model, &out.join("model.bin"))?;
    let r = out.join("reports");
    write_json(&r.join("lipschitz.json"), &report.lipschitz)?;
    let c = &report.coverage;
    let cov = CoverageSummary {
        l_b: c.l_b,
        unsafe_samples: c.radii.len(),
        covered_samples: c.covered_samples(),
        probes: c.probes,
        violations: c.violations,
        radii: &c.radii,
    };
    write_json(&r.join("coverage.json"), &cov)?;
    write_json(&r.join("conservativeness.json"), &report.conservativeness)?;
    write_json(&r.join("hat_influence.json"), &report.hat)?;
    Ok(())
}

/// 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub const TRAJECTORY_HEADER: &str =
    "t,theta1,theta2,omega1,omega2,x,y,u1,u2,u_ref1,u_ref2,B,psi1,qp_status,event";

pub fn trajectory_csv(log: &SimLog) -> String {
    let mut out = String::with_capacity(256 * (log.steps.len() + 1));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for s in &log.steps {
        let reals = [s.t, s.theta1, s.theta2, s.omega1, s.omega2, s.x, s.y, s.u1, s.u2, s.u_ref1, s.u_ref2, s.b, s.psi1];
        for v in reals {
            out.push_str(&fmt_real(v));
            out.push(',');
        }
        let status = match s.qp_status {
            safelink_core::filter::QpStatus::Optimal => "optimal",
            safelink_core::filter::QpStatus::Infeasible => "infeasible",
        };
        out.push_str(status);
        out.push(',');
        out.push_str(&s.event);
        out.push('\n');
    }
    out
}

pub fn write_sim_outputs(log: &SimLog, out: &Path, format: Format) -> Result<()> {
    fs::create_dir_all(out)?;
    match format {
        Format::Csv => fs::write(out.join("trajectory.csv"), trajectory_csv(log))?,
        Format::Json => write_json(&out.join("trajectory.json"), &log.steps)?,
    }
    write_json(&out.join("summary.json"), &log.summary)?;
    write_json(&out.join("events.json"), &log.events)?;
    if !log.warnings.is_empty() {
        write_json(&out.join("warnings.json"), &log.warnings)?;
    }
    Ok(())
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    write_json(path, value)
}
