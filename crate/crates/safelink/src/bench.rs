//! Timing of `append_samples` against retraining on the concatenated data.
//!
//! Problem instances are built in parallel; the timed sections run one at a
//! time so they do not compete for cores.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use safelink_core::incremental::{append_samples, UpdateBatch};
use safelink_core::rvfl::{train, LabeledSamples};
use safelink_core::scenario::Scenario;
use safelink_core::{derive_seed, TrainedModel};

use crate::sim::SimConfig;
use crate::sweep::median;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub delta_n: usize,
    pub median_incremental_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_offline: usize,
    pub delta_n: usize,
    pub median_incremental_ms: f64,
    pub median_batch_ms: f64,
    pub speedup: f64,
    pub seeds: Vec<u64>,
    /// Incremental timings over the scaling sizes.
    pub scaling: Vec<ScalingPoint>,
    /// Least-squares slope of `log t` against `log ΔN`.
    pub scaling_exponent: f64,
}

struct Instance {
    offline: LabeledSamples,
    delta: LabeledSamples,
    model: TrainedModel,
}

fn labeled_uniform(sc: &Scenario, count: usize, seed: u64) -> LabeledSamples {
    let s = Scenario { offline_sample_count: count, seed, ..sc.clone() };
    s.sample_offline()
}

fn instance(cfg: &SimConfig, n: usize, delta_n: usize, seed: u64) -> Result<Instance> {
    let offline = labeled_uniform(&cfg.scenario, n, seed);
    // fresh rows drawn like the offline set; the first expansion's labels
    // would make every row unsafe, which does not change the cost
    let delta = labeled_uniform(&cfg.scenario, delta_n, derive_seed(seed, 1));
    let rvfl = safelink_core::RvflConfig { seed, ..cfg.rvfl };
    let model = train(&offline, &rvfl, &cfg.cost)?;
    Ok(Instance { offline, delta, model })
}

fn time_ms<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn append_ms(inst: &Instance) -> Result<f64> {
    let batch = UpdateBatch::new(inst.delta.clone());
    let (out, ms) = time_ms(|| append_samples(&inst.model, &batch));
    out?;
    Ok(ms)
}

/// Medians over `repeats` fresh instances (seeds `0..repeats`) at
/// `(n_offline, delta_n)`, plus the incremental scaling over `scaling_sizes`.
pub fn bench_update(
    cfg: &SimConfig,
    n_offline: usize,
    delta_n: usize,
    scaling_sizes: &[usize],
    repeats: usize,
) -> Result<BenchReport> {
    let seeds: Vec<u64> = (0..repeats.max(1) as u64).collect();
    let instances: Vec<Result<Instance>> = seeds.par_iter().map(|&s| instance(cfg, n_offline, delta_n, s)).collect();
    let instances: Vec<Instance> = instances.into_iter().collect::<Result<_>>()?;

    let mut inc = Vec::new();
    let mut batch = Vec::new();
    for inst in &instances {
        inc.push(append_ms(inst)?);
        let all = inst.offline.concat(&inst.delta)?;
        let (out, ms) = time_ms(|| train(&all, inst.model.config(), inst.model.cost()));
        out?;
        batch.push(ms);
    }
    let median_incremental_ms = median(&mut inc);
    let median_batch_ms = median(&mut batch);

    let mut scaling = Vec::new();
    for &dn in scaling_sizes {
        let mut times = Vec::new();
        for inst in &instances {
            let delta = labeled_uniform(&cfg.scenario, dn, derive_seed(inst.model.config().seed, 2));
            let with = Instance { offline: LabeledSamples::empty(2), delta, model: inst.model.clone() };
            // warm once so the first timing is not a cold-cache outlier
            append_ms(&with)?;
            times.push(append_ms(&with)?);
        }
        scaling.push(ScalingPoint { delta_n: dn, median_incremental_ms: median(&mut times) });
    }
    let pts: Vec<(f64, f64)> = scaling.iter().map(|p| (p.delta_n as f64, p.median_incremental_ms.max(1e-9))).collect();
    let scaling_exponent = if pts.len() >= 2 { loglog_slope(&pts) } else { f64::NAN };

    Ok(BenchReport {
        n_offline,
        delta_n,
        median_incremental_ms,
        median_batch_ms,
        speedup: median_batch_ms / median_incremental_ms,
        seeds,
        scaling,
        scaling_exponent,
    })
}
