//! Cost sweep: training-set confusion of the sign rule across `c1` values
//! and seeds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use safelink_core::analysis::confusion;
use safelink_core::rvfl::train;
use safelink_core::CostMatrix;

use crate::sim::SimConfig;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub c1: f64,
    pub seed: u64,
    pub unsafe_as_safe: usize,
    pub safe_as_unsafe: usize,
    pub accuracy: f64,
}

/// Per-`c1` aggregate over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub c1: f64,
    pub seeds: usize,
    pub median_unsafe_as_safe: f64,
    pub zero_unsafe_as_safe_fraction: f64,
    pub median_accuracy: f64,
}

/// Each seed draws its own offline sample (scenario seed) and enhancement
/// layer (RVFL seed); every `c1` is then trained from scratch on it.
pub fn sweep_c1(cfg: &SimConfig, c1_values: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let per_seed: Vec<Result<Vec<SweepRow>>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut sc = cfg.scenario.clone();
            sc.seed = seed;
            let rvfl = safelink_core::RvflConfig { seed, ..cfg.rvfl };
            let data = sc.sample_offline();
            c1_values
                .iter()
                .map(|&c1| {
                    let model = train(&data, &rvfl, &CostMatrix::new(c1, cfg.cost.c2)?)?;
                    let c = confusion(&model, &data)?;
                    Ok(SweepRow {
                        c1,
                        seed,
                        unsafe_as_safe: c.unsafe_as_safe,
                        safe_as_unsafe: c.safe_as_unsafe,
                        accuracy: c.accuracy(),
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(seeds.len() * c1_values.len());
    for r in per_seed {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| a.c1.total_cmp(&b.c1).then(a.seed.cmp(&b.seed)));
    Ok(rows)
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One summary per distinct `c1`, in ascending order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut c1s: Vec<f64> = rows.iter().map(|r| r.c1).collect();
    c1s.sort_by(f64::total_cmp);
    c1s.dedup();
    c1s.into_iter()
        .map(|c1| {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.c1 == c1).collect();
            let mut us: Vec<f64> = sel.iter().map(|r| r.unsafe_as_safe as f64).collect();
            let mut acc: Vec<f64> = sel.iter().map(|r| r.accuracy).collect();
            let zeros = sel.iter().filter(|r| r.unsafe_as_safe == 0).count();
            SweepSummary {
                c1,
                seeds: sel.len(),
                median_unsafe_as_safe: median(&mut us),
                zero_unsafe_as_safe_fraction: zeros as f64 / sel.len() as f64,
                median_accuracy: median(&mut acc),
            }
        })
        .collect()
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("c1,seed,unsafe_as_safe,safe_as_unsafe,accuracy\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{:.16e}\n", r.c1, r.seed, r.unsafe_as_safe, r.safe_as_unsafe, r.accuracy));
    }
    out
}
