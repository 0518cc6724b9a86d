mod common;

use common::*;
use nalgebra::DMatrix;
use rand::Rng;

use safelink_core::analysis::{
    analytic_lipschitz, confusion, conservativeness_check, coverage_radii, hat_row_unsafe_sum, lipschitz_bound,
    ProbeBox,
};
use safelink_core::rvfl::{train, Label, LabeledSamples};
use safelink_core::scenario::Scenario;
use safelink_core::{CostMatrix, RvflConfig, TrainedModel};

const PROBE: ProbeBox = ProbeBox { lo: -15.0, hi: 15.0, seed: 3 };

fn with_parts(model: &TrainedModel, f: impl FnOnce(&mut safelink_core::rvfl::ModelParts)) -> TrainedModel {
    let mut parts = model.to_parts();
    f(&mut parts);
    TrainedModel::from_parts(parts).unwrap()
}

#[test]
fn sampled_ratios_stay_under_analytic_bounds() {
    for seed in 0..4 {
        let (_, model) = trained(800, 10, 10, CostMatrix { c1: 2.0, c2: 1.0 }, seed);
        let rep = lipschitz_bound(&model, &PROBE, 10_000).unwrap();
        assert_eq!(rep.pairs, 10_000);
        assert!(rep.empirical_max_ratio <= rep.l_b);
        assert!(rep.empirical_grad_ratio <= rep.l_grad);

        // an independent set of pairs
        let mut r = rng(100 + seed);
        for _ in 0..2000 {
            let x: [f64; 2] = [r.gen_range(-15.0..15.0), r.gen_range(-15.0..15.0)];
            let y: [f64; 2] = [r.gen_range(-15.0..15.0), r.gen_range(-15.0..15.0)];
            let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
            let db = (model.cbf_value(&x).unwrap() - model.cbf_value(&y).unwrap()).abs();
            assert!(db <= rep.l_b * d);
            let dg = (model.cbf_gradient(&x).unwrap() - model.cbf_gradient(&y).unwrap()).norm();
            assert!(dg <= rep.l_grad * d);
        }
    }
}

#[test]
fn linear_part_alone_when_enhancement_weights_vanish() {
    let (_, model) = trained(200, 4, 5, CostMatrix { c1: 1.0, c2: 1.0 }, 1);
    let flat = with_parts(&model, |p| p.layer.weights.fill(0.0));
    let (l_b, l_grad) = analytic_lipschitz(&flat);
    let w0 = (model.w_b()[(0, 1)].powi(2) + model.w_b()[(1, 1)].powi(2)).sqrt();
    assert!((l_b - 2.0 * w0 / model.config().input_scale).abs() <= 1e-14);
    assert_eq!(l_grad, 0.0);
}

#[test]
fn bound_is_homogeneous_in_output_weights() {
    let (_, model) = trained(200, 4, 5, CostMatrix { c1: 1.0, c2: 1.0 }, 2);
    let doubled = with_parts(&model, |p| p.w_b *= 2.0);
    let (a, ga) = analytic_lipschitz(&model);
    let (b, gb) = analytic_lipschitz(&doubled);
    assert!((b - 2.0 * a).abs() <= 1e-12 * a);
    assert!((gb - 2.0 * ga).abs() <= 1e-12 * ga);
}

/// `S_k` from an explicitly formed hat matrix.
fn explicit_hat_sums(model: &TrainedModel, data: &LabeledSamples) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = (0..data.len()).map(|i| feature_row(model, &data.point(i))).collect();
    let d = rows[0].len();
    let a = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let gram = DMatrix::identity(d, d) * model.config().ridge + a.transpose() * &a;
    let h = &a * gram.lu().try_inverse().unwrap() * a.transpose();
    let unsafe_rows: Vec<usize> = (0..data.len()).filter(|i| data.labels()[*i] == Label::Unsafe).collect();
    unsafe_rows.iter().map(|&k| unsafe_rows.iter().map(|&i| h[(k, i)]).sum()).collect()
}

#[test]
fn hat_sums_match_explicit_hat_matrix() {
    let (data, model) = trained(100, 10, 10, CostMatrix { c1: 2.0, c2: 1.0 }, 5);
    let hat = hat_row_unsafe_sum(&model, &data).unwrap();
    let oracle = explicit_hat_sums(&model, &data);
    assert_eq!(hat.sums.len(), oracle.len());
    for (a, b) in hat.sums.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn barrier_slope_in_c1_is_minus_twice_hat_sum() {
    for seed in 0..5 {
        let data = random_data(100, 2, 0.3, 200 + seed);
        let cfg = small_config(2, 10, 10, seed);
        let (c1, dc) = (1.0, 0.25);
        let lo = train(&data, &cfg, &CostMatrix { c1, c2: 1.0 }).unwrap();
        let hi = train(&data, &cfg, &CostMatrix { c1: c1 + dc, c2: 1.0 }).unwrap();
        let s = explicit_hat_sums(&lo, &data);
        let unsafe_rows: Vec<usize> = (0..data.len()).filter(|i| data.labels()[*i] == Label::Unsafe).collect();
        for (k, idx) in unsafe_rows.iter().enumerate() {
            let x = data.point(*idx);
            let slope = (hi.cbf_value(&x).unwrap() - lo.cbf_value(&x).unwrap()) / dc;
            let err = (slope + 2.0 * s[k]).abs() / (2.0 * s[k].abs()).max(1.0);
            assert!(err <= 1e-8, "seed {seed} row {idx}: {slope} vs {}", -2.0 * s[k]);
        }
    }
}

#[test]
fn lone_unsafe_sample_projects_onto_itself() {
    let data = random_data(20, 2, 0.0, 6);
    let mut labels = data.labels().to_vec();
    labels[7] = Label::Unsafe;
    let data = LabeledSamples::new(data.points().clone(), labels).unwrap();
    let cfg = RvflConfig { ridge: 1e-10, ..small_config(2, 10, 10, 6) };
    let model = train(&data, &cfg, &CostMatrix::zero()).unwrap();
    let hat = hat_row_unsafe_sum(&model, &data).unwrap();
    assert!((hat.sums[0] - 1.0).abs() <= 1e-4, "{}", hat.sums[0]);

    let heavy = RvflConfig { ridge: 1e9, ..cfg };
    let model = train(&data, &heavy, &CostMatrix::zero()).unwrap();
    assert!(hat_row_unsafe_sum(&model, &data).unwrap().sums[0].abs() <= 1e-6);
}

#[test]
fn hat_sums_reject_foreign_data() {
    let (data, model) = trained(100, 4, 5, CostMatrix::zero(), 7);
    assert!(hat_row_unsafe_sum(&model, &data.slice(0, 50)).is_err());
}

#[test]
fn coverage_balls_contain_no_safe_points() {
    for seed in 0..4 {
        let (data, model) = trained(600, 10, 10, CostMatrix { c1: 2.0, c2: 1.0 }, 30 + seed);
        let rep = lipschitz_bound(&model, &PROBE, 10_000).unwrap();
        let cov = coverage_radii(&model, &data, rep.l_b, 100, seed).unwrap();
        assert_eq!(cov.violations, 0);
        assert_eq!(cov.radii.len(), data.unsafe_count());
        assert_eq!(cov.probes, 100 * cov.covered_samples());
        let unsafe_rows = (0..data.len()).filter(|i| data.labels()[*i] == Label::Unsafe);
        for (r, i) in cov.radii.iter().zip(unsafe_rows) {
            let b = model.cbf_value(&data.point(i)).unwrap();
            let expect = if b < 0.0 { -b / rep.l_b } else { 0.0 };
            assert!((r - expect).abs() <= 1e-15);
        }
    }
}

#[test]
fn confusion_counts_follow_sign_rule() {
    let (data, model) = trained(300, 4, 5, CostMatrix { c1: 0.5, c2: 1.0 }, 8);
    let c = confusion(&model, &data).unwrap();
    let mut us = 0;
    let mut su = 0;
    for i in 0..data.len() {
        let b = model.cbf_value(&data.point(i)).unwrap();
        match data.labels()[i] {
            Label::Unsafe if b >= 0.0 => us += 1,
            Label::Safe if b < 0.0 => su += 1,
            _ => {}
        }
    }
    assert_eq!((c.unsafe_as_safe, c.safe_as_unsafe, c.total), (us, su, 300));
    assert!((c.accuracy() - (1.0 - (us + su) as f64 / 300.0)).abs() <= 1e-15);
}

#[test]
fn empty_region_is_covered_vacuously() {
    let (_, model) = trained(100, 4, 5, CostMatrix::zero(), 9);
    let sc = Scenario { rects: vec![], ..Scenario::default() };
    let rep = conservativeness_check(&model, &sc, 0.0, 1000, 0).unwrap();
    assert!(rep.covered && rep.probes == 0);
}

#[test]
fn default_scenario_conservative_at_high_cost_only() {
    let cfg = RvflConfig::default();
    let mut covered_hi = 0;
    let mut missed_lo = 0;
    for seed in 0..20 {
        let sc = Scenario { seed, ..Scenario::default() };
        let data = sc.sample_offline();
        let rv = RvflConfig { seed, ..cfg };
        let hi = train(&data, &rv, &CostMatrix { c1: 2.0, c2: 1.0 }).unwrap();
        let lo = train(&data, &rv, &CostMatrix { c1: 0.5, c2: 1.0 }).unwrap();
        if conservativeness_check(&hi, &sc, 0.0, 10_000, seed).unwrap().covered {
            covered_hi += 1;
        }
        if !conservativeness_check(&lo, &sc, 0.0, 10_000, seed).unwrap().covered {
            missed_lo += 1;
        }
    }
    assert!(covered_hi >= 19, "covered at c1 = 2 in {covered_hi}/20");
    assert!(missed_lo >= 10, "missed at c1 = 0.5 in {missed_lo}/20");
}
