mod common;

use common::*;
use nalgebra::{DMatrix, Vector2};
use rand::Rng;

use safelink_core::dynamics::{lift_cbf, step, ControlInput, ManipulatorState, TwoLinkArm};
use safelink_core::CostMatrix;

fn random_state<R: Rng>(r: &mut R) -> ManipulatorState {
    ManipulatorState {
        theta1: r.gen_range(-3.0..3.0),
        theta2: r.gen_range(-3.0..3.0),
        omega1: r.gen_range(-0.5..0.5),
        omega2: r.gen_range(-0.5..0.5),
    }
}

/// `exp(dt·[[0, I, 0], [0, 0, I], [0, 0, 0]])` applied to `[θ, ω, u]`.
fn expm_step(s: &ManipulatorState, u: &ControlInput, dt: f64) -> ManipulatorState {
    let mut m = DMatrix::<f64>::zeros(6, 6);
    for i in 0..2 {
        m[(i, i + 2)] = dt;
        m[(i + 2, i + 4)] = dt;
    }
    let z = series_exp(&m) * dvec(&[s.theta1, s.theta2, s.omega1, s.omega2, u.u1, u.u2]);
    ManipulatorState { theta1: z[0], theta2: z[1], omega1: z[2], omega2: z[3] }
}

/// Power series `Σ Mᵏ/k!` summed to 30 terms.
fn series_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * m / k as f64;
        sum += &term;
    }
    sum
}

fn close_state(a: &ManipulatorState, b: &ManipulatorState, tol: f64) -> bool {
    [a.theta1 - b.theta1, a.theta2 - b.theta2, a.omega1 - b.omega1, a.omega2 - b.omega2].iter().all(|d| d.abs() <= tol)
}

#[test]
fn step_matches_matrix_exponential() {
    let mut r = rng(3);
    for _ in 0..200 {
        let s = random_state(&mut r);
        let u = ControlInput::new(r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0));
        assert!(close_state(&step(&s, &u, 0.05), &expm_step(&s, &u, 0.05), 1e-12));
    }
}

#[test]
fn halving_the_step_changes_nothing_under_constant_input() {
    let s0 = ManipulatorState { theta1: 0.3, theta2: -0.2, omega1: 0.1, omega2: -0.4 };
    let u = ControlInput::new(0.7, -1.3);
    let (mut a, mut b) = (s0, s0);
    for _ in 0..100 {
        a = step(&a, &u, 0.05);
    }
    for _ in 0..200 {
        b = step(&b, &u, 0.025);
    }
    assert!(close_state(&a, &b, 1e-12));
}

#[test]
fn zero_input_holds_a_resting_arm() {
    let s = ManipulatorState::at_rest(1.2, -0.4);
    assert_eq!(step(&s, &ControlInput::ZERO, 0.05), s);
}

#[test]
fn kinematics_match_finite_differences() {
    let arm = TwoLinkArm::default();
    let mut r = rng(4);
    let h = 1e-5;
    for _ in 0..200 {
        let th = [r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)];
        let kin = arm.kinematics_derivatives(th[0], th[1]);
        for c in 0..2 {
            let f = |p: &[f64]| {
                let (x, y) = arm.forward_kinematics(p[0], p[1]);
                [x, y][c]
            };
            let g = central_gradient(f, &th, h);
            let row = [kin.jacobian[(c, 0)], kin.jacobian[(c, 1)]];
            assert!(vec_rel(&row, &g) <= 1e-6);
            let hs = central_hessian(f, &th, 1e-4);
            let hk = DMatrix::from_fn(2, 2, |i, j| kin.hessians[c][(i, j)]);
            assert!((&hk - &hs).norm() / hs.norm().max(1.0) <= 1e-6);
        }
    }
}

#[test]
fn endpoint_stays_within_reach() {
    let arm = TwoLinkArm::default();
    let mut r = rng(5);
    for _ in 0..1000 {
        let (x, y) = arm.forward_kinematics(r.gen_range(-10.0..10.0), r.gen_range(-10.0..10.0));
        assert!((x * x + y * y).sqrt() <= arm.reach() + 1e-12);
    }
}

#[test]
fn lifted_derivatives_match_time_differences() {
    let arm = TwoLinkArm::default();
    let (_, model) = trained(500, 10, 10, CostMatrix { c1: 2.0, c2: 1.0 }, 6);
    let mut r = rng(6);
    for _ in 0..100 {
        let s = random_state(&mut r);
        let kin = arm.kinematics_derivatives(s.theta1, s.theta2);
        let p = arm.endpoint(&s);
        let lift = lift_cbf(&model.evaluate(&[p[0], p[1]]).unwrap(), &kin, &s);

        // B along the drift θ(t) = θ + ω t
        let along = |t: f64| {
            let (x, y) = arm.forward_kinematics(s.theta1 + s.omega1 * t, s.theta2 + s.omega2 * t);
            model.cbf_value(&[x, y]).unwrap()
        };
        let h = 1e-4;
        let lf = (along(h) - along(-h)) / (2.0 * h);
        assert!((lift.lf_b - lf).abs() <= 1e-4 * lift.lf_b.abs().max(1.0));
        let lf2 = (along(1e-3) - 2.0 * along(0.0) + along(-1e-3)) / 1e-6;
        assert!((lift.lf2_b - lf2).abs() <= 1e-4 * lift.lf2_b.abs().max(1.0));

        // L_gL_fB is ∂(L_fB)/∂ω
        let lf_at = |w: [f64; 2]| {
            let s2 = ManipulatorState { omega1: w[0], omega2: w[1], ..s };
            lift_cbf(&model.evaluate(&[p[0], p[1]]).unwrap(), &kin, &s2).lf_b
        };
        let g = central_gradient(|w: &[f64]| lf_at([w[0], w[1]]), &[s.omega1, s.omega2], 1e-3);
        assert!(vec_rel(&lift.lglf_b, &g) <= 1e-6 || (Vector2::from(lift.lglf_b) - Vector2::new(g[0], g[1])).norm() <= 1e-9);
    }
}
