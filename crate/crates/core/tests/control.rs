mod common;

use colehopf_core::control::{
    gradient, objective, synthesize_distributed, synthesize_initial, ControlOperator, ControlProblem,
    DistributedOperator, OBJECTIVE_SLACK,
};
use colehopf_core::discretization::Field;
use colehopf_core::solvers::{solve_heat, solve_heat_free};
use colehopf_core::Error;
use common::stepper;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn gradient_matches_finite_differences() {
    let st = stepper(31, (0.3, 0.7), 0.2, 40, 1.0);
    let grid = st.grid().clone();
    let h = grid.h();
    let mask = grid.mask().to_vec();
    let op = DistributedOperator::new(&st);
    let z0 = Field::from_fn(grid.clone(), |x| (PI * x).sin()).unwrap();
    let free = solve_heat_free(&z0, &st).unwrap();
    let target = Field::from_fn(grid.clone(), |x| 0.3 * (PI * x).sin()).unwrap();
    let d: Vec<f64> = target.values().iter().zip(free.terminal().values()).map(|(t, f)| t - f).collect();
    let kappa = 1e-2;
    let j = |v: &[f64]| {
        let miss: Vec<f64> = op.apply(v).iter().zip(&d).map(|(a, b)| a - b).collect();
        objective(op.weight(), h, kappa, v, &miss)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let masked = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..op.dim()).map(|i| rng.gen_range(-1.0..1.0) * mask[i % mask.len()]).collect()
    };
    for _ in 0..3 {
        let v = masked(&mut rng);
        let dir = masked(&mut rng);
        let g = gradient(&op, kappa, &v, &d);
        let analytic = op.weight() * dot(&g, &dir);
        let eps = 1e-4;
        let plus: Vec<f64> = v.iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
        let minus: Vec<f64> = v.iter().zip(&dir).map(|(a, b)| a - eps * b).collect();
        // J is quadratic, so the central difference is exact up to rounding
        let fd = (j(&plus) - j(&minus)) / (2.0 * eps);
        let rel = (fd - analytic).abs() / analytic.abs();
        assert!(rel <= 1e-5, "relative error {rel}");
    }
}

fn reference_problem(tolerance: f64) -> (ControlProblem, colehopf_core::solvers::HeatStepper) {
    let st = stepper(101, (0.3, 0.7), 0.5, 500, 1.0);
    let grid = st.grid().clone();
    let z0 = Field::from_fn(grid.clone(), |x| (PI * x).sin()).unwrap();
    (ControlProblem::new(z0, Field::zeros(grid), tolerance), st)
}

#[test]
fn objective_decreases_every_iteration() {
    let (problem, st) = reference_problem(1e-4);
    let result = synthesize_distributed(&problem, &st).unwrap();
    for stage in &result.stages {
        for w in stage.objective.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + OBJECTIVE_SLACK), "kappa {}: {} -> {}", stage.kappa, w[0], w[1]);
        }
    }
}

#[test]
fn terminal_error_decreases_across_penalties() {
    // unreachable tolerance forces the whole schedule
    let (problem, st) = reference_problem(1e-12);
    let best = match synthesize_distributed(&problem, &st) {
        Err(Error::Convergence { best, .. }) => best,
        other => panic!("expected exhausted schedule, got {other:?}"),
    };
    assert_eq!(best.stages.len(), 4);
    for w in best.stages.windows(2) {
        assert!(w[1].terminal_error < w[0].terminal_error);
    }
    assert!(!best.converged);
}

#[test]
fn full_observation_needs_fewer_iterations() {
    let total = |omega: (f64, f64)| {
        let st = stepper(101, omega, 0.5, 500, 1.0);
        let grid = st.grid().clone();
        let z0 = Field::from_fn(grid.clone(), |x| (PI * x).sin()).unwrap();
        let target = Field::from_fn(grid.clone(), |x| 0.3 * (PI * x).sin()).unwrap();
        let r = synthesize_distributed(&ControlProblem::new(z0, target, 1e-3), &st).unwrap();
        r.stages.iter().map(|s| s.iters).sum::<usize>()
    };
    assert!(total((0.0, 1.0)) < total((0.3, 0.7)));
}

#[test]
fn synthesized_control_is_supported_in_omega_and_reproduces_terminal() {
    let (problem, st) = reference_problem(1e-3);
    let r = synthesize_distributed(&problem, &st).unwrap();
    let v = r.control.distributed().unwrap();
    assert!(v.iter().all(Field::vanishes_outside_omega));
    let traj = solve_heat(&problem.initial, v, &st).unwrap();
    assert_eq!(traj.terminal().values(), r.terminal_field.values());
    assert!(r.terminal_error <= 1e-3);
}

#[test]
fn zero_data_give_zero_control() {
    let st = stepper(21, (0.3, 0.7), 0.1, 20, 1.0);
    let zero = Field::zeros(st.grid().clone());
    let r = synthesize_distributed(&ControlProblem::new(zero.clone(), zero, 1e-6), &st).unwrap();
    assert_eq!(r.terminal_error, 0.0);
    assert!(r.control.distributed().unwrap().iter().all(|f| f.linf_norm() == 0.0));
}

#[test]
fn initial_control_reaches_smooth_target() {
    let st = stepper(101, (0.3, 0.7), 0.1, 200, 1.0);
    let grid = st.grid().clone();
    let datum = Field::from_fn(grid.clone(), |x| (PI * x).sin() + 0.2 * (2.0 * PI * x).sin()).unwrap();
    let target = solve_heat_free(&datum, &st).unwrap().terminal().clone();
    let r = synthesize_initial(&ControlProblem::new(Field::zeros(grid), target, 1e-3), &st).unwrap();
    assert!(r.converged && !r.ill_posed);
    let v = r.control.initial().unwrap();
    let reached = solve_heat_free(v, &st).unwrap();
    assert!((reached.terminal().l2_norm() - r.terminal_field.l2_norm()).abs() < 1e-14);
}

#[test]
fn rough_initial_target_is_flagged() {
    let st = stepper(101, (0.3, 0.7), 0.05, 100, 1.0);
    let grid = st.grid().clone();
    let target = Field::from_fn(grid.clone(), |x| 0.3 * (15.0 * PI * x).sin()).unwrap();
    match synthesize_initial(&ControlProblem::new(Field::zeros(grid), target, 1e-3), &st) {
        Err(Error::Convergence { best, .. }) | Err(Error::Iteration { best, .. }) => assert!(best.ill_posed),
        other => panic!("expected an ill-posed outcome, got {other:?}"),
    }
}
