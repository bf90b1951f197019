//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use colehopf_core::colehopf::{TransformTable, DEFAULT_QUAD_TOLERANCE};
use colehopf_core::control::{
    gradient, objective, synthesize_distributed, ControlOperator, ControlProblem, DistributedOperator,
    OBJECTIVE_SLACK,
};
use colehopf_core::discretization::{Field, SpaceGrid, TimeGrid};
use colehopf_core::nonlinearity::NonlinearitySpec;
use colehopf_core::pipeline::{run_null, run_theorem1, run_theorem3, PipelineRun, PipelineSettings};
use colehopf_core::solvers::{solve_heat_free, solve_nonlinear_y, solve_semilinear_z, HeatStepper};
use colehopf_core::Interval;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Verdict {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn grid(n: usize) -> Arc<SpaceGrid> {
    Arc::new(SpaceGrid::new(Interval::new(0.0, 1.0).unwrap(), n, Interval::new(0.3, 0.7).unwrap()).unwrap())
}

fn stepper(n: usize, t: f64, steps: usize, theta: f64) -> HeatStepper {
    HeatStepper::new(grid(n), TimeGrid::new(t, steps).unwrap(), theta).unwrap()
}

fn sine(n: usize, amp: f64) -> Field {
    Field::from_fn(grid(n), move |x| amp * (PI * x).sin()).unwrap()
}

/// Adaptive Simpson, kept independent of the crate's Gauss-Legendre panels.
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (flm, frm) = (f(0.5 * (a + m)), f(0.5 * (m + b)));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

/// `(spec, Φ in closed form, φ, α)` for exp, s and s³.
/// (name, spec, Φ, φ, α)
type Reference = (&'static str, NonlinearitySpec, fn(f64) -> f64, fn(f64) -> f64, f64);

fn references() -> Vec<Reference> {
    vec![
        ("exp", NonlinearitySpec::exp(), |r| r.exp() - 1.0, f64::exp, -1.0),
        ("s", NonlinearitySpec::polynomial(vec![0.0, 1.0]).unwrap(), |r| 0.5 * r * r, |s| s, 0.0),
        ("s^3", NonlinearitySpec::odd_power(1), |r| 0.25 * r.powi(4), |s| s * s * s, 0.0),
    ]
}

fn samples() -> Vec<f64> {
    (-30..=30).map(|i| i as f64 / 10.0).collect()
}

fn criterion_1() -> Verdict {
    let mut worst_round = 0.0f64;
    let mut worst_fwd = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut elapsed = Duration::ZERO;
    for (_, spec, big_phi, _, alpha) in references() {
        let started = Instant::now();
        let table = TransformTable::build(&spec, alpha, Interval::symmetric(3.0).unwrap(), DEFAULT_QUAD_TOLERANCE).unwrap();
        let values: Vec<(f64, f64, f64)> = samples()
            .into_iter()
            .map(|r| {
                let s = table.forward(r).unwrap();
                (r, s, table.inverse(s).unwrap())
            })
            .collect();
        elapsed += started.elapsed();
        for (r, s, back) in values {
            worst_round = worst_round.max((back - r).abs());
            let f = |v: f64| big_phi(v).exp();
            let rough = simpson(&f, 0.0, r, 1e-6 * r.abs().max(1e-300));
            let oracle = simpson(&f, 0.0, r, 1e-13 * rough.abs().max(1e-3));
            worst_fwd = worst_fwd.max((s - oracle).abs() / oracle.abs().max(1.0));
            worst_abs = worst_abs.max((s - oracle).abs());
        }
    }
    check(
        worst_round <= 1e-8 && worst_fwd <= 1e-9 && elapsed < Duration::from_secs(1),
        format!(
            "max |inverse(forward(r)) - r| = {worst_round:.2e}, max forward error / max(1,|oracle|) = {worst_fwd:.2e} (absolute {worst_abs:.2e}), {:.3}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Verdict {
    let mut worst_floor = f64::INFINITY;
    let mut worst_order = f64::INFINITY;
    for (_, spec, _, phi, alpha) in references() {
        let table = TransformTable::build(&spec, alpha, Interval::symmetric(3.5).unwrap(), DEFAULT_QUAD_TOLERANCE).unwrap();
        for r in samples() {
            worst_floor = worst_floor.min(table.derivative(r).unwrap() - (alpha.exp() - 1e-14));
        }
        let error = |h: f64| {
            samples()
                .iter()
                .map(|&x| {
                    let f = |y: f64| table.forward(y).unwrap();
                    let d2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
                    let want = phi(x) * table.derivative(x).unwrap();
                    (d2 - want).abs() / want.abs().max(1.0)
                })
                .fold(0.0, f64::max)
        };
        let errs = [error(0.04), error(0.02), error(0.01)];
        for w in errs.windows(2) {
            worst_order = worst_order.min((w[0] / w[1]).log2());
        }
    }
    check(
        worst_floor >= 0.0 && worst_order >= 1.8,
        format!("min(derivative - (e^alpha - 1e-14)) = {worst_floor:.2e}, min second-difference order = {worst_order:.2}"),
    )
}

fn criterion_3() -> Verdict {
    let started = Instant::now();
    let error = |n: usize| {
        let h = 1.0 / (n + 1) as f64;
        let t = 0.1;
        let steps = (t / (h * h)).round() as usize;
        let st = stepper(n, t, steps, 0.5);
        let z0 = Field::from_fn(st.grid().clone(), |x| (PI * x).sin()).unwrap();
        let traj = solve_heat_free(&z0, &st).unwrap();
        let decay = (-PI * PI * t).exp();
        let sq: f64 = st
            .grid()
            .xs()
            .zip(traj.terminal().values())
            .map(|(x, z)| (z - decay * (PI * x).sin()).powi(2))
            .sum();
        (h * sq).sqrt()
    };
    let (coarse, fine) = (error(200), error(401));
    let ratio = coarse / fine;
    let elapsed = started.elapsed();
    check(
        ratio >= 3.6 && elapsed < Duration::from_secs(5),
        format!(
            "L2 errors {coarse:.3e} (n=200) / {fine:.3e} (n=401), ratio {ratio:.3}, order {:.3}, {:.2}s",
            ratio.ln() / (402.0f64 / 201.0).ln(),
            elapsed.as_secs_f64()
        ),
    )
}

fn bridge_gap(n: usize, steps: usize) -> f64 {
    let st = stepper(n, 0.5, steps, 0.5);
    let g = st.grid().clone();
    let spec = NonlinearitySpec::odd_power(1);
    let y0 = Field::from_fn(g.clone(), |x| 0.5 * (PI * x).sin()).unwrap();
    let u = Field::from_fn(g.clone(), |x| {
        if x > 0.3 && x < 0.7 {
            2.0 * ((x - 0.3) * (0.7 - x) / 0.04).powi(2)
        } else {
            0.0
        }
    })
    .unwrap();
    let controls = vec![u; steps];
    let table = TransformTable::build(&spec, 0.0, Interval::symmetric(1.5).unwrap(), DEFAULT_QUAD_TOLERANCE).unwrap();
    let y = solve_nonlinear_y(&y0, &controls, &spec, &st).unwrap();
    let z0 = y0.apply_pointwise(|r| table.forward(r)).unwrap();
    let z = solve_semilinear_z(&z0, &controls, &table, &st).unwrap();
    y.map(|r| table.forward(r)).unwrap().max_l2_gap(&z)
}

fn criterion_4() -> Verdict {
    let started = Instant::now();
    let levels = [(51usize, 250usize), (101, 1000), (201, 4000)];
    let gaps: Vec<f64> = levels.iter().map(|&(n, s)| bridge_gap(n, s)).collect();
    let orders: Vec<f64> = (1..3)
        .map(|i| (gaps[i - 1] / gaps[i]).ln() / ((levels[i].0 + 1) as f64 / (levels[i - 1].0 + 1) as f64).ln())
        .collect();
    let elapsed = started.elapsed();
    check(
        gaps[2] <= 5e-3 && orders.iter().all(|&o| o >= 1.8) && elapsed < Duration::from_secs(30),
        format!(
            "gaps {:.2e}, {:.2e}, {:.2e}; orders {:.2}, {:.2}; {:.2}s",
            gaps[0], gaps[1], gaps[2], orders[0], orders[1], elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Verdict {
    let st = stepper(31, 0.2, 40, 1.0);
    let g = st.grid().clone();
    let h = g.h();
    let mask = g.mask().to_vec();
    let op = DistributedOperator::new(&st);
    let z0 = Field::from_fn(g.clone(), |x| (PI * x).sin()).unwrap();
    let free = solve_heat_free(&z0, &st).unwrap();
    let d: Vec<f64> = g
        .xs()
        .zip(free.terminal().values())
        .map(|(x, f)| 0.3 * (PI * x).sin() - f)
        .collect();
    let kappa = 1e-2;
    let j = |v: &[f64]| {
        let miss: Vec<f64> = op.apply(v).iter().zip(&d).map(|(a, b)| a - b).collect();
        objective(op.weight(), h, kappa, v, &miss)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let v: Vec<f64> = (0..op.dim()).map(|i| rng.gen_range(-1.0..1.0) * mask[i % mask.len()]).collect();
        let dir: Vec<f64> = (0..op.dim()).map(|i| rng.gen_range(-1.0..1.0) * mask[i % mask.len()]).collect();
        let grad = gradient(&op, kappa, &v, &d);
        let analytic = op.weight() * grad.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>();
        let eps = 1e-4;
        let plus: Vec<f64> = v.iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
        let minus: Vec<f64> = v.iter().zip(&dir).map(|(a, b)| a - eps * b).collect();
        let fd = (j(&plus) - j(&minus)) / (2.0 * eps);
        worst = worst.max((fd - analytic).abs() / analytic.abs());
    }

    let st = stepper(101, 0.5, 500, 1.0);
    let g = st.grid().clone();
    let problem = ControlProblem::new(
        Field::from_fn(g.clone(), |x| (PI * x).sin()).unwrap(),
        Field::zeros(g),
        1e-5,
    );
    let monotone = match synthesize_distributed(&problem, &st) {
        Ok(r) => r
            .stages
            .iter()
            .all(|s| s.objective.windows(2).all(|w| w[1] <= w[0] * (1.0 + OBJECTIVE_SLACK))),
        Err(_) => false,
    };
    check(
        worst <= 1e-5 && monotone,
        format!("max relative gradient error {worst:.2e} over 3 points; J decreasing every iteration: {monotone}"),
    )
}

fn run_binary(config: &Path, out: &Path) -> (Option<i32>, Value, Duration) {
    let started = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_colehopf"))
        .args(["pipeline", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("COLEHOPF_LOG", "quiet")
        .status()
        .expect("binary runs");
    let elapsed = started.elapsed();
    let report = std::fs::read_to_string(out.join("report.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or(Value::Null);
    (status.code(), report, elapsed)
}

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/configs"))
}

fn num(r: &Value, key: &str) -> f64 {
    r[key].as_f64().unwrap_or(f64::NAN)
}

fn criterion_6(scratch: &Path) -> Verdict {
    let (code, r, elapsed) = run_binary(&configs().join("distributed.ini"), &scratch.join("c6"));
    let nl = num(&r, "nonlinear_terminal_error");
    let slack = num(&r, "discretization_slack");
    let alpha = num(&r, "alpha");
    let a = num(&r, "control_bound_lhs") <= num(&r, "control_linf") * (-alpha).exp() * (1.0 + 1e-10);
    let b = num(&r, "error_transfer_lhs") <= (-alpha).exp() * num(&r, "linear_terminal_error") * (1.0 + 1e-10);
    check(
        code == Some(0) && nl <= 0.05 + slack && a && b && r["grid"]["n_interior"] == 201 && elapsed < Duration::from_secs(60),
        format!(
            "exit {code:?}, nonlinear error {nl:.5} <= 0.05 + {slack:.2e}, (a) ||u|| = {:.4} <= {:.4}: {a}, (b): {b}, {:.2}s",
            num(&r, "control_bound_lhs"),
            num(&r, "control_bound_rhs"),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_7() -> Verdict {
    let y0 = sine(201, 0.8);
    let runs = run_null(
        &y0,
        &NonlinearitySpec::odd_power(1),
        &[0.1, 0.03, 0.01],
        TimeGrid::new(0.5, 2000).unwrap(),
        &PipelineSettings::default(),
    );
    match runs {
        Ok(runs) => {
            let achieved: Vec<f64> = runs.iter().map(|r| r.report.nonlinear_terminal_error).collect();
            let monotone = achieved.windows(2).all(|w| w[1] <= w[0]);
            check(
                monotone && achieved[2] <= 0.01,
                format!(
                    "||y0|| = {:.4}; achieved ||y(T)|| = {:.3e}, {:.3e}, {:.3e}; non-increasing: {monotone}",
                    y0.l2_norm(),
                    achieved[0],
                    achieved[1],
                    achieved[2]
                ),
            )
        }
        Err(e) => check(false, format!("null sweep failed: {e}")),
    }
}

fn criterion_8(scratch: &Path) -> Verdict {
    let (code, r, _) = run_binary(&configs().join("initial.ini"), &scratch.join("c8"));
    let nl = num(&r, "nonlinear_terminal_error");
    let slack = num(&r, "discretization_slack");
    let reachable = code == Some(0) && nl <= 0.05 + slack;

    let yd = Field::from_fn(grid(201), |x| 0.3 * (15.0 * PI * x).sin()).unwrap();
    let rough = run_theorem3(
        &yd,
        0.05,
        &NonlinearitySpec::odd_power(1),
        TimeGrid::new(0.05, 500).unwrap(),
        &PipelineSettings::default(),
    );
    let (flagged, rough_detail) = match rough {
        Ok(run) => (
            run.report.ill_posed && !run.report.warnings.is_empty(),
            format!(
                "ill_posed = {}, best error {:.3}",
                run.report.ill_posed, run.report.nonlinear_terminal_error
            ),
        ),
        Err(e) => (false, format!("error instead of flag: {e}")),
    };
    check(
        reachable && flagged,
        format!("reachable target: exit {code:?}, error {nl:.4} <= 0.05 + {slack:.2e}; high-frequency target: {rough_detail}"),
    )
}

fn identical(run: &PipelineRun) -> bool {
    let controls = run.control.iter().zip(&run.heat_control).all(|(u, v)| u.values() == v.values());
    let trajectories = run
        .z_trajectory
        .snapshots()
        .iter()
        .zip(run.y_linear.snapshots())
        .zip(run.y_nonlinear.snapshots())
        .all(|((z, yl), yn)| z.values() == yl.values() && yl.values() == yn.values());
    controls && trajectories
}

fn criterion_9() -> Verdict {
    let spec = NonlinearitySpec::zero();
    let settings = PipelineSettings::default();
    let time = TimeGrid::new(0.5, 500).unwrap();
    let (y0, yd) = (sine(101, 0.8), sine(101, 0.3));
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    match run_theorem1(&y0, &yd, 0.05, &spec, time, &settings) {
        Ok(r) => runs.push(("distributed", r)),
        Err(e) => failures.push(format!("distributed: {e}")),
    }
    match run_null(&y0, &spec, &[0.1, 0.03, 0.01], time, &settings) {
        Ok(rs) => runs.extend(rs.into_iter().map(|r| ("null", r))),
        Err(e) => failures.push(format!("null: {e}")),
    }
    match run_theorem3(&yd, 0.05, &spec, TimeGrid::new(0.05, 100).unwrap(), &settings) {
        Ok(r) => runs.push(("initial", r)),
        Err(e) => failures.push(format!("initial: {e}")),
    }
    let bad: Vec<&str> = runs.iter().filter(|(_, r)| !identical(r)).map(|(m, _)| *m).collect();
    check(
        failures.is_empty() && bad.is_empty(),
        format!("{} runs, u == v and z == y_linear == y_nonlinear bitwise in all: {}{}", runs.len(), bad.is_empty(), failures.join("; ")),
    )
}

fn criterion_10(scratch: &Path) -> Verdict {
    let strip = |mut r: Value| {
        if let Some(m) = r.as_object_mut() {
            m.remove("timestamp");
        }
        serde_json::to_string_pretty(&r).unwrap_or_default()
    };
    let (c1, r1, _) = run_binary(&configs().join("distributed.ini"), &scratch.join("c10a"));
    let (c2, r2, _) = run_binary(&configs().join("distributed.ini"), &scratch.join("c10b"));
    let (a, b) = (strip(r1), strip(r2));
    check(
        c1 == c2 && !a.is_empty() && a == b,
        format!("two runs, {} bytes each without the timestamp field, identical: {}", a.len(), a == b),
    )
}

fn main() {
    let scratch = tempfile::tempdir().expect("scratch directory");
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("transform correctness", Box::new(criterion_1)),
        ("derivative bound", Box::new(criterion_2)),
        ("solver order", Box::new(criterion_3)),
        ("Cole-Hopf bridge", Box::new(criterion_4)),
        ("adjoint exactness", Box::new(criterion_5)),
        ("distributed control reproduction", Box::new(|| criterion_6(scratch.path()))),
        ("approximate-null sweep", Box::new(criterion_7)),
        ("initial-datum control reproduction", Box::new(|| criterion_8(scratch.path()))),
        ("degenerate-transform identity", Box::new(criterion_9)),
        ("determinism", Box::new(|| criterion_10(scratch.path()))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        if !v.pass {
            failed += 1;
        }
        println!("criterion {:>2} {:<36} {}  {}", i + 1, name, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
