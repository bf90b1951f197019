//! Command dispatch for the `colehopf` binary.
//!
//! Every command writes `report.json` into its output directory. The exit
//! code is recomputed from that report by [`exit_code`], so a saved report
//! always explains the status it came with.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod fields;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use colehopf_core::colehopf::TransformTable;
use colehopf_core::control::{synthesize_distributed, synthesize_initial, ControlProblem, ControlResult};
use colehopf_core::discretization::{write_long_csv, Field, SpaceGrid, TimeGrid, Trajectory};
use colehopf_core::nonlinearity::NonlinearitySpec;
use colehopf_core::pipeline::{run_null, run_theorem1, run_theorem3, PipelineRun, PipelineSettings};
use colehopf_core::solvers::{solve_heat, solve_heat_free, solve_nonlinear_y, solve_semilinear_z, HeatStepper};
use colehopf_core::{Error, Interval};

use config::{sweep_instance, Command, Mode, PhiChoice, RunConfig};

/// Failure classes and their exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Config = 1,
    Admissibility = 2,
    Synthesis = 3,
    Certification = 4,
    Numerical = 5,
}

impl Failure {
    pub fn label(self) -> &'static str {
        match self {
            Failure::Config => "config",
            Failure::Admissibility => "admissibility",
            Failure::Synthesis => "synthesis",
            Failure::Certification => "certification",
            Failure::Numerical => "numerical",
        }
    }

    fn from_label(s: &str) -> Option<Self> {
        [
            Failure::Config,
            Failure::Admissibility,
            Failure::Synthesis,
            Failure::Certification,
            Failure::Numerical,
        ]
        .into_iter()
        .find(|f| f.label() == s)
    }

    pub fn classify(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::Io(_) | Error::Csv(_) => Failure::Config,
            Error::Admissibility(_) => Failure::Admissibility,
            Error::Convergence { .. } | Error::Iteration { .. } => Failure::Synthesis,
            Error::Certification { .. } => Failure::Certification,
            Error::Domain { .. }
            | Error::Accuracy { .. }
            | Error::Stability { .. }
            | Error::BlowUp { .. }
            | Error::HullViolation { .. } => Failure::Numerical,
        }
    }
}

/// The exit status implied by a report.
pub fn exit_code(report: &Value) -> i32 {
    if let Some(label) = report.pointer("/error/class").and_then(Value::as_str) {
        return Failure::from_label(label).map_or(1, |f| f as i32);
    }
    if let Some(sweeps) = report.get("sweeps").and_then(Value::as_array) {
        return sweeps
            .iter()
            .map(|s| s.get("exit_code").and_then(Value::as_i64).unwrap_or(1) as i32)
            .find(|&c| c != 0)
            .unwrap_or(0);
    }
    let flags_pass = |r: &Value| {
        r.get("pass_flags")
            .and_then(Value::as_object)
            .is_some_and(|f| !f.is_empty() && f.values().all(|v| v.as_bool() == Some(true)))
    };
    match report.get("command").and_then(Value::as_str) {
        Some("check-phi") => {
            if report.pointer("/verdict/admissible").and_then(Value::as_bool) == Some(true) {
                0
            } else {
                Failure::Admissibility as i32
            }
        }
        Some("control") => {
            if report.get("converged").and_then(Value::as_bool) == Some(true) {
                0
            } else {
                Failure::Synthesis as i32
            }
        }
        Some("pipeline") => {
            let ok = match report.get("runs").and_then(Value::as_array) {
                Some(runs) => !runs.is_empty() && runs.iter().all(flags_pass),
                None => flags_pass(report),
            };
            if ok {
                0
            } else {
                Failure::Certification as i32
            }
        }
        Some(_) => 0,
        None => 1,
    }
}

/// Result of [`dispatch`]: the report as written and its exit code.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Value,
    pub code: i32,
}

/// Runs `config` into `out`. Sweeps fan out into `out/<name>/` and the
/// top-level report lists their outcomes in name order.
pub fn dispatch(config: &RunConfig, out: &Path) -> Outcome {
    if config.sweeps.is_empty() {
        return run_single(config, out);
    }
    let started = Instant::now();
    let mut results: Vec<(String, Result<Outcome, String>)> = config
        .sweeps
        .par_iter()
        .map(|sweep| {
            let outcome = sweep_instance(config, sweep)
                .map_err(|e| e.to_string())
                .map(|c| run_single(&c, &out.join(&sweep.name)));
            (sweep.name.clone(), outcome)
        })
        .collect();
    results.sort_by(|a, b| a.0.cmp(&b.0));
    let sweeps: Vec<Value> = results
        .into_iter()
        .map(|(name, r)| match r {
            Ok(o) => json!({ "name": name, "exit_code": o.code }),
            Err(e) => json!({ "name": name, "exit_code": Failure::Config as i32, "error": e }),
        })
        .collect();
    let mut body = Map::new();
    body.insert("sweeps".into(), Value::Array(sweeps));
    finish(config, out, body, started)
}

fn run_single(config: &RunConfig, out: &Path) -> Outcome {
    let started = Instant::now();
    let body = std::fs::create_dir_all(out)
        .map_err(Error::from)
        .and_then(|_| match config.command {
            Command::CheckPhi => check_phi(config),
            Command::TransformTable => transform_table(config, out),
            Command::Simulate => simulate(config, out),
            Command::Control => control(config, out),
            Command::Pipeline => pipeline(config, out),
        });
    let body = body.unwrap_or_else(|e| {
        log::error!("{e}");
        error_body(&e)
    });
    finish(config, out, body, started)
}

fn finish(config: &RunConfig, out: &Path, body: Map<String, Value>, started: Instant) -> Outcome {
    let mut report = Map::new();
    report.insert("command".into(), json!(config.command.name()));
    report.insert("config".into(), json!(config.echo()));
    report.extend(body);
    report.insert(
        "timestamp".into(),
        json!({
            "iso8601": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            "elapsed_seconds": started.elapsed().as_secs_f64(),
        }),
    );
    let mut report = Value::Object(report);
    let code = exit_code(&report);
    report["exit_code"] = json!(code);
    let written = std::fs::create_dir_all(out).and_then(|_| {
        let text = serde_json::to_string_pretty(&report).map_err(std::io::Error::other)?;
        std::fs::write(out.join("report.json"), text + "\n")
    });
    if let Err(e) = written {
        log::error!("cannot write report into {}: {e}", out.display());
        return Outcome {
            report,
            code: Failure::Config as i32,
        };
    }
    Outcome { report, code }
}

fn error_body(e: &Error) -> Map<String, Value> {
    let class = Failure::classify(e);
    let mut error = json!({ "class": class.label(), "message": e.to_string() });
    match e {
        Error::BlowUp { step, last_finite } => {
            error["step"] = json!(step);
            error["last_finite"] = json!(last_finite);
        }
        Error::Convergence { best, .. } | Error::Iteration { best, .. } => {
            error["best"] = Value::Object(control_summary(best));
        }
        _ => {}
    }
    let mut body = Map::new();
    body.insert("error".into(), error);
    body
}

fn to_map<T: Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    }
}

pub fn build_spec(config: &RunConfig) -> colehopf_core::Result<NonlinearitySpec> {
    let spec = match &config.phi.choice {
        PhiChoice::Exp => NonlinearitySpec::exp(),
        PhiChoice::OddPower { k } => NonlinearitySpec::odd_power(*k),
        PhiChoice::Polynomial { coeffs } => NonlinearitySpec::polynomial(coeffs.clone())?,
        PhiChoice::Tabulated { table } => NonlinearitySpec::from_csv(table)?,
    };
    spec.with_scan_range(Interval::new(config.phi.scan_min, config.phi.scan_max)?)
}

fn build_grid(config: &RunConfig) -> colehopf_core::Result<(Arc<SpaceGrid>, TimeGrid)> {
    let g = &config.grid;
    let omega = g
        .omega
        .iter()
        .map(|&(lo, hi)| Interval::new(lo, hi))
        .collect::<colehopf_core::Result<Vec<_>>>()?;
    let space = SpaceGrid::with_regions(Interval::new(g.a, g.b)?, g.n_interior, omega)?;
    Ok((Arc::new(space), TimeGrid::new(config.time.t_final, config.time.n_steps)?))
}

fn settings(config: &RunConfig) -> PipelineSettings {
    let c = &config.control;
    PipelineSettings {
        theta: config.time.theta,
        penalty_schedule: c.penalties.clone(),
        max_cg_iters: c.max_cg_iters,
        cg_tolerance: c.cg_tolerance,
        quad_tolerance: config.transform.quad_tolerance,
        sample_count: config.phi.sample_count,
        bridge_tolerance: c.bridge_tolerance,
        hull_margin: c.hull_margin,
    }
}

struct Fields {
    stepper: HeatStepper,
    y0: Field,
    yd: Field,
}

/// Samples `y0` and `yd`; `evolve(...)` runs the uncontrolled nonlinear
/// solve on the configured grid.
fn realize_fields(config: &RunConfig, spec: &NonlinearitySpec) -> colehopf_core::Result<Fields> {
    let (grid, time) = build_grid(config)?;
    let stepper = HeatStepper::new(grid.clone(), time, config.time.theta)?;
    let evolve = |datum: Field| {
        let idle = vec![Field::zeros(grid.clone()); time.n_steps()];
        Ok(solve_nonlinear_y(&datum, &idle, spec, &stepper)?.terminal().clone())
    };
    let y0 = config.fields.y0.realize(&grid, |_| unreachable!("rejected by the parser"))?;
    let yd = config.fields.yd.realize(&grid, evolve)?;
    Ok(Fields { stepper, y0, yd })
}

fn check_phi(config: &RunConfig) -> colehopf_core::Result<Map<String, Value>> {
    let spec = build_spec(config)?;
    let verdict = spec.check_condition_h(config.phi.sample_count)?;
    log::info!("condition (H): admissible = {}, alpha = {}", verdict.admissible, verdict.alpha);
    let mut body = Map::new();
    body.insert("phi".into(), json!(spec.kind()));
    body.insert("scan_range".into(), json!(spec.scan_range()));
    body.insert("verdict".into(), json!(verdict));
    Ok(body)
}

fn admissible(spec: &NonlinearitySpec, config: &RunConfig) -> colehopf_core::Result<f64> {
    let verdict = spec.check_condition_h(config.phi.sample_count)?;
    if !verdict.admissible {
        return Err(Error::Admissibility(verdict.reason));
    }
    Ok(verdict.alpha)
}

fn transform_table(config: &RunConfig, out: &Path) -> colehopf_core::Result<Map<String, Value>> {
    let spec = build_spec(config)?;
    let alpha = admissible(&spec, config)?;
    let t = &config.transform;
    let table = TransformTable::build(&spec, alpha, Interval::new(t.hull_min, t.hull_max)?, t.quad_tolerance)?;
    table.write_csv(&out.join("table.csv"))?;
    let mut worst_round_trip: f64 = 0.0;
    for (&r, &s) in table.nodes().iter().zip(table.values()) {
        worst_round_trip = worst_round_trip.max((table.inverse(s)? - r).abs());
    }
    let min_derivative = table.derivs().iter().copied().fold(f64::INFINITY, f64::min);
    let mut body = Map::new();
    body.insert("phi".into(), json!(spec.kind()));
    body.insert("alpha".into(), json!(alpha));
    body.insert("hull".into(), json!(table.hull()));
    body.insert("value_range".into(), json!(table.value_range()));
    body.insert("nodes".into(), json!(table.nodes().len()));
    body.insert("identity".into(), json!(table.is_identity()));
    body.insert("min_derivative".into(), json!(min_derivative));
    body.insert("derivative_floor".into(), json!(alpha.exp()));
    body.insert("max_round_trip_error".into(), json!(worst_round_trip));
    Ok(body)
}

fn simulate(config: &RunConfig, out: &Path) -> colehopf_core::Result<Map<String, Value>> {
    let spec = build_spec(config)?;
    let Fields { stepper, y0, .. } = realize_fields(config, &spec)?;
    let grid = stepper.grid().clone();
    let u = config.fields.u.realize(&grid, |_| unreachable!("rejected by the parser"))?.masked();
    let controls = vec![u.clone(); stepper.time().n_steps()];
    let y = solve_nonlinear_y(&y0, &controls, &spec, &stepper)?;

    let mut body = Map::new();
    body.insert("phi".into(), json!(spec.kind()));
    body.insert("initial_l2".into(), json!(y0.l2_norm()));
    body.insert("terminal_l2".into(), json!(y.terminal().l2_norm()));
    body.insert("terminal_linf".into(), json!(y.terminal().linf_norm()));
    body.insert("control_linf".into(), json!(u.linf_norm()));
    body.insert("diagnostics".into(), json!(y.diagnostics()));

    let mut warnings = Vec::new();
    let verdict = spec.check_condition_h(config.phi.sample_count)?;
    if verdict.admissible {
        let peak = y.diagnostics().max_abs.iter().copied().fold(0.0, f64::max);
        let half = (config.control.hull_margin * peak).max(0.5);
        let table = TransformTable::build(&spec, verdict.alpha, Interval::symmetric(half)?, config.transform.quad_tolerance)?;
        let z0 = y0.apply_pointwise(|r| table.forward(r))?;
        let z = solve_semilinear_z(&z0, &controls, &table, &stepper)?;
        let bridged = y.map(|r| table.forward(r))?;
        body.insert("alpha".into(), json!(verdict.alpha));
        body.insert("bridge_discrepancy".into(), json!(bridged.max_l2_gap(&z)));
        body.insert("z_diagnostics".into(), json!(z.diagnostics()));
        if config.io.dump_trajectories {
            z.write_csv(&out.join("z_route.csv"))?;
        }
    } else {
        warnings.push(format!("nonlinearity not admissible, bridge check skipped: {}", verdict.reason));
    }
    body.insert("warnings".into(), json!(warnings));
    if config.io.dump_trajectories {
        y.write_csv(&out.join("y_nonlinear.csv"))?;
    }
    Ok(body)
}

fn control_summary(r: &ControlResult) -> Map<String, Value> {
    let mut body = Map::new();
    body.insert("terminal_error".into(), json!(r.terminal_error));
    body.insert("control_l2".into(), json!(r.control_l2));
    body.insert("control_linf".into(), json!(r.control_linf));
    body.insert("achieved_penalty".into(), json!(r.achieved_penalty));
    body.insert("converged".into(), json!(r.converged));
    body.insert("ill_posed".into(), json!(r.ill_posed));
    body.insert("synthesis_log".into(), json!(r.stages));
    body
}

/// Pure heat-equation control, no transform involved.
fn control(config: &RunConfig, out: &Path) -> colehopf_core::Result<Map<String, Value>> {
    let spec = build_spec(config)?;
    let Fields { stepper, y0, yd } = realize_fields(config, &spec)?;
    let grid = stepper.grid().clone();
    let (initial, target) = match config.mode {
        Mode::Distributed => (y0, yd),
        Mode::Null => (y0, Field::zeros(grid.clone())),
        Mode::Initial => (Field::zeros(grid.clone()), yd),
    };
    let mut problem = ControlProblem::new(initial.clone(), target, config.control.epsilon);
    problem.penalty_schedule = config.control.penalties.clone();
    problem.max_cg_iters = config.control.max_cg_iters;
    problem.cg_tolerance = config.control.cg_tolerance;
    let outcome = match config.mode {
        Mode::Initial => synthesize_initial(&problem, &stepper),
        _ => synthesize_distributed(&problem, &stepper),
    };
    let result = match outcome {
        Ok(r) => r,
        Err(Error::Convergence { best, .. }) | Err(Error::Iteration { best, .. }) => *best,
        Err(e) => return Err(e),
    };
    let mut body = control_summary(&result);
    body.insert("mode".into(), json!(config.mode.name()));
    body.insert("tolerance".into(), json!(config.control.epsilon));
    if config.io.dump_control {
        result.write_csv(&out.join("control.csv"), stepper.time())?;
    }
    if config.io.dump_trajectories {
        let traj = match result.control.distributed() {
            Some(v) => solve_heat(&initial, v, &stepper)?,
            None => solve_heat_free(result.control.initial().expect("initial control"), &stepper)?,
        };
        traj.write_csv(&out.join("state.csv"))?;
    }
    Ok(body)
}

fn dump_run(config: &RunConfig, run: &PipelineRun, out: &Path) -> colehopf_core::Result<()> {
    let time = *run.z_trajectory.time();
    if config.io.dump_trajectories {
        let dumps: [(&str, &Trajectory); 3] = [
            ("z_trajectory.csv", &run.z_trajectory),
            ("y_linear.csv", &run.y_linear),
            ("y_nonlinear.csv", &run.y_nonlinear),
        ];
        for (name, traj) in dumps {
            traj.write_csv(&out.join(name))?;
        }
    }
    if config.io.dump_control {
        write_long_csv(&out.join("heat_control.csv"), "v", &run.heat_control, |k| time.t(k))?;
        write_long_csv(&out.join("control.csv"), "u", &run.control, |k| time.t(k))?;
    }
    if config.io.dump_table {
        run.table.write_csv(&out.join("table.csv"))?;
    }
    Ok(())
}

fn pipeline(config: &RunConfig, out: &Path) -> colehopf_core::Result<Map<String, Value>> {
    let spec = build_spec(config)?;
    let settings = settings(config);
    let Fields { stepper, y0, yd } = realize_fields(config, &spec)?;
    let time = *stepper.time();
    let eps = config.control.epsilon;
    match config.mode {
        Mode::Distributed | Mode::Initial => {
            let run = if config.mode == Mode::Distributed {
                run_theorem1(&y0, &yd, eps, &spec, time, &settings)?
            } else {
                run_theorem3(&yd, eps, &spec, time, &settings)?
            };
            dump_run(config, &run, out)?;
            for w in &run.report.warnings {
                log::warn!("{w}");
            }
            Ok(to_map(&run.report))
        }
        Mode::Null => {
            let runs = run_null(&y0, &spec, &config.control.deltas, time, &settings)?;
            for (run, delta) in runs.iter().zip(&config.control.deltas) {
                let io = &config.io;
                if io.dump_trajectories || io.dump_control || io.dump_table {
                    let dir = out.join(format!("delta_{delta}"));
                    std::fs::create_dir_all(&dir)?;
                    dump_run(config, run, &dir)?;
                }
            }
            let achieved: Vec<f64> = runs.iter().map(|r| r.report.nonlinear_terminal_error).collect();
            let mut body = Map::new();
            body.insert("mode".into(), json!("null"));
            body.insert("deltas".into(), json!(config.control.deltas));
            body.insert("achieved_terminal_l2".into(), json!(achieved));
            body.insert("non_increasing".into(), json!(achieved.windows(2).all(|w| w[1] <= w[0])));
            body.insert("initial_l2".into(), json!(y0.l2_norm()));
            body.insert("runs".into(), json!(runs.iter().map(|r| &r.report).collect::<Vec<_>>()));
            Ok(body)
        }
    }
}
