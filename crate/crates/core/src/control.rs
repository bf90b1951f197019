//! Penalized control synthesis for the heat equation.
//!
//! For each penalty `κ` the quadratic functional
//! `J_κ(v) = ½‖v‖² + (1/2κ)‖L v - d‖²` is minimized by conjugate gradients,
//! where `L` maps the control to its contribution to `z(T)` and
//! `d = target - (free evolution of the initial state)`. The gradient is
//! `v + (1/κ) L*(L v - d)`, with `L*` the exact discrete adjoint computed by
//! the backward sweep of the stepper. Stages run in order of decreasing `κ`
//! and stop at the first one whose minimizer meets the terminal tolerance.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::discretization::{dot, linf, Field, TimeGrid};
use crate::solvers::{solve_heat, HeatStepper};
use crate::{Error, Result};

pub const DEFAULT_PENALTIES: [f64; 4] = [1e-2, 1e-4, 1e-6, 1e-8];
pub const DEFAULT_CG_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_CG_ITERS: usize = 500;

/// Relative slack allowed when checking that `J_κ` decreases.
pub const OBJECTIVE_SLACK: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub initial: Field,
    pub target: Field,
    pub tolerance_z: f64,
    pub penalty_schedule: Vec<f64>,
    pub max_cg_iters: usize,
    pub cg_tolerance: f64,
}

impl ControlProblem {
    pub fn new(initial: Field, target: Field, tolerance_z: f64) -> Self {
        Self {
            initial,
            target,
            tolerance_z,
            penalty_schedule: DEFAULT_PENALTIES.to_vec(),
            max_cg_iters: DEFAULT_MAX_CG_ITERS,
            cg_tolerance: DEFAULT_CG_TOLERANCE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance_z > 0.0) {
            return Err(Error::InvalidInput("tolerance_z must be positive".into()));
        }
        if self.penalty_schedule.is_empty()
            || self.penalty_schedule.iter().any(|&k| !(k > 0.0 && k.is_finite()))
            || self.penalty_schedule.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::InvalidInput(
                "penalty schedule must be positive and strictly decreasing".into(),
            ));
        }
        if self.max_cg_iters == 0 || !(self.cg_tolerance > 0.0) {
            return Err(Error::InvalidInput("CG settings must be positive".into()));
        }
        if !self.initial.same_grid(&self.target) {
            return Err(Error::InvalidInput("initial and target are on different grids".into()));
        }
        Ok(())
    }
}

/// The synthesized control.
#[derive(Debug, Clone)]
pub enum Control {
    /// One slice per time step, piecewise constant in time, zero outside ω.
    Distributed(Vec<Field>),
    /// Initial datum of the heat equation.
    Initial(Field),
}

impl Control {
    pub fn distributed(&self) -> Option<&[Field]> {
        match self {
            Control::Distributed(v) => Some(v),
            Control::Initial(_) => None,
        }
    }

    pub fn initial(&self) -> Option<&Field> {
        match self {
            Control::Initial(v) => Some(v),
            Control::Distributed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageLog {
    pub kappa: f64,
    pub iters: usize,
    pub terminal_error: f64,
    pub control_l2: f64,
    pub control_linf: f64,
    pub cg_converged: bool,
    /// Relative CG residual after each iteration (index 0 = start).
    pub residuals: Vec<f64>,
    /// `J_κ` after each iteration (index 0 = start).
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ControlResult {
    pub control: Control,
    pub terminal_field: Field,
    pub terminal_error: f64,
    pub control_linf: f64,
    pub control_l2: f64,
    pub stages: Vec<StageLog>,
    pub achieved_penalty: f64,
    /// Tolerance met at some stage.
    pub converged: bool,
    /// The terminal error stopped improving across stages, or CG stalled:
    /// the target is out of practical reach.
    pub ill_posed: bool,
}

impl ControlResult {
    /// Residual history per stage.
    pub fn cg_history(&self) -> Vec<&[f64]> {
        self.stages.iter().map(|s| s.residuals.as_slice()).collect()
    }

    /// Long-format `t,x,v`; the initial-datum control is written at `t = 0`.
    pub fn write_csv(&self, path: &Path, time: &TimeGrid) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "t,x,v")?;
        let slices: Vec<(f64, &Field)> = match &self.control {
            Control::Distributed(v) => v.iter().enumerate().map(|(k, f)| (time.t(k), f)).collect(),
            Control::Initial(f) => vec![(0.0, f)],
        };
        for (t, f) in slices {
            for (x, v) in f.grid().xs().zip(f.values()) {
                writeln!(out, "{t},{x},{v}")?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Linear control-to-terminal-state map and its adjoint, in a weighted
/// Euclidean space (`⟨a, b⟩ = weight · Σ a_i b_i`).
pub trait ControlOperator {
    fn dim(&self) -> usize;
    fn weight(&self) -> f64;
    /// Terminal contribution `L v` (free evolution excluded).
    fn apply(&self, v: &[f64]) -> Vec<f64>;
    /// `L* e` with respect to the weighted inner products.
    fn adjoint(&self, e: &[f64]) -> Vec<f64>;
}

/// Source `v χ_ω` acting on every time step.
pub struct DistributedOperator<'a> {
    stepper: &'a HeatStepper,
}

impl<'a> DistributedOperator<'a> {
    pub fn new(stepper: &'a HeatStepper) -> Self {
        Self { stepper }
    }

    fn n(&self) -> usize {
        self.stepper.grid().n_interior()
    }
}

impl ControlOperator for DistributedOperator<'_> {
    fn dim(&self) -> usize {
        self.n() * self.stepper.time().n_steps()
    }

    fn weight(&self) -> f64 {
        self.stepper.time().dt() * self.stepper.grid().h()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        let zero = vec![0.0; n];
        self.stepper.propagate(&zero, |k| Some(&v[k * n..(k + 1) * n]))
    }

    fn adjoint(&self, e: &[f64]) -> Vec<f64> {
        // ⟨e, L v⟩_h = Σ_k dt h ⟨q_k, v_k⟩ with q_k from the backward sweep,
        // so the weighted adjoint is χ_ω q_k.
        let n = self.n();
        let mask = self.stepper.grid().mask();
        let mut out = vec![0.0; self.dim()];
        self.stepper.adjoint_sweep(e, |k, q| {
            for ((o, qi), m) in out[k * n..(k + 1) * n].iter_mut().zip(q).zip(mask) {
                *o = qi * m;
            }
        });
        out
    }
}

/// Initial datum `v` evolved freely to `T`.
pub struct InitialOperator<'a> {
    stepper: &'a HeatStepper,
}

impl<'a> InitialOperator<'a> {
    pub fn new(stepper: &'a HeatStepper) -> Self {
        Self { stepper }
    }
}

impl ControlOperator for InitialOperator<'_> {
    fn dim(&self) -> usize {
        self.stepper.grid().n_interior()
    }

    fn weight(&self) -> f64 {
        self.stepper.grid().h()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.stepper.propagate(v, |_| None)
    }

    fn adjoint(&self, e: &[f64]) -> Vec<f64> {
        self.stepper.adjoint_sweep(e, |_, _| {})
    }
}

/// `J_κ(v) = ½⟨v, v⟩ + (1/2κ)‖miss‖²` with `miss = L v - d`.
pub fn objective(weight: f64, h: f64, kappa: f64, v: &[f64], miss: &[f64]) -> f64 {
    0.5 * weight * dot(v, v) + 0.5 / kappa * h * dot(miss, miss)
}

/// Gradient `v + (1/κ) L*(L v - d)` of `J_κ`.
pub fn gradient<O: ControlOperator>(op: &O, kappa: f64, v: &[f64], d: &[f64]) -> Vec<f64> {
    let miss: Vec<f64> = op.apply(v).iter().zip(d).map(|(a, b)| a - b).collect();
    let adj = op.adjoint(&miss);
    v.iter().zip(&adj).map(|(vi, ai)| vi + ai / kappa).collect()
}

struct Stage {
    v: Vec<f64>,
    log: StageLog,
}

/// CG on `(I + L*L/κ) v = L* d / κ`, warm-started from `v0`.
fn cg_stage<O: ControlOperator>(
    op: &O,
    h: f64,
    kappa: f64,
    d: &[f64],
    v0: Vec<f64>,
    max_iters: usize,
    tolerance: f64,
) -> Stage {
    let w = op.weight();
    let mut v = v0;
    let mut lv = op.apply(&v);
    let rhs: Vec<f64> = op.adjoint(d).iter().map(|a| a / kappa).collect();
    let rhs_norm = dot(&rhs, &rhs).sqrt();
    let mut miss: Vec<f64> = lv.iter().zip(d).map(|(a, b)| a - b).collect();
    let adj = op.adjoint(&miss);
    let mut r: Vec<f64> = v.iter().zip(&adj).map(|(vi, ai)| -(vi + ai / kappa)).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let scale = if rhs_norm > 0.0 { rhs_norm } else { 1.0 };
    let mut residuals = vec![rr.sqrt() / scale];
    let mut objective_hist = vec![objective(w, h, kappa, &v, &miss)];
    let mut converged = rr.sqrt() <= tolerance * scale || rr == 0.0;
    let mut iters = 0;
    while !converged && iters < max_iters {
        let lp = op.apply(&p);
        let adj = op.adjoint(&lp);
        let ap: Vec<f64> = p.iter().zip(&adj).map(|(pi, ai)| pi + ai / kappa).collect();
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let step = rr / pap;
        for (vi, pi) in v.iter_mut().zip(&p) {
            *vi += step * pi;
        }
        for (li, lpi) in lv.iter_mut().zip(&lp) {
            *li += step * lpi;
        }
        for (ri, api) in r.iter_mut().zip(&ap) {
            *ri -= step * api;
        }
        for ((mi, li), di) in miss.iter_mut().zip(&lv).zip(d) {
            *mi = li - di;
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        iters += 1;
        residuals.push(rr.sqrt() / scale);
        objective_hist.push(objective(w, h, kappa, &v, &miss));
        converged = rr.sqrt() <= tolerance * scale;
    }
    Stage {
        v,
        log: StageLog {
            kappa,
            iters,
            terminal_error: f64::NAN,
            control_l2: 0.0,
            control_linf: 0.0,
            cg_converged: converged,
            residuals,
            objective: objective_hist,
        },
    }
}

/// Shared penalty-stage driver. `finish` turns a raw control vector into
/// `(control, terminal field)` by an independent forward solve.
fn run_schedule<O, F>(
    op: &O,
    problem: &ControlProblem,
    free_terminal: &[f64],
    mut finish: F,
) -> Result<ControlResult>
where
    O: ControlOperator,
    F: FnMut(&[f64]) -> Result<(Control, Field)>,
{
    problem.validate()?;
    let h = problem.target.grid().h();
    let d: Vec<f64> = problem
        .target
        .values()
        .iter()
        .zip(free_terminal)
        .map(|(t, f)| t - f)
        .collect();
    let mut v = vec![0.0; op.dim()];
    let mut stages: Vec<StageLog> = Vec::new();
    let mut best: Option<ControlResult> = None;
    for &kappa in &problem.penalty_schedule {
        let stage = cg_stage(op, h, kappa, &d, v, problem.max_cg_iters, problem.cg_tolerance);
        v = stage.v;
        let (control, terminal_field) = finish(&v)?;
        let terminal_error = terminal_field.sub(&problem.target).l2_norm();
        let mut log = stage.log;
        log.terminal_error = terminal_error;
        log.control_l2 = (op.weight() * dot(&v, &v)).sqrt();
        log.control_linf = linf(&v);
        log::debug!(
            "stage kappa={kappa:e} iters={} terminal_error={terminal_error:e}",
            log.iters
        );
        let cg_converged = log.cg_converged;
        let iters = log.iters;
        let plateau = stages
            .last()
            .is_some_and(|prev| terminal_error >= 0.9 * prev.terminal_error);
        stages.push(log);
        let met = terminal_error <= problem.tolerance_z;
        let result = ControlResult {
            control,
            terminal_field,
            terminal_error,
            control_linf: linf(&v),
            control_l2: (op.weight() * dot(&v, &v)).sqrt(),
            stages: stages.clone(),
            achieved_penalty: kappa,
            converged: met,
            ill_posed: false,
        };
        if met {
            return Ok(result);
        }
        let improves = best.as_ref().is_none_or(|b| result.terminal_error <= b.terminal_error);
        if !cg_converged {
            let mut best = if improves { result } else { best.unwrap() };
            best.stages = stages;
            best.ill_posed = true;
            return Err(Error::Iteration {
                best: Box::new(best),
                kappa,
                iters,
            });
        }
        best = Some(if improves { result } else { best.unwrap() });
        if plateau {
            best.as_mut().unwrap().ill_posed = true;
        }
    }
    let mut best = best.expect("schedule is nonempty");
    best.stages = stages;
    Err(Error::Convergence {
        tolerance: problem.tolerance_z,
        best: Box::new(best),
    })
}

/// Distributed control of `z_t - Δz = v χ_ω` from `problem.initial`.
pub fn synthesize_distributed(problem: &ControlProblem, stepper: &HeatStepper) -> Result<ControlResult> {
    if problem.initial.grid().as_ref() != stepper.grid().as_ref() {
        return Err(Error::InvalidInput("problem is not on the stepper's grid".into()));
    }
    let op = DistributedOperator::new(stepper);
    let free = stepper.propagate(problem.initial.values(), |_| None);
    let grid = stepper.grid().clone();
    let n = grid.n_interior();
    let n_steps = stepper.time().n_steps();
    run_schedule(&op, problem, &free, |v| {
        let slices: Vec<Field> = (0..n_steps)
            .map(|k| Field::new(grid.clone(), v[k * n..(k + 1) * n].to_vec()))
            .collect::<Result<_>>()?;
        let traj = solve_heat(&problem.initial, &slices, stepper)?;
        let terminal = traj.terminal().clone();
        Ok((Control::Distributed(slices), terminal))
    })
}

/// Initial datum `v` such that the free heat evolution reaches the target.
/// `problem.initial` is ignored.
pub fn synthesize_initial(problem: &ControlProblem, stepper: &HeatStepper) -> Result<ControlResult> {
    if problem.target.grid().as_ref() != stepper.grid().as_ref() {
        return Err(Error::InvalidInput("problem is not on the stepper's grid".into()));
    }
    let op = InitialOperator::new(stepper);
    let free = vec![0.0; stepper.grid().n_interior()];
    let grid = stepper.grid().clone();
    run_schedule(&op, problem, &free, |v| {
        let datum = Field::new(grid.clone(), v.to_vec())?;
        let terminal = Field::new(grid.clone(), stepper.propagate(v, |_| None))?;
        Ok((Control::Initial(datum), terminal))
    })
}
