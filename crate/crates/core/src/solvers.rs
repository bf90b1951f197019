//! Time stepping for the three PDEs and the backward adjoint.
//!
//! Every solver shares the θ-scheme
//! `(I - θ dt Δ) z^{k+1} = (I + (1-θ) dt Δ) z^k + dt f_k`,
//! with the source `f_k` frozen over `[t_k, t_{k+1}]`. For the semilinear
//! and nonlinear problems `f_k` is evaluated explicitly from `z^k` (IMEX).

use std::sync::Arc;

use crate::colehopf::TransformTable;
use crate::discretization::{DirichletMesh, Field, SpaceGrid, TimeGrid, Trajectory};
use crate::nonlinearity::NonlinearitySpec;
use crate::tridiag::Tridiagonal;
use crate::{Error, Result};

/// Factorized θ-scheme for `z_t - Δz = f` with zero Dirichlet data.
#[derive(Debug, Clone)]
pub struct HeatStepper {
    grid: Arc<SpaceGrid>,
    time: TimeGrid,
    theta: f64,
    implicit: Tridiagonal,
}

impl HeatStepper {
    pub fn new(grid: Arc<SpaceGrid>, time: TimeGrid, theta: f64) -> Result<Self> {
        if !(0.5..=1.0).contains(&theta) {
            return Err(Error::InvalidInput(format!("theta must lie in [1/2, 1], got {theta}")));
        }
        let r = time.dt() / (grid.h() * grid.h());
        let implicit = Tridiagonal::new(grid.n_interior(), 1.0 + 2.0 * theta * r, -theta * r);
        Ok(Self {
            grid,
            time,
            theta,
            implicit,
        })
    }

    pub fn grid(&self) -> &Arc<SpaceGrid> {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `out = (I + (1-θ) dt Δ) z`.
    fn apply_explicit(&self, z: &[f64], out: &mut [f64]) {
        let w = (1.0 - self.theta) * self.time.dt();
        if w == 0.0 {
            out.copy_from_slice(z);
            return;
        }
        self.grid.laplacian_into(z, out);
        for (o, zi) in out.iter_mut().zip(z) {
            *o = zi + w * *o;
        }
    }

    /// One forward step in place; `scratch` has the grid's length.
    pub(crate) fn step(&self, z: &mut [f64], source: Option<&[f64]>, scratch: &mut [f64]) {
        self.apply_explicit(z, scratch);
        if let Some(f) = source {
            let dt = self.time.dt();
            for (s, fi) in scratch.iter_mut().zip(f) {
                *s += dt * fi;
            }
        }
        self.implicit.solve_in_place(scratch);
        z.copy_from_slice(scratch);
    }

    /// Terminal state of the linear solve, given a per-step source lookup.
    pub(crate) fn propagate<'a, S>(&self, initial: &[f64], source: S) -> Vec<f64>
    where
        S: Fn(usize) -> Option<&'a [f64]>,
    {
        let mut z = initial.to_vec();
        let mut scratch = vec![0.0; z.len()];
        for k in 0..self.time.n_steps() {
            self.step(&mut z, source(k), &mut scratch);
        }
        z
    }

    /// Backward sweep for the discrete adjoint.
    ///
    /// With `A = I - θ dt Δ` and `B = I + (1-θ) dt Δ`, starting from
    /// `p^N = terminal`, computes `q_k = A⁻¹ p^{k+1}` and `p^k = B q_k`.
    /// `visit(k, q_k)` is called for `k = N-1, ..., 0`; `p^0` is returned.
    /// `q_k` is the exact transpose of the map from the step-`k` source to
    /// the terminal state; `p^0` is the transpose of the free evolution.
    pub(crate) fn adjoint_sweep<V>(&self, terminal: &[f64], mut visit: V) -> Vec<f64>
    where
        V: FnMut(usize, &[f64]),
    {
        let mut p = terminal.to_vec();
        let mut q = vec![0.0; p.len()];
        for k in (0..self.time.n_steps()).rev() {
            q.copy_from_slice(&p);
            self.implicit.solve_in_place(&mut q);
            visit(k, &q);
            self.apply_explicit(&q, &mut p);
        }
        p
    }
}

fn check_same_grid(field: &Field, stepper: &HeatStepper, what: &str) -> Result<()> {
    if field.grid().as_ref() != stepper.grid().as_ref() {
        return Err(Error::InvalidInput(format!("{what} is not on the stepper's grid")));
    }
    Ok(())
}

fn check_controls(control: &[Field], stepper: &HeatStepper) -> Result<()> {
    if control.len() != stepper.time().n_steps() {
        return Err(Error::InvalidInput(format!(
            "control has {} slices, expected {}",
            control.len(),
            stepper.time().n_steps()
        )));
    }
    for (k, slice) in control.iter().enumerate() {
        check_same_grid(slice, stepper, "control slice")?;
        if !slice.vanishes_outside_omega() {
            return Err(Error::InvalidInput(format!("control slice {k} is nonzero outside ω")));
        }
    }
    Ok(())
}

fn check_finite(values: &[f64], step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Stability {
            step,
            reason: "non-finite value in linear solve".into(),
        })
    }
}

/// θ-scheme trajectory of `z_t - Δz = v χ_ω`, `z(0) = initial`.
pub fn solve_heat(initial: &Field, control: &[Field], stepper: &HeatStepper) -> Result<Trajectory> {
    check_same_grid(initial, stepper, "initial state")?;
    check_controls(control, stepper)?;
    let grid = stepper.grid().clone();
    let mut z = initial.values().to_vec();
    let mut scratch = vec![0.0; z.len()];
    let mut snapshots = Vec::with_capacity(control.len() + 1);
    snapshots.push(initial.clone());
    for (k, v) in control.iter().enumerate() {
        stepper.step(&mut z, Some(v.values()), &mut scratch);
        check_finite(&z, k + 1)?;
        snapshots.push(Field::from_raw(grid.clone(), z.clone()));
    }
    Ok(Trajectory::new(*stepper.time(), snapshots, None))
}

/// Heat trajectory without source.
pub fn solve_heat_free(initial: &Field, stepper: &HeatStepper) -> Result<Trajectory> {
    let zero = vec![Field::zeros(stepper.grid().clone()); stepper.time().n_steps()];
    solve_heat(initial, &zero, stepper)
}

/// Backward problem `-p_t - Δp = 0`, `p(T) = terminal`, stored forward-indexed.
pub fn solve_adjoint_heat(terminal: &Field, stepper: &HeatStepper) -> Result<Trajectory> {
    check_same_grid(terminal, stepper, "terminal datum")?;
    let grid = stepper.grid().clone();
    let n = stepper.time().n_steps();
    let mut snapshots = vec![Field::zeros(grid.clone()); n + 1];
    snapshots[n] = terminal.clone();
    let explicit_weight = (1.0 - stepper.theta()) * stepper.time().dt();
    let mut p = vec![0.0; grid.n_interior()];
    let mut error = None;
    stepper.adjoint_sweep(terminal.values(), |k, q| {
        // p^k = B q_k, recomputed here to record every snapshot.
        if explicit_weight == 0.0 {
            p.copy_from_slice(q);
        } else {
            grid.laplacian_into(q, &mut p);
            for (pi, qi) in p.iter_mut().zip(q) {
                *pi = qi + explicit_weight * *pi;
            }
        }
        if error.is_none() {
            error = check_finite(&p, k).err();
        }
        snapshots[k] = Field::from_raw(grid.clone(), p.clone());
    });
    if let Some(e) = error {
        return Err(e);
    }
    Ok(Trajectory::new(*stepper.time(), snapshots, None))
}

/// IMEX solve of the transformed problem
/// `z_t - Δz = u χ_ω φ̂′(φ̂⁻¹(z))`.
pub fn solve_semilinear_z(
    initial: &Field,
    u_control: &[Field],
    table: &TransformTable,
    stepper: &HeatStepper,
) -> Result<Trajectory> {
    check_same_grid(initial, stepper, "initial state")?;
    check_controls(u_control, stepper)?;
    let grid = stepper.grid().clone();
    let dt = stepper.time().dt();
    let range = table.value_range();
    let mut z = initial.values().to_vec();
    let mut scratch = vec![0.0; z.len()];
    let mut source = vec![0.0; z.len()];
    let mut snapshots = Vec::with_capacity(u_control.len() + 1);
    snapshots.push(initial.clone());
    let mut max_rate: f64 = 0.0;
    for (k, u) in u_control.iter().enumerate() {
        if let Some(&bad) = z.iter().find(|&&s| !range.contains(s)) {
            return Err(Error::HullViolation {
                step: k,
                source: Box::new(Error::Domain {
                    what: "transformed hull",
                    value: bad,
                    lo: range.lo,
                    hi: range.hi,
                }),
            });
        }
        for ((f, &zi), &ui) in source.iter_mut().zip(&z).zip(u.values()) {
            *f = if ui == 0.0 {
                0.0
            } else {
                let y = table
                    .inverse(zi)
                    .map_err(|e| Error::HullViolation { step: k, source: Box::new(e) })?;
                // d/dz [u φ̂′(φ̂⁻¹(z))] = u φ(y)
                max_rate = max_rate.max((ui * table.spec().eval_phi(y)?).abs());
                ui * table.derivative(y)?
            };
        }
        if max_rate * dt > 1.0 {
            return Err(Error::Stability {
                step: k,
                reason: format!(
                    "explicit source rate {max_rate:.3e} exceeds 1/dt = {:.3e}",
                    1.0 / dt
                ),
            });
        }
        stepper.step(&mut z, Some(&source), &mut scratch);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Stability {
                step: k + 1,
                reason: "non-finite value in semilinear solve".into(),
            });
        }
        snapshots.push(Field::from_raw(grid.clone(), z.clone()));
    }
    let margin = if max_rate > 0.0 { 1.0 / (max_rate * dt) } else { f64::INFINITY };
    Ok(Trajectory::new(*stepper.time(), snapshots, Some(margin)))
}

/// IMEX solve of `y_t - Δy = |∇y|² φ(y) + u χ_ω`.
///
/// The explicit term is monitored: with advection speed `a = 2|∇y||φ(y)|`
/// and reaction rate `r = |∇y|²|φ′(y)|`, each step must satisfy
/// `dt a² ≤ 2` and `dt r ≤ 1`, otherwise a stability error is raised.
pub fn solve_nonlinear_y(
    initial: &Field,
    u_control: &[Field],
    spec: &NonlinearitySpec,
    stepper: &HeatStepper,
) -> Result<Trajectory> {
    check_same_grid(initial, stepper, "initial state")?;
    check_controls(u_control, stepper)?;
    let grid = stepper.grid().clone();
    let dt = stepper.time().dt();
    let h = grid.h();
    let n = grid.n_interior();
    let mut y = initial.values().to_vec();
    let mut scratch = vec![0.0; n];
    let mut grad_sq = vec![0.0; n];
    let mut source = vec![0.0; n];
    let mut snapshots = Vec::with_capacity(u_control.len() + 1);
    snapshots.push(initial.clone());
    let mut margin = f64::INFINITY;
    for (k, u) in u_control.iter().enumerate() {
        grid.grad_sq_into(&y, &mut grad_sq);
        let mut a_max: f64 = 0.0;
        let mut r_max: f64 = 0.0;
        for i in 0..n {
            let phi = spec.eval_phi(y[i])?;
            source[i] = grad_sq[i] * phi + u.values()[i];
            if phi != 0.0 {
                let slope = spec.eval_phi_slope(y[i])?;
                a_max = a_max.max(2.0 * grad_sq[i].sqrt() * phi.abs());
                r_max = r_max.max(grad_sq[i] * slope.abs());
            }
        }
        let step_margin = (2.0 / (dt * a_max * a_max)).min(1.0 / (dt * r_max));
        margin = margin.min(step_margin);
        if step_margin < 1.0 {
            return Err(Error::Stability {
                step: k,
                reason: format!(
                    "explicit gradient term needs dt <= {:.3e} (dt = {dt:.3e}, h = {h:.3e})",
                    step_margin * dt
                ),
            });
        }
        stepper.step(&mut y, Some(&source), &mut scratch);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                step: k + 1,
                last_finite: snapshots[k].values().to_vec(),
            });
        }
        snapshots.push(Field::from_raw(grid.clone(), y.clone()));
    }
    Ok(Trajectory::new(*stepper.time(), snapshots, Some(margin)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Interval;
    use std::f64::consts::PI;

    fn setup(n: usize, t: f64, steps: usize, theta: f64) -> HeatStepper {
        let grid = Arc::new(
            SpaceGrid::new(Interval::new(0.0, 1.0).unwrap(), n, Interval::new(0.3, 0.7).unwrap())
                .unwrap(),
        );
        HeatStepper::new(grid, TimeGrid::new(t, steps).unwrap(), theta).unwrap()
    }

    #[test]
    fn rejects_bad_theta() {
        let s = setup(5, 1.0, 10, 1.0);
        assert!(HeatStepper::new(s.grid().clone(), *s.time(), 0.4).is_err());
        assert!(HeatStepper::new(s.grid().clone(), *s.time(), 1.1).is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let s = setup(21, 0.1, 20, 0.5);
        let zero = Field::zeros(s.grid().clone());
        let traj = solve_heat_free(&zero, &s).unwrap();
        assert!(traj.snapshots().iter().all(|f| f.linf_norm() == 0.0));
        let adj = solve_adjoint_heat(&zero, &s).unwrap();
        assert!(adj.snapshots().iter().all(|f| f.linf_norm() == 0.0));
    }

    #[test]
    fn unmasked_control_rejected() {
        let s = setup(21, 0.1, 4, 1.0);
        let ones = Field::from_fn(s.grid().clone(), |_| 1.0).unwrap();
        let zero = Field::zeros(s.grid().clone());
        assert!(solve_heat(&zero, &vec![ones; 4], &s).is_err());
        assert!(solve_heat(&zero, &vec![zero.clone(); 3], &s).is_err());
    }

    #[test]
    fn adjoint_of_sine_decays() {
        let s = setup(99, 0.1, 400, 0.5);
        let terminal = Field::from_fn(s.grid().clone(), |x| (PI * x).sin()).unwrap();
        let p = solve_adjoint_heat(&terminal, &s).unwrap();
        for (k, snap) in p.snapshots().iter().enumerate() {
            let t = s.time().t(k);
            let exact = Field::from_fn(s.grid().clone(), |x| {
                (-PI * PI * (0.1 - t)).exp() * (PI * x).sin()
            })
            .unwrap();
            assert!(snap.sub(&exact).linf_norm() < 2e-4, "k = {k}");
        }
        assert_eq!(p.terminal(), &terminal);
    }

    #[test]
    fn maximum_principle_implicit() {
        let s = setup(49, 0.2, 50, 1.0);
        let init = Field::from_fn(s.grid().clone(), |x| if x < 0.5 { 1.0 } else { -0.5 }).unwrap();
        let traj = solve_heat_free(&init, &s).unwrap();
        for snap in traj.snapshots() {
            assert!(snap.linf_norm() <= init.linf_norm() + 1e-12);
        }
    }

    #[test]
    fn crank_nicolson_l2_nonincreasing() {
        let s = setup(49, 0.2, 50, 0.5);
        let init = Field::from_fn(s.grid().clone(), |x| (3.0 * PI * x).sin() + x * (1.0 - x)).unwrap();
        let traj = solve_heat_free(&init, &s).unwrap();
        for w in traj.snapshots().windows(2) {
            assert!(w[1].l2_norm() <= w[0].l2_norm() * (1.0 + 1e-14));
        }
    }

    #[test]
    fn nonlinear_with_zero_phi_matches_heat() {
        let s = setup(31, 0.1, 40, 0.5);
        let init = Field::from_fn(s.grid().clone(), |x| (PI * x).sin()).unwrap();
        let u: Vec<Field> = (0..40)
            .map(|k| Field::from_fn(s.grid().clone(), |x| (k as f64 * 0.1) * x).unwrap().masked())
            .collect();
        let heat = solve_heat(&init, &u, &s).unwrap();
        let y = solve_nonlinear_y(&init, &u, &NonlinearitySpec::zero(), &s).unwrap();
        for (a, b) in heat.snapshots().iter().zip(y.snapshots()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn zero_control_semilinear_matches_heat() {
        let s = setup(31, 0.1, 40, 1.0);
        let init = Field::from_fn(s.grid().clone(), |x| 0.5 * (PI * x).sin()).unwrap();
        let table = TransformTable::build(
            &NonlinearitySpec::exp(),
            -1.0,
            Interval::symmetric(2.0).unwrap(),
            1e-10,
        )
        .unwrap();
        let zero = vec![Field::zeros(s.grid().clone()); 40];
        let z = solve_semilinear_z(&init, &zero, &table, &s).unwrap();
        let heat = solve_heat_free(&init, &s).unwrap();
        for (a, b) in heat.snapshots().iter().zip(z.snapshots()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn semilinear_hull_violation_names_step() {
        let s = setup(11, 0.1, 5, 1.0);
        let table = TransformTable::build(
            &NonlinearitySpec::odd_power(1),
            0.0,
            Interval::symmetric(0.5).unwrap(),
            1e-10,
        )
        .unwrap();
        let init = Field::from_fn(s.grid().clone(), |_| 2.0).unwrap();
        let zero = vec![Field::zeros(s.grid().clone()); 5];
        assert!(matches!(
            solve_semilinear_z(&init, &zero, &table, &s),
            Err(Error::HullViolation { step: 0, .. })
        ));
    }

    #[test]
    fn nonlinear_blow_up_reports_last_finite() {
        // φ = e^s with a huge datum: the explicit monitor trips first.
        let s = setup(21, 1.0, 10, 1.0);
        let init = Field::from_fn(s.grid().clone(), |x| 30.0 * (PI * x).sin()).unwrap();
        let zero = vec![Field::zeros(s.grid().clone()); 10];
        let err = solve_nonlinear_y(&init, &zero, &NonlinearitySpec::exp(), &s).unwrap_err();
        assert!(matches!(err, Error::Stability { step: 0, .. } | Error::BlowUp { .. }));
    }
}
