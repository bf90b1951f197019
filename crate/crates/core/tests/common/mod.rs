//! Test-only oracles, written without touching the crate's numerics.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use colehopf_core::discretization::{SpaceGrid, TimeGrid};
use colehopf_core::solvers::HeatStepper;
use colehopf_core::Interval;

/// Adaptive Simpson with Richardson correction.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
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
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Closed-form Φ for the three reference nonlinearities.
#[derive(Debug, Clone, Copy)]
pub enum Reference {
    Exp,
    Linear,
    Cubic,
}

impl Reference {
    pub fn all() -> [Reference; 3] {
        [Reference::Exp, Reference::Linear, Reference::Cubic]
    }

    pub fn phi(self, s: f64) -> f64 {
        match self {
            Reference::Exp => s.exp(),
            Reference::Linear => s,
            Reference::Cubic => s * s * s,
        }
    }

    pub fn big_phi(self, r: f64) -> f64 {
        match self {
            Reference::Exp => r.exp() - 1.0,
            Reference::Linear => 0.5 * r * r,
            Reference::Cubic => 0.25 * r.powi(4),
        }
    }

    pub fn alpha(self) -> f64 {
        match self {
            Reference::Exp => -1.0,
            _ => 0.0,
        }
    }

    /// `∫₀ʳ exp(Φ)` by adaptive Simpson at relative tolerance 1e-13.
    pub fn varphi(self, r: f64) -> f64 {
        let f = |v: f64| self.big_phi(v).exp();
        let rough = simpson(&f, 0.0, r, 1e-6 * r.abs().max(1e-300));
        simpson(&f, 0.0, r, 1e-13 * rough.abs().max(1e-3))
    }
}

/// `sin(kπx)` decays as `exp(-k²π²t)` under the continuous heat flow on (0,1).
pub fn heat_sine(k: f64, x: f64, t: f64) -> f64 {
    (-(k * PI).powi(2) * t).exp() * (k * PI * x).sin()
}

/// Dense Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (top, bottom) = a.split_at_mut(row);
            for (x, p) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

pub fn unit_grid(n: usize, omega: (f64, f64)) -> Arc<SpaceGrid> {
    Arc::new(
        SpaceGrid::new(
            Interval::new(0.0, 1.0).unwrap(),
            n,
            Interval::new(omega.0, omega.1).unwrap(),
        )
        .unwrap(),
    )
}

pub fn stepper(n: usize, omega: (f64, f64), t: f64, steps: usize, theta: f64) -> HeatStepper {
    HeatStepper::new(unit_grid(n, omega), TimeGrid::new(t, steps).unwrap(), theta).unwrap()
}

pub fn weighted_l2(a: &[f64], b: &[f64], h: f64) -> f64 {
    (h * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).sqrt()
}
