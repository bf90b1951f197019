//! Tabulated Cole–Hopf transform `φ̂(r) = ∫₀ʳ exp(Φ(v)) dv`.
//!
//! Nodes are placed adaptively so that 10-point Gauss–Legendre on every
//! panel meets the requested tolerance. Evaluation between nodes
//! re-integrates from the nearest node; `φ̂′ = exp(Φ)` is evaluated
//! analytically. Tolerances are mixed: absolute for `|φ̂| ≤ 1` and relative
//! above, since φ̂ grows super-exponentially for some φ.

use std::io::Write;
use std::path::Path;

use crate::nonlinearity::NonlinearitySpec;
use crate::quadrature::GaussLegendre;
use crate::{Error, Interval, Result};

pub const DEFAULT_QUAD_TOLERANCE: f64 = 1e-10;
/// Newton iteration cap in [`TransformTable::inverse`].
pub const INVERSE_MAX_ITERS: usize = 100;

const INITIAL_PANEL_WIDTH: f64 = 0.25;
const MAX_PANELS: usize = 1_000_000;
const MIN_PANEL_WIDTH: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct TransformTable {
    spec: NonlinearitySpec,
    alpha: f64,
    nodes: Vec<f64>,
    values: Vec<f64>,
    derivs: Vec<f64>,
    quad_tolerance: f64,
    hull: Interval,
    identity: bool,
}

impl TransformTable {
    /// Tabulates φ̂ on `hull`. The spec must satisfy `Φ ≥ alpha` there.
    pub fn build(
        spec: &NonlinearitySpec,
        alpha: f64,
        hull: Interval,
        quad_tolerance: f64,
    ) -> Result<Self> {
        if !hull.contains(0.0) {
            return Err(Error::InvalidInput(format!(
                "transform hull [{}, {}] must contain 0",
                hull.lo, hull.hi
            )));
        }
        if !(alpha <= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("alpha must be finite and <= 0, got {alpha}")));
        }
        if !(quad_tolerance > 0.0) {
            return Err(Error::InvalidInput("quad_tolerance must be positive".into()));
        }
        if let Some(sample_hull) = spec.sample_hull() {
            for end in [hull.lo, hull.hi] {
                if !sample_hull.contains(end) {
                    return Err(Error::Domain {
                        what: "transform hull vs tabulated φ",
                        value: end,
                        lo: sample_hull.lo,
                        hi: sample_hull.hi,
                    });
                }
            }
        }

        let identity = spec.is_identically_zero();
        let mut left = Vec::new();
        let mut right = Vec::new();
        if !identity {
            panels_from_zero(spec, hull.lo, quad_tolerance, &mut left)?;
            panels_from_zero(spec, hull.hi, quad_tolerance, &mut right)?;
        }

        // Assemble nodes left to right: [hull.lo, ..., 0, ..., hull.hi].
        let mut nodes = Vec::with_capacity(left.len() + right.len() + 1);
        let mut values = Vec::with_capacity(nodes.capacity());
        let mut acc = 0.0;
        let mut left_pairs = Vec::with_capacity(left.len());
        for &(end, integral) in &left {
            acc += integral;
            left_pairs.push((end, acc));
        }
        for &(r, v) in left_pairs.iter().rev() {
            nodes.push(r);
            values.push(v);
        }
        nodes.push(0.0);
        values.push(0.0);
        acc = 0.0;
        for &(end, integral) in &right {
            acc += integral;
            nodes.push(end);
            values.push(acc);
        }
        if identity {
            nodes = vec![hull.lo, 0.0, hull.hi];
            nodes.dedup();
            values = nodes.clone();
        }

        let derivs = nodes
            .iter()
            .map(|&r| spec.antiderivative(r).map(f64::exp))
            .collect::<Result<Vec<_>>>()?;
        let floor = alpha.exp();
        if let Some((i, d)) = derivs.iter().enumerate().find(|(_, &d)| d < floor * (1.0 - 1e-14)) {
            return Err(Error::Admissibility(format!(
                "φ̂′({}) = {d} is below exp(alpha) = {floor}",
                nodes[i]
            )));
        }

        Ok(Self {
            spec: spec.clone(),
            alpha,
            nodes,
            values,
            derivs,
            quad_tolerance,
            hull,
            identity,
        })
    }

    /// Smallest table whose transformed hull covers `[-s_bound, s_bound]`,
    /// starting from `[-r_bound, r_bound]` and doubling outward as needed.
    pub fn covering(
        spec: &NonlinearitySpec,
        alpha: f64,
        r_bound: f64,
        s_bound: f64,
        quad_tolerance: f64,
    ) -> Result<Self> {
        let mut lo = -r_bound.abs();
        let mut hi = r_bound.abs();
        for _ in 0..64 {
            let table = Self::build(spec, alpha, Interval::new(lo, hi)?, quad_tolerance)?;
            let range = table.value_range();
            let lo_ok = range.lo <= -s_bound.abs();
            let hi_ok = range.hi >= s_bound.abs();
            if lo_ok && hi_ok {
                return Ok(table);
            }
            if !lo_ok {
                lo *= 2.0;
            }
            if !hi_ok {
                hi *= 2.0;
            }
            if let Some(sample_hull) = spec.sample_hull() {
                lo = lo.max(sample_hull.lo);
                hi = hi.min(sample_hull.hi);
            }
        }
        Err(Error::Domain {
            what: "transform range cannot cover value",
            value: s_bound,
            lo,
            hi,
        })
    }

    pub fn spec(&self) -> &NonlinearitySpec {
        &self.spec
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn hull(&self) -> Interval {
        self.hull
    }

    pub fn quad_tolerance(&self) -> f64 {
        self.quad_tolerance
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn derivs(&self) -> &[f64] {
        &self.derivs
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// `[φ̂(hull.lo), φ̂(hull.hi)]`.
    pub fn value_range(&self) -> Interval {
        Interval {
            lo: self.values[0],
            hi: self.values[self.values.len() - 1],
        }
    }

    fn check_hull(&self, r: f64) -> Result<()> {
        if self.hull.contains(r) {
            Ok(())
        } else {
            Err(Error::Domain {
                what: "transform hull",
                value: r,
                lo: self.hull.lo,
                hi: self.hull.hi,
            })
        }
    }

    fn integrand(&self, v: f64) -> f64 {
        // Inside the hull, which the build already checked against the spec.
        self.spec.antiderivative(v).map(f64::exp).unwrap_or(f64::NAN)
    }

    /// `φ̂(r)`, re-integrated from the nearest node.
    pub fn forward(&self, r: f64) -> Result<f64> {
        self.check_hull(r)?;
        if self.identity {
            return Ok(r);
        }
        let i = self.nearest_node(r);
        let base = self.nodes[i];
        if r == base {
            return Ok(self.values[i]);
        }
        let partial = GaussLegendre::standard().integrate(|v| self.integrand(v), base, r);
        Ok(self.values[i] + partial)
    }

    /// `φ̂′(r) = exp(Φ(r))`.
    pub fn derivative(&self, r: f64) -> Result<f64> {
        self.check_hull(r)?;
        Ok(self.spec.antiderivative(r)?.exp())
    }

    /// `φ̂″(r) = φ(r) φ̂′(r)`.
    pub fn second_derivative(&self, r: f64) -> Result<f64> {
        Ok(self.spec.eval_phi(r)? * self.derivative(r)?)
    }

    /// `φ̂⁻¹(s)` by bracketed Newton with bisection fallback.
    pub fn inverse(&self, s: f64) -> Result<f64> {
        let range = self.value_range();
        if !range.contains(s) {
            return Err(Error::Domain {
                what: "transformed hull",
                value: s,
                lo: range.lo,
                hi: range.hi,
            });
        }
        if self.identity || s == 0.0 {
            return Ok(s);
        }
        let j = self.values.partition_point(|&v| v <= s);
        if j == 0 {
            return Ok(self.nodes[0]);
        }
        if j == self.values.len() {
            return Ok(self.nodes[j - 1]);
        }
        let (mut a, mut b) = (self.nodes[j - 1], self.nodes[j]);
        let (va, vb) = (self.values[j - 1], self.values[j]);
        if s == va {
            return Ok(a);
        }
        let tol = self.quad_tolerance * s.abs().max(1.0);
        let mut r = a + (b - a) * (s - va) / (vb - va);
        for _ in 0..INVERSE_MAX_ITERS {
            let f = self.forward(r)? - s;
            if f.abs() <= tol {
                // One more Newton correction brings the residual to rounding
                // level at negligible cost.
                let polished = r - f / self.derivative(r)?;
                return Ok(if polished >= a && polished <= b { polished } else { r });
            }
            if f < 0.0 {
                a = r;
            } else {
                b = r;
            }
            if b - a <= 4.0 * f64::EPSILON * r.abs().max(1.0) {
                return Ok(r);
            }
            let step = r - f / self.derivative(r)?;
            r = if step > a && step < b { step } else { 0.5 * (a + b) };
        }
        Err(Error::Accuracy {
            tolerance: self.quad_tolerance,
            lo: a,
            hi: b,
        })
    }

    fn nearest_node(&self, r: f64) -> usize {
        let j = self.nodes.partition_point(|&x| x <= r);
        if j == 0 {
            0
        } else if j == self.nodes.len() || r - self.nodes[j - 1] <= self.nodes[j] - r {
            j - 1
        } else {
            j
        }
    }

    /// Dumps `r,varphi,varphi_prime`, one row per node.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "r,varphi,varphi_prime")?;
        for ((r, v), d) in self.nodes.iter().zip(&self.values).zip(&self.derivs) {
            writeln!(out, "{r},{v},{d}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Adaptive panels of `∫ exp(Φ)` from 0 outward to `end`. Each entry is
/// `(panel end, signed panel integral)` in order of increasing distance.
fn panels_from_zero(
    spec: &NonlinearitySpec,
    end: f64,
    tolerance: f64,
    out: &mut Vec<(f64, f64)>,
) -> Result<()> {
    if end == 0.0 {
        return Ok(());
    }
    let rule = GaussLegendre::standard();
    let f = |v: f64| spec.antiderivative(v).map(f64::exp).unwrap_or(f64::NAN);
    let count = (end.abs() / INITIAL_PANEL_WIDTH).ceil().max(1.0) as usize;
    let width = end / count as f64;
    for p in 0..count {
        let a = width * p as f64;
        let b = if p + 1 == count { end } else { width * (p + 1) as f64 };
        // Depth-first split; stack holds pending sub-panels, nearest last.
        let mut stack = vec![(a, b)];
        while let Some((lo, hi)) = stack.pop() {
            let mid = 0.5 * (lo + hi);
            let whole = rule.integrate(f, lo, hi);
            let halves = rule.integrate(f, lo, mid) + rule.integrate(f, mid, hi);
            if !halves.is_finite() {
                return Err(Error::Accuracy { tolerance, lo, hi });
            }
            // Integrand is positive, so per-panel relative error bounds the
            // relative error of every partial sum.
            let err = (whole - halves).abs();
            if err <= 0.1 * tolerance * halves.abs().max((hi - lo).abs()) {
                out.push((hi, halves));
                if out.len() > MAX_PANELS {
                    return Err(Error::Accuracy { tolerance, lo, hi });
                }
            } else if (hi - lo).abs() < MIN_PANEL_WIDTH {
                return Err(Error::Accuracy { tolerance, lo, hi });
            } else {
                stack.push((mid, hi));
                stack.push((lo, mid));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(spec: NonlinearitySpec, alpha: f64, r: f64) -> TransformTable {
        TransformTable::build(&spec, alpha, Interval::symmetric(r).unwrap(), DEFAULT_QUAD_TOLERANCE)
            .unwrap()
    }

    #[test]
    fn zero_phi_is_identity() {
        let t = table(NonlinearitySpec::zero(), 0.0, 3.0);
        for (r, v) in t.nodes().iter().zip(t.values()) {
            assert_eq!(r, v);
        }
        assert_eq!(t.forward(-2.5).unwrap(), -2.5);
        assert_eq!(t.inverse(1.75).unwrap(), 1.75);
        assert_eq!(t.derivative(2.0).unwrap(), 1.0);
    }

    #[test]
    fn zero_node_values() {
        let t = table(NonlinearitySpec::exp(), -1.0, 2.0);
        let i = t.nodes().iter().position(|&r| r == 0.0).unwrap();
        assert_eq!(t.values()[i], 0.0);
        assert_eq!(t.derivs()[i], 1.0);
        assert_eq!(t.forward(0.0).unwrap(), 0.0);
        assert_eq!(t.derivative(0.0).unwrap(), 1.0);
        assert_eq!(t.inverse(0.0).unwrap(), 0.0);
    }

    #[test]
    fn values_strictly_increasing() {
        let t = table(NonlinearitySpec::odd_power(1), 0.0, 3.0);
        assert!(t.values().windows(2).all(|w| w[1] > w[0]));
        assert!(t.derivs().iter().all(|&d| d >= 1.0));
    }

    #[test]
    fn exp_derivative_far_left() {
        let t = table(NonlinearitySpec::exp(), -1.0, 6.0);
        let d = t.derivative(-5.0).unwrap();
        assert!((d - 0.370_366_562_986_003).abs() < 1e-15);
        assert!(d >= (-1f64).exp());
    }

    #[test]
    fn hull_violations_are_errors() {
        let t = table(NonlinearitySpec::exp(), -1.0, 1.0);
        assert!(matches!(t.forward(1.5), Err(Error::Domain { value, .. }) if value == 1.5));
        assert!(t.derivative(-1.01).is_err());
        let top = t.value_range().hi;
        assert!(t.inverse(top * 1.01).is_err());
    }

    #[test]
    fn build_rejects_bad_arguments() {
        let spec = NonlinearitySpec::exp();
        let tol = DEFAULT_QUAD_TOLERANCE;
        assert!(TransformTable::build(&spec, -1.0, Interval::new(0.5, 1.0).unwrap(), tol).is_err());
        assert!(TransformTable::build(&spec, 0.5, Interval::symmetric(1.0).unwrap(), tol).is_err());
        // exp(Φ) dips below e^0 for r < 0.
        assert!(matches!(
            TransformTable::build(&spec, 0.0, Interval::symmetric(1.0).unwrap(), tol),
            Err(Error::Admissibility(_))
        ));
    }

    #[test]
    fn covering_grows_hull() {
        let spec = NonlinearitySpec::odd_power(0);
        let t = TransformTable::covering(&spec, 0.0, 0.5, 10.0, DEFAULT_QUAD_TOLERANCE).unwrap();
        assert!(t.value_range().contains(10.0) && t.value_range().contains(-10.0));
        assert!(t.hull().hi > 0.5);
    }

    #[test]
    fn table_csv_dump() {
        let t = table(NonlinearitySpec::odd_power(0), 0.0, 1.0);
        let path = std::env::temp_dir().join(format!("colehopf-table-{}.csv", std::process::id()));
        t.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("r,varphi,varphi_prime\n"));
        assert_eq!(text.lines().count(), t.nodes().len() + 1);
        std::fs::remove_file(&path).ok();
    }
}
