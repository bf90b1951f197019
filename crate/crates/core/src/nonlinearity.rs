//! The nonlinearity φ, its antiderivative `Φ(r) = ∫₀ʳ φ(s) ds`, and the
//! admissibility check `Φ(r) ≥ α` for some `α ≤ 0`.
//!
//! Four kinds are supported. `exp` and `odd_power` have closed forms and an
//! analytic global bound. Polynomials are integrated coefficient-wise and
//! decided by their leading term. Tabulated functions are piecewise linear
//! and only defined on the hull of their samples.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Interval, Result};

pub const DEFAULT_SCAN_RANGE: Interval = Interval { lo: -10.0, hi: 10.0 };
pub const DEFAULT_SAMPLE_COUNT: usize = 10_001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhiKind {
    /// `φ(s) = e^s`
    Exp,
    /// `φ(s) = s^(2k+1)`
    OddPower { k: u32 },
    /// `φ(s) = Σ c_j s^j`, constant coefficient first.
    Polynomial { coeffs: Vec<f64> },
    /// Piecewise-linear interpolant of strictly increasing `(r, φ(r))` samples.
    Tabulated { samples: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonlinearitySpec {
    kind: PhiKind,
    scan_range: Interval,
    /// Tabulated only: `∫_{r_0}^{r_i} φ` at every sample.
    #[serde(skip)]
    prefix: Vec<f64>,
    /// Tabulated only: `∫_{r_0}^{0} φ`.
    #[serde(skip)]
    prefix_at_zero: f64,
}

impl NonlinearitySpec {
    fn analytic(kind: PhiKind) -> Self {
        Self {
            kind,
            scan_range: DEFAULT_SCAN_RANGE,
            prefix: Vec::new(),
            prefix_at_zero: 0.0,
        }
    }

    pub fn exp() -> Self {
        Self::analytic(PhiKind::Exp)
    }

    /// `φ(s) = s^(2k+1)`.
    pub fn odd_power(k: u32) -> Self {
        Self::analytic(PhiKind::OddPower { k })
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidInput("polynomial needs at least one coefficient".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("polynomial coefficients must be finite".into()));
        }
        Ok(Self::analytic(PhiKind::Polynomial { coeffs }))
    }

    /// `φ ≡ 0`, whose transform is the identity.
    pub fn zero() -> Self {
        Self::analytic(PhiKind::Polynomial { coeffs: vec![0.0] })
    }

    pub fn tabulated(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidInput("tabulated φ needs at least 2 samples".into()));
        }
        if samples.iter().any(|(r, p)| !r.is_finite() || !p.is_finite()) {
            return Err(Error::InvalidInput("tabulated samples must be finite".into()));
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidInput(
                "tabulated sample points must be strictly increasing".into(),
            ));
        }
        let (r0, rn) = (samples[0].0, samples[samples.len() - 1].0);
        if !(r0 <= 0.0 && 0.0 <= rn) {
            return Err(Error::InvalidInput(format!(
                "tabulated hull [{r0}, {rn}] must contain 0"
            )));
        }
        let mut prefix = Vec::with_capacity(samples.len());
        let mut acc = 0.0;
        prefix.push(0.0);
        for w in samples.windows(2) {
            acc += 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1);
            prefix.push(acc);
        }
        let mut spec = Self {
            kind: PhiKind::Tabulated { samples },
            scan_range: DEFAULT_SCAN_RANGE,
            prefix,
            prefix_at_zero: 0.0,
        };
        spec.prefix_at_zero = spec.tabulated_prefix(0.0)?;
        Ok(spec)
    }

    /// Reads a two-column CSV with header `r,phi`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "r" || &headers[1] != "phi" {
            return Err(Error::InvalidInput(format!(
                "{}: expected header `r,phi`",
                path.display()
            )));
        }
        let mut samples = Vec::new();
        for record in reader.deserialize::<(f64, f64)>() {
            samples.push(record?);
        }
        Self::tabulated(samples)
    }

    pub fn with_scan_range(mut self, scan_range: Interval) -> Result<Self> {
        if !scan_range.contains(0.0) {
            return Err(Error::InvalidInput(format!(
                "scan range [{}, {}] must contain 0",
                scan_range.lo, scan_range.hi
            )));
        }
        self.scan_range = scan_range;
        Ok(self)
    }

    pub fn kind(&self) -> &PhiKind {
        &self.kind
    }

    pub fn scan_range(&self) -> Interval {
        self.scan_range
    }

    /// Hull of the samples for tabulated kinds, `None` when defined on ℝ.
    pub fn sample_hull(&self) -> Option<Interval> {
        match &self.kind {
            PhiKind::Tabulated { samples } => Some(Interval {
                lo: samples[0].0,
                hi: samples[samples.len() - 1].0,
            }),
            _ => None,
        }
    }

    /// True when φ vanishes identically, so that φ̂ is the identity.
    pub fn is_identically_zero(&self) -> bool {
        match &self.kind {
            PhiKind::Polynomial { coeffs } => coeffs.iter().all(|&c| c == 0.0),
            PhiKind::Tabulated { samples } => samples.iter().all(|&(_, p)| p == 0.0),
            _ => false,
        }
    }

    fn check_hull(&self, r: f64) -> Result<()> {
        if let Some(hull) = self.sample_hull() {
            if !hull.contains(r) {
                return Err(Error::Domain {
                    what: "tabulated φ",
                    value: r,
                    lo: hull.lo,
                    hi: hull.hi,
                });
            }
        }
        Ok(())
    }

    /// Index `i` of the segment `[r_i, r_{i+1}]` containing `r` (inside hull).
    fn segment(samples: &[(f64, f64)], r: f64) -> usize {
        let i = samples.partition_point(|&(x, _)| x <= r);
        i.saturating_sub(1).min(samples.len() - 2)
    }

    fn tabulated_prefix(&self, r: f64) -> Result<f64> {
        self.check_hull(r)?;
        let PhiKind::Tabulated { samples } = &self.kind else {
            unreachable!("tabulated_prefix on analytic kind")
        };
        let i = Self::segment(samples, r);
        let (x0, p0) = samples[i];
        let (x1, p1) = samples[i + 1];
        let t = r - x0;
        let slope = (p1 - p0) / (x1 - x0);
        Ok(self.prefix[i] + t * (p0 + 0.5 * slope * t))
    }

    /// φ(r). Exact for analytic kinds, piecewise-linear for tabulated.
    pub fn eval_phi(&self, r: f64) -> Result<f64> {
        Ok(match &self.kind {
            PhiKind::Exp => r.exp(),
            PhiKind::OddPower { k } => r.powi(2 * *k as i32 + 1),
            PhiKind::Polynomial { coeffs } => horner(coeffs, r),
            PhiKind::Tabulated { samples } => {
                self.check_hull(r)?;
                let i = Self::segment(samples, r);
                let (x0, p0) = samples[i];
                let (x1, p1) = samples[i + 1];
                p0 + (p1 - p0) * (r - x0) / (x1 - x0)
            }
        })
    }

    /// φ′(r); one-sided segment slope for tabulated kinds.
    pub fn eval_phi_slope(&self, r: f64) -> Result<f64> {
        Ok(match &self.kind {
            PhiKind::Exp => r.exp(),
            PhiKind::OddPower { k } => {
                let p = 2 * *k as i32 + 1;
                p as f64 * r.powi(p - 1)
            }
            PhiKind::Polynomial { coeffs } => {
                let deriv: Vec<f64> = coeffs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(j, c)| j as f64 * c)
                    .collect();
                horner(&deriv, r)
            }
            PhiKind::Tabulated { samples } => {
                self.check_hull(r)?;
                let i = Self::segment(samples, r);
                (samples[i + 1].1 - samples[i].1) / (samples[i + 1].0 - samples[i].0)
            }
        })
    }

    /// `Φ(r) = ∫₀ʳ φ(s) ds`, with `Φ(0) = 0` exactly.
    pub fn antiderivative(&self, r: f64) -> Result<f64> {
        if r == 0.0 {
            self.check_hull(r)?;
            return Ok(0.0);
        }
        Ok(match &self.kind {
            PhiKind::Exp => r.exp_m1(),
            PhiKind::OddPower { k } => {
                let p = 2 * *k as i32 + 2;
                r.powi(p) / p as f64
            }
            PhiKind::Polynomial { coeffs } => {
                let integrated: Vec<f64> = std::iter::once(0.0)
                    .chain(coeffs.iter().enumerate().map(|(j, c)| c / (j + 1) as f64))
                    .collect();
                horner(&integrated, r)
            }
            PhiKind::Tabulated { .. } => self.tabulated_prefix(r)? - self.prefix_at_zero,
        })
    }

    /// Decides `Φ(r) ≥ α` for some `α ≤ 0`.
    ///
    /// `exp` and `odd_power` are settled analytically, polynomials by their
    /// leading term plus a search over the real roots of φ. Tabulated specs
    /// are only certified on the part of the scan range inside their hull.
    pub fn check_condition_h(&self, sample_count: usize) -> Result<AdmissibilityVerdict> {
        if sample_count < 3 {
            return Err(Error::InvalidInput(format!(
                "sample_count must be at least 3, got {sample_count}"
            )));
        }
        match &self.kind {
            PhiKind::Exp => Ok(AdmissibilityVerdict {
                admissible: true,
                alpha: -1.0,
                witness_r: self.scan_range.lo,
                certified_on: CertifiedRange::AllReals,
                global_flag: true,
                reason: "Φ(r) = e^r - 1 > -1 for all r".into(),
            }),
            PhiKind::OddPower { .. } => Ok(AdmissibilityVerdict {
                admissible: true,
                alpha: 0.0,
                witness_r: 0.0,
                certified_on: CertifiedRange::AllReals,
                global_flag: true,
                reason: "Φ(r) = r^(2k+2)/(2k+2) ≥ 0".into(),
            }),
            PhiKind::Polynomial { coeffs } => Ok(self.polynomial_verdict(coeffs, sample_count)),
            PhiKind::Tabulated { .. } => self.tabulated_verdict(sample_count),
        }
    }

    fn polynomial_verdict(&self, coeffs: &[f64], sample_count: usize) -> AdmissibilityVerdict {
        let Some(degree) = coeffs.iter().rposition(|&c| c != 0.0) else {
            return AdmissibilityVerdict {
                admissible: true,
                alpha: 0.0,
                witness_r: 0.0,
                certified_on: CertifiedRange::AllReals,
                global_flag: true,
                reason: "φ ≡ 0".into(),
            };
        };
        let lead = coeffs[degree];
        if degree % 2 == 0 || lead < 0.0 {
            // Φ has odd degree, or even degree with negative leading term.
            let (witness_r, alpha) = self.scan_minimum(self.scan_range, sample_count);
            return AdmissibilityVerdict {
                admissible: false,
                alpha,
                witness_r,
                certified_on: CertifiedRange::Range(self.scan_range),
                global_flag: true,
                reason: format!(
                    "Φ is unbounded below: φ has degree {degree} with leading coefficient {lead}"
                ),
            };
        }
        // Outside the Cauchy root bound φ has the sign of r, so Φ attains its
        // minimum inside it.
        let bound = 1.0
            + coeffs[..degree]
                .iter()
                .map(|c| (c / lead).abs())
                .fold(0.0, f64::max);
        let search = Interval { lo: -bound, hi: bound };
        let (mut witness_r, mut alpha) = self.scan_minimum(search, sample_count);
        let xs: Vec<f64> = search.linspace(sample_count).collect();
        for w in xs.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (fa, fb) = (horner(coeffs, a), horner(coeffs, b));
            // Only sign changes from - to + are minima of Φ.
            if fa < 0.0 && fb >= 0.0 {
                let root = bisect(|r| horner(coeffs, r), a, b);
                let value = self.antiderivative(root).unwrap_or(f64::INFINITY);
                if value < alpha {
                    alpha = value;
                    witness_r = root;
                }
            }
        }
        AdmissibilityVerdict {
            admissible: true,
            alpha: alpha.min(0.0),
            witness_r,
            certified_on: CertifiedRange::AllReals,
            global_flag: true,
            reason: format!("φ has odd degree {degree} and positive leading coefficient"),
        }
    }

    fn tabulated_verdict(&self, sample_count: usize) -> Result<AdmissibilityVerdict> {
        let hull = self.sample_hull().expect("tabulated kind has a hull");
        let Some(range) = self.scan_range.intersect(&hull) else {
            return Err(Error::InvalidInput("scan range does not meet the sample hull".into()));
        };
        let (witness_r, alpha) = self.scan_minimum(range, sample_count);
        // A minimum at an edge where Φ still decreases outward means the
        // sampled data cannot rule out Φ → -∞ beyond the range.
        let falls_left = witness_r == range.lo && self.eval_phi(range.lo)? > 0.0;
        let falls_right = witness_r == range.hi && self.eval_phi(range.hi)? < 0.0;
        let diverging = (falls_left || falls_right) && alpha < 0.0;
        Ok(AdmissibilityVerdict {
            admissible: !diverging,
            alpha: alpha.min(0.0),
            witness_r,
            certified_on: CertifiedRange::Range(range),
            global_flag: false,
            reason: if diverging {
                format!("Φ still decreasing at the edge r = {witness_r} of the certified range")
            } else {
                "sampled minimum of Φ on the certified range".into()
            },
        })
    }

    /// `(argmin, min)` of Φ over `sample_count` evenly spaced points, with
    /// `r = 0` always included.
    fn scan_minimum(&self, range: Interval, sample_count: usize) -> (f64, f64) {
        range
            .linspace(sample_count)
            .chain(std::iter::once(0.0).filter(|_| range.contains(0.0)))
            .filter_map(|r| self.antiderivative(r).ok().map(|v| (r, v)))
            .fold((0.0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    }
}

/// Evaluates `Σ c_j x^j`.
fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertifiedRange {
    AllReals,
    Range(Interval),
}

impl CertifiedRange {
    pub fn contains(&self, r: f64) -> bool {
        match self {
            CertifiedRange::AllReals => true,
            CertifiedRange::Range(i) => i.contains(r),
        }
    }
}

/// Outcome of [`NonlinearitySpec::check_condition_h`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityVerdict {
    pub admissible: bool,
    /// Certified lower bound of Φ, clamped to `≤ 0`.
    pub alpha: f64,
    pub witness_r: f64,
    pub certified_on: CertifiedRange,
    /// The kind admits an analytic proof on all of ℝ.
    pub global_flag: bool,
    pub reason: String,
}
