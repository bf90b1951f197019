//! Field expressions used by `fields.y0`, `fields.yd` and `fields.u`.
//!
//! ```text
//! 0.8*sin(1)                    0.8 sin(π(x-a)/(b-a))
//! 0.5*sin(1) - 0.2*sin(3)       sums and differences of terms
//! 2*bump(0.3,0.7)               C² bump peaking at 1 in the middle of (0.3,0.7)
//! 0.1                           constant (interior nodes only)
//! zero
//! csv:path/to/field.csv         `x,value` samples, linearly interpolated
//! evolve(0.8*sin(1))            uncontrolled nonlinear evolution to time T
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use colehopf_core::discretization::{Field, SpaceGrid};

#[derive(Debug, Clone, PartialEq)]
enum Atom {
    Zero,
    One,
    Sin(f64),
    Bump(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Sum(Vec<(f64, Atom)>),
    Csv(PathBuf),
    Evolve(Vec<(f64, Atom)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    source: String,
    expr: Expr,
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl FieldSpec {
    pub fn parse(text: &str) -> Result<Self, String> {
        let source = text.trim().to_string();
        let expr = if let Some(path) = source.strip_prefix("csv:") {
            let path = path.trim();
            if path.is_empty() {
                return Err("csv: needs a path".into());
            }
            Expr::Csv(PathBuf::from(path))
        } else if let Some(inner) = source.strip_prefix("evolve(").and_then(|s| s.strip_suffix(')')) {
            Expr::Evolve(parse_sum(inner)?)
        } else {
            Expr::Sum(parse_sum(&source)?)
        };
        Ok(Self { source, expr })
    }

    pub fn is_evolved(&self) -> bool {
        matches!(self.expr, Expr::Evolve(_))
    }

    /// Samples the expression on `grid`. `evolve` maps a datum to its
    /// terminal state and is only called for `evolve(...)`.
    pub fn realize<E>(&self, grid: &Arc<SpaceGrid>, evolve: E) -> colehopf_core::Result<Field>
    where
        E: FnOnce(Field) -> colehopf_core::Result<Field>,
    {
        match &self.expr {
            Expr::Sum(terms) => sample(grid, terms),
            Expr::Evolve(terms) => evolve(sample(grid, terms)?),
            Expr::Csv(path) => from_csv(grid, path),
        }
    }
}

fn sample(grid: &Arc<SpaceGrid>, terms: &[(f64, Atom)]) -> colehopf_core::Result<Field> {
    let d = grid.domain();
    Field::from_fn(grid.clone(), |x| {
        terms
            .iter()
            .map(|(c, atom)| {
                c * match *atom {
                    Atom::Zero => 0.0,
                    Atom::One => 1.0,
                    Atom::Sin(k) => (k * std::f64::consts::PI * (x - d.lo) / d.length()).sin(),
                    Atom::Bump(lo, hi) if x > lo && x < hi => {
                        let half = 0.5 * (hi - lo);
                        ((x - lo) * (hi - x) / (half * half)).powi(2)
                    }
                    Atom::Bump(..) => 0.0,
                }
            })
            .sum()
    })
}

fn from_csv(grid: &Arc<SpaceGrid>, path: &Path) -> colehopf_core::Result<Field> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["x", "value"] {
        return Err(colehopf_core::Error::InvalidInput(format!(
            "{}: expected header `x,value`",
            path.display()
        )));
    }
    let mut samples: Vec<(f64, f64)> = Vec::new();
    for record in reader.deserialize() {
        samples.push(record?);
    }
    if samples.len() < 2 || samples.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(colehopf_core::Error::InvalidInput(format!(
            "{}: need at least two rows with strictly increasing x",
            path.display()
        )));
    }
    let (first, last) = (samples[0].0, samples[samples.len() - 1].0);
    let values = grid
        .xs()
        .map(|x| {
            if x < first - 1e-12 || x > last + 1e-12 {
                return Err(colehopf_core::Error::Domain {
                    what: "grid node outside the csv field samples",
                    value: x,
                    lo: first,
                    hi: last,
                });
            }
            let j = samples.partition_point(|s| s.0 <= x).clamp(1, samples.len() - 1);
            let ((x0, v0), (x1, v1)) = (samples[j - 1], samples[j]);
            Ok(v0 + (v1 - v0) * (x - x0) / (x1 - x0))
        })
        .collect::<colehopf_core::Result<Vec<_>>>()?;
    Field::new(grid.clone(), values)
}

fn parse_sum(text: &str) -> Result<Vec<(f64, Atom)>, String> {
    let mut p = Parser { s: text.as_bytes(), i: 0 };
    let mut terms = Vec::new();
    let mut sign = 1.0;
    p.skip_ws();
    if p.eat(b'-') {
        sign = -1.0;
    } else {
        p.eat(b'+');
    }
    loop {
        let (c, atom) = p.term()?;
        terms.push((sign * c, atom));
        p.skip_ws();
        if p.eat(b'+') {
            sign = 1.0;
        } else if p.eat(b'-') {
            sign = -1.0;
        } else if p.i == p.s.len() {
            return Ok(terms);
        } else {
            return Err(format!("unexpected `{}` in field expression `{text}`", &text[p.i..]));
        }
    }
}

struct Parser<'a> {
    s: &'a [u8],
    i: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.s.get(self.i) == Some(&c) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        self.skip_ws();
        if self.s[self.i..].starts_with(w.as_bytes()) {
            self.i += w.len();
            true
        } else {
            false
        }
    }

    fn number(&mut self) -> Result<f64, String> {
        self.skip_ws();
        let start = self.i;
        while self.i < self.s.len() {
            let c = self.s[self.i];
            let exp_sign = (c == b'-' || c == b'+') && self.i > start && matches!(self.s[self.i - 1], b'e' | b'E');
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                self.i += 1;
            } else {
                break;
            }
        }
        let token = std::str::from_utf8(&self.s[start..self.i]).unwrap_or("");
        token
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| format!("expected a number at `{}`", String::from_utf8_lossy(&self.s[start..])))
    }

    fn term(&mut self) -> Result<(f64, Atom), String> {
        self.skip_ws();
        if self.s.get(self.i).is_some_and(|c| c.is_ascii_digit() || *c == b'.') {
            let c = self.number()?;
            if self.eat(b'*') {
                Ok((c, self.atom()?))
            } else {
                Ok((c, Atom::One))
            }
        } else {
            Ok((1.0, self.atom()?))
        }
    }

    fn atom(&mut self) -> Result<Atom, String> {
        if self.eat_word("zero") {
            Ok(Atom::Zero)
        } else if self.eat_word("sin(") {
            let k = self.number()?;
            self.close()?;
            Ok(Atom::Sin(k))
        } else if self.eat_word("bump(") {
            let lo = self.number()?;
            if !self.eat(b',') {
                return Err("bump expects `bump(lo,hi)`".into());
            }
            let hi = self.number()?;
            self.close()?;
            if !(lo < hi) {
                return Err(format!("bump({lo},{hi}) needs lo < hi"));
            }
            Ok(Atom::Bump(lo, hi))
        } else {
            Err(format!(
                "expected zero, sin(k), bump(lo,hi) or a number at `{}`",
                String::from_utf8_lossy(&self.s[self.i..])
            ))
        }
    }

    fn close(&mut self) -> Result<(), String> {
        if self.eat(b')') {
            Ok(())
        } else {
            Err("missing `)`".into())
        }
    }
}
