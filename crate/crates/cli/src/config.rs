//! INI-style run configuration.
//!
//! ```text
//! command = pipeline
//! mode = distributed
//!
//! [phi]
//! kind = odd_power
//! k = 1
//!
//! [grid]
//! n_interior = 201
//! omega = 0.3,0.7
//! ```
//!
//! Keys may also be written dotted at top level (`phi.kind = exp`). Every
//! key not listed in [`KEYS`] is rejected. `[sweep.NAME]` sections hold
//! dotted overrides of the base config.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;

use colehopf_core::control::{DEFAULT_CG_TOLERANCE, DEFAULT_MAX_CG_ITERS, DEFAULT_PENALTIES};
use colehopf_core::pipeline::{DEFAULT_BRIDGE_TOLERANCE, DEFAULT_HULL_MARGIN};
use colehopf_core::colehopf::DEFAULT_QUAD_TOLERANCE;
use colehopf_core::nonlinearity::{DEFAULT_SAMPLE_COUNT, DEFAULT_SCAN_RANGE};

use crate::fields::FieldSpec;

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    /// 1-based; 0 when the problem is not tied to a line.
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    CheckPhi,
    TransformTable,
    Simulate,
    Control,
    Pipeline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::CheckPhi => "check-phi",
            Command::TransformTable => "transform-table",
            Command::Simulate => "simulate",
            Command::Control => "control",
            Command::Pipeline => "pipeline",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            Command::CheckPhi,
            Command::TransformTable,
            Command::Simulate,
            Command::Control,
            Command::Pipeline,
        ]
        .into_iter()
        .find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Distributed,
    Null,
    Initial,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Distributed => "distributed",
            Mode::Null => "null",
            Mode::Initial => "initial",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhiChoice {
    Exp,
    OddPower { k: u32 },
    Polynomial { coeffs: Vec<f64> },
    Tabulated { table: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiConfig {
    pub choice: PhiChoice,
    pub scan_min: f64,
    pub scan_max: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub a: f64,
    pub b: f64,
    pub n_interior: usize,
    pub omega: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeConfig {
    pub t_final: f64,
    pub n_steps: usize,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    pub epsilon: f64,
    pub penalties: Vec<f64>,
    pub max_cg_iters: usize,
    pub cg_tolerance: f64,
    pub deltas: Vec<f64>,
    pub bridge_tolerance: f64,
    pub hull_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformConfig {
    pub hull_min: f64,
    pub hull_max: f64,
    pub quad_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldsConfig {
    pub y0: FieldSpec,
    pub yd: FieldSpec,
    /// Time-independent control for `simulate`, restricted to ω.
    pub u: FieldSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    pub dump_trajectories: bool,
    pub dump_control: bool,
    pub dump_table: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub name: String,
    /// `(dotted key, raw value)` in file order.
    pub overrides: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub mode: Mode,
    pub phi: PhiConfig,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub control: ControlConfig,
    pub transform: TransformConfig,
    pub fields: FieldsConfig,
    pub io: IoConfig,
    pub sweeps: Vec<Sweep>,
}

/// Every accepted key, dotted.
pub const KEYS: &[&str] = &[
    "command",
    "mode",
    "phi.kind",
    "phi.k",
    "phi.coeffs",
    "phi.table",
    "phi.scan_min",
    "phi.scan_max",
    "phi.sample_count",
    "grid.a",
    "grid.b",
    "grid.n_interior",
    "grid.omega",
    "time.t_final",
    "time.n_steps",
    "time.theta",
    "control.epsilon",
    "control.penalties",
    "control.max_cg_iters",
    "control.cg_tolerance",
    "control.deltas",
    "control.bridge_tolerance",
    "control.hull_margin",
    "transform.hull_min",
    "transform.hull_max",
    "transform.quad_tolerance",
    "fields.y0",
    "fields.yd",
    "fields.u",
    "io.out_dir",
    "io.dump_trajectories",
    "io.dump_control",
    "io.dump_table",
];

/// Raw entries keyed by dotted name, remembering the defining line.
type Entries = BTreeMap<String, (String, usize)>;
/// (name, header line, [(key, value, line)])
type SweepBlock = (String, usize, Vec<(String, String, usize)>);

struct Document {
    base: Entries,
    sweeps: Vec<SweepBlock>,
}

fn split_document(text: &str) -> Result<Document, ConfigError> {
    let mut base = Entries::new();
    let mut sweeps: Vec<SweepBlock> = Vec::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return err(line, format!("malformed section header `{content}`"));
            };
            let name = name.trim();
            if name.is_empty() {
                return err(line, "empty section name");
            }
            if let Some(sweep) = name.strip_prefix("sweep.") {
                if sweep.is_empty() || !sweep.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                    return err(line, format!("sweep name `{sweep}` must be non-empty [A-Za-z0-9_-]"));
                }
                if sweeps.iter().any(|(n, _, _)| n == sweep) {
                    return err(line, format!("duplicate sweep `{sweep}`"));
                }
                sweeps.push((sweep.to_string(), line, Vec::new()));
            } else if ["phi", "grid", "time", "control", "transform", "fields", "io"].contains(&name) {
                if !sweeps.is_empty() {
                    return err(line, format!("section [{name}] must precede all sweep sections"));
                }
            } else {
                return err(line, format!("unknown section [{name}]"));
            }
            section = name.to_string();
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return err(line, format!("expected `key = value`, found `{content}`"));
        };
        let key = key.trim();
        let value = value.trim().to_string();
        if key.is_empty() {
            return err(line, "empty key");
        }
        if let Some((_, _, overrides)) = sweeps.last_mut() {
            if !KEYS.contains(&key) || key == "command" {
                return err(line, format!("unknown key `{key}` in sweep (use dotted keys)"));
            }
            overrides.push((key.to_string(), value, line));
            continue;
        }
        let full = if section.is_empty() || key.contains('.') {
            if !section.is_empty() {
                return err(line, format!("dotted key `{key}` inside section [{section}]"));
            }
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        if !KEYS.contains(&full.as_str()) {
            return err(line, format!("unknown key `{full}`"));
        }
        if base.insert(full.clone(), (value, line)).is_some() {
            return err(line, format!("duplicate key `{full}`"));
        }
    }
    Ok(Document { base, sweeps })
}

/// Parses and validates a config that must name its own `command`.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_for(text, None)
}

/// As [`parse_config`], with `command` supplied by the caller. A `command`
/// key in the text must then agree with it.
pub fn parse_config_for(text: &str, command: Option<Command>) -> Result<RunConfig, ConfigError> {
    let doc = split_document(text)?;
    let mut config = build(&doc.base, command)?;
    for (name, line, overrides) in doc.sweeps {
        let merged = merge(&doc.base, overrides.iter().map(|(k, v, l)| (k.as_str(), v.as_str(), *l)));
        build(&merged, Some(config.command)).map_err(|e| ConfigError {
            line: if e.line == 0 { line } else { e.line },
            message: format!("sweep `{name}`: {}", e.message),
        })?;
        config.sweeps.push(Sweep {
            name,
            overrides: overrides.into_iter().map(|(k, v, _)| (k, v)).collect(),
        });
    }
    Ok(config)
}

/// The base config with one sweep's overrides applied.
pub fn sweep_instance(config: &RunConfig, sweep: &Sweep) -> Result<RunConfig, ConfigError> {
    let text = config.echo();
    let doc = split_document(&text)?;
    let merged = merge(&doc.base, sweep.overrides.iter().map(|(k, v)| (k.as_str(), v.as_str(), 0)));
    build(&merged, Some(config.command))
}

/// Overrides on top of `base`. Changing `phi.kind` drops the inherited
/// kind-specific keys.
fn merge<'a>(base: &Entries, overrides: impl Iterator<Item = (&'a str, &'a str, usize)> + Clone) -> Entries {
    let mut merged = base.clone();
    if overrides.clone().any(|(k, _, _)| k == "phi.kind") {
        for key in ["phi.k", "phi.coeffs", "phi.table"] {
            merged.remove(key);
        }
    }
    for (key, value, line) in overrides {
        merged.insert(key.to_string(), (value.to_string(), line));
    }
    merged
}

struct Reader<'a> {
    entries: &'a Entries,
}

impl<'a> Reader<'a> {
    fn raw(&self, key: &str) -> Option<(&'a str, usize)> {
        self.entries.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn line(&self, key: &str) -> usize {
        self.raw(key).map_or(0, |(_, l)| l)
    }

    fn get<T>(&self, key: &str, default: T, parse: impl Fn(&str) -> Option<T>, what: &str) -> Result<T, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, line)) => match parse(v) {
                Some(x) => Ok(x),
                None => err(line, format!("`{key}` expects {what}, found `{v}`")),
            },
        }
    }

    fn real(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        self.get(key, default, parse_real, "a finite real")
    }

    fn count(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        self.get(key, default, |s| s.parse().ok(), "a non-negative integer")
    }

    fn reals(&self, key: &str, default: Vec<f64>) -> Result<Vec<f64>, ConfigError> {
        self.get(key, default, parse_reals, "a comma-separated list of reals")
    }

    fn flag(&self, key: &str) -> Result<bool, ConfigError> {
        self.get(key, false, |s| s.parse().ok(), "true or false")
    }

    fn require(&self, ok: bool, key: &str, message: &str) -> Result<(), ConfigError> {
        if ok {
            Ok(())
        } else {
            err(self.line(key), format!("`{key}` {message}"))
        }
    }
}

fn parse_real(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn parse_reals(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|p| parse_real(p.trim())).collect()
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn build(entries: &Entries, command: Option<Command>) -> Result<RunConfig, ConfigError> {
    let r = Reader { entries };

    let command = match (r.raw("command"), command) {
        (Some((v, line)), given) => {
            let Some(parsed) = Command::parse(v) else {
                return err(line, format!("unknown command `{v}`"));
            };
            if given.is_some_and(|g| g != parsed) {
                return err(line, format!("config names command `{v}` but `{}` was invoked", given.unwrap().name()));
            }
            parsed
        }
        (None, Some(c)) => c,
        (None, None) => return err(0, "missing `command`"),
    };
    let mode = r.get(
        "mode",
        Mode::Distributed,
        |s| [Mode::Distributed, Mode::Null, Mode::Initial].into_iter().find(|m| m.name() == s),
        "one of distributed, null, initial",
    )?;

    let phi = build_phi(&r)?;

    let grid = GridConfig {
        a: r.real("grid.a", 0.0)?,
        b: r.real("grid.b", 1.0)?,
        n_interior: r.count("grid.n_interior", 201)?,
        omega: r.get(
            "grid.omega",
            vec![(0.3, 0.7)],
            |s| {
                s.split(';')
                    .map(|pair| match parse_reals(pair)?.as_slice() {
                        [lo, hi] => Some((*lo, *hi)),
                        _ => None,
                    })
                    .collect()
            },
            "`lo,hi` pairs separated by `;`",
        )?,
    };
    r.require(grid.a < grid.b, "grid.b", "must exceed grid.a")?;
    r.require(grid.n_interior >= 3, "grid.n_interior", "must be at least 3")?;
    for &(lo, hi) in &grid.omega {
        r.require(
            grid.a <= lo && lo < hi && hi <= grid.b,
            "grid.omega",
            &format!("interval ({lo}, {hi}) must be non-empty and inside the domain [{}, {}]", grid.a, grid.b),
        )?;
    }

    let time = TimeConfig {
        t_final: r.real("time.t_final", 0.5)?,
        n_steps: r.count("time.n_steps", 2000)?,
        theta: r.real("time.theta", 1.0)?,
    };
    r.require(time.t_final > 0.0, "time.t_final", "must be positive")?;
    r.require(time.n_steps >= 1, "time.n_steps", "must be at least 1")?;
    r.require((0.5..=1.0).contains(&time.theta), "time.theta", "must lie in [0.5, 1]")?;

    let control = ControlConfig {
        epsilon: r.real("control.epsilon", 0.05)?,
        penalties: r.reals("control.penalties", DEFAULT_PENALTIES.to_vec())?,
        max_cg_iters: r.count("control.max_cg_iters", DEFAULT_MAX_CG_ITERS)?,
        cg_tolerance: r.real("control.cg_tolerance", DEFAULT_CG_TOLERANCE)?,
        deltas: r.reals("control.deltas", vec![0.1, 0.03, 0.01])?,
        bridge_tolerance: r.real("control.bridge_tolerance", DEFAULT_BRIDGE_TOLERANCE)?,
        hull_margin: r.real("control.hull_margin", DEFAULT_HULL_MARGIN)?,
    };
    r.require(control.epsilon > 0.0, "control.epsilon", "must be positive")?;
    r.require(
        control.penalties.iter().all(|&k| k > 0.0) && strictly_decreasing(&control.penalties),
        "control.penalties",
        "must be positive and strictly decreasing",
    )?;
    r.require(control.max_cg_iters >= 1, "control.max_cg_iters", "must be at least 1")?;
    r.require(control.cg_tolerance > 0.0, "control.cg_tolerance", "must be positive")?;
    r.require(
        control.deltas.iter().all(|&d| d > 0.0) && strictly_decreasing(&control.deltas),
        "control.deltas",
        "must be positive and strictly decreasing",
    )?;
    r.require(control.bridge_tolerance > 0.0, "control.bridge_tolerance", "must be positive")?;
    r.require(control.hull_margin >= 1.0, "control.hull_margin", "must be at least 1")?;

    let transform = TransformConfig {
        hull_min: r.real("transform.hull_min", -3.0)?,
        hull_max: r.real("transform.hull_max", 3.0)?,
        quad_tolerance: r.real("transform.quad_tolerance", DEFAULT_QUAD_TOLERANCE)?,
    };
    r.require(transform.hull_min <= 0.0, "transform.hull_min", "must not be positive")?;
    r.require(transform.hull_max >= 0.0, "transform.hull_max", "must not be negative")?;
    r.require(transform.hull_min < transform.hull_max, "transform.hull_max", "must exceed transform.hull_min")?;
    r.require(transform.quad_tolerance > 0.0, "transform.quad_tolerance", "must be positive")?;

    let field = |key: &str, default: &str, allow_evolve: bool| -> Result<FieldSpec, ConfigError> {
        let (text, line) = r.raw(key).unwrap_or((default, 0));
        let spec = FieldSpec::parse(text).map_err(|m| ConfigError {
            line,
            message: format!("`{key}`: {m}"),
        })?;
        if spec.is_evolved() && !allow_evolve {
            return err(line, format!("`{key}` does not accept evolve(...)"));
        }
        Ok(spec)
    };
    let fields = FieldsConfig {
        y0: field("fields.y0", "0.8*sin(1)", false)?,
        yd: field("fields.yd", "0.3*sin(1)", true)?,
        u: field("fields.u", "zero", false)?,
    };

    let io = IoConfig {
        out_dir: PathBuf::from(r.raw("io.out_dir").map_or("colehopf-out", |(v, _)| v)),
        dump_trajectories: r.flag("io.dump_trajectories")?,
        dump_control: r.flag("io.dump_control")?,
        dump_table: r.flag("io.dump_table")?,
    };

    Ok(RunConfig {
        command,
        mode,
        phi,
        grid,
        time,
        control,
        transform,
        fields,
        io,
        sweeps: Vec::new(),
    })
}

fn build_phi(r: &Reader) -> Result<PhiConfig, ConfigError> {
    let Some((kind, kind_line)) = r.raw("phi.kind") else {
        return err(0, "missing `phi.kind`");
    };
    let only_for = |key: &str, owner: &str| -> Result<(), ConfigError> {
        match r.raw(key) {
            Some((_, line)) if kind != owner => err(
                line,
                format!("key `{}` is not valid for phi.kind = {kind}", key.trim_start_matches("phi.")),
            ),
            _ => Ok(()),
        }
    };
    only_for("phi.k", "odd_power")?;
    only_for("phi.coeffs", "polynomial")?;
    only_for("phi.table", "tabulated")?;
    let choice = match kind {
        "exp" => PhiChoice::Exp,
        "odd_power" => PhiChoice::OddPower {
            k: r.get("phi.k", 1, |s| s.parse().ok(), "a non-negative integer")?,
        },
        "polynomial" => match r.raw("phi.coeffs") {
            None => return err(kind_line, "phi.kind = polynomial requires `phi.coeffs`"),
            Some(_) => PhiChoice::Polynomial {
                coeffs: r.reals("phi.coeffs", Vec::new())?,
            },
        },
        "tabulated" => match r.raw("phi.table") {
            None => return err(kind_line, "phi.kind = tabulated requires `phi.table`"),
            Some((path, _)) => PhiChoice::Tabulated {
                table: PathBuf::from(path),
            },
        },
        other => {
            return err(
                kind_line,
                format!("`phi.kind` expects one of exp, odd_power, polynomial, tabulated, found `{other}`"),
            )
        }
    };
    let phi = PhiConfig {
        choice,
        scan_min: r.real("phi.scan_min", DEFAULT_SCAN_RANGE.lo)?,
        scan_max: r.real("phi.scan_max", DEFAULT_SCAN_RANGE.hi)?,
        sample_count: r.count("phi.sample_count", DEFAULT_SAMPLE_COUNT)?,
    };
    r.require(phi.scan_min < 0.0, "phi.scan_min", "must be negative")?;
    r.require(phi.scan_max > 0.0, "phi.scan_max", "must be positive")?;
    r.require(phi.sample_count >= 3, "phi.sample_count", "must be at least 3")?;
    Ok(phi)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Canonical text with every default spelled out. Parsing it yields a
    /// config equal to `self`.
    pub fn echo(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command.name());
        let _ = writeln!(s, "mode = {}", self.mode.name());

        let _ = writeln!(s, "\n[phi]");
        match &self.phi.choice {
            PhiChoice::Exp => {
                let _ = writeln!(s, "kind = exp");
            }
            PhiChoice::OddPower { k } => {
                let _ = writeln!(s, "kind = odd_power\nk = {k}");
            }
            PhiChoice::Polynomial { coeffs } => {
                let _ = writeln!(s, "kind = polynomial\ncoeffs = {}", join(coeffs));
            }
            PhiChoice::Tabulated { table } => {
                let _ = writeln!(s, "kind = tabulated\ntable = {}", table.display());
            }
        }
        let p = &self.phi;
        let _ = writeln!(s, "scan_min = {}\nscan_max = {}\nsample_count = {}", p.scan_min, p.scan_max, p.sample_count);

        let g = &self.grid;
        let omega = g.omega.iter().map(|(lo, hi)| format!("{lo},{hi}")).collect::<Vec<_>>().join(";");
        let _ = writeln!(s, "\n[grid]\na = {}\nb = {}\nn_interior = {}\nomega = {omega}", g.a, g.b, g.n_interior);

        let t = &self.time;
        let _ = writeln!(s, "\n[time]\nt_final = {}\nn_steps = {}\ntheta = {}", t.t_final, t.n_steps, t.theta);

        let c = &self.control;
        let _ = writeln!(s, "\n[control]\nepsilon = {}\npenalties = {}", c.epsilon, join(&c.penalties));
        let _ = writeln!(s, "max_cg_iters = {}\ncg_tolerance = {}", c.max_cg_iters, c.cg_tolerance);
        let _ = writeln!(s, "deltas = {}\nbridge_tolerance = {}\nhull_margin = {}", join(&c.deltas), c.bridge_tolerance, c.hull_margin);

        let tr = &self.transform;
        let _ = writeln!(s, "\n[transform]\nhull_min = {}\nhull_max = {}\nquad_tolerance = {}", tr.hull_min, tr.hull_max, tr.quad_tolerance);

        let fl = &self.fields;
        let _ = writeln!(s, "\n[fields]\ny0 = {}\nyd = {}\nu = {}", fl.y0, fl.yd, fl.u);

        let io = &self.io;
        let _ = writeln!(s, "\n[io]\nout_dir = {}", io.out_dir.display());
        let _ = writeln!(
            s,
            "dump_trajectories = {}\ndump_control = {}\ndump_table = {}",
            io.dump_trajectories, io.dump_control, io.dump_table
        );

        for sweep in &self.sweeps {
            let _ = writeln!(s, "\n[sweep.{}]", sweep.name);
            for (k, v) in &sweep.overrides {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        f.write_str(&s)
    }
}
