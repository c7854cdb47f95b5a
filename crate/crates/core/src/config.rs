//! Run configuration: a line-oriented sectioned key/value format.
//!
//! ```text
//! # comment
//! command = represent
//!
//! [domain]
//! kind = interval
//!
//! [family]
//! builtin = h_power
//! param.alpha = 2
//!
//! [pipeline]
//! v = 1/4
//! ```
//!
//! Numeric values are constant expressions (`1/4`, `2*pi`, `1e-3`) read by
//! the density-expression parser. Lists are comma separated. Unknown
//! sections and keys, duplicates and malformed values are errors carrying
//! the line and column.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use crate::density::{
    builtin_family, envelope_library, DecayEnvelope, DensityFamily, EnvelopeKind, ParamRange,
    ProbeOptions,
};
use crate::error::{Error, Result};
use crate::expr::parse_density_expression;
use crate::geometry::{make_domain, BoundarySide, Domain, DomainKind, DomainSpec};
use crate::transport::{Mode, PipelineOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Represent,
    CheckAssumptions,
    Obstruct,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Represent => "represent",
            Command::CheckAssumptions => "check-assumptions",
            Command::Obstruct => "obstruct",
        }
    }
}

impl std::str::FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "represent" => Ok(Command::Represent),
            "check-assumptions" => Ok(Command::CheckAssumptions),
            "obstruct" => Ok(Command::Obstruct),
            other => Err(Error::Config(format!("unknown command `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSection {
    pub kind: DomainKind,
    pub circumference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilySource {
    Builtin {
        name: String,
        params: BTreeMap<String, f64>,
    },
    Expression(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilySection {
    pub source: FamilySource,
    pub k: Option<usize>,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeSection {
    /// Library names such as `power(2)`, or the single word `library`.
    pub names: Vec<String>,
    pub scale: f64,
    /// Custom `E` and `B` in `a` and `t`; both or neither.
    pub e: Option<String>,
    pub b: Option<String>,
    pub closure: Option<f64>,
    pub n_t: usize,
    pub t_min: f64,
    pub n_x: usize,
    pub x_refine: Vec<f64>,
}

impl Default for EnvelopeSection {
    fn default() -> Self {
        let p = ProbeOptions::default();
        EnvelopeSection {
            names: Vec::new(),
            scale: 2.0,
            e: None,
            b: None,
            closure: None,
            n_t: p.n_t,
            t_min: p.t_min,
            n_x: p.n_x,
            x_refine: Vec::new(),
        }
    }
}

/// Transport used by the `C^k` probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CkMap {
    Pipeline,
    Quantile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSection {
    pub mode: Mode,
    pub side: BoundarySide,
    pub v: f64,
    pub delta: f64,
    pub nt: usize,
    pub na: usize,
    pub steps: usize,
    pub tol_cg: f64,
    pub tol_norm: f64,
    pub tol_push: f64,
    pub verify_x: Vec<f64>,
    pub n_verify: usize,
    pub push_cells: usize,
    pub push_samples: usize,
    pub push_bins: usize,
    pub seed: u64,
    /// Order of the uniform `C^k` probe; 0 skips it.
    pub ck_order: usize,
    pub ck_map: CkMap,
    pub ck_nx: usize,
    /// Absolute step, or the fraction of `|x − ck_center|` when a centre is
    /// set.
    pub ck_step: f64,
    pub ck_center: Option<f64>,
    pub ck_decades: usize,
    pub ck_floor: f64,
    /// Random maps drawn after construction; 0 skips them.
    pub samples: usize,
    /// Obstruction schedule: pairs `(x_j, pair_base)`.
    pub pairs: Vec<f64>,
    pub pair_base: f64,
    pub h: String,
    pub n_quantile: usize,
    pub e_step: f64,
    pub e_nx: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineOptions::default();
        PipelineSection {
            mode: p.mode,
            side: p.side,
            v: p.v,
            delta: p.delta,
            nt: p.nt,
            na: p.na,
            steps: p.moser.steps,
            tol_cg: p.moser.tol,
            tol_norm: p.moser.tol_norm,
            tol_push: p.tol_push,
            verify_x: Vec::new(),
            n_verify: p.n_verify,
            push_cells: p.push_cells,
            push_samples: p.push_samples,
            push_bins: p.push_bins,
            seed: 0,
            ck_order: 1,
            ck_map: CkMap::Pipeline,
            ck_nx: 9,
            ck_step: 1e-2,
            ck_center: None,
            ck_decades: 0,
            ck_floor: 1e-5,
            samples: 0,
            pairs: vec![0.1, 0.01, 0.001],
            pair_base: 0.0,
            h: "m".into(),
            n_quantile: 1 << 16,
            e_step: 1e-2,
            e_nx: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputSection {
    pub report: Option<PathBuf>,
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub domain: DomainSection,
    pub family: FamilySection,
    pub envelope: Option<EnvelopeSection>,
    pub pipeline: PipelineSection,
    pub outputs: OutputSection,
}

/// Position of a value in the source text, for error messages.
#[derive(Clone, Copy)]
struct Pos {
    line: usize,
    column: usize,
}

fn syntax(pos: Pos, message: impl Into<String>) -> Error {
    Error::ConfigSyntax {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

struct Value<'a> {
    text: &'a str,
    pos: Pos,
}

impl Value<'_> {
    fn string(&self) -> String {
        let t = self.text;
        if t.len() >= 2 && t.starts_with('"') && t.ends_with('"') {
            t[1..t.len() - 1].to_string()
        } else {
            t.to_string()
        }
    }

    fn number_at(&self, text: &str, offset: usize) -> Result<f64> {
        let ast = parse_density_expression(text).map_err(|e| {
            let (col, msg) = match &e {
                Error::Syntax { offset: o, message } => (offset + o, message.clone()),
                Error::UnknownIdentifier { offset: o, .. } => (offset + o, e.to_string()),
                _ => (offset, e.to_string()),
            };
            syntax(
                Pos {
                    line: self.pos.line,
                    column: self.pos.column + col,
                },
                msg,
            )
        })?;
        let v = ast
            .constant_value()
            .map_err(|e| syntax(self.pos, e.to_string()))?;
        if !v.is_finite() {
            return Err(syntax(self.pos, format!("`{text}` is not finite")));
        }
        Ok(v)
    }

    fn number(&self) -> Result<f64> {
        self.number_at(self.text, 0)
    }

    fn positive(&self) -> Result<f64> {
        let v = self.number()?;
        if !(v > 0.0) {
            return Err(syntax(
                self.pos,
                format!("expected a positive value, got {v}"),
            ));
        }
        Ok(v)
    }

    fn count(&self) -> Result<usize> {
        let v = self.number()?;
        if !(v >= 0.0 && v.fract() == 0.0 && v <= 1e15) {
            return Err(syntax(
                self.pos,
                format!("expected a non-negative integer, got {v}"),
            ));
        }
        Ok(v as usize)
    }

    fn grid_size(&self) -> Result<usize> {
        let n = self.count()?;
        if n < 16 {
            return Err(syntax(
                self.pos,
                format!("grid sizes must be at least 16, got {n}"),
            ));
        }
        Ok(n)
    }

    fn seed(&self) -> Result<u64> {
        self.text.parse::<u64>().map_err(|_| {
            syntax(
                self.pos,
                format!("seed must be an unsigned integer, got `{}`", self.text),
            )
        })
    }

    fn list(&self) -> Result<Vec<f64>> {
        if self.text.trim().is_empty() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        let mut offset = 0;
        for part in self.text.split(',') {
            let lead = part.len() - part.trim_start().len();
            out.push(self.number_at(part.trim(), offset + lead)?);
            offset += part.len() + 1;
        }
        Ok(out)
    }

    fn parsed<T: std::str::FromStr<Err = Error>>(&self) -> Result<T> {
        self.text
            .parse()
            .map_err(|e: Error| syntax(self.pos, e.to_string()))
    }

    fn flag_opt_number(&self) -> Result<Option<f64>> {
        if self.text == "none" {
            Ok(None)
        } else {
            self.number().map(Some)
        }
    }
}

/// Splits `power(2), log` at top-level commas.
fn split_names(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for c in text.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

const SECTIONS: [&str; 5] = ["domain", "family", "envelope", "pipeline", "outputs"];

impl RunConfig {
    /// Parses the configuration text strictly.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut section = String::new();
        let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
        let mut sections_seen = std::collections::BTreeSet::new();
        let mut command = None;
        let mut kind = None;
        let mut circumference = None;
        let mut builtin = None;
        let mut expression = None;
        let mut params = BTreeMap::new();
        let mut fam_k = None;
        let mut x_min = None;
        let mut x_max = None;
        let mut env: Option<EnvelopeSection> = None;
        let mut p = PipelineSection::default();
        let mut outputs = OutputSection::default();
        let mut family_pos = None;

        for (ln, raw) in text.lines().enumerate() {
            let line_no = ln + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
                continue;
            }
            let indent = raw.len() - raw.trim_start().len();
            let at = |col: usize| Pos {
                line: line_no,
                column: col + 1,
            };
            if trimmed.starts_with('[') {
                if !trimmed.ends_with(']') {
                    return Err(syntax(at(indent), "section header is missing `]`"));
                }
                let name = trimmed[1..trimmed.len() - 1].trim();
                if !SECTIONS.contains(&name) {
                    return Err(syntax(at(indent + 1), format!("unknown section `{name}`")));
                }
                if !sections_seen.insert(name.to_string()) {
                    return Err(syntax(
                        at(indent + 1),
                        format!("section `{name}` appears twice"),
                    ));
                }
                section = name.to_string();
                if name == "envelope" {
                    env = Some(EnvelopeSection::default());
                }
                if name == "family" {
                    family_pos = Some(at(indent));
                }
                continue;
            }
            let Some(eq) = trimmed.find('=') else {
                return Err(syntax(at(indent), "expected `key = value`"));
            };
            let key = trimmed[..eq].trim();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
            {
                return Err(syntax(at(indent), format!("malformed key `{key}`")));
            }
            let after = &trimmed[eq + 1..];
            let lead = after.len() - after.trim_start().len();
            let val = Value {
                text: after.trim(),
                pos: at(indent + eq + 1 + lead),
            };
            if val.text.is_empty() {
                return Err(syntax(val.pos, format!("key `{key}` has no value")));
            }
            if let Some(first) = seen.insert((section.clone(), key.to_string()), line_no) {
                return Err(syntax(
                    at(indent),
                    format!("key `{key}` already set on line {first}"),
                ));
            }
            let unknown = || {
                syntax(
                    at(indent),
                    format!(
                        "unknown key `{key}` in {}",
                        if section.is_empty() {
                            "the top level".to_string()
                        } else {
                            format!("section [{section}]")
                        }
                    ),
                )
            };
            match section.as_str() {
                "" => match key {
                    "command" => command = Some(val.parsed::<Command>()?),
                    _ => return Err(unknown()),
                },
                "domain" => match key {
                    "kind" => kind = Some(val.parsed::<DomainKind>()?),
                    "circumference" => circumference = Some(val.positive()?),
                    _ => return Err(unknown()),
                },
                "family" => match key {
                    "builtin" => builtin = Some(val.string()),
                    "expression" => expression = Some(val.string()),
                    "k" => fam_k = Some(val.count()?),
                    "x_min" => x_min = Some(val.number()?),
                    "x_max" => x_max = Some(val.number()?),
                    _ => match key.strip_prefix("param.") {
                        Some(name) if !name.is_empty() && !name.contains('.') => {
                            params.insert(name.to_string(), val.number()?);
                        }
                        _ => return Err(unknown()),
                    },
                },
                "envelope" => {
                    let e = env.as_mut().expect("envelope section");
                    match key {
                        "names" => e.names = split_names(val.text),
                        "scale" => e.scale = val.positive()?,
                        "e" => e.e = Some(val.string()),
                        "b" => e.b = Some(val.string()),
                        "closure" => e.closure = Some(val.positive()?),
                        "n_t" => e.n_t = val.count()?,
                        "t_min" => e.t_min = val.positive()?,
                        "n_x" => e.n_x = val.count()?,
                        "x_refine" => e.x_refine = val.list()?,
                        _ => return Err(unknown()),
                    }
                }
                "pipeline" => match key {
                    "mode" => p.mode = val.parsed()?,
                    "side" => p.side = val.parsed()?,
                    "v" => p.v = val.number()?,
                    "delta" => p.delta = val.number()?,
                    "nt" => p.nt = val.grid_size()?,
                    "na" => p.na = val.grid_size()?,
                    "steps" => p.steps = val.count()?,
                    "tol_cg" => p.tol_cg = val.positive()?,
                    "tol_norm" => p.tol_norm = val.positive()?,
                    "tol_push" => p.tol_push = val.positive()?,
                    "verify_x" => p.verify_x = val.list()?,
                    "n_verify" => p.n_verify = val.count()?,
                    "push_cells" => p.push_cells = val.grid_size()?,
                    "push_samples" => p.push_samples = val.count()?,
                    "push_bins" => p.push_bins = val.grid_size()?,
                    "seed" => p.seed = val.seed()?,
                    "ck_order" => p.ck_order = val.count()?,
                    "ck_map" => {
                        p.ck_map = match val.text {
                            "pipeline" => CkMap::Pipeline,
                            "quantile" => CkMap::Quantile,
                            other => {
                                return Err(syntax(val.pos, format!("unknown C^k map `{other}`")))
                            }
                        }
                    }
                    "ck_nx" => p.ck_nx = val.count()?,
                    "ck_step" => p.ck_step = val.positive()?,
                    "ck_center" => p.ck_center = val.flag_opt_number()?,
                    "ck_decades" => p.ck_decades = val.count()?,
                    "ck_floor" => p.ck_floor = val.positive()?,
                    "samples" => p.samples = val.count()?,
                    "pairs" => p.pairs = val.list()?,
                    "pair_base" => p.pair_base = val.number()?,
                    "h" => p.h = val.string(),
                    "n_quantile" => p.n_quantile = val.grid_size()?,
                    "e_step" => p.e_step = val.positive()?,
                    "e_nx" => p.e_nx = val.count()?,
                    _ => return Err(unknown()),
                },
                "outputs" => match key {
                    "report" => outputs.report = Some(PathBuf::from(val.string())),
                    "csv_dir" => outputs.csv_dir = Some(PathBuf::from(val.string())),
                    _ => return Err(unknown()),
                },
                _ => unreachable!("sections are validated"),
            }
        }

        let top = Pos { line: 1, column: 1 };
        let command = command.ok_or_else(|| syntax(top, "missing top-level `command`"))?;
        let kind = kind.ok_or_else(|| syntax(top, "missing [domain] kind"))?;
        let fpos = family_pos.ok_or_else(|| syntax(top, "missing [family] section"))?;
        let source = match (builtin, expression) {
            (Some(name), None) => FamilySource::Builtin { name, params },
            (None, Some(e)) => {
                if !params.is_empty() {
                    return Err(syntax(fpos, "param.* keys apply to builtin families only"));
                }
                FamilySource::Expression(e)
            }
            (Some(_), Some(_)) => {
                return Err(syntax(
                    fpos,
                    "set either `builtin` or `expression`, not both",
                ))
            }
            (None, None) => return Err(syntax(fpos, "[family] needs `builtin` or `expression`")),
        };
        if kind == DomainKind::Interval && circumference.is_some() {
            return Err(syntax(top, "circumference applies to the cylinder only"));
        }
        if !(p.v > 1.0 / 6.0 && p.v < 1.0 / 3.0) {
            return Err(Error::Config(format!(
                "pipeline v = {} must lie in (1/6, 1/3)",
                p.v
            )));
        }
        if !(p.delta > 0.0 && p.delta < 1.0) {
            return Err(Error::Config(format!(
                "pipeline delta = {} must lie in (0, 1)",
                p.delta
            )));
        }
        if command == Command::CheckAssumptions {
            match &env {
                None => {
                    return Err(Error::Config(
                        "check-assumptions needs an [envelope] section".into(),
                    ))
                }
                Some(e) if e.names.is_empty() && e.e.is_none() => {
                    return Err(Error::Config(
                        "[envelope] needs `names` or custom `e` and `b`".into(),
                    ))
                }
                Some(e) if e.e.is_some() != e.b.is_some() => {
                    return Err(Error::Config(
                        "custom envelopes need both `e` and `b`".into(),
                    ))
                }
                _ => {}
            }
        }
        Ok(RunConfig {
            command,
            domain: DomainSection {
                kind,
                circumference,
            },
            family: FamilySection {
                source,
                k: fam_k,
                x_min,
                x_max,
            },
            envelope: env,
            pipeline: p,
            outputs,
        })
    }

    /// Canonical text; parsing it gives back an equal configuration.
    pub fn to_text(&self) -> String {
        let num = |v: f64| format!("{v:?}");
        let list = |v: &[f64]| v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command.name());
        let _ = writeln!(s, "\n[domain]");
        let _ = writeln!(s, "kind = {}", kind_name(self.domain.kind));
        if let Some(c) = self.domain.circumference {
            let _ = writeln!(s, "circumference = {}", num(c));
        }
        let _ = writeln!(s, "\n[family]");
        match &self.family.source {
            FamilySource::Builtin { name, params } => {
                let _ = writeln!(s, "builtin = {name}");
                for (k, v) in params {
                    let _ = writeln!(s, "param.{k} = {}", num(*v));
                }
            }
            FamilySource::Expression(e) => {
                let _ = writeln!(s, "expression = {e}");
            }
        }
        if let Some(k) = self.family.k {
            let _ = writeln!(s, "k = {k}");
        }
        if let Some(v) = self.family.x_min {
            let _ = writeln!(s, "x_min = {}", num(v));
        }
        if let Some(v) = self.family.x_max {
            let _ = writeln!(s, "x_max = {}", num(v));
        }
        if let Some(e) = &self.envelope {
            let _ = writeln!(s, "\n[envelope]");
            if !e.names.is_empty() {
                let _ = writeln!(s, "names = {}", e.names.join(", "));
            }
            let _ = writeln!(s, "scale = {}", num(e.scale));
            if let Some(v) = &e.e {
                let _ = writeln!(s, "e = {v}");
            }
            if let Some(v) = &e.b {
                let _ = writeln!(s, "b = {v}");
            }
            if let Some(v) = e.closure {
                let _ = writeln!(s, "closure = {}", num(v));
            }
            let _ = writeln!(s, "n_t = {}", e.n_t);
            let _ = writeln!(s, "t_min = {}", num(e.t_min));
            let _ = writeln!(s, "n_x = {}", e.n_x);
            if !e.x_refine.is_empty() {
                let _ = writeln!(s, "x_refine = {}", list(&e.x_refine));
            }
        }
        let p = &self.pipeline;
        let _ = writeln!(s, "\n[pipeline]");
        let mode = match p.mode {
            Mode::Auto => "auto",
            Mode::CollarMoser => "collar-moser",
            Mode::MoserOnly => "moser-only",
        };
        let side = match p.side {
            BoundarySide::Lower => "lower",
            BoundarySide::Upper => "upper",
        };
        let _ = writeln!(s, "mode = {mode}");
        let _ = writeln!(s, "side = {side}");
        let _ = writeln!(s, "v = {}", num(p.v));
        let _ = writeln!(s, "delta = {}", num(p.delta));
        let _ = writeln!(s, "nt = {}", p.nt);
        let _ = writeln!(s, "na = {}", p.na);
        let _ = writeln!(s, "steps = {}", p.steps);
        let _ = writeln!(s, "tol_cg = {}", num(p.tol_cg));
        let _ = writeln!(s, "tol_norm = {}", num(p.tol_norm));
        let _ = writeln!(s, "tol_push = {}", num(p.tol_push));
        if !p.verify_x.is_empty() {
            let _ = writeln!(s, "verify_x = {}", list(&p.verify_x));
        }
        let _ = writeln!(s, "n_verify = {}", p.n_verify);
        let _ = writeln!(s, "push_cells = {}", p.push_cells);
        let _ = writeln!(s, "push_samples = {}", p.push_samples);
        let _ = writeln!(s, "push_bins = {}", p.push_bins);
        let _ = writeln!(s, "seed = {}", p.seed);
        let _ = writeln!(s, "ck_order = {}", p.ck_order);
        let _ = writeln!(
            s,
            "ck_map = {}",
            match p.ck_map {
                CkMap::Pipeline => "pipeline",
                CkMap::Quantile => "quantile",
            }
        );
        let _ = writeln!(s, "ck_nx = {}", p.ck_nx);
        let _ = writeln!(s, "ck_step = {}", num(p.ck_step));
        let _ = writeln!(s, "ck_center = {}", p.ck_center.map_or("none".into(), num));
        let _ = writeln!(s, "ck_decades = {}", p.ck_decades);
        let _ = writeln!(s, "ck_floor = {}", num(p.ck_floor));
        let _ = writeln!(s, "samples = {}", p.samples);
        if !p.pairs.is_empty() {
            let _ = writeln!(s, "pairs = {}", list(&p.pairs));
        }
        let _ = writeln!(s, "pair_base = {}", num(p.pair_base));
        let _ = writeln!(s, "h = {}", p.h);
        let _ = writeln!(s, "n_quantile = {}", p.n_quantile);
        let _ = writeln!(s, "e_step = {}", num(p.e_step));
        let _ = writeln!(s, "e_nx = {}", p.e_nx);
        if self.outputs.report.is_some() || self.outputs.csv_dir.is_some() {
            let _ = writeln!(s, "\n[outputs]");
            if let Some(r) = &self.outputs.report {
                let _ = writeln!(s, "report = {}", r.display());
            }
            if let Some(c) = &self.outputs.csv_dir {
                let _ = writeln!(s, "csv_dir = {}", c.display());
            }
        }
        s
    }

    pub fn domain(&self) -> Result<Domain> {
        make_domain(&DomainSpec {
            kind: self.domain.kind,
            circumference: self.domain.circumference,
        })
    }

    /// Builds the density family described by the `[family]` section.
    pub fn family(&self) -> Result<DensityFamily> {
        let f = &self.family;
        match &f.source {
            FamilySource::Builtin { name, params } => {
                if self.domain.kind != DomainKind::Interval {
                    return Err(Error::Config(format!(
                        "builtin `{name}` lives on the interval"
                    )));
                }
                if f.x_min.is_some() || f.x_max.is_some() {
                    return Err(Error::Config(
                        "builtin families fix their own parameter range".into(),
                    ));
                }
                let mut params = params.clone();
                if let Some(k) = f.k {
                    params.insert("k".into(), k as f64);
                }
                builtin_family(name, &params)
            }
            FamilySource::Expression(text) => {
                let range = ParamRange::new(f.x_min.unwrap_or(0.0), f.x_max.unwrap_or(1.0))?;
                DensityFamily::parse(self.domain()?, text, range, f.k.unwrap_or(2))
            }
        }
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        let p = &self.pipeline;
        let mut o = PipelineOptions {
            mode: p.mode,
            side: p.side,
            v: p.v,
            delta: p.delta,
            nt: p.nt,
            na: p.na,
            tol_push: p.tol_push,
            verify_x: p.verify_x.clone(),
            n_verify: p.n_verify,
            push_cells: p.push_cells,
            push_samples: p.push_samples,
            push_bins: p.push_bins,
            ..PipelineOptions::default()
        };
        o.moser.steps = p.steps;
        o.moser.tol = p.tol_cg;
        o.moser.tol_norm = p.tol_norm;
        o
    }

    /// Envelopes named in the `[envelope]` section for order `k`.
    pub fn envelopes(&self, k: usize) -> Result<Vec<DecayEnvelope>> {
        let e = self
            .envelope
            .as_ref()
            .ok_or_else(|| Error::Config("missing [envelope] section".into()))?;
        let library = envelope_library(k);
        let mut out = Vec::new();
        for name in &e.names {
            if name == "library" {
                out.extend(library.iter().cloned());
                continue;
            }
            let mut env = library
                .iter()
                .find(|l| &l.name == name || l.name == normalise_name(name))
                .cloned()
                .ok_or_else(|| Error::Config(format!("unknown envelope `{name}`")))?;
            if e.scale != 2.0 && env.kind != EnvelopeKind::Unit {
                env = DecayEnvelope::new(env.name, env.kind, e.scale, k)?;
            }
            if let Some(a) = e.closure {
                env.a = a;
            }
            out.push(env);
        }
        if let (Some(es), Some(bs)) = (&e.e, &e.b) {
            let kind = EnvelopeKind::Custom {
                e: parse_density_expression(es)?,
                b: parse_density_expression(bs)?,
            };
            out.push(match e.closure {
                Some(a) => DecayEnvelope::with_constant("custom", kind, e.scale, a)?,
                None => DecayEnvelope::new("custom", kind, e.scale, k)?,
            });
        }
        Ok(out)
    }

    pub fn probe_options(&self) -> ProbeOptions {
        let mut o = ProbeOptions {
            side: self.pipeline.side,
            ..ProbeOptions::default()
        };
        if let Some(e) = &self.envelope {
            o.n_t = e.n_t;
            o.t_min = e.t_min;
            o.n_x = e.n_x;
            o.x_refine = e.x_refine.clone();
        }
        o
    }
}

/// `power(2)` and `power(2.0)` name the same library envelope.
fn normalise_name(name: &str) -> String {
    if let (Some(open), Some(close)) = (name.find('('), name.rfind(')')) {
        if let Ok(v) = name[open + 1..close].trim().parse::<f64>() {
            return format!("{}({v})", &name[..open]);
        }
    }
    name.to_string()
}

fn kind_name(k: DomainKind) -> &'static str {
    match k {
        DomainKind::Interval => "interval",
        DomainKind::Cylinder => "cylinder",
        DomainKind::Torus => "torus",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "command = represent\n[domain]\nkind = interval\n[family]\nbuiltin = h_power\nparam.alpha = 2\n[pipeline]\nv = 1/4\nnt = 256\n";

    #[test]
    fn parses_and_round_trips() {
        let c = RunConfig::parse(BASIC).unwrap();
        assert_eq!(c.pipeline.v, 0.25);
        assert_eq!(c.pipeline.nt, 256);
        let again = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn reports_line_and_column() {
        let text = "command = represent\n[domain]\nkind = interval\n[family]\nbuiltin = affine\n[pipeline]\nv = 1/*4\n";
        match RunConfig::parse(text) {
            Err(Error::ConfigSyntax { line, column, .. }) => {
                assert_eq!(line, 7);
                assert!(column >= 5, "column {column}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_keys_and_small_grids() {
        let bad = BASIC.replace("nt = 256", "bogus = 1");
        assert!(matches!(
            RunConfig::parse(&bad),
            Err(Error::ConfigSyntax { line: 9, .. })
        ));
        let small = BASIC.replace("nt = 256", "nt = 8");
        assert!(RunConfig::parse(&small).is_err());
    }

    #[test]
    fn missing_envelope_is_an_error() {
        let text = BASIC.replace("represent", "check-assumptions");
        assert!(matches!(RunConfig::parse(&text), Err(Error::Config(_))));
    }

    #[test]
    fn envelope_names() {
        let text = format!(
            "{}[envelope]\nnames = power(2), log\n",
            BASIC.replace("represent", "check-assumptions")
        );
        let c = RunConfig::parse(&text).unwrap();
        let envs = c.envelopes(2).unwrap();
        assert_eq!(envs.len(), 2);
        assert_eq!(envs[0].name, "power(2)");
    }
}
