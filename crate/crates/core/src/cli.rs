//! Batch commands behind the `moser-transport` binary.
//!
//! Exit codes: 0 every check passed, 1 configuration error, 2 a check failed
//! or a blow-up was detected, 3 the construction itself failed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{CkMap, Command, RunConfig};
use crate::density::{check_decay_assumptions, AssumptionReport, DensityFamily, Verdict};
use crate::diagnostics::{
    expectation_curve, lipschitz_obstruction, ExpectationCurve, ObstructionReport,
    ObstructionVerdict, SmoothnessVerdict,
};
use crate::error::{Error, Result};
use crate::expr::parse_density_expression;
use crate::fd::FdStep;
use crate::geometry::{DomainKind, Point};
use crate::quadrature::{geomspace, linspace};
use crate::transport::{
    estimate_uniform_ck, log_refined_line, random_map_ks, sample_random_maps, CkReport, CkVerdict,
    ConstructionSummary, ParametricMap, QuantileSource, QuantileTransport, TransportFamily,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_FAIL: i32 = 2;
pub const EXIT_CONSTRUCTION: i32 = 3;

/// Exit code for an error raised while running a command.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::ConfigSyntax { .. } | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_CONSTRUCTION,
    }
}

/// Where a command writes its files.
#[derive(Debug, Clone, Default)]
pub struct OutputPlan {
    pub report: Option<PathBuf>,
    pub csv_dir: Option<PathBuf>,
}

impl OutputPlan {
    /// Paths from the config, resolved against `out`; without either,
    /// nothing is written and the report goes to stdout only.
    pub fn resolve(cfg: &RunConfig, out: Option<&Path>) -> OutputPlan {
        let join = |p: &PathBuf| match out {
            Some(o) if p.is_relative() => o.join(p),
            _ => p.clone(),
        };
        OutputPlan {
            report: cfg
                .outputs
                .report
                .as_ref()
                .map(join)
                .or_else(|| out.map(|o| o.join(format!("{}.json", cfg.command.name())))),
            csv_dir: cfg
                .outputs
                .csv_dir
                .as_ref()
                .map(join)
                .or_else(|| out.map(Path::to_path_buf)),
        }
    }
}

/// Result of one command: the exit code, the JSON report and CSV tables.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub code: i32,
    pub report: String,
    pub tables: Vec<(String, String)>,
}

impl Outcome {
    /// Writes the report and tables atomically.
    pub fn write(&self, plan: &OutputPlan) -> Result<()> {
        if let Some(r) = &plan.report {
            write_atomic(r, self.report.as_bytes())?;
        }
        if let Some(dir) = &plan.csv_dir {
            for (name, body) in &self.tables {
                write_atomic(&dir.join(name), body.as_bytes())?;
            }
        }
        Ok(())
    }
}

/// Writes to a temporary sibling, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("`{}` is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::from(e)
    })
}

/// `%.17g`: 17 significant digits, trailing zeros dropped.
pub fn fmt_g17(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{v:.16e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}"))
    } else {
        format!(
            "{}e{}{:02}",
            trim(mant),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    }
}

fn csv_row(out: &mut String, cells: &[f64]) {
    let row: Vec<String> = cells.iter().map(|v| fmt_g17(*v)).collect();
    out.push_str(&row.join(","));
    out.push('\n');
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)
        .map_err(|e| Error::Config(format!("report serialisation: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn log(verbose: bool, msg: impl AsRef<str>) {
    if verbose {
        eprintln!("[moser-transport] {}", msg.as_ref());
    }
}

/// Runs the command named in the configuration.
pub fn run(cfg: &RunConfig, verbose: bool) -> Outcome {
    let result = match cfg.command {
        Command::Represent => cmd_represent(cfg, verbose),
        Command::CheckAssumptions => cmd_check_assumptions(cfg, verbose),
        Command::Obstruct => cmd_obstruct(cfg, verbose),
    };
    result.unwrap_or_else(|e| error_outcome(cfg.command, &e))
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    command: &'a str,
    status: &'a str,
    error: String,
}

/// Report for a command that could not run to completion.
pub fn error_outcome(command: Command, err: &Error) -> Outcome {
    let code = exit_code_for(err);
    let report = ErrorReport {
        command: command.name(),
        status: if code == EXIT_CONFIG {
            "CONFIG-ERROR"
        } else {
            "CONSTRUCTION-ERROR"
        },
        error: err.to_string(),
    };
    Outcome {
        code,
        report: to_json(&report).unwrap_or_default(),
        tables: Vec::new(),
    }
}

#[derive(Serialize)]
struct RandomMapsReport {
    seed: u64,
    samples: usize,
    /// Kolmogorov-Smirnov distance of `T_x(ω_i)` to `ρ_x`, per checked `x`.
    ks: Vec<(f64, f64)>,
}

#[derive(Serialize)]
struct RepresentReport {
    command: &'static str,
    status: &'static str,
    construction: ConstructionSummary,
    ck: Option<CkReport>,
    random_maps: Option<RandomMapsReport>,
}

fn ck_parameters(cfg: &RunConfig, fam: &DensityFamily) -> (Vec<f64>, FdStep) {
    let p = &cfg.pipeline;
    let range = fam.params();
    match p.ck_center {
        Some(c) => {
            let reach = (range.hi - c).max(c - range.lo);
            let side = if range.hi - c >= c - range.lo {
                1.0
            } else {
                -1.0
            };
            let lo = reach * 10f64.powi(-(p.ck_decades.max(1) as i32));
            let xs = geomspace(lo, 0.9 * reach, p.ck_nx.max(2))
                .into_iter()
                .map(|d| c + side * d)
                .collect();
            (
                xs,
                FdStep::Relative {
                    frac: p.ck_step,
                    floor: 1e-12,
                    center: c,
                },
            )
        }
        None => (
            range.samples(p.ck_nx.max(2)),
            FdStep::Absolute { h: p.ck_step },
        ),
    }
}

fn ck_probe_points(fam: &DensityFamily, floor: f64) -> Vec<Point> {
    let line = log_refined_line(32, floor, 4);
    let d = fam.domain();
    match d.kind() {
        DomainKind::Interval => line,
        _ => {
            let period = d.circumference();
            let mut pts = Vec::new();
            for k in 0..8 {
                let a = period * k as f64 / 8.0;
                pts.extend(line.iter().map(|p| Point::new(a, p.t)));
            }
            pts
        }
    }
}

/// Builds the representation, verifies pushforwards, probes `C^k` bounds
/// and optionally draws random maps.
pub fn cmd_represent(cfg: &RunConfig, verbose: bool) -> Result<Outcome> {
    let fam = cfg.family()?;
    let opts = cfg.pipeline_options();
    log(
        verbose,
        format!("building representation of {}", fam.name()),
    );
    let mut tf = TransportFamily::new(&fam, &opts)?;
    let summary = tf.verify()?.clone();
    log(
        verbose,
        format!("pushforward checks pass = {}", summary.pass),
    );

    let mut maps = String::from("x,a,t,image_a,image_t\n");
    let mut collar = String::from("x,a,t,gbar,dgbar\n");
    let mut push = String::from("x,l1,pass,nu_min,t_star,mc_error_bar\n");
    let d = *fam.domain();
    let ts = linspace(0.0, 1.0, 129);
    let as_: Vec<f64> = match d.kind() {
        DomainKind::Interval => vec![0.0],
        _ => (0..16)
            .map(|k| d.circumference() * k as f64 / 16.0)
            .collect(),
    };
    for v in &summary.verifications {
        let map = tf.map_at(v.x)?;
        let pts: Vec<Point> = as_
            .iter()
            .flat_map(|&a| ts.iter().map(move |&t| Point::new(a, t)))
            .collect();
        let images = map.eval_many(&pts)?;
        for (p, q) in pts.iter().zip(&images) {
            csv_row(&mut maps, &[v.x, p.a, p.t, q.a, q.t]);
        }
        if let Some(cm) = map.collar() {
            for &a in &as_ {
                for &t in &ts {
                    let (g, dg) = cm.gbar(a, t);
                    csv_row(&mut collar, &[v.x, a, t, g, dg]);
                }
            }
        }
        csv_row(
            &mut push,
            &[
                v.x,
                v.l1,
                if v.pass { 1.0 } else { 0.0 },
                v.nu_min,
                v.t_star.unwrap_or(f64::NAN),
                v.mc_error_bar.unwrap_or(f64::NAN),
            ],
        );
    }

    let p = &cfg.pipeline;
    let ck = if p.ck_order > 0 {
        let (xs, step) = ck_parameters(cfg, &fam);
        let m_grid = ck_probe_points(&fam, p.ck_floor);
        log(
            verbose,
            format!("C^{} probe over {} parameters", p.ck_order, xs.len()),
        );
        let report = match p.ck_map {
            CkMap::Pipeline => estimate_uniform_ck(&tf, &m_grid, p.ck_order, &xs, step)?,
            CkMap::Quantile => {
                let source = QuantileSource::Member(p.ck_center.unwrap_or(fam.params().lo));
                let q = QuantileTransport::new(&fam, source)?;
                estimate_uniform_ck(&q as &dyn ParametricMap, &m_grid, p.ck_order, &xs, step)?
            }
        };
        Some(report)
    } else {
        None
    };
    let mut ck_csv = String::from("order,floor,sup\n");
    if let Some(r) = &ck {
        for o in &r.orders {
            for &(floor, sup) in &o.by_floor {
                csv_row(&mut ck_csv, &[o.order as f64, floor, sup]);
            }
        }
    }

    let random_maps = if p.samples > 0 {
        let seed = p.seed;
        let draws = sample_random_maps(&tf, p.samples, seed)?;
        let mut ks = Vec::new();
        if d.kind() == DomainKind::Interval {
            for v in &summary.verifications {
                ks.push((v.x, random_map_ks(&tf, &draws, v.x)?));
            }
        }
        Some(RandomMapsReport {
            seed,
            samples: p.samples,
            ks,
        })
    } else {
        None
    };

    let ck_ok = ck
        .as_ref()
        .map_or(true, |r| r.verdict == CkVerdict::Bounded);
    let pass = summary.pass && ck_ok;
    let report = RepresentReport {
        command: "represent",
        status: if pass { "PASS" } else { "FAIL" },
        construction: summary,
        ck,
        random_maps,
    };
    Ok(Outcome {
        code: if pass { EXIT_PASS } else { EXIT_FAIL },
        report: to_json(&report)?,
        tables: vec![
            ("maps.csv".into(), maps),
            ("collar.csv".into(), collar),
            ("ck.csv".into(), ck_csv),
            ("pushforward.csv".into(), push),
        ],
    })
}

#[derive(Serialize)]
struct AssumptionsReport {
    command: &'static str,
    status: &'static str,
    family: String,
    k: usize,
    /// Envelopes under which all inequalities held.
    passing: Vec<String>,
    reports: Vec<AssumptionReport>,
}

/// Checks the decay assumptions against every configured envelope; the
/// family passes when at least one envelope works.
pub fn cmd_check_assumptions(cfg: &RunConfig, verbose: bool) -> Result<Outcome> {
    let fam = cfg.family()?;
    let k = fam.order();
    let envs = cfg.envelopes(k)?;
    let opts = cfg.probe_options();
    let mut reports = Vec::new();
    for env in &envs {
        log(verbose, format!("checking envelope {}", env.name));
        reports.push(check_decay_assumptions(&fam, env, k, &opts)?);
    }
    let passing: Vec<String> = reports
        .iter()
        .filter(|r| r.verdict == Verdict::Pass)
        .map(|r| r.envelope.clone())
        .collect();
    let status = if !passing.is_empty() {
        "PASS"
    } else if reports.iter().any(|r| r.verdict == Verdict::Fail) {
        "FAIL"
    } else {
        "INCONCLUSIVE"
    };
    let mut csv = String::from("envelope,condition,beta,j,margin,x,a,t\n");
    for r in &reports {
        for m in &r.margins {
            let _ = write!(csv, "{},{:?},", r.envelope.replace(',', ";"), m.condition);
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                m.beta,
                m.j,
                fmt_g17(m.margin),
                fmt_g17(m.x),
                fmt_g17(m.a),
                fmt_g17(m.t)
            );
        }
    }
    let report = AssumptionsReport {
        command: "check-assumptions",
        status,
        family: fam.name().to_string(),
        k,
        passing,
        reports,
    };
    Ok(Outcome {
        code: if status == "PASS" {
            EXIT_PASS
        } else {
            EXIT_FAIL
        },
        report: to_json(&report)?,
        tables: vec![("margins.csv".into(), csv)],
    })
}

#[derive(Serialize)]
struct ObstructReport {
    command: &'static str,
    status: &'static str,
    family: String,
    obstruction: ObstructionReport,
    expectation: ExpectationCurve,
}

/// Runs the Lipschitz obstruction and the smoothness test of `E_h`.
pub fn cmd_obstruct(cfg: &RunConfig, verbose: bool) -> Result<Outcome> {
    let fam = cfg.family()?;
    let p = &cfg.pipeline;
    let pairs: Vec<(f64, f64)> = p
        .pairs
        .iter()
        .map(|&x| (p.pair_base + x, p.pair_base))
        .collect();
    log(
        verbose,
        format!("W-infinity ratios over {} pairs", pairs.len()),
    );
    let obstruction = lipschitz_obstruction(&fam, &pairs, p.n_quantile)?;
    let h = parse_density_expression(&p.h)?;
    let range = fam.params();
    let reach = 2.0 * p.e_step;
    let lo = range.lo + reach;
    let hi = range.hi - reach;
    if !(lo < hi) {
        return Err(Error::Config(format!(
            "e_step = {} is too large for the parameter range",
            p.e_step
        )));
    }
    let mut xs = linspace(lo, hi, p.e_nx.max(2));
    if range.contains(p.pair_base)
        && p.pair_base > lo
        && p.pair_base < hi
        && !xs.contains(&p.pair_base)
    {
        xs.push(p.pair_base);
        xs.sort_by(f64::total_cmp);
    }
    let expectation = expectation_curve(
        &fam,
        &h,
        &xs,
        fam.order().max(2),
        FdStep::Absolute { h: p.e_step },
    )?;
    let blowup = obstruction.verdict == ObstructionVerdict::BlowupDetected;
    let nonsmooth = expectation.verdict == SmoothnessVerdict::NonsmoothSuspect;
    let status = if blowup || nonsmooth {
        "FINDING"
    } else {
        "CLEAR"
    };

    let mut pairs_csv = String::from("x,y,w_inf,ratio\n");
    for r in &obstruction.pairs {
        csv_row(&mut pairs_csv, &[r.x, r.y, r.w_inf, r.ratio]);
    }
    let mut curve_csv = String::from("x,value,d1,d2\n");
    for pt in &expectation.points {
        let d = |j: usize| pt.derivatives.get(j).map_or(f64::NAN, |r| r.fine);
        csv_row(&mut curve_csv, &[pt.x, pt.value, d(0), d(1)]);
    }
    let report = ObstructReport {
        command: "obstruct",
        status,
        family: fam.name().to_string(),
        obstruction,
        expectation,
    };
    Ok(Outcome {
        code: if blowup || nonsmooth {
            EXIT_FAIL
        } else {
            EXIT_PASS
        },
        report: to_json(&report)?,
        tables: vec![
            ("obstruction.csv".into(), pairs_csv),
            ("expectation.csv".into(), curve_csv),
        ],
    })
}

/// Reads, parses and runs a configuration file, writing outputs.
/// `command` overrides the one named in the file.
pub fn run_file(
    path: &Path,
    command: Option<Command>,
    out: Option<&Path>,
    seed: Option<u64>,
    verbose: bool,
) -> (Outcome, OutputPlan) {
    let cfg = fs::read_to_string(path)
        .map_err(Error::from)
        .and_then(|text| RunConfig::parse(&text));
    let mut cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            let outcome = Outcome {
                code: EXIT_CONFIG,
                report: to_json(&ErrorReport {
                    command: "unknown",
                    status: "CONFIG-ERROR",
                    error: e.to_string(),
                })
                .unwrap_or_default(),
                tables: Vec::new(),
            };
            return (outcome, OutputPlan::default());
        }
    };
    if let Some(c) = command {
        cfg.command = c;
    }
    if let Some(s) = seed {
        cfg.pipeline.seed = s;
    }
    let plan = OutputPlan::resolve(&cfg, out);
    (run(&cfg, verbose), plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_formatting() {
        assert_eq!(fmt_g17(0.1), "0.10000000000000001");
        assert_eq!(fmt_g17(1.0), "1");
        assert_eq!(fmt_g17(-2.5), "-2.5");
        assert_eq!(fmt_g17(1e-7), "9.9999999999999995e-08");
        assert_eq!(fmt_g17(1e20), "1e+20");
        assert_eq!(fmt_g17(123456.0), "123456");
        for v in [0.1, 1.0 / 3.0, 1e-300, 6.02e23, -7.5e-5] {
            assert_eq!(fmt_g17(v).parse::<f64>().unwrap(), v);
        }
    }
}
