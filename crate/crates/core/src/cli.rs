//! Command-line front end. Every subcommand prints a JSON [`Report`] on
//! stdout and exits with 0 on pass, 1 on a numeric failure and 2 on bad
//! input.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::bundles::{generalized_gbc, PlaneBundle};
use crate::gbc::verify_gbc;
use crate::geometry::Atlas;
use crate::heat::{supertrace, SpectrumModel};
use crate::index::{index_sum, VectorFieldSpec};
use crate::library::{builtin_manifold, manifold_info, MANIFOLDS};
use crate::mq::run_checks;
use crate::report::{Check, Report};
use crate::specfile;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gbcheck", version, about = "Numerical checks of Gauss-Bonnet-Chern and related index theorems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Source {
    /// Built-in manifold name
    #[arg(long, conflicts_with = "spec")]
    pub manifold: Option<String>,
    /// Manifold spec file (TOML)
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Parameter override, `name=value`
    #[arg(long = "param", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the Euler form and compare with the Euler characteristic
    VerifyGbc {
        #[command(flatten)]
        source: Source,
        /// Nodes per axis
        #[arg(long)]
        res: Option<usize>,
        /// Richardson extrapolation over three resolutions
        #[arg(long)]
        extrapolate: bool,
        /// Absolute tolerance on χ (defaults per manifold)
        #[arg(long)]
        tol: Option<f64>,
        /// Write the convergence table here
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sum the local indices of a vector field or bundle section
    Index {
        #[command(flatten)]
        source: Source,
        /// Vector field name (defaults to the first one)
        #[arg(long)]
        field: Option<String>,
        /// Section `z^k` of the plane bundle `k=K`
        #[arg(long, value_parser = parse_bundle, conflicts_with_all = ["manifold", "spec"])]
        bundle: Option<i32>,
        /// Cells per axis of the zero scan
        #[arg(long, default_value_t = 48)]
        res: usize,
    },
    /// Euler number of a plane bundle over the sphere from transition
    /// functions, the Pfaffian of a connection and a section
    EulerClass {
        /// Clutching degree, `k=K`
        #[arg(long, value_parser = parse_bundle)]
        bundle: Option<i32>,
        /// Bundle spec file (TOML with a [bundle] table)
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Use the pole-swapped trivializations
        #[arg(long)]
        swap: bool,
        /// Base quadrature nodes per axis
        #[arg(long, default_value_t = 96)]
        res: usize,
        /// Absolute tolerance on the Euler number
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        /// Write the checks table here
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Thom form checks of a plane bundle
    Mq {
        /// Clutching degree, `k=K`
        #[arg(long, value_parser = parse_bundle)]
        bundle: Option<i32>,
        /// Bundle spec file (TOML with a [bundle] table)
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Gauss-Hermite nodes per fiber axis
        #[arg(long, default_value_t = 40)]
        fiber_nodes: usize,
        /// Base quadrature nodes per axis for the Euler number
        #[arg(long, default_value_t = 64)]
        res: usize,
        /// Random base points for the pointwise checks
        #[arg(long, default_value_t = 10)]
        points: usize,
        /// Tolerance on the fiber integral
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Write the checks table here
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Heat supertraces on model spaces
    Heat {
        /// Flat torus of dimension 1 to 4, or the round 2-sphere
        #[arg(long, value_enum)]
        space: Space,
        /// Comma-separated times
        #[arg(long = "t", value_delimiter = ',', default_values_t = [0.05, 0.2, 1.0])]
        times: Vec<f64>,
        /// Bound on the truncated spectral tail
        #[arg(long, default_value_t = 1e-12)]
        tail_tol: f64,
        /// Tolerance on the supertrace
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Sphere radius or torus period
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Write the checks table here
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the built-in battery and print a pass/fail matrix
    Selftest {
        /// Include the slow tier
        #[arg(long)]
        slow: bool,
        /// Write the matrix here
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Space {
    T1,
    T2,
    T3,
    T4,
    S2,
}

impl Space {
    pub fn model(self, scale: f64) -> SpectrumModel {
        match self {
            Space::T1 => SpectrumModel::FlatTorus { periods: vec![scale; 1] },
            Space::T2 => SpectrumModel::FlatTorus { periods: vec![scale; 2] },
            Space::T3 => SpectrumModel::FlatTorus { periods: vec![scale; 3] },
            Space::T4 => SpectrumModel::FlatTorus { periods: vec![scale; 4] },
            Space::S2 => SpectrumModel::RoundS2 { radius: scale },
        }
    }

    pub fn euler_characteristic(self) -> i64 {
        if self == Space::S2 {
            2
        } else {
            0
        }
    }
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got \"{s}\""))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("parameter {k}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_bundle(s: &str) -> Result<i32, String> {
    let v = s.strip_prefix("k=").unwrap_or(s);
    v.trim().parse().map_err(|e| format!("bundle degree \"{s}\": {e}"))
}

/// A failure before any numerics ran.
#[derive(Debug)]
pub struct InputError(pub String);

impl<E: std::fmt::Display> From<E> for InputError {
    fn from(e: E) -> Self {
        InputError(e.to_string())
    }
}

struct Loaded {
    name: String,
    atlas: Atlas,
    fields: Vec<VectorFieldSpec>,
    tolerance: f64,
    default_res: usize,
}

fn load_source(source: &Source) -> Result<Loaded, InputError> {
    match (&source.manifold, &source.spec) {
        (Some(name), None) => {
            let m = builtin_manifold(name, &source.params)?;
            Ok(Loaded {
                name: name.clone(),
                atlas: m.atlas,
                fields: m.fields,
                tolerance: m.info.tolerance,
                default_res: m.info.default_res,
            })
        }
        (None, Some(path)) => {
            if !source.params.is_empty() {
                return Err(InputError("--param applies to built-in manifolds; edit [params] in the manifold file".into()));
            }
            let spec = specfile::load(path)?;
            let atlas = spec
                .atlas
                .ok_or_else(|| InputError(format!("{} declares no charts", path.display())))?;
            Ok(Loaded {
                name: spec.name,
                atlas,
                fields: spec.fields,
                tolerance: spec.tolerance.unwrap_or(1e-6),
                default_res: 64,
            })
        }
        _ => Err(InputError("pass exactly one of --manifold or --spec".into())),
    }
}

fn load_bundle(bundle: Option<i32>, spec: &Option<PathBuf>) -> Result<(PlaneBundle, i64), InputError> {
    match (bundle, spec) {
        (Some(k), None) => Ok((PlaneBundle::new(k), k as i64)),
        (None, Some(path)) => {
            let s = specfile::load(path)?;
            let b = s
                .bundle
                .ok_or_else(|| InputError(format!("{} has no [bundle] block", path.display())))?;
            Ok((b, s.expected_euler.unwrap_or(0)))
        }
        _ => Err(InputError("pass exactly one of --bundle k=K or --spec".into())),
    }
}

fn write_csv(path: &Option<PathBuf>, text: String) -> Result<(), InputError> {
    if let Some(p) = path {
        std::fs::write(p, text).map_err(|e| InputError(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

pub fn cmd_verify_gbc(source: &Source, res: Option<usize>, extrapolate: bool, tol: Option<f64>) -> Result<Report, InputError> {
    let loaded = load_source(source)?;
    let res = res.unwrap_or(loaded.default_res);
    let tol = tol.unwrap_or(loaded.tolerance);
    let g = verify_gbc(&loaded.atlas, res, extrapolate)?;
    let inputs = json!({
        "manifold": loaded.name,
        "params": source.params.iter().map(|(k, v)| (k.clone(), json!(v))).collect::<serde_json::Map<_, _>>(),
        "res": res,
        "extrapolate": extrapolate,
        "tol": tol,
    });
    let mut report = Report::from_checks(
        "verify-gbc",
        inputs,
        vec![Check::new("euler_integral", g.integral, g.expected_chi as f64, tol)],
    )
    .with_convergence(&g.convergence, g.extrapolated);
    report.details = json!({ "raw": g.raw, "error_estimate": g.error_estimate });
    Ok(report)
}

pub fn cmd_index(source: &Source, field: Option<&str>, bundle: Option<i32>, res: usize) -> Result<Report, InputError> {
    let (label, spec) = match bundle {
        Some(k) => (format!("bundle k={k}"), PlaneBundle::new(k).section()?),
        None => {
            let loaded = load_source(source)?;
            let f = match field {
                Some(n) => loaded.fields.iter().find(|f| f.name == n),
                None => loaded.fields.first(),
            }
            .ok_or_else(|| {
                InputError(format!(
                    "{} has no field {} (available: {})",
                    loaded.name,
                    field.unwrap_or("<default>"),
                    loaded.fields.iter().map(|f| f.name.as_str()).collect::<Vec<_>>().join(", ")
                ))
            })?;
            (loaded.name.clone(), f.clone())
        }
    };
    let r = index_sum(&spec, res)?;
    let inputs = json!({ "source": label, "field": spec.name, "res": res });
    let report = Report::from_checks(
        "index",
        inputs,
        vec![Check::new("index_sum", r.sum as f64, r.expected as f64, 0.5)],
    );
    Ok(report.with_details(json!({ "zeros": r.zeros, "warnings": r.warnings })))
}

pub fn cmd_euler_class(bundle: &PlaneBundle, expected: i64, res: usize, tol: f64) -> Result<Report, InputError> {
    let b = generalized_gbc(bundle, res, 48)?;
    let e = expected as f64;
    let checks = vec![
        Check::new("transition_integral", b.transition_integral, e, tol),
        Check::new("pfaffian_integral", b.pfaffian_integral, e, tol),
        Check::new("clutching_winding", b.clutching_winding, e, tol),
        Check::new("section_degree", b.section_degree as f64, e, 0.5),
    ];
    let inputs = json!({ "k": bundle.k, "swapped": bundle.is_swapped(), "res": res, "tol": tol });
    Ok(Report::from_checks("euler-class", inputs, checks).with_details(serde_json::to_value(&b)?))
}

pub fn cmd_mq(bundle: &PlaneBundle, expected: i64, fiber_nodes: usize, res: usize, points: usize, tol: f64) -> Result<Report, InputError> {
    let m = run_checks(bundle, fiber_nodes, res, points)?;
    let checks = vec![
        Check::new("euler_number", m.euler_number, expected as f64, 1e-5),
        Check::residual("fiber_integral", m.max_fiber_error, tol),
        Check::residual("zero_section_pullback", m.max_pullback_residual, 1e-10),
        Check::residual("closedness", m.max_closedness, 1e-7),
        Check::residual("q_annihilation", m.max_q_residual, 1e-7),
    ];
    let inputs = json!({ "k": bundle.k, "fiber_nodes": fiber_nodes, "res": res, "points": points, "tol": tol });
    Ok(Report::from_checks("mq", inputs, checks).with_details(serde_json::to_value(&m)?))
}

pub fn cmd_heat(space: Space, scale: f64, times: &[f64], tail_tol: f64, tol: f64) -> Result<Report, InputError> {
    if times.is_empty() {
        return Err(InputError("--t needs at least one time".into()));
    }
    let model = space.model(scale);
    let chi = space.euler_characteristic() as f64;
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    for &t in times {
        let s = supertrace(&model, t, tail_tol)?;
        checks.push(Check::new(format!("supertrace t={t}"), s.value, chi, tol));
        rows.push(json!({ "t": t, "supertrace": s.value, "tail_bound": s.tail_bound }));
    }
    let inputs = json!({ "space": format!("{space:?}").to_lowercase(), "scale": scale, "t": times, "tail_tol": tail_tol, "tol": tol });
    Ok(Report::from_checks("heat", inputs, checks).with_details(json!({ "model": model, "samples": rows })))
}

/// One row of the self-test matrix.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SelftestRow {
    pub area: String,
    pub case: String,
    pub pass: bool,
    pub detail: String,
}

fn row_from(area: &str, case: &str, r: Result<Report, InputError>) -> SelftestRow {
    match r {
        Ok(rep) => {
            let worst = rep
                .checks
                .iter()
                .find(|c| !c.pass)
                .unwrap_or(&rep.checks[0]);
            SelftestRow {
                area: area.into(),
                case: case.into(),
                pass: rep.pass,
                detail: format!("{} = {:.12} (err {:.2e}, tol {:.0e})", worst.name, worst.value, worst.abs_error, worst.tolerance),
            }
        }
        Err(e) => SelftestRow {
            area: area.into(),
            case: case.into(),
            pass: false,
            detail: format!("error: {}", e.0),
        },
    }
}

/// Runs every built-in manifold, field, bundle and spectral model.
pub fn cmd_selftest(slow: bool) -> Vec<SelftestRow> {
    let mut rows = Vec::new();
    for info in MANIFOLDS {
        if info.slow && !slow {
            continue;
        }
        if info.name == "sphere3" {
            let r = cmd_verify_gbc(&builtin(info.name), None, false, None);
            rows.push(SelftestRow {
                area: "gbc".into(),
                case: info.name.into(),
                pass: matches!(&r, Err(e) if e.0.contains("odd dimension")),
                detail: "odd dimension is rejected".into(),
            });
            continue;
        }
        let extrapolate = info.name == "sphere4";
        rows.push(row_from("gbc", info.name, cmd_verify_gbc(&builtin(info.name), None, extrapolate, None)));
    }
    for name in ["sphere2", "torus2"] {
        if let Ok(m) = builtin_manifold(name, &[]) {
            for f in &m.fields {
                let case = format!("{name}/{}", f.name);
                rows.push(row_from("index", &case, cmd_index(&builtin(name), Some(&f.name), None, 48)));
            }
        }
    }
    for k in -2..=3 {
        let b = PlaneBundle::new(k);
        rows.push(row_from("bundle", &format!("k={k}"), cmd_euler_class(&b, k as i64, 64, 1e-5)));
        rows.push(row_from("bundle", &format!("k={k} swapped"), cmd_euler_class(&b.swapped(), k as i64, 64, 1e-5)));
    }
    rows.push(row_from("mq", "k=2", cmd_mq(&PlaneBundle::new(2), 2, 40, 64, 10, 1e-8)));
    for space in [Space::T1, Space::T2, Space::T3, Space::T4, Space::S2] {
        let case = format!("{space:?}").to_lowercase();
        rows.push(row_from("heat", &case, cmd_heat(space, 1.0, &[0.05, 0.2, 1.0, 2.0], 1e-12, 1e-10)));
    }
    rows
}

fn builtin(name: &str) -> Source {
    Source {
        manifold: Some(name.to_string()),
        ..Source::default()
    }
}

fn configure_threads() -> Result<(), InputError> {
    if let Ok(v) = std::env::var("GBC_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| InputError(format!("GBC_THREADS must be a positive integer, got \"{v}\"")))?;
        if n == 0 {
            return Err(InputError("GBC_THREADS must be positive".into()));
        }
        // a pool that is already built keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn emit(mut report: Report, start: Instant) -> i32 {
    report.wall_time = Some(start.elapsed().as_secs_f64());
    println!("{}", report.to_json());
    if report.pass {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

/// Runs a parsed command and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let start = Instant::now();
    let result: Result<i32, InputError> = (|| {
        configure_threads()?;
        Ok(match cli.command {
            Command::VerifyGbc { source, res, extrapolate, tol, csv } => {
                if let Some(name) = &source.manifold {
                    manifold_info(name)?;
                }
                let r = cmd_verify_gbc(&source, res, extrapolate, tol)?;
                write_csv(&csv, r.convergence_csv())?;
                emit(r, start)
            }
            Command::Index { source, field, bundle, res } => emit(cmd_index(&source, field.as_deref(), bundle, res)?, start),
            Command::EulerClass { bundle, spec, swap, res, tol, csv } => {
                let (b, expected) = load_bundle(bundle, &spec)?;
                let b = if swap { b.swapped() } else { b };
                let r = cmd_euler_class(&b, expected, res, tol)?;
                write_csv(&csv, r.checks_csv())?;
                emit(r, start)
            }
            Command::Mq { bundle, spec, fiber_nodes, res, points, tol, csv } => {
                let (b, expected) = load_bundle(bundle, &spec)?;
                let r = cmd_mq(&b, expected, fiber_nodes, res, points, tol)?;
                write_csv(&csv, r.checks_csv())?;
                emit(r, start)
            }
            Command::Heat { space, times, tail_tol, tol, scale, csv } => {
                let r = cmd_heat(space, scale, &times, tail_tol, tol)?;
                write_csv(&csv, r.checks_csv())?;
                emit(r, start)
            }
            Command::Selftest { slow, csv } => {
                let rows = cmd_selftest(slow);
                let mut table = String::from("area,case,pass,detail\n");
                for r in &rows {
                    eprintln!("{:<7} {:<28} {:<4} {}", r.area, r.case, if r.pass { "PASS" } else { "FAIL" }, r.detail);
                    table.push_str(&format!("{},{},{},\"{}\"\n", r.area, r.case, r.pass, r.detail));
                }
                write_csv(&csv, table)?;
                let all = rows.iter().all(|r| r.pass);
                let json = json!({
                    "command": "selftest",
                    "rows": rows,
                    "pass": all,
                    "wall_time": start.elapsed().as_secs_f64(),
                });
                println!("{}", serde_json::to_string_pretty(&json).expect("serializes"));
                if all {
                    EXIT_PASS
                } else {
                    EXIT_FAIL
                }
            }
        })
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.0);
            EXIT_INPUT
        }
    }
}

/// Parses `std::env::args` and runs.
pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_PASS };
            let _ = e.print();
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("gbcheck").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn argument_parsing() {
        let c = parse(&["verify-gbc", "--manifold", "sphere2", "--param", "r=2", "--res", "64"]);
        match c.command {
            Command::VerifyGbc { source, res, .. } => {
                assert_eq!(source.params, vec![("r".to_string(), 2.0)]);
                assert_eq!(res, Some(64));
            }
            _ => panic!(),
        }
        let c = parse(&["heat", "--space", "s2", "--t", "0.05,0.2,1"]);
        assert!(matches!(c.command, Command::Heat { ref times, .. } if times == &vec![0.05, 0.2, 1.0]));
        assert!(matches!(parse(&["mq", "--bundle", "k=2"]).command, Command::Mq { bundle: Some(2), .. }));
        assert!(Cli::try_parse_from(["gbcheck", "verify-gbc", "--manifold", "a", "--spec", "b"]).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(parse(&["verify-gbc", "--manifold", "torus2"])), EXIT_PASS);
        assert_eq!(run(parse(&["verify-gbc", "--manifold", "sphere3"])), EXIT_INPUT);
        assert_eq!(run(parse(&["verify-gbc", "--manifold", "nowhere"])), EXIT_INPUT);
        assert_eq!(run(parse(&["verify-gbc", "--manifold", "sphere2", "--res", "4", "--tol", "1e-12"])), EXIT_FAIL);
    }

    #[test]
    fn odd_dimension_message() {
        let e = cmd_verify_gbc(&builtin("sphere3"), None, false, None).unwrap_err();
        assert!(e.0.contains("odd dimension"), "{}", e.0);
    }

    #[test]
    fn heat_report() {
        let r = cmd_heat(Space::S2, 1.0, &[0.05, 0.2, 1.0], 1e-12, 1e-10).unwrap();
        assert!(r.pass);
        assert_eq!(r.checks.len(), 3);
        let a = cmd_heat(Space::T2, 1.0, &[0.1], 1e-12, 1e-10).unwrap();
        assert_eq!(a.to_json_deterministic(), cmd_heat(Space::T2, 1.0, &[0.1], 1e-12, 1e-10).unwrap().to_json_deterministic());
    }
}
