//! Manifold spec files: TOML documents declaring charts, metrics, vector
//! fields and an optional plane bundle.
//!
//! ```toml
//! schema = 1
//! name = "ellipsoid"
//! dim = 2
//! expected_chi = 2
//! tolerance = 1e-6
//!
//! [params]
//! c = 1.5
//!
//! [[chart]]
//! name = "polar"
//! coords = ["th", "ph"]
//! ranges = [["0", "pi"], ["0", "2*pi"]]
//! periodic = [false, true]
//! # upper triangle, row by row
//! metric = [["c^2*sin(th)^2 + cos(th)^2", "0"], ["sin(th)^2"]]
//!
//! [[field]]
//! name = "gradient"
//! components = [["sin(th)*cos(th)", "0"]]
//!
//! [bundle]
//! k = 2
//! ```
//!
//! Atlases with several charts need a `weight` on every chart (a partition
//! of unity) and `[[overlap]]` maps `{ from, to, map }` between charts.
//! Bundle blocks may override `rho` and `phi` in the annulus coordinates
//! `(r, t)` and set the inner radius `a`.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::bundles::{BundleError, PartitionProfile, PlaneBundle};
use crate::expr::{Expr, ParseError};
use crate::geometry::{Atlas, Chart, Coverage, GeometryError, OverlapMap};
use crate::index::VectorFieldSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Toml { path: String, message: String },
    #[error("{path}:{line}: cannot parse {what} \"{text}\": {source}")]
    Expr {
        path: String,
        line: usize,
        what: String,
        text: String,
        source: Box<ParseError>,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: {source}")]
    Geometry { path: String, source: Box<GeometryError> },
    #[error("{path}: {source}")]
    Bundle { path: String, source: Box<BundleError> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    schema: u32,
    name: String,
    dim: usize,
    expected_chi: Option<i64>,
    tolerance: Option<f64>,
    #[serde(default)]
    params: toml::Table,
    #[serde(default)]
    chart: Vec<RawChart>,
    #[serde(default)]
    overlap: Vec<RawOverlap>,
    #[serde(default)]
    field: Vec<RawField>,
    bundle: Option<RawBundle>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChart {
    name: Option<String>,
    coords: Vec<String>,
    ranges: Vec<[String; 2]>,
    periodic: Option<Vec<bool>>,
    metric: Vec<Vec<String>>,
    weight: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOverlap {
    from: usize,
    to: usize,
    map: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawField {
    name: String,
    expected: Option<i64>,
    components: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBundle {
    k: i32,
    rho: Option<String>,
    phi: Option<String>,
    a: Option<f64>,
    expected_euler: Option<i64>,
}

/// A loaded spec file.
#[derive(Debug, Clone)]
pub struct ManifoldSpec {
    pub name: String,
    pub atlas: Option<Atlas>,
    pub tolerance: Option<f64>,
    pub fields: Vec<VectorFieldSpec>,
    pub bundle: Option<PlaneBundle>,
    pub expected_euler: Option<i64>,
}

impl ManifoldSpec {
    pub fn field(&self, name: Option<&str>) -> Option<&VectorFieldSpec> {
        match name {
            Some(n) => self.fields.iter().find(|f| f.name == n),
            None => self.fields.first(),
        }
    }
}

struct Ctx<'a> {
    path: &'a str,
    text: &'a str,
    param_names: Vec<String>,
    param_values: Vec<f64>,
}

impl Ctx<'_> {
    /// 1-based line of the first occurrence of `needle`.
    fn line_of(&self, needle: &str) -> usize {
        self.text
            .lines()
            .position(|l| l.contains(needle))
            .map_or(0, |k| k + 1)
    }

    fn invalid(&self, message: impl Into<String>) -> SpecError {
        SpecError::Invalid {
            path: self.path.to_string(),
            message: message.into(),
        }
    }

    fn parse(&self, text: &str, vars: &[&str], what: &str) -> Result<Expr, SpecError> {
        let params: Vec<&str> = self.param_names.iter().map(String::as_str).collect();
        Expr::parse(text, vars, &params)
            .map(|e| e.bind_params(&self.param_values))
            .map_err(|source| SpecError::Expr {
                path: self.path.to_string(),
                line: self.line_of(text),
                what: what.to_string(),
                text: text.to_string(),
                source: Box::new(source),
            })
    }

    fn constant(&self, text: &str, what: &str) -> Result<f64, SpecError> {
        let e = self.parse(text, &[], what)?;
        e.eval(&[], &[])
            .map_err(|err| self.invalid(format!("{what} \"{text}\": {err}")))
    }
}

/// Reads and validates a spec file.
pub fn load(path: &Path) -> Result<ManifoldSpec, SpecError> {
    let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_spec(&text, &path.display().to_string())
}

/// Parses spec text; `path` only labels error messages.
pub fn parse_spec(text: &str, path: &str) -> Result<ManifoldSpec, SpecError> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| SpecError::Toml {
        path: path.to_string(),
        message: e.to_string(),
    })?;
    let mut ctx = Ctx {
        path,
        text,
        param_names: Vec::new(),
        param_values: Vec::new(),
    };
    if raw.schema != SCHEMA_VERSION {
        return Err(ctx.invalid(format!("unsupported schema {} (expected {SCHEMA_VERSION})", raw.schema)));
    }
    for (k, v) in &raw.params {
        let value = v
            .as_float()
            .or_else(|| v.as_integer().map(|i| i as f64))
            .ok_or_else(|| ctx.invalid(format!("parameter {k} must be a number")))?;
        ctx.param_names.push(k.clone());
        ctx.param_values.push(value);
    }

    let atlas = if raw.chart.is_empty() {
        None
    } else {
        Some(build_atlas(&ctx, &raw)?)
    };

    let mut fields = Vec::new();
    for f in &raw.field {
        let atlas = atlas
            .as_ref()
            .ok_or_else(|| ctx.invalid(format!("field {} declared without charts", f.name)))?;
        if f.components.len() != atlas.charts.len() {
            return Err(ctx.invalid(format!(
                "field {} lists {} charts, the atlas has {}",
                f.name,
                f.components.len(),
                atlas.charts.len()
            )));
        }
        let mut components = Vec::new();
        for (chart, comps) in atlas.charts.iter().zip(&f.components) {
            let vars = chart.coord_names();
            let parsed = comps
                .iter()
                .map(|t| ctx.parse(t, &vars, &format!("component of field {}", f.name)))
                .collect::<Result<Vec<_>, _>>()?;
            components.push(parsed);
        }
        let expected = f
            .expected
            .or(raw.expected_chi)
            .ok_or_else(|| ctx.invalid(format!("field {} has no expected index sum", f.name)))?;
        let spec = VectorFieldSpec {
            name: f.name.clone(),
            atlas: atlas.clone(),
            components,
            expected,
        };
        spec.validate().map_err(|e| ctx.invalid(e.to_string()))?;
        fields.push(spec);
    }

    let (bundle, expected_euler) = match &raw.bundle {
        None => (None, None),
        Some(b) => {
            let bundle_err = |source| SpecError::Bundle {
                path: path.to_string(),
                source: Box::new(source),
            };
            let profile = match b.a {
                Some(a) => PartitionProfile::new(a).map_err(bundle_err)?,
                None => PartitionProfile::standard(),
            };
            let bundle = if b.rho.is_none() && b.phi.is_none() {
                PlaneBundle::with_profile(b.k, profile)
            } else {
                let rho = b.rho.clone().unwrap_or_else(|| profile.rho_north_text());
                let phi = b.phi.clone().unwrap_or_else(|| format!("{} * t", b.k));
                PlaneBundle::from_text(b.k, profile, &rho, &phi).map_err(bundle_err)?
            };
            (Some(bundle), Some(b.expected_euler.unwrap_or(b.k as i64)))
        }
    };

    if atlas.is_none() && bundle.is_none() {
        return Err(ctx.invalid("a spec needs at least one [[chart]] or a [bundle]"));
    }
    Ok(ManifoldSpec {
        name: raw.name,
        atlas,
        tolerance: raw.tolerance,
        fields,
        bundle,
        expected_euler,
    })
}

fn build_atlas(ctx: &Ctx, raw: &RawSpec) -> Result<Atlas, SpecError> {
    let geo = |source| SpecError::Geometry {
        path: ctx.path.to_string(),
        source: Box::new(source),
    };
    let multi = raw.chart.len() > 1;
    let mut charts = Vec::new();
    for (k, c) in raw.chart.iter().enumerate() {
        let name = c.name.clone().unwrap_or_else(|| format!("chart{}", k + 1));
        let d = c.coords.len();
        if d != raw.dim {
            return Err(ctx.invalid(format!("chart {name} has {d} coordinates, dim is {}", raw.dim)));
        }
        if c.ranges.len() != d {
            return Err(ctx.invalid(format!("chart {name} needs {d} ranges")));
        }
        if c.metric.len() != d || c.metric.iter().enumerate().any(|(i, row)| row.len() != d - i) {
            return Err(ctx.invalid(format!(
                "chart {name}: metric must list the upper triangle row by row ({d} rows of lengths {d}..1)"
            )));
        }
        if multi && c.weight.is_none() {
            return Err(ctx.invalid(format!("chart {name} needs a weight in a multi-chart atlas")));
        }
        let vars: Vec<&str> = c.coords.iter().map(String::as_str).collect();
        let ranges = c
            .ranges
            .iter()
            .map(|[lo, hi]| Ok((ctx.constant(lo, "range bound")?, ctx.constant(hi, "range bound")?)))
            .collect::<Result<Vec<_>, SpecError>>()?;
        let mut metric = vec![vec![Expr::Num(0.0); d]; d];
        for (i, row) in c.metric.iter().enumerate() {
            for (off, text) in row.iter().enumerate() {
                let j = i + off;
                let e = ctx.parse(text, &vars, &format!("metric entry g{}{}", i + 1, j + 1))?;
                metric[i][j] = e.clone();
                metric[j][i] = e;
            }
        }
        let weight = c
            .weight
            .as_deref()
            .map(|w| ctx.parse(w, &vars, "weight"))
            .transpose()?;
        let periodic = c.periodic.clone().unwrap_or_else(|| vec![false; d]);
        charts.push(Chart::from_exprs(&name, c.coords.clone(), ranges, periodic, metric, weight).map_err(geo)?);
    }
    let mut overlaps = Vec::new();
    for o in &raw.overlap {
        if o.from >= charts.len() || o.to >= charts.len() || o.from == o.to {
            return Err(ctx.invalid(format!("overlap {} -> {} names unknown charts", o.from, o.to)));
        }
        let vars = charts[o.from].coord_names();
        if o.map.len() != raw.dim {
            return Err(ctx.invalid(format!("overlap {} -> {} needs {} components", o.from, o.to, raw.dim)));
        }
        let map = o
            .map
            .iter()
            .map(|t| ctx.parse(t, &vars, "overlap map"))
            .collect::<Result<Vec<_>, _>>()?;
        overlaps.push(OverlapMap {
            from: o.from,
            to: o.to,
            map,
        });
    }
    Ok(Atlas {
        name: raw.name.clone(),
        charts,
        coverage: if multi { Coverage::Weighted } else { Coverage::SingleChart },
        overlaps,
        expected_chi: raw.expected_chi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ELLIPSOID: &str = r#"
schema = 1
name = "ellipsoid"
dim = 2
expected_chi = 2

[params]
c = 1.5

[[chart]]
coords = ["th", "ph"]
ranges = [["0", "pi"], ["0", "2*pi"]]
periodic = [false, true]
metric = [["c^2*sin(th)^2 + cos(th)^2", "0"], ["sin(th)^2"]]
"#;

    #[test]
    fn loads_a_single_chart_spec() {
        let spec = parse_spec(ELLIPSOID, "ellipsoid.toml").unwrap();
        let atlas = spec.atlas.unwrap();
        assert_eq!(atlas.charts.len(), 1);
        assert!((atlas.charts[0].ranges()[0].1 - std::f64::consts::PI).abs() < 1e-15);
        let g = atlas.charts[0].metric(&[std::f64::consts::FRAC_PI_2, 0.0]).unwrap();
        assert!((g[(0, 0)] - 2.25).abs() < 1e-14);
    }

    #[test]
    fn reports_expression_errors_with_line() {
        let bad = ELLIPSOID.replace("sin(th)^2\"]]", "sin(th)^^2\"]]");
        match parse_spec(&bad, "e.toml") {
            Err(SpecError::Expr { line, .. }) => assert_eq!(line, 14),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_schema_and_incomplete_metric() {
        let bad = ELLIPSOID.replace("schema = 1", "schema = 2");
        assert!(matches!(parse_spec(&bad, "e"), Err(SpecError::Invalid { .. })));
        let bad = ELLIPSOID.replace(", \"0\"],", "],");
        assert!(matches!(parse_spec(&bad, "e"), Err(SpecError::Invalid { .. })));
        assert!(matches!(parse_spec("schema = ", "e"), Err(SpecError::Toml { .. })));
    }

    #[test]
    fn bundle_block() {
        let text = "schema = 1\nname = \"b\"\ndim = 2\n[bundle]\nk = -1\n";
        let spec = parse_spec(text, "b").unwrap();
        assert_eq!(spec.bundle.unwrap().k, -1);
        assert_eq!(spec.expected_euler, Some(-1));
    }
}
