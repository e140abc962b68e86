//! Built-in manifolds and vector fields.
//!
//! Expected Euler characteristics are standard topology, attached as
//! metadata and never computed.

use std::f64::consts::PI;

use thiserror::Error;

use crate::expr::Expr;
use crate::geometry::{Atlas, Chart, Coverage, GeometryError, OverlapMap};
use crate::index::VectorFieldSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LibraryError {
    #[error("unknown manifold \"{0}\" (known: {known})", known = MANIFOLDS.iter().map(|m| m.name).collect::<Vec<_>>().join(", "))]
    UnknownManifold(String),
    #[error("manifold {manifold} has no parameter \"{param}\"")]
    UnknownParam { manifold: String, param: String },
    #[error("unknown field \"{field}\" on {manifold}")]
    UnknownField { manifold: String, field: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Catalogue entry of a built-in manifold.
#[derive(Debug, Clone, Copy)]
pub struct ManifoldInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub params: &'static [(&'static str, f64)],
    pub expected_chi: i64,
    /// Default resolution used by the CLI and the self test.
    pub default_res: usize,
    /// Absolute tolerance on the Euler characteristic.
    pub tolerance: f64,
    /// Expensive enough to be excluded from quick runs.
    pub slow: bool,
}

pub const MANIFOLDS: &[ManifoldInfo] = &[
    ManifoldInfo {
        name: "sphere2",
        description: "round 2-sphere of radius r, polar chart",
        params: &[("r", 1.0)],
        expected_chi: 2,
        default_res: 128,
        tolerance: 1e-6,
        slow: false,
    },
    ManifoldInfo {
        name: "sphere2_stereo",
        description: "round 2-sphere of radius r, two stereographic charts with weights",
        params: &[("r", 1.0)],
        expected_chi: 2,
        default_res: 160,
        tolerance: 1e-6,
        slow: false,
    },
    ManifoldInfo {
        name: "torus2",
        description: "flat unit square torus",
        params: &[],
        expected_chi: 0,
        default_res: 16,
        tolerance: 1e-12,
        slow: false,
    },
    ManifoldInfo {
        name: "bumpy_sphere",
        description: "2-sphere with metric exp(2 eps cos th) times the round metric",
        params: &[("eps", 0.3)],
        expected_chi: 2,
        default_res: 128,
        tolerance: 1e-4,
        slow: false,
    },
    ManifoldInfo {
        name: "sphere3",
        description: "round 3-sphere (odd dimension, no Euler form)",
        params: &[("r", 1.0)],
        expected_chi: 0,
        default_res: 16,
        tolerance: 1e-6,
        slow: false,
    },
    ManifoldInfo {
        name: "sphere4",
        description: "round 4-sphere of radius r, hyperspherical chart",
        params: &[("r", 2.0)],
        expected_chi: 2,
        default_res: 32,
        tolerance: 1e-3,
        slow: false,
    },
    ManifoldInfo {
        name: "s2xs2",
        description: "product of two unit 2-spheres",
        params: &[],
        expected_chi: 4,
        default_res: 24,
        tolerance: 1e-3,
        slow: false,
    },
    ManifoldInfo {
        name: "torus4",
        description: "flat unit 4-torus",
        params: &[],
        expected_chi: 0,
        default_res: 4,
        tolerance: 1e-12,
        slow: false,
    },
    ManifoldInfo {
        name: "cp2",
        description: "complex projective plane, Fubini-Study metric",
        params: &[],
        expected_chi: 3,
        default_res: 24,
        tolerance: 1e-2,
        slow: true,
    },
];

pub fn manifold_info(name: &str) -> Result<&'static ManifoldInfo, LibraryError> {
    MANIFOLDS
        .iter()
        .find(|m| m.name == name)
        .ok_or_else(|| LibraryError::UnknownManifold(name.to_string()))
}

/// A built-in manifold with its atlas and the vector fields it ships with.
#[derive(Debug, Clone)]
pub struct Manifold {
    pub info: &'static ManifoldInfo,
    pub atlas: Atlas,
    pub fields: Vec<VectorFieldSpec>,
}

impl Manifold {
    pub fn field(&self, name: &str) -> Result<&VectorFieldSpec, LibraryError> {
        self.fields
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| LibraryError::UnknownField {
                manifold: self.info.name.to_string(),
                field: name.to_string(),
            })
    }
}

fn resolve_params(
    info: &ManifoldInfo,
    overrides: &[(String, f64)],
) -> Result<Vec<(&'static str, f64)>, LibraryError> {
    let mut values: Vec<(&'static str, f64)> = info.params.to_vec();
    for (k, v) in overrides {
        let slot = values
            .iter_mut()
            .find(|(name, _)| name == k)
            .ok_or_else(|| LibraryError::UnknownParam {
                manifold: info.name.to_string(),
                param: k.clone(),
            })?;
        slot.1 = *v;
    }
    Ok(values)
}

/// Looks up a built-in manifold, applying parameter overrides.
pub fn builtin_manifold(name: &str, overrides: &[(String, f64)]) -> Result<Manifold, LibraryError> {
    let info = manifold_info(name)?;
    let params = resolve_params(info, overrides)?;
    let p = |k: &str| params.iter().find(|(n, _)| *n == k).map(|(_, v)| *v).unwrap_or(0.0);
    let chi = Some(info.expected_chi);
    let (atlas, fields) = match name {
        "sphere2" => {
            let r = p("r");
            let stereo = stereographic_sphere(r)?;
            (Atlas::single(sphere2_chart(r)?, chi), sphere_fields(&stereo))
        }
        "sphere2_stereo" => {
            let stereo = stereographic_sphere(p("r"))?;
            let fields = sphere_fields(&stereo);
            (stereo, fields)
        }
        "torus2" => (Atlas::single(flat_torus(2)?, chi), vec![constant_torus_field()?]),
        "bumpy_sphere" => (Atlas::single(bumpy_sphere(p("eps"))?, chi), Vec::new()),
        "sphere3" => (Atlas::single(sphere3(p("r"))?, chi), Vec::new()),
        "sphere4" => (Atlas::single(sphere4(p("r"))?, chi), Vec::new()),
        "s2xs2" => (Atlas::single(s2xs2()?, chi), Vec::new()),
        "torus4" => (Atlas::single(flat_torus(4)?, chi), Vec::new()),
        "cp2" => (Atlas::single(cp2()?, chi), Vec::new()),
        _ => return Err(LibraryError::UnknownManifold(name.to_string())),
    };
    let mut atlas = atlas;
    atlas.name = name.to_string();
    Ok(Manifold { info, atlas, fields })
}

pub fn sphere2_chart(r: f64) -> Result<Chart, GeometryError> {
    Chart::new(
        "polar",
        &["th", "ph"],
        &[(0.0, PI), (0.0, 2.0 * PI)],
        &[false, true],
        &[vec!["r^2", "0"], vec!["r^2 * sin(th)^2"]],
        None,
        &[("r", r)],
    )
    .map(|c| c.with_injectivity_radius(0.6))
}

pub fn flat_torus(d: usize) -> Result<Chart, GeometryError> {
    let names = ["x1", "x2", "x3", "x4"];
    let rows: Vec<Vec<&str>> = (0..d)
        .map(|i| (i..d).map(|j| if i == j { "1" } else { "0" }).collect())
        .collect();
    Chart::new(
        "flat",
        &names[..d],
        &vec![(0.0, 1.0); d],
        &vec![true; d],
        &rows,
        None,
        &[],
    )
}

pub fn bumpy_sphere(eps: f64) -> Result<Chart, GeometryError> {
    Chart::new(
        "polar",
        &["th", "ph"],
        &[(0.0, PI), (0.0, 2.0 * PI)],
        &[false, true],
        &[
            vec!["exp(2 * eps * cos(th))", "0"],
            vec!["exp(2 * eps * cos(th)) * sin(th)^2"],
        ],
        None,
        &[("eps", eps)],
    )
}

pub fn sphere3(r: f64) -> Result<Chart, GeometryError> {
    Chart::new(
        "hyperspherical",
        &["t1", "t2", "ph"],
        &[(0.0, PI), (0.0, PI), (0.0, 2.0 * PI)],
        &[false, false, true],
        &[
            vec!["r^2", "0", "0"],
            vec!["r^2 * sin(t1)^2", "0"],
            vec!["r^2 * sin(t1)^2 * sin(t2)^2"],
        ],
        None,
        &[("r", r)],
    )
}

pub fn sphere4(r: f64) -> Result<Chart, GeometryError> {
    Chart::new(
        "hyperspherical",
        &["t1", "t2", "t3", "ph"],
        &[(0.0, PI), (0.0, PI), (0.0, PI), (0.0, 2.0 * PI)],
        &[false, false, false, true],
        &[
            vec!["r^2", "0", "0", "0"],
            vec!["r^2 * sin(t1)^2", "0", "0"],
            vec!["r^2 * sin(t1)^2 * sin(t2)^2", "0"],
            vec!["r^2 * sin(t1)^2 * sin(t2)^2 * sin(t3)^2"],
        ],
        None,
        &[("r", r)],
    )
}

pub fn s2xs2() -> Result<Chart, GeometryError> {
    Chart::new(
        "polar_pair",
        &["th1", "ph1", "th2", "ph2"],
        &[(0.0, PI), (0.0, 2.0 * PI), (0.0, PI), (0.0, 2.0 * PI)],
        &[false, true, false, true],
        &[
            vec!["1", "0", "0", "0"],
            vec!["sin(th1)^2", "0", "0"],
            vec!["1", "0"],
            vec!["sin(th2)^2"],
        ],
        None,
        &[],
    )
}

/// Fubini–Study metric on the affine chart `(ρ cos a e^{ib1}, ρ sin a e^{ib2})`
/// with `ρ = tan u`, which maps the infinite radial axis to `(0, π/2)`.
pub fn cp2() -> Result<Chart, GeometryError> {
    Chart::new(
        "affine_polar",
        &["u", "a", "b1", "b2"],
        &[(0.0, PI / 2.0), (0.0, PI / 2.0), (0.0, 2.0 * PI), (0.0, 2.0 * PI)],
        &[false, false, true, true],
        &[
            vec!["1", "0", "0", "0"],
            vec!["sin(u)^2", "0", "0"],
            vec![
                "sin(u)^2 * cos(a)^2 - sin(u)^4 * cos(a)^4",
                "-(sin(u)^4 * cos(a)^2 * sin(a)^2)",
            ],
            vec!["sin(u)^2 * sin(a)^2 - sin(u)^4 * sin(a)^4"],
        ],
        None,
        &[],
    )
}

/// Half-width of the stereographic coordinate boxes.
pub const STEREO_BOX: f64 = 3.0;

/// Round sphere of radius `r` as two stereographic charts `z` (north) and
/// `w = 1/z` (south) with weights `1/(1+|z|^16)` and `1/(1+|w|^16)`, which sum
/// to one on the overlap.
pub fn stereographic_sphere(r: f64) -> Result<Atlas, GeometryError> {
    let chart = |name: &str, a: &str, b: &str| {
        let s = format!("({a}^2 + {b}^2)");
        let g = format!("4 * r^2 / (1 + {s})^2");
        let w = format!("1 / (1 + {s}^8)");
        Chart::new(
            name,
            &[a, b],
            &[(-STEREO_BOX, STEREO_BOX), (-STEREO_BOX, STEREO_BOX)],
            &[false, false],
            &[vec![g.as_str(), "0"], vec![g.as_str()]],
            Some(w.as_str()),
            &[("r", r)],
        )
        .map(|c| c.with_injectivity_radius(0.5))
    };
    let north = chart("north", "x", "y")?;
    let south = chart("south", "u", "v")?;
    let inversion = |a: &str, b: &str| -> Vec<Expr> {
        let vars = [a, b];
        vec![
            Expr::parse(&format!("{a} / ({a}^2 + {b}^2)"), &vars, &[]).expect("static expression"),
            Expr::parse(&format!("-({b}) / ({a}^2 + {b}^2)"), &vars, &[]).expect("static expression"),
        ]
    };
    Ok(Atlas {
        name: "sphere2_stereo".into(),
        charts: vec![north, south],
        coverage: Coverage::Weighted,
        overlaps: vec![
            OverlapMap {
                from: 0,
                to: 1,
                map: inversion("x", "y"),
            },
            OverlapMap {
                from: 1,
                to: 0,
                map: inversion("u", "v"),
            },
        ],
        expected_chi: Some(2),
    })
}

fn field(
    name: &str,
    atlas: &Atlas,
    components: &[&[&str]],
    expected: i64,
) -> Result<VectorFieldSpec, LibraryError> {
    let comps = atlas
        .charts
        .iter()
        .zip(components)
        .map(|(chart, texts)| {
            texts
                .iter()
                .map(|t| {
                    Expr::parse(t, &chart.coord_names(), &[]).map_err(|source| {
                        GeometryError::Parse {
                            chart: chart.name().to_string(),
                            what: format!("field {name}"),
                            source,
                        }
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VectorFieldSpec {
        name: name.to_string(),
        atlas: atlas.clone(),
        components: comps,
        expected,
    })
}

/// Vector fields on the stereographic sphere. `morse` is the gradient of
/// `p1² + p3` (embedding coordinates): two maxima, one saddle, one minimum.
fn sphere_fields(stereo: &Atlas) -> Vec<VectorFieldSpec> {
    let defs: [(&str, [&[&str]; 2]); 4] = [
        (
            "morse",
            [
                &["x - 4 * x^3 / (1 + x^2 + y^2)", "-(4 * x^2 * y / (1 + x^2 + y^2)) - y"],
                &["3 * u - 4 * u^3 / (1 + u^2 + v^2)", "v - 4 * u^2 * v / (1 + u^2 + v^2)"],
            ],
        ),
        ("z", [&["x", "y"], &["-u", "-v"]]),
        ("z2", [&["x^2 - y^2", "2 * x * y"], &["-1", "0"]]),
        ("rotation", [&["-y", "x"], &["v", "-u"]]),
    ];
    defs.iter()
        .map(|(name, comps)| field(name, stereo, comps, 2).expect("built-in fields parse"))
        .collect()
}

fn constant_torus_field() -> Result<VectorFieldSpec, LibraryError> {
    let atlas = Atlas::single(flat_torus(2)?, Some(0));
    field("constant", &atlas, &[&["1", "0"]], 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_builtins_construct() {
        for m in MANIFOLDS {
            let man = builtin_manifold(m.name, &[]).unwrap();
            assert_eq!(man.atlas.expected_chi, Some(m.expected_chi));
        }
        assert!(builtin_manifold("klein", &[]).is_err());
        assert!(builtin_manifold("sphere2", &[("q".into(), 1.0)]).is_err());
    }

    #[test]
    fn stereographic_overlaps_are_inverse() {
        let atlas = stereographic_sphere(1.0).unwrap();
        let samples: Vec<(usize, Vec<f64>)> = (0..50)
            .map(|k| {
                let t = k as f64 * 0.37;
                (k % 2, vec![0.5 + 0.04 * k as f64 * t.cos(), 0.3 * t.sin()])
            })
            .collect();
        assert!(atlas.overlap_roundtrip_error(&samples) < 1e-10);
    }

    #[test]
    fn weights_sum_to_one_across_charts() {
        let atlas = stereographic_sphere(1.0).unwrap();
        for x in [[0.4, 0.2], [1.0, -0.7], [-2.0, 1.5]] {
            let wn = atlas.charts[0].weight(&x).unwrap();
            let y = atlas.overlap(0, 1).unwrap().apply(&x).unwrap();
            let ws = atlas.charts[1].weight(&y).unwrap();
            assert!((wn + ws - 1.0).abs() < 1e-12);
        }
    }
}
