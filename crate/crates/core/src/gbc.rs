//! The Gauss–Bonnet–Chern integrand, computed two independent ways, and its
//! integral over an atlas.
//!
//! [`gb_density_pfaffian`] takes the Pfaffian of the skew matrix of curvature
//! 2-forms in an orthonormal coframe; [`gb_density_aw`] evaluates the
//! double permutation sum over frame components of the Riemann tensor. Both
//! return the scalar `s` with `Ω = s · dvol`.
//!
//! The normalizing constant is `+(1/2π)^{d/2}`. Its sign was fixed once by
//! requiring the unit 2-sphere to give `+1/2π` and is applied unchanged in
//! every even dimension.

use std::f64::consts::PI;

use itertools::Itertools;
use serde::Serialize;
use thiserror::Error;

pub use crate::exterior::permutation_sign;
use crate::exterior::{FormElement, SkewFormMatrix};
use crate::geometry::{Atlas, Chart, GeometryError, PointGeometry};
use crate::quadrature::{integrate_chart, pairwise_sum, richardson, QuadratureError, QuadratureSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GbcError {
    #[error("odd dimension {0}: the Euler form needs an even dimension")]
    OddDimension(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("atlas {0} declares no expected Euler characteristic")]
    NoExpectedChi(String),
}

/// `+(1/2π)^{d/2}`.
pub fn euler_constant(d: usize) -> f64 {
    (2.0 * PI).powi(-(d as i32) / 2)
}

/// Curvature forms `Ω_ab` of a point as a skew matrix of 2-forms on the
/// orthonormal coframe.
pub fn curvature_matrix(pg: &PointGeometry) -> SkewFormMatrix {
    let d = pg.dim;
    let mut m = vec![vec![FormElement::zero(d); d]; d];
    for a in 0..d {
        for b in (a + 1)..d {
            let mut f = FormElement::zero(d);
            for c in 0..d {
                for e in (c + 1)..d {
                    let v = pg.omega(a, b, c, e);
                    if v != 0.0 {
                        f.add_term((1 << c) | (1 << e), v.into());
                    }
                }
            }
            m[b][a] = -&f;
            m[a][b] = f;
        }
    }
    SkewFormMatrix::new(m).expect("curvature forms are skew and even")
}

fn check_even(d: usize) -> Result<(), GbcError> {
    if !d.is_multiple_of(2) {
        return Err(GbcError::OddDimension(d));
    }
    Ok(())
}

/// Pfaffian density from precomputed point geometry.
pub fn pfaffian_density_at(pg: &PointGeometry) -> Result<f64, GbcError> {
    check_even(pg.dim)?;
    let pf = curvature_matrix(pg).pfaffian().expect("even dimension");
    Ok(euler_constant(pg.dim) * pf.berezin().re)
}

/// Allendoerfer–Weil density from precomputed point geometry.
pub fn aw_density_at(pg: &PointGeometry) -> Result<f64, GbcError> {
    let d = pg.dim;
    check_even(d)?;
    let perms: Vec<(Vec<usize>, f64)> = (0..d)
        .permutations(d)
        .map(|p| {
            let s = permutation_sign(&p);
            (p, s)
        })
        .collect();
    let mut sum = 0.0;
    for (s1, sg1) in &perms {
        for (s2, sg2) in &perms {
            let mut prod = sg1 * sg2;
            for r in 0..d / 2 {
                prod *= pg.riemann_frame(s1[2 * r], s1[2 * r + 1], s2[2 * r], s2[2 * r + 1]);
            }
            sum += prod;
        }
    }
    let half = d / 2;
    let norm = 2f64.powi(d as i32) * (1..=half).product::<usize>() as f64;
    Ok(euler_constant(d) * sum / norm)
}

pub fn gb_density_pfaffian(chart: &Chart, x: &[f64]) -> Result<f64, GbcError> {
    check_even(chart.dim())?;
    pfaffian_density_at(&chart.point_geometry(x)?)
}

pub fn gb_density_aw(chart: &Chart, x: &[f64]) -> Result<f64, GbcError> {
    check_even(chart.dim())?;
    aw_density_at(&chart.point_geometry(x)?)
}

/// Both densities at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegrandReport {
    pub pfaffian_density: f64,
    pub aw_density: f64,
    pub discrepancy: f64,
}

impl IntegrandReport {
    pub fn within_tolerance(&self) -> bool {
        self.discrepancy < 1e-9 * (1.0 + self.pfaffian_density.abs())
    }
}

pub fn integrand_report(chart: &Chart, x: &[f64]) -> Result<IntegrandReport, GbcError> {
    check_even(chart.dim())?;
    let pg = chart.point_geometry(x)?;
    let p = pfaffian_density_at(&pg)?;
    let a = aw_density_at(&pg)?;
    Ok(IntegrandReport {
        pfaffian_density: p,
        aw_density: a,
        discrepancy: (p - a).abs(),
    })
}

/// Result of integrating the Euler form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GbcReport {
    pub integral: f64,
    pub expected_chi: i64,
    pub abs_error: f64,
    /// Raw value at the requested resolution.
    pub raw: f64,
    /// `(nodes per axis, integral)` for every resolution evaluated.
    pub convergence: Vec<(usize, f64)>,
    pub extrapolated: Option<f64>,
    pub error_estimate: Option<f64>,
}

/// `∫ Ω` over the atlas at `n` nodes per axis.
pub fn integrate_euler_form(atlas: &Atlas, n: usize) -> Result<f64, GbcError> {
    check_even(atlas.dim())?;
    let mut parts = Vec::new();
    for chart in &atlas.charts {
        let spec = QuadratureSpec::for_chart(chart, n);
        parts.push(integrate_chart(chart, |x| gb_density_pfaffian(chart, x), &spec)?);
    }
    Ok(pairwise_sum(&parts))
}

/// Resolutions used for extrapolation when the finest is `n`.
pub fn extrapolation_levels(n: usize) -> Vec<usize> {
    let mut levels = vec![n / 2, (3 * n) / 4, n];
    levels.retain(|&k| k >= 2);
    levels.dedup();
    levels
}

/// Integrates the Euler form and compares with the declared χ.
pub fn verify_gbc(atlas: &Atlas, resolution: usize, extrapolate: bool) -> Result<GbcReport, GbcError> {
    let chi = atlas
        .expected_chi
        .ok_or_else(|| GbcError::NoExpectedChi(atlas.name.clone()))?;
    let levels = if extrapolate {
        extrapolation_levels(resolution)
    } else {
        vec![resolution]
    };
    let mut convergence = Vec::with_capacity(levels.len());
    for &n in &levels {
        convergence.push((n, integrate_euler_form(atlas, n)?));
    }
    let raw = convergence.last().expect("at least one level").1;
    let (extrapolated, error_estimate) = if extrapolate && convergence.len() >= 2 {
        let (v, e) = richardson(&convergence)?;
        (Some(v), Some(e))
    } else {
        (None, None)
    };
    let integral = extrapolated.unwrap_or(raw);
    Ok(GbcReport {
        integral,
        expected_chi: chi,
        abs_error: (integral - chi as f64).abs(),
        raw,
        convergence,
        extrapolated,
        error_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(r: f64) -> Chart {
        Chart::new(
            "sphere",
            &["th", "ph"],
            &[(0.0, PI), (0.0, 2.0 * PI)],
            &[false, true],
            &[vec!["r^2", "0"], vec!["r^2*sin(th)^2"]],
            None,
            &[("r", r)],
        )
        .unwrap()
    }

    #[test]
    fn unit_sphere_density() {
        let c = sphere(1.0);
        for x in [[0.3, 0.1], [1.2, 4.0], [2.9, 6.0]] {
            let p = gb_density_pfaffian(&c, &x).unwrap();
            assert!((p - 1.0 / (2.0 * PI)).abs() < 1e-12, "{p}");
            let a = gb_density_aw(&c, &x).unwrap();
            assert!((a - p).abs() < 1e-13);
        }
    }

    #[test]
    fn flat_density_vanishes() {
        let c = Chart::new(
            "t",
            &["x", "y"],
            &[(0.0, 1.0), (0.0, 1.0)],
            &[true, true],
            &[vec!["1", "0"], vec!["1"]],
            None,
            &[],
        )
        .unwrap();
        assert_eq!(gb_density_pfaffian(&c, &[0.2, 0.4]).unwrap(), 0.0);
        assert_eq!(gb_density_aw(&c, &[0.2, 0.4]).unwrap(), 0.0);
    }

    #[test]
    fn odd_dimension_is_rejected() {
        let c = Chart::new("line", &["x"], &[(0.0, 1.0)], &[true], &[vec!["1"]], None, &[]).unwrap();
        assert!(matches!(gb_density_pfaffian(&c, &[0.5]), Err(GbcError::OddDimension(1))));
    }

    #[test]
    fn sphere_integral() {
        let atlas = Atlas::single(sphere(1.7), Some(2));
        let r = verify_gbc(&atlas, 48, false).unwrap();
        assert!(r.abs_error < 1e-10, "{r:?}");
    }

    #[test]
    fn permutation_signs() {
        assert_eq!(permutation_sign(&[0, 1, 2]), 1.0);
        assert_eq!(permutation_sign(&[1, 0, 2]), -1.0);
        assert_eq!(permutation_sign(&[1, 2, 0]), 1.0);
    }
}
