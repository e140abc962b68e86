//! Zeros of vector fields (or sections in local trivializations) and their
//! local degrees.
//!
//! Zeros are located by a grid scan followed by damped Newton refinement
//! using the Jacobian from expression jets. In dimension 2 the local degree is
//! the winding number of `X` around a small circle; in higher dimension it is
//! the integral of the pulled-back volume form of the unit sphere through
//! `X/|X|`, normalized to total mass one.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::geometry::{Atlas, Chart};
use crate::quadrature::{axis_rule, integrate_axes, Rule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("field {field}: {chart} has {got} components, expected {expected}")]
    Shape {
        field: String,
        chart: String,
        expected: usize,
        got: usize,
    },
    #[error("field evaluation failed on chart {chart} at {x:?}: {source}")]
    Eval {
        chart: String,
        x: Vec<f64>,
        source: EvalError,
    },
    #[error("field vanishes on the sphere of radius {radius} around {x:?} in chart {chart}")]
    VanishesOnSphere {
        chart: String,
        x: Vec<f64>,
        radius: f64,
    },
    #[error("local degree at {x:?} in chart {chart} is not integer-stable: {raw:?} at radii {radii:?}")]
    Unstable {
        chart: String,
        x: Vec<f64>,
        raw: Vec<f64>,
        radii: Vec<f64>,
    },
    #[error("sphere of radius {radius} around {x:?} leaves chart {chart}")]
    OutsideChart {
        chart: String,
        x: Vec<f64>,
        radius: f64,
    },
}

/// Components of a vector field, or of a bundle section in the local
/// trivializations, on every chart of an atlas.
#[derive(Debug, Clone)]
pub struct VectorFieldSpec {
    pub name: String,
    pub atlas: Atlas,
    /// `components[c][i]` is the i-th component on chart `c`.
    pub components: Vec<Vec<Expr>>,
    /// Expected index sum (χ for tangent fields, the Euler number for
    /// sections).
    pub expected: i64,
}

impl VectorFieldSpec {
    pub fn validate(&self) -> Result<(), IndexError> {
        for (c, chart) in self.atlas.charts.iter().enumerate() {
            let got = self.components.get(c).map_or(0, |v| v.len());
            if got != chart.dim() {
                return Err(IndexError::Shape {
                    field: self.name.clone(),
                    chart: chart.name().to_string(),
                    expected: chart.dim(),
                    got,
                });
            }
        }
        Ok(())
    }

    /// The field multiplied by a constant.
    pub fn scaled(&self, lambda: f64) -> VectorFieldSpec {
        let mut out = self.clone();
        for comps in &mut out.components {
            for e in comps.iter_mut() {
                *e = Expr::Bin(
                    crate::expr::BinOp::Mul,
                    Box::new(Expr::Num(lambda)),
                    Box::new(e.clone()),
                );
            }
        }
        out
    }

    fn chart(&self, c: usize) -> &Chart {
        &self.atlas.charts[c]
    }

    fn eval_err(&self, c: usize, x: &[f64], source: EvalError) -> IndexError {
        IndexError::Eval {
            chart: self.chart(c).name().to_string(),
            x: x.to_vec(),
            source,
        }
    }

    /// Field value on chart `c`.
    pub fn value(&self, c: usize, x: &[f64]) -> Result<Vec<f64>, IndexError> {
        let xw = self.chart(c).wrap(x);
        self.components[c]
            .iter()
            .map(|e| e.eval(&xw, &[]).map_err(|err| self.eval_err(c, x, err)))
            .collect()
    }

    /// Field value and Jacobian `∂X^i/∂x^j` on chart `c`.
    pub fn jet(&self, c: usize, x: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>), IndexError> {
        let d = x.len();
        let xw = self.chart(c).wrap(x);
        let mut v = DVector::zeros(d);
        let mut j = DMatrix::zeros(d, d);
        for (i, e) in self.components[c].iter().enumerate() {
            let jet = e.eval_jet2(&xw, &[]).map_err(|err| self.eval_err(c, x, err))?;
            v[i] = jet.value;
            for k in 0..d {
                j[(i, k)] = jet.grad(k);
            }
        }
        Ok((v, j))
    }

    /// Largest mismatch `|X_to(φ(x)) − Dφ(x) X_from(x)|` over sample points
    /// of chart overlaps (points where a map is undefined are skipped).
    pub fn transition_residual(&self, samples: &[(usize, Vec<f64>)]) -> Result<f64, IndexError> {
        let mut worst: f64 = 0.0;
        for (from, x) in samples {
            for o in self.atlas.overlaps.iter().filter(|o| o.from == *from) {
                let (Ok(y), Ok(jac)) = (o.apply(x), o.jacobian(x)) else {
                    continue;
                };
                if !self.chart(o.to).contains(&y) {
                    continue;
                }
                let xv = DVector::from_vec(self.value(*from, x)?);
                let yv = DVector::from_vec(self.value(o.to, &y)?);
                worst = worst.max((yv - jac * xv).amax());
            }
        }
        Ok(worst)
    }
}

/// A located zero with its local degree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroRecord {
    pub chart: String,
    #[serde(skip)]
    pub chart_index: usize,
    pub x: Vec<f64>,
    pub local_degree: i64,
    pub raw_degree: f64,
    pub radius: f64,
}

/// A zero position before its degree is computed.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroCandidate {
    pub chart_index: usize,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ZeroSearch {
    pub zeros: Vec<ZeroCandidate>,
    pub warnings: Vec<String>,
}

const DEDUP_TOL: f64 = 1e-6;

fn margin(chart: &Chart, x: &[f64]) -> f64 {
    let mut m = f64::INFINITY;
    for (k, &(lo, hi)) in chart.ranges().iter().enumerate() {
        if !chart.periodic()[k] {
            m = m.min(((x[k] - lo).min(hi - x[k])) / (hi - lo));
        }
    }
    m
}

fn newton(field: &VectorFieldSpec, c: usize, start: &[f64]) -> Result<Vec<f64>, String> {
    let chart = field.chart(c);
    let mut x = DVector::from_column_slice(start);
    let (mut v, mut j) = field.jet(c, x.as_slice()).map_err(|e| e.to_string())?;
    for _ in 0..100 {
        if v.norm() < 1e-20 {
            return Ok(x.iter().copied().collect());
        }
        let step = j
            .clone()
            .lu()
            .solve(&v)
            .ok_or_else(|| format!("singular Jacobian at {:?}", x.as_slice()))?;
        let mut lambda = 1.0;
        loop {
            let trial = &x - &step * lambda;
            if chart.contains(trial.as_slice()) {
                if let Ok((tv, tj)) = field.jet(c, trial.as_slice()) {
                    if tv.norm() < v.norm() || lambda < 1e-6 {
                        x = trial;
                        v = tv;
                        j = tj;
                        break;
                    }
                }
            }
            lambda *= 0.5;
            if lambda < 1e-8 {
                return Err(format!("damped Newton stalled at {:?}", x.as_slice()));
            }
        }
        if (&step * lambda).norm() < 1e-13 * (1.0 + x.norm()) {
            return Ok(x.iter().copied().collect());
        }
    }
    Err(format!(
        "Newton did not converge from {start:?} (|X| = {:e})",
        v.norm()
    ))
}

/// Locates the zeros of `field` by scanning every chart with
/// `scan_resolution` cells per axis and refining candidates with Newton.
pub fn find_zeros(field: &VectorFieldSpec, scan_resolution: usize) -> Result<ZeroSearch, IndexError> {
    field.validate()?;
    let mut found: Vec<ZeroCandidate> = Vec::new();
    let mut warnings = Vec::new();
    for (c, chart) in field.atlas.charts.iter().enumerate() {
        let d = chart.dim();
        let n = scan_resolution.max(2);
        let steps: Vec<f64> = chart.ranges().iter().map(|(lo, hi)| (hi - lo) / n as f64).collect();
        let h = steps.iter().cloned().fold(0.0, f64::max);
        let total = n.pow(d as u32);
        let candidates: Vec<Vec<f64>> = (0..total)
            .into_par_iter()
            .filter_map(|flat| {
                let mut rest = flat;
                let mut x = vec![0.0; d];
                for k in (0..d).rev() {
                    let i = rest % n;
                    rest /= n;
                    x[k] = chart.ranges()[k].0 + (i as f64 + 0.5) * steps[k];
                }
                let (v, j) = field.jet(c, &x).ok()?;
                (v.norm() <= j.norm() * h * (d as f64).sqrt()).then_some(x)
            })
            .collect();
        let refined: Vec<Result<Vec<f64>, String>> =
            candidates.par_iter().map(|x0| newton(field, c, x0)).collect();
        let mut local: Vec<Vec<f64>> = Vec::new();
        for (x0, r) in candidates.iter().zip(refined) {
            match r {
                Ok(z) => {
                    let dup = local
                        .iter()
                        .any(|w| chart.difference(w, &z).iter().all(|d| d.abs() < DEDUP_TOL));
                    if !dup {
                        local.push(z);
                    }
                }
                Err(msg) => warnings.push(format!("chart {}: candidate {x0:?} dropped: {msg}", chart.name())),
            }
        }
        found.extend(local.into_iter().map(|x| ZeroCandidate {
            chart_index: c,
            x: chart.wrap(&x),
        }));
    }

    // across charts, keep the representative farthest from its box boundary
    found.sort_by(|a, b| {
        let ma = margin(field.chart(a.chart_index), &a.x);
        let mb = margin(field.chart(b.chart_index), &b.x);
        mb.partial_cmp(&ma).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut accepted: Vec<ZeroCandidate> = Vec::new();
    for cand in found {
        let dup = accepted.iter().any(|a| same_point(field, a, &cand));
        if !dup {
            accepted.push(cand);
        }
    }
    accepted.sort_by(|a, b| {
        a.chart_index
            .cmp(&b.chart_index)
            .then(a.x.partial_cmp(&b.x).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(ZeroSearch {
        zeros: accepted,
        warnings,
    })
}

fn same_point(field: &VectorFieldSpec, a: &ZeroCandidate, b: &ZeroCandidate) -> bool {
    let close = |c: usize, p: &[f64], q: &[f64]| {
        field
            .chart(c)
            .difference(p, q)
            .iter()
            .all(|d| d.abs() < DEDUP_TOL)
    };
    if a.chart_index == b.chart_index {
        return close(a.chart_index, &a.x, &b.x);
    }
    if let Some(o) = field.atlas.overlap(b.chart_index, a.chart_index) {
        if let Ok(y) = o.apply(&b.x) {
            return close(a.chart_index, &a.x, &y);
        }
    }
    false
}

fn winding_number(
    field: &VectorFieldSpec,
    c: usize,
    x0: &[f64],
    radius: f64,
) -> Result<f64, IndexError> {
    let mut n = 720;
    'refine: loop {
        let mut total = 0.0;
        let mut prev: Option<f64> = None;
        let steps = n;
        for k in 0..=steps {
            let t = 2.0 * PI * k as f64 / steps as f64;
            let x = [x0[0] + radius * t.cos(), x0[1] + radius * t.sin()];
            let v = field.value(c, &x)?;
            if v[0] == 0.0 && v[1] == 0.0 {
                return Err(IndexError::VanishesOnSphere {
                    chart: field.chart(c).name().to_string(),
                    x: x0.to_vec(),
                    radius,
                });
            }
            let angle = v[1].atan2(v[0]);
            if let Some(p) = prev {
                let mut da = angle - p;
                da -= 2.0 * PI * (da / (2.0 * PI)).round();
                if da.abs() >= PI / 2.0 && n < 1 << 20 {
                    n *= 2;
                    continue 'refine;
                }
                total += da;
            }
            prev = Some(angle);
        }
        return Ok(total / (2.0 * PI));
    }
}

/// Hyperspherical parametrization of the unit sphere `S^{d−1}` and its
/// angle derivatives.
fn sphere_point(angles: &[f64]) -> (DVector<f64>, Vec<DVector<f64>>) {
    let m = angles.len();
    let d = m + 1;
    let point = |a: &[f64]| {
        let mut s = DVector::zeros(d);
        let mut prod = 1.0;
        for i in 0..m {
            s[i] = prod * a[i].cos();
            prod *= a[i].sin();
        }
        s[m] = prod;
        s
    };
    let s = point(angles);
    let derivs = (0..m)
        .map(|k| {
            // analytic derivative: only factors involving angle k change
            let mut ds = DVector::zeros(d);
            for i in k..d {
                let mut v = 1.0;
                for (j, &a) in angles.iter().enumerate().take(i.min(m)) {
                    v *= if j == k { a.cos() } else { a.sin() };
                }
                if i < m {
                    v *= if i == k { -angles[i].sin() } else { angles[i].cos() };
                }
                ds[i] = v;
            }
            ds
        })
        .collect();
    (s, derivs)
}

fn sphere_degree(
    field: &VectorFieldSpec,
    c: usize,
    x0: &[f64],
    radius: f64,
    nodes: usize,
) -> Result<f64, IndexError> {
    let d = x0.len();
    let m = d - 1;
    let axes: Vec<Vec<(f64, f64)>> = (0..m)
        .map(|k| {
            if k + 1 < m {
                axis_rule(0.0, PI, Rule::GaussLegendre, nodes)
            } else {
                axis_rule(0.0, 2.0 * PI, Rule::Trapezoid, 2 * nodes)
            }
        })
        .collect();
    let col_det = |first: &DVector<f64>, rest: &[DVector<f64>]| {
        let mut mat = DMatrix::zeros(d, d);
        mat.set_column(0, first);
        for (k, v) in rest.iter().enumerate() {
            mat.set_column(k + 1, v);
        }
        mat.determinant()
    };
    let volume = integrate_axes(&axes, |a| -> Result<f64, IndexError> {
        let (s, ds) = sphere_point(a);
        Ok(col_det(&s, &ds))
    })
    .map_err(|(_, e)| e)?;
    let pulled = integrate_axes(&axes, |a| -> Result<f64, IndexError> {
        let (s, ds) = sphere_point(a);
        let x: Vec<f64> = (0..d).map(|i| x0[i] + radius * s[i]).collect();
        let (v, j) = field.jet(c, &x)?;
        let norm = v.norm();
        if norm == 0.0 {
            return Err(IndexError::VanishesOnSphere {
                chart: field.chart(c).name().to_string(),
                x: x0.to_vec(),
                radius,
            });
        }
        let f = &v / norm;
        let jds: Vec<DVector<f64>> = ds.iter().map(|t| &j * t).collect();
        Ok(col_det(&f, &jds) * (radius / norm).powi(m as i32))
    })
    .map_err(|(_, e)| e)?;
    Ok(pulled / volume)
}

/// Raw (unrounded) local degree of `field` at `zero` on a sphere of the
/// given radius.
pub fn raw_degree(
    field: &VectorFieldSpec,
    chart_index: usize,
    zero: &[f64],
    radius: f64,
) -> Result<f64, IndexError> {
    let chart = field.chart(chart_index);
    let inside = chart.ranges().iter().enumerate().all(|(k, &(lo, hi))| {
        chart.periodic()[k] || (zero[k] - radius > lo && zero[k] + radius < hi)
    });
    if !inside {
        return Err(IndexError::OutsideChart {
            chart: chart.name().to_string(),
            x: zero.to_vec(),
            radius,
        });
    }
    match zero.len() {
        1 => {
            let a = field.value(chart_index, &[zero[0] - radius])?[0];
            let b = field.value(chart_index, &[zero[0] + radius])?[0];
            Ok((b.signum() - a.signum()) / 2.0)
        }
        2 => winding_number(field, chart_index, zero, radius),
        _ => sphere_degree(field, chart_index, zero, radius, 24),
    }
}

/// Local degree, required to round to the same integer at `radius` and
/// `radius/2` and to lie within 0.1 of it.
pub fn local_degree(
    field: &VectorFieldSpec,
    chart_index: usize,
    zero: &[f64],
    radius: f64,
) -> Result<ZeroRecord, IndexError> {
    let radii = [radius, radius / 2.0];
    let raw: Vec<f64> = radii
        .iter()
        .map(|&r| raw_degree(field, chart_index, zero, r))
        .collect::<Result<_, _>>()?;
    let rounded: Vec<f64> = raw.iter().map(|r| r.round()).collect();
    let stable = rounded[0] == rounded[1] && raw.iter().zip(&rounded).all(|(r, k)| (r - k).abs() < 0.1);
    if !stable {
        return Err(IndexError::Unstable {
            chart: field.chart(chart_index).name().to_string(),
            x: zero.to_vec(),
            raw,
            radii: radii.to_vec(),
        });
    }
    Ok(ZeroRecord {
        chart: field.chart(chart_index).name().to_string(),
        chart_index,
        x: zero.to_vec(),
        local_degree: rounded[0] as i64,
        raw_degree: raw[0],
        radius,
    })
}

/// Radius for the degree sphere around zero `k`: a quarter of the distance
/// to other zeros and to the chart boundary.
fn pick_radius(field: &VectorFieldSpec, zeros: &[ZeroCandidate], k: usize) -> f64 {
    let z = &zeros[k];
    let chart = field.chart(z.chart_index);
    let mut r = chart
        .ranges()
        .iter()
        .map(|(lo, hi)| 0.1 * (hi - lo))
        .fold(f64::INFINITY, f64::min);
    for (i, &(lo, hi)) in chart.ranges().iter().enumerate() {
        if !chart.periodic()[i] {
            r = r.min(0.5 * (z.x[i] - lo).min(hi - z.x[i]));
        }
    }
    for (j, other) in zeros.iter().enumerate() {
        if j == k {
            continue;
        }
        let pos = if other.chart_index == z.chart_index {
            Some(other.x.clone())
        } else {
            field
                .atlas
                .overlap(other.chart_index, z.chart_index)
                .and_then(|o| o.apply(&other.x).ok())
        };
        if let Some(p) = pos {
            let dist = chart.difference(&z.x, &p).iter().map(|v| v * v).sum::<f64>().sqrt();
            if dist.is_finite() {
                r = r.min(0.25 * dist);
            }
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexReport {
    pub field: String,
    pub sum: i64,
    pub expected: i64,
    pub zeros: Vec<ZeroRecord>,
    pub warnings: Vec<String>,
}

/// Finds all zeros and sums their local degrees.
pub fn index_sum(field: &VectorFieldSpec, scan_resolution: usize) -> Result<IndexReport, IndexError> {
    let search = find_zeros(field, scan_resolution)?;
    let records: Vec<ZeroRecord> = (0..search.zeros.len())
        .into_par_iter()
        .map(|k| {
            let z = &search.zeros[k];
            let r = pick_radius(field, &search.zeros, k);
            local_degree(field, z.chart_index, &z.x, r)
        })
        .collect::<Result<_, _>>()?;
    Ok(IndexReport {
        field: field.name.clone(),
        sum: records.iter().map(|r| r.local_degree).sum(),
        expected: field.expected,
        zeros: records,
        warnings: search.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_field(comps: [&str; 2]) -> VectorFieldSpec {
        let chart = Chart::new(
            "disk",
            &["x", "y"],
            &[(-1.0, 1.0), (-1.0, 1.0)],
            &[false, false],
            &[vec!["1", "0"], vec!["1"]],
            None,
            &[],
        )
        .unwrap();
        let components = vec![comps
            .iter()
            .map(|t| Expr::parse(t, &["x", "y"], &[]).unwrap())
            .collect()];
        VectorFieldSpec {
            name: "test".into(),
            atlas: Atlas::single(chart, None),
            components,
            expected: 0,
        }
    }

    #[test]
    fn source_and_saddle() {
        let src = plane_field(["x", "y"]);
        assert_eq!(local_degree(&src, 0, &[0.0, 0.0], 0.3).unwrap().local_degree, 1);
        let saddle = plane_field(["x", "-y"]);
        assert_eq!(local_degree(&saddle, 0, &[0.0, 0.0], 0.3).unwrap().local_degree, -1);
        let sq = plane_field(["x^2 - y^2", "2*x*y"]);
        assert_eq!(local_degree(&sq, 0, &[0.0, 0.0], 0.3).unwrap().local_degree, 2);
    }

    #[test]
    fn two_real_roots() {
        let f = plane_field(["x^2 - 0.25", "y"]);
        let s = find_zeros(&f, 16).unwrap();
        assert_eq!(s.zeros.len(), 2, "{s:?}");
        let mut xs: Vec<f64> = s.zeros.iter().map(|z| z.x[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((xs[0] + 0.5).abs() < 1e-10 && (xs[1] - 0.5).abs() < 1e-10);
        assert!(s.zeros.iter().all(|z| z.x[1].abs() < 1e-10));
        let r = index_sum(&f, 16).unwrap();
        assert_eq!(r.sum, 0);
    }

    #[test]
    fn sphere_degree_in_three_dimensions() {
        let chart = Chart::new(
            "ball",
            &["x", "y", "z"],
            &[(-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)],
            &[false, false, false],
            &[vec!["1", "0", "0"], vec!["1", "0"], vec!["1"]],
            None,
            &[],
        )
        .unwrap();
        let mk = |c: [&str; 3]| VectorFieldSpec {
            name: "f".into(),
            atlas: Atlas::single(chart.clone(), None),
            components: vec![c.iter().map(|t| Expr::parse(t, &["x", "y", "z"], &[]).unwrap()).collect()],
            expected: 0,
        };
        let id = mk(["x", "y", "z"]);
        let r = raw_degree(&id, 0, &[0.0, 0.0, 0.0], 0.2).unwrap();
        assert!((r - 1.0).abs() < 1e-10, "{r}");
        let refl = mk(["x", "y", "-z"]);
        assert_eq!(local_degree(&refl, 0, &[0.0; 3], 0.2).unwrap().local_degree, -1);
        let anti = mk(["-x", "-y", "-z"]);
        assert_eq!(local_degree(&anti, 0, &[0.0; 3], 0.2).unwrap().local_degree, -1);
    }

    #[test]
    fn nowhere_zero_field_has_no_zeros() {
        let f = plane_field(["1", "0"]);
        assert!(find_zeros(&f, 16).unwrap().zeros.is_empty());
    }
}
