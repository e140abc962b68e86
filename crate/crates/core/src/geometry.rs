//! Chart-based Riemannian geometry.
//!
//! A [`Chart`] is a coordinate box with metric-entry expressions. Everything
//! else is derived from the second-order jets of those entries at a point:
//! Christoffel symbols, the Riemann tensor, an oriented orthonormal frame and
//! the curvature 2-forms in that frame ([`PointGeometry`]). Geodesics,
//! parallel transport and Riemannian normal coordinates are integrated with a
//! fixed-step classic Runge–Kutta scheme.
//!
//! Curvature conventions: `R(∂i,∂j)∂l = R^m_{ijl} ∂m` with
//! `R^m_{ijl} = ∂iΓ^m_{jl} − ∂jΓ^m_{il} + Γ^m_{ia}Γ^a_{jl} − Γ^m_{ja}Γ^a_{il}`
//! and `R_{ijkl} = g_{km} R^m_{ijl}`, so the round unit sphere has
//! `R_{1212} = det g` and positive sectional curvature.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::expr::{EvalError, Expr, Jet2, ParseError, MAX_DIM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("chart {chart}: cannot parse {what}: {source}")]
    Parse {
        chart: String,
        what: String,
        source: ParseError,
    },
    #[error("chart {chart}: {message}")]
    Invalid { chart: String, message: String },
    #[error("chart {chart}: evaluation failed at {x:?}: {source}")]
    Eval {
        chart: String,
        x: Vec<f64>,
        source: EvalError,
    },
    #[error("chart {chart}: metric is not positive definite at {x:?}")]
    NotPositiveDefinite { chart: String, x: Vec<f64> },
    #[error("chart {chart}: point {x:?} lies outside the coordinate range")]
    OutsideChart { chart: String, x: Vec<f64> },
    #[error("chart {chart}: Newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence {
        chart: String,
        iterations: usize,
        residual: f64,
    },
}

/// A coordinate box carrying a Riemannian metric.
#[derive(Debug, Clone)]
pub struct Chart {
    name: String,
    coords: Vec<String>,
    ranges: Vec<(f64, f64)>,
    periodic: Vec<bool>,
    metric: Vec<Vec<Expr>>,
    metric_const: Vec<Vec<Option<f64>>>,
    weight: Option<Expr>,
    injectivity_radius: Option<f64>,
}

impl Chart {
    /// Builds a chart from metric text. `metric_upper[i]` lists the entries
    /// `g_ii, g_i(i+1), …, g_i(d−1)`. Parameters are bound immediately.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        coords: &[&str],
        ranges: &[(f64, f64)],
        periodic: &[bool],
        metric_upper: &[Vec<&str>],
        weight: Option<&str>,
        params: &[(&str, f64)],
    ) -> Result<Chart, GeometryError> {
        let d = coords.len();
        let param_names: Vec<&str> = params.iter().map(|p| p.0).collect();
        let param_values: Vec<f64> = params.iter().map(|p| p.1).collect();
        let parse = |text: &str, what: String| {
            Expr::parse(text, coords, &param_names)
                .map(|e| e.bind_params(&param_values))
                .map_err(|source| GeometryError::Parse {
                    chart: name.to_string(),
                    what,
                    source,
                })
        };
        if metric_upper.len() != d {
            return Err(GeometryError::Invalid {
                chart: name.into(),
                message: format!("metric has {} rows, expected {d}", metric_upper.len()),
            });
        }
        let mut metric = vec![vec![Expr::Num(0.0); d]; d];
        for (i, row) in metric_upper.iter().enumerate() {
            if row.len() != d - i {
                return Err(GeometryError::Invalid {
                    chart: name.into(),
                    message: format!("metric row {} has {} entries, expected {}", i + 1, row.len(), d - i),
                });
            }
            for (k, text) in row.iter().enumerate() {
                let j = i + k;
                let e = parse(text, format!("metric entry g{}{}", i + 1, j + 1))?;
                metric[i][j] = e.clone();
                metric[j][i] = e;
            }
        }
        let weight = weight
            .map(|w| parse(w, "weight".into()))
            .transpose()?;
        Chart::from_exprs(
            name,
            coords.iter().map(|s| s.to_string()).collect(),
            ranges.to_vec(),
            periodic.to_vec(),
            metric,
            weight,
        )
    }

    /// Builds a chart from already-parsed expressions over `coords`.
    pub fn from_exprs(
        name: &str,
        coords: Vec<String>,
        ranges: Vec<(f64, f64)>,
        periodic: Vec<bool>,
        metric: Vec<Vec<Expr>>,
        weight: Option<Expr>,
    ) -> Result<Chart, GeometryError> {
        let d = coords.len();
        let invalid = |message: String| GeometryError::Invalid {
            chart: name.to_string(),
            message,
        };
        if d == 0 || d > MAX_DIM {
            return Err(invalid(format!("dimension {d} not in 1..={MAX_DIM}")));
        }
        if ranges.len() != d || periodic.len() != d {
            return Err(invalid("ranges and periodic flags must match the coordinates".into()));
        }
        for (k, (lo, hi)) in ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid(format!("range of {} is not a proper interval", coords[k])));
            }
        }
        if metric.len() != d || metric.iter().any(|r| r.len() != d) {
            return Err(invalid("metric must be d x d".into()));
        }
        for i in 0..d {
            for j in 0..d {
                if metric[i][j] != metric[j][i] {
                    return Err(invalid(format!("metric is not symmetric at ({}, {})", i + 1, j + 1)));
                }
            }
        }
        let metric_const = metric
            .iter()
            .map(|row| row.iter().map(|e| e.constant_value()).collect())
            .collect();
        Ok(Chart {
            name: name.to_string(),
            coords,
            ranges,
            periodic,
            metric,
            metric_const,
            weight,
            injectivity_radius: None,
        })
    }

    pub fn with_injectivity_radius(mut self, r: f64) -> Chart {
        self.injectivity_radius = Some(r);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn coord_names(&self) -> Vec<&str> {
        self.coords.iter().map(|s| s.as_str()).collect()
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn metric_expr(&self, i: usize, j: usize) -> &Expr {
        &self.metric[i][j]
    }

    pub fn weight_expr(&self) -> Option<&Expr> {
        self.weight.as_ref()
    }

    /// Safe radius for normal coordinates: declared, or 0.4 of the smallest
    /// range extent.
    pub fn injectivity_radius(&self) -> f64 {
        self.injectivity_radius.unwrap_or_else(|| {
            0.4 * self
                .ranges
                .iter()
                .map(|(lo, hi)| hi - lo)
                .fold(f64::INFINITY, f64::min)
        })
    }

    fn eval_err(&self, x: &[f64], source: EvalError) -> GeometryError {
        GeometryError::Eval {
            chart: self.name.clone(),
            x: x.to_vec(),
            source,
        }
    }

    /// Reduces periodic coordinates into their range.
    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, &v)| {
                if self.periodic[k] {
                    let (lo, hi) = self.ranges[k];
                    lo + (v - lo).rem_euclid(hi - lo)
                } else {
                    v
                }
            })
            .collect()
    }

    /// Difference `b − a` with periodic axes reduced to the nearest image.
    pub fn difference(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|k| {
                let mut dx = b[k] - a[k];
                if self.periodic[k] {
                    let p = self.ranges[k].1 - self.ranges[k].0;
                    dx -= p * (dx / p).round();
                }
                dx
            })
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(k, &v)| {
                v.is_finite() && (self.periodic[k] || (v > self.ranges[k].0 && v < self.ranges[k].1))
            })
    }

    fn check_inside(&self, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
        if !self.contains(x) {
            return Err(GeometryError::OutsideChart {
                chart: self.name.clone(),
                x: x.to_vec(),
            });
        }
        Ok(self.wrap(x))
    }

    /// Metric matrix at `x`.
    pub fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        let x = self.check_inside(x)?;
        let d = self.dim();
        let mut g = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = match self.metric_const[i][j] {
                    Some(c) => c,
                    None => self.metric[i][j].eval(&x, &[]).map_err(|e| self.eval_err(&x, e))?,
                };
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Ok(g)
    }

    /// `√det g` at `x`, failing when the metric is not positive definite.
    pub fn volume_factor(&self, x: &[f64]) -> Result<f64, GeometryError> {
        let g = self.metric(x)?;
        let chol = Cholesky::new(g).ok_or_else(|| GeometryError::NotPositiveDefinite {
            chart: self.name.clone(),
            x: x.to_vec(),
        })?;
        Ok(chol.l_dirty().diagonal().iter().take(self.dim()).product())
    }

    /// Partition-of-unity weight at `x` (1 when none is declared).
    pub fn weight(&self, x: &[f64]) -> Result<f64, GeometryError> {
        match &self.weight {
            None => Ok(1.0),
            Some(w) => {
                let x = self.check_inside(x)?;
                w.eval(&x, &[]).map_err(|e| self.eval_err(&x, e))
            }
        }
    }

    fn metric_jets(&self, x: &[f64]) -> Result<Vec<Vec<Jet2>>, GeometryError> {
        let d = self.dim();
        let mut out = vec![vec![Jet2::constant(d, 0.0); d]; d];
        for i in 0..d {
            for j in i..d {
                let jet = match self.metric_const[i][j] {
                    Some(c) => Jet2::constant(d, c),
                    None => self.metric[i][j]
                        .eval_jet2(x, &[])
                        .map_err(|e| self.eval_err(x, e))?,
                };
                out[i][j] = jet;
                out[j][i] = jet;
            }
        }
        Ok(out)
    }

    fn connection(&self, x: &[f64], with_derivative: bool) -> Result<Connection, GeometryError> {
        let x = self.check_inside(x)?;
        let d = self.dim();
        let jets = self.metric_jets(&x)?;
        let g = DMatrix::from_fn(d, d, |i, j| jets[i][j].value);
        let chol = Cholesky::new(g.clone()).ok_or_else(|| GeometryError::NotPositiveDefinite {
            chart: self.name.clone(),
            x: x.clone(),
        })?;
        let g_inv = chol.inverse();
        let det_g = chol.determinant();

        // first kind: Γ_{l,ij} = ½(∂i g_jl + ∂j g_il − ∂l g_ij)
        let first = |l: usize, i: usize, j: usize| {
            0.5 * (jets[j][l].grad(i) + jets[i][l].grad(j) - jets[i][j].grad(l))
        };
        let mut gamma = vec![0.0; d * d * d];
        let idx3 = |k: usize, i: usize, j: usize| (k * d + i) * d + j;
        let mut first_kind = vec![0.0; d * d * d];
        for l in 0..d {
            for i in 0..d {
                for j in i..d {
                    let v = first(l, i, j);
                    first_kind[idx3(l, i, j)] = v;
                    first_kind[idx3(l, j, i)] = v;
                }
            }
        }
        for k in 0..d {
            for i in 0..d {
                for j in i..d {
                    let v: f64 = (0..d).map(|l| g_inv[(k, l)] * first_kind[idx3(l, i, j)]).sum();
                    gamma[idx3(k, i, j)] = v;
                    gamma[idx3(k, j, i)] = v;
                }
            }
        }

        let mut dgamma = Vec::new();
        if with_derivative {
            // ∂m Γ^k_ij = ∂m g^{kl} Γ_{l,ij} + g^{kl} ∂m Γ_{l,ij}
            let idx4 = |m: usize, k: usize, i: usize, j: usize| ((m * d + k) * d + i) * d + j;
            let mut dfirst = vec![0.0; d * d * d * d];
            for m in 0..d {
                for l in 0..d {
                    for i in 0..d {
                        for j in i..d {
                            let v = 0.5
                                * (jets[j][l].hess(i, m) + jets[i][l].hess(j, m)
                                    - jets[i][j].hess(l, m));
                            dfirst[idx4(m, l, i, j)] = v;
                            dfirst[idx4(m, l, j, i)] = v;
                        }
                    }
                }
            }
            dgamma = vec![0.0; d * d * d * d];
            for m in 0..d {
                let dg = DMatrix::from_fn(d, d, |a, b| jets[a][b].grad(m));
                let dg_inv = -(&g_inv * dg * &g_inv);
                for k in 0..d {
                    for i in 0..d {
                        for j in i..d {
                            let mut v = 0.0;
                            for l in 0..d {
                                v += dg_inv[(k, l)] * first_kind[idx3(l, i, j)]
                                    + g_inv[(k, l)] * dfirst[idx4(m, l, i, j)];
                            }
                            dgamma[idx4(m, k, i, j)] = v;
                            dgamma[idx4(m, k, j, i)] = v;
                        }
                    }
                }
            }
        }
        Ok(Connection {
            d,
            x,
            g,
            g_inv,
            det_g,
            gamma,
            dgamma,
        })
    }

    /// Christoffel symbols `Γ^k_ij` at `x`, flattened as `(k·d + i)·d + j`.
    pub fn christoffel(&self, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
        Ok(self.connection(x, false)?.gamma)
    }

    /// Full curvature data at an interior point.
    pub fn point_geometry(&self, x: &[f64]) -> Result<PointGeometry, GeometryError> {
        let conn = self.connection(x, true)?;
        Ok(PointGeometry::from_connection(conn))
    }
}

struct Connection {
    d: usize,
    x: Vec<f64>,
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    det_g: f64,
    gamma: Vec<f64>,
    dgamma: Vec<f64>,
}

impl Connection {
    #[inline]
    fn gamma(&self, k: usize, i: usize, j: usize) -> f64 {
        self.gamma[(k * self.d + i) * self.d + j]
    }

    #[inline]
    fn dgamma(&self, m: usize, k: usize, i: usize, j: usize) -> f64 {
        let d = self.d;
        self.dgamma[((m * d + k) * d + i) * d + j]
    }
}

/// Curvature data at one point of a chart.
#[derive(Debug, Clone)]
pub struct PointGeometry {
    pub dim: usize,
    pub x: Vec<f64>,
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub det_g: f64,
    gamma: Vec<f64>,
    riemann: Vec<f64>,
    /// Columns are the oriented orthonormal frame `e_a` in coordinates.
    pub frame: DMatrix<f64>,
    riemann_frame: Vec<f64>,
    omega2: Vec<f64>,
}

impl PointGeometry {
    fn from_connection(c: Connection) -> PointGeometry {
        let d = c.d;
        let idx4 = |i: usize, j: usize, k: usize, l: usize| ((i * d + j) * d + k) * d + l;

        // R^m_{ijl}
        let mut r_up = vec![0.0; d * d * d * d];
        for m in 0..d {
            for i in 0..d {
                for j in (i + 1)..d {
                    for l in 0..d {
                        let mut v = c.dgamma(i, m, j, l) - c.dgamma(j, m, i, l);
                        for a in 0..d {
                            v += c.gamma(m, i, a) * c.gamma(a, j, l) - c.gamma(m, j, a) * c.gamma(a, i, l);
                        }
                        r_up[idx4(m, i, j, l)] = v;
                        r_up[idx4(m, j, i, l)] = -v;
                    }
                }
            }
        }
        // R_{ijkl} = g_{km} R^m_{ijl}
        let mut riemann = vec![0.0; d * d * d * d];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        riemann[idx4(i, j, k, l)] =
                            (0..d).map(|m| c.g[(k, m)] * r_up[idx4(m, i, j, l)]).sum();
                    }
                }
            }
        }

        let frame = gram_schmidt(&c.g);

        // contract one slot at a time with the frame
        // frame is upper triangular: frame[(s, a)] = 0 for s > a
        let n4 = d * d * d * d;
        let mut t = riemann.clone();
        let mut next = vec![0.0; n4];
        for slot in 0..4 {
            let stride = d.pow(3 - slot as u32);
            for (flat, out) in next.iter_mut().enumerate() {
                let a = (flat / stride) % d;
                let base = flat - a * stride;
                let mut v = 0.0;
                for s in 0..=a {
                    v += frame[(s, a)] * t[base + s * stride];
                }
                *out = v;
            }
            std::mem::swap(&mut t, &mut next);
        }
        let riemann_frame = t;

        // Ω_ab = ½ R_{abcd} ω^c∧ω^d, antisymmetrized so that skewness is exact
        let mut omega2 = vec![0.0; d * d * d * d];
        for a in 0..d {
            for b in (a + 1)..d {
                for p in 0..d {
                    for q in (p + 1)..d {
                        let v = 0.25
                            * (riemann_frame[idx4(a, b, p, q)] - riemann_frame[idx4(a, b, q, p)]
                                - riemann_frame[idx4(b, a, p, q)]
                                + riemann_frame[idx4(b, a, q, p)]);
                        omega2[idx4(a, b, p, q)] = v;
                        omega2[idx4(a, b, q, p)] = -v;
                        omega2[idx4(b, a, p, q)] = -v;
                        omega2[idx4(b, a, q, p)] = v;
                    }
                }
            }
        }

        PointGeometry {
            dim: d,
            x: c.x,
            g: c.g,
            g_inv: c.g_inv,
            det_g: c.det_g,
            gamma: c.gamma,
            riemann,
            frame,
            riemann_frame,
            omega2,
        }
    }

    #[inline]
    fn idx4(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        let d = self.dim;
        ((i * d + j) * d + k) * d + l
    }

    /// `Γ^k_ij`.
    pub fn gamma(&self, k: usize, i: usize, j: usize) -> f64 {
        self.gamma[(k * self.dim + i) * self.dim + j]
    }

    /// Coordinate components `R_{ijkl}`.
    pub fn riemann(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.riemann[self.idx4(i, j, k, l)]
    }

    /// Frame components `R_{abcd} = R(e_a, e_b, e_c, e_d)`.
    pub fn riemann_frame(&self, a: usize, b: usize, c: usize, e: usize) -> f64 {
        self.riemann_frame[self.idx4(a, b, c, e)]
    }

    /// Coefficient of `ω^c∧ω^e` (for `c < e`) in the curvature form `Ω_ab`;
    /// the full array is antisymmetric in `(c, e)`.
    pub fn omega(&self, a: usize, b: usize, c: usize, e: usize) -> f64 {
        self.omega2[self.idx4(a, b, c, e)]
    }

    pub fn scalar_curvature(&self) -> f64 {
        let d = self.dim;
        let mut s = 0.0;
        for a in 0..d {
            for b in 0..d {
                s += self.riemann_frame(a, b, a, b);
            }
        }
        s
    }

    /// Sectional curvature of the plane spanned by frame vectors `a`, `b`.
    pub fn sectional_curvature(&self, a: usize, b: usize) -> f64 {
        self.riemann_frame(a, b, a, b)
    }

    /// Largest absolute coordinate Riemann component, used to scale
    /// tolerances.
    pub fn riemann_scale(&self) -> f64 {
        self.riemann.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Gram–Schmidt on the coordinate basis in order; the result is upper
/// triangular with positive diagonal, hence positively oriented.
pub fn gram_schmidt(g: &DMatrix<f64>) -> DMatrix<f64> {
    let d = g.nrows();
    let mut e: DMatrix<f64> = DMatrix::zeros(d, d);
    for a in 0..d {
        let mut v = DVector::<f64>::zeros(d);
        v[a] = 1.0;
        for b in 0..a {
            let eb = e.column(b).clone_owned();
            let proj = (v.transpose() * g * &eb)[(0, 0)];
            v -= eb * proj;
        }
        let norm = (v.transpose() * g * &v)[(0, 0)].sqrt();
        e.set_column(a, &(v / norm));
    }
    e
}

// ---------------------------------------------------------------------------
// Geodesics and transport
// ---------------------------------------------------------------------------

/// Uniformly sampled curve `t ↦ (x(t), ẋ(t))` in chart coordinates.
/// Periodic coordinates are left unwrapped so the curve stays continuous.
#[derive(Debug, Clone)]
pub struct Path {
    pub dt: f64,
    pub points: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn end(&self) -> (&[f64], &[f64]) {
        let n = self.points.len() - 1;
        (&self.points[n], &self.velocities[n])
    }

    /// Samples a parametrized curve on `[t0, t1]` with `steps` intervals.
    pub fn sample(
        t0: f64,
        t1: f64,
        steps: usize,
        curve: impl Fn(f64) -> (Vec<f64>, Vec<f64>),
    ) -> Path {
        let dt = (t1 - t0) / steps as f64;
        let (points, velocities) = (0..=steps).map(|k| curve(t0 + dt * k as f64)).unzip();
        Path {
            dt,
            points,
            velocities,
        }
    }

    /// Cubic Hermite midpoint of segment `k`.
    fn midpoint(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let (x0, x1) = (&self.points[k], &self.points[k + 1]);
        let (v0, v1) = (&self.velocities[k], &self.velocities[k + 1]);
        let h = self.dt;
        let x = (0..x0.len())
            .map(|i| 0.5 * (x0[i] + x1[i]) + h * (v0[i] - v1[i]) / 8.0)
            .collect();
        let v = (0..x0.len())
            .map(|i| 1.5 * (x1[i] - x0[i]) / h - 0.25 * (v0[i] + v1[i]))
            .collect();
        (x, v)
    }
}

/// Whether a transported quantity is a vector or a covector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variance {
    Tangent,
    Cotangent,
}

fn geodesic_rhs(chart: &Chart, x: &[f64], v: &[f64]) -> Result<Vec<f64>, GeometryError> {
    let d = chart.dim();
    let gamma = chart.christoffel(x)?;
    Ok((0..d)
        .map(|k| {
            let mut a = 0.0;
            for i in 0..d {
                for j in 0..d {
                    a -= gamma[(k * d + i) * d + j] * v[i] * v[j];
                }
            }
            a
        })
        .collect())
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

/// Integrates the geodesic equation from `(x0, v0)` over parameter time
/// `t_end` with `steps` classic RK4 steps.
pub fn integrate_geodesic(
    chart: &Chart,
    x0: &[f64],
    v0: &[f64],
    t_end: f64,
    steps: usize,
) -> Result<Path, GeometryError> {
    let h = t_end / steps as f64;
    let mut x = x0.to_vec();
    let mut v = v0.to_vec();
    let mut points = vec![x.clone()];
    let mut velocities = vec![v.clone()];
    for _ in 0..steps {
        let k1x = v.clone();
        let k1v = geodesic_rhs(chart, &x, &v)?;
        let x2 = axpy(0.5 * h, &k1x, &x);
        let v2 = axpy(0.5 * h, &k1v, &v);
        let k2v = geodesic_rhs(chart, &x2, &v2)?;
        let x3 = axpy(0.5 * h, &v2, &x);
        let v3 = axpy(0.5 * h, &k2v, &v);
        let k3v = geodesic_rhs(chart, &x3, &v3)?;
        let x4 = axpy(h, &v3, &x);
        let v4 = axpy(h, &k3v, &v);
        let k4v = geodesic_rhs(chart, &x4, &v4)?;
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1x[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
            v[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
        if !chart.contains(&x) {
            return Err(GeometryError::OutsideChart {
                chart: chart.name.clone(),
                x,
            });
        }
        points.push(x.clone());
        velocities.push(v.clone());
    }
    Ok(Path {
        dt: h,
        points,
        velocities,
    })
}

/// Unit-speed geodesic of the given length starting in direction `v0`.
pub fn geodesic(
    chart: &Chart,
    x0: &[f64],
    v0: &[f64],
    arc_length: f64,
    steps: usize,
) -> Result<Path, GeometryError> {
    let g = chart.metric(x0)?;
    let v = DVector::from_column_slice(v0);
    let norm = (v.transpose() * g * &v)[(0, 0)].sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(GeometryError::Invalid {
            chart: chart.name.clone(),
            message: "initial velocity must be nonzero".into(),
        });
    }
    let unit: Vec<f64> = v0.iter().map(|c| c / norm).collect();
    integrate_geodesic(chart, x0, &unit, arc_length, steps)
}

fn transport_rhs(
    chart: &Chart,
    x: &[f64],
    xdot: &[f64],
    w: &[f64],
    variance: Variance,
) -> Result<Vec<f64>, GeometryError> {
    let d = chart.dim();
    let gamma = chart.christoffel(x)?;
    let g = |k: usize, i: usize, j: usize| gamma[(k * d + i) * d + j];
    Ok((0..d)
        .map(|k| {
            let mut s = 0.0;
            for i in 0..d {
                for j in 0..d {
                    s += match variance {
                        Variance::Tangent => -g(k, i, j) * xdot[i] * w[j],
                        Variance::Cotangent => g(j, i, k) * xdot[i] * w[j],
                    };
                }
            }
            s
        })
        .collect())
}

/// Parallel transport of `w0` along `path`; returns the transported value at
/// every sample.
pub fn parallel_transport(
    chart: &Chart,
    path: &Path,
    w0: &[f64],
    variance: Variance,
) -> Result<Vec<Vec<f64>>, GeometryError> {
    let h = path.dt;
    let mut w = w0.to_vec();
    let mut out = vec![w.clone()];
    for k in 0..path.len() - 1 {
        let (xm, vm) = path.midpoint(k);
        let (x0, v0) = (&path.points[k], &path.velocities[k]);
        let (x1, v1) = (&path.points[k + 1], &path.velocities[k + 1]);
        let k1 = transport_rhs(chart, x0, v0, &w, variance)?;
        let k2 = transport_rhs(chart, &xm, &vm, &axpy(0.5 * h, &k1, &w), variance)?;
        let k3 = transport_rhs(chart, &xm, &vm, &axpy(0.5 * h, &k2, &w), variance)?;
        let k4 = transport_rhs(chart, x1, v1, &axpy(h, &k3, &w), variance)?;
        for i in 0..w.len() {
            w[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(w.clone());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Normal coordinates
// ---------------------------------------------------------------------------

const STEPS_PER_UNIT: f64 = 1000.0;

/// Riemannian normal coordinates centered at a chart point, using the
/// orthonormal frame there as the basis of the tangent space.
#[derive(Debug, Clone)]
pub struct NormalCoordinates<'a> {
    chart: &'a Chart,
    center: Vec<f64>,
    frame: DMatrix<f64>,
    radius: f64,
}

/// Endpoint of a geodesic together with its derivative in the initial
/// velocity.
struct ShotResult {
    x: Vec<f64>,
    jacobian: DMatrix<f64>,
}

impl<'a> NormalCoordinates<'a> {
    pub fn new(chart: &'a Chart, center: &[f64]) -> Result<Self, GeometryError> {
        let g = chart.metric(center)?;
        if Cholesky::new(g.clone()).is_none() {
            return Err(GeometryError::NotPositiveDefinite {
                chart: chart.name.clone(),
                x: center.to_vec(),
            });
        }
        Ok(NormalCoordinates {
            chart,
            center: center.to_vec(),
            frame: gram_schmidt(&g),
            radius: chart.injectivity_radius(),
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    fn steps_for(&self, len: f64) -> usize {
        ((len * STEPS_PER_UNIT).ceil() as usize).max(64)
    }

    /// Geodesic shot with Jacobi fields `J = ∂x/∂v0`.
    fn shoot(&self, v0: &[f64]) -> Result<ShotResult, GeometryError> {
        let d = self.chart.dim();
        let g0 = self.chart.metric(&self.center)?;
        let vv = DVector::from_column_slice(v0);
        let len = (vv.transpose() * g0 * &vv)[(0, 0)].sqrt();
        let steps = self.steps_for(len);
        let h = 1.0 / steps as f64;
        // state: x (d), v (d), J (d×d), Jdot (d×d)
        let n = 2 * d + 2 * d * d;
        let mut s = vec![0.0; n];
        s[..d].copy_from_slice(&self.center);
        s[d..2 * d].copy_from_slice(v0);
        for i in 0..d {
            s[2 * d + d * d + i * d + i] = 1.0;
        }
        let rhs = |s: &[f64]| -> Result<Vec<f64>, GeometryError> {
            let x = &s[..d];
            let v = &s[d..2 * d];
            let jm = &s[2 * d..2 * d + d * d];
            let jd = &s[2 * d + d * d..];
            let conn = self.chart.connection(x, true)?;
            let mut out = vec![0.0; n];
            out[..d].copy_from_slice(v);
            for k in 0..d {
                let mut a = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        a -= conn.gamma(k, i, j) * v[i] * v[j];
                    }
                }
                out[d + k] = a;
            }
            out[2 * d..2 * d + d * d].copy_from_slice(jd);
            // column c of J is the variation in direction v0_c
            for k in 0..d {
                for c in 0..d {
                    let mut a = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            let gkij = conn.gamma(k, i, j);
                            a -= 2.0 * gkij * v[i] * jd[j * d + c];
                            let mut dg = 0.0;
                            for m in 0..d {
                                dg += conn.dgamma(m, k, i, j) * jm[m * d + c];
                            }
                            a -= dg * v[i] * v[j];
                        }
                    }
                    out[2 * d + d * d + k * d + c] = a;
                }
            }
            Ok(out)
        };
        for _ in 0..steps {
            let k1 = rhs(&s)?;
            let k2 = rhs(&axpy(0.5 * h, &k1, &s))?;
            let k3 = rhs(&axpy(0.5 * h, &k2, &s))?;
            let k4 = rhs(&axpy(h, &k3, &s))?;
            for i in 0..n {
                s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if !self.chart.contains(&s[..d]) {
                return Err(GeometryError::OutsideChart {
                    chart: self.chart.name.clone(),
                    x: s[..d].to_vec(),
                });
            }
        }
        Ok(ShotResult {
            x: s[..d].to_vec(),
            jacobian: DMatrix::from_row_slice(d, d, &s[2 * d..2 * d + d * d]),
        })
    }

    fn coordinate_velocity(&self, z: &[f64]) -> Vec<f64> {
        (&self.frame * DVector::from_column_slice(z)).iter().copied().collect()
    }

    /// `exp_{x0}(Σ z_a e_a)` in chart coordinates.
    pub fn to_chart(&self, z: &[f64]) -> Result<Vec<f64>, GeometryError> {
        if z.iter().all(|c| *c == 0.0) {
            return Ok(self.center.clone());
        }
        let v = self.coordinate_velocity(z);
        let g0 = self.chart.metric(&self.center)?;
        let vv = DVector::from_column_slice(&v);
        let len = (vv.transpose() * g0 * &vv)[(0, 0)].sqrt();
        Ok(integrate_geodesic(self.chart, &self.center, &v, 1.0, self.steps_for(len))?
            .end()
            .0
            .to_vec())
    }

    /// Normal coordinates of the chart point `y`, by damped Newton on the
    /// shooting map.
    pub fn from_chart(&self, y: &[f64]) -> Result<Vec<f64>, GeometryError> {
        let d = self.chart.dim();
        let target = DVector::from_column_slice(&self.chart.difference(&self.center, y));
        if target.norm() == 0.0 {
            return Ok(vec![0.0; d]);
        }
        let scale = 1.0 + target.norm();
        let frame_inv = self.frame.clone().try_inverse().expect("frame is invertible");
        // first guess: the coordinate displacement itself
        let mut v = target.clone();
        let residual_of = |x: &[f64]| DVector::from_column_slice(&self.chart.difference(x, y));
        let mut shot = self.shoot(v.as_slice())?;
        let mut res = residual_of(&shot.x);
        for _ in 0..50 {
            if res.norm() < 1e-13 * scale {
                return Ok((&frame_inv * &v).iter().copied().collect());
            }
            let step = shot
                .jacobian
                .clone()
                .lu()
                .solve(&res)
                .unwrap_or_else(|| res.clone());
            let mut lambda = 1.0;
            loop {
                let trial = &v + &step * lambda;
                match self.shoot(trial.as_slice()) {
                    Ok(s) => {
                        let r = residual_of(&s.x);
                        if r.norm() < res.norm() || lambda < 1e-4 {
                            v = trial;
                            shot = s;
                            res = r;
                            break;
                        }
                    }
                    Err(e) if lambda < 1e-4 => return Err(e),
                    Err(_) => {}
                }
                lambda *= 0.5;
            }
        }
        if res.norm() < 1e-10 * scale {
            return Ok((&frame_inv * &v).iter().copied().collect());
        }
        Err(GeometryError::NoConvergence {
            chart: self.chart.name.clone(),
            iterations: 50,
            residual: res.norm(),
        })
    }

    /// Geodesic distance from the center to `y`.
    pub fn distance(&self, y: &[f64]) -> Result<f64, GeometryError> {
        let z = self.from_chart(y)?;
        Ok(z.iter().map(|c| c * c).sum::<f64>().sqrt())
    }

    /// Metric tensor in normal coordinates at the normal point `z`.
    pub fn metric_at(&self, z: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        let v = self.coordinate_velocity(z);
        let shot = self.shoot(&v)?;
        let jac = shot.jacobian * &self.frame;
        let g = self.chart.metric(&shot.x)?;
        Ok(jac.transpose() * g * jac)
    }

    pub fn det_metric_at(&self, z: &[f64]) -> Result<f64, GeometryError> {
        Ok(self.metric_at(z)?.determinant())
    }
}

/// Identification of coordinates between two charts of an atlas.
#[derive(Debug, Clone)]
pub struct OverlapMap {
    pub from: usize,
    pub to: usize,
    /// Target coordinates as expressions in the source coordinates.
    pub map: Vec<Expr>,
}

impl OverlapMap {
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.map.iter().map(|e| e.eval(x, &[])).collect()
    }

    /// Jacobian `∂y/∂x` at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let d = x.len();
        let mut j = DMatrix::zeros(self.map.len(), d);
        for (r, e) in self.map.iter().enumerate() {
            let jet = e.eval_jet2(x, &[])?;
            for c in 0..d {
                j[(r, c)] = jet.grad(c);
            }
        }
        Ok(j)
    }
}

/// How the charts of an atlas cover the manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    /// One chart covering all but a null set.
    SingleChart,
    /// Several charts with partition-of-unity weights.
    Weighted,
}

#[derive(Debug, Clone)]
pub struct Atlas {
    pub name: String,
    pub charts: Vec<Chart>,
    pub coverage: Coverage,
    pub overlaps: Vec<OverlapMap>,
    pub expected_chi: Option<i64>,
}

impl Atlas {
    pub fn single(chart: Chart, expected_chi: Option<i64>) -> Atlas {
        Atlas {
            name: chart.name.clone(),
            charts: vec![chart],
            coverage: Coverage::SingleChart,
            overlaps: Vec::new(),
            expected_chi,
        }
    }

    pub fn dim(&self) -> usize {
        self.charts[0].dim()
    }

    pub fn overlap(&self, from: usize, to: usize) -> Option<&OverlapMap> {
        self.overlaps.iter().find(|o| o.from == from && o.to == to)
    }

    /// Largest round-trip error of the overlap maps at the given source
    /// points (skipping points where a map is undefined).
    pub fn overlap_roundtrip_error(&self, samples: &[(usize, Vec<f64>)]) -> f64 {
        let mut worst: f64 = 0.0;
        for (chart, x) in samples {
            for o in self.overlaps.iter().filter(|o| o.from == *chart) {
                let Some(back) = self.overlap(o.to, o.from) else {
                    continue;
                };
                let Ok(y) = o.apply(x) else { continue };
                let Ok(xx) = back.apply(&y) else { continue };
                let err = self.charts[*chart]
                    .difference(x, &xx)
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                worst = worst.max(err);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

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

    fn flat2() -> Chart {
        Chart::new(
            "torus",
            &["x", "y"],
            &[(0.0, 1.0), (0.0, 1.0)],
            &[true, true],
            &[vec!["1", "0"], vec!["1"]],
            None,
            &[],
        )
        .unwrap()
    }

    #[test]
    fn flat_torus_is_flat() {
        let pg = flat2().point_geometry(&[0.3, 0.8]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert_eq!(pg.gamma(k, i, j), 0.0);
                    for l in 0..2 {
                        assert_eq!(pg.riemann(i, j, k, l), 0.0);
                        assert_eq!(pg.omega(i, j, k, l), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn unit_sphere_curvature() {
        let th = PI / 3.0;
        let pg = sphere(1.0).point_geometry(&[th, 1.0]).unwrap();
        let k = pg.riemann(0, 1, 0, 1) / pg.det_g;
        assert!((k - 1.0).abs() < 1e-12, "{k}");
        assert!((pg.riemann(0, 1, 0, 1) - th.sin().powi(2)).abs() < 1e-12);
        assert!((pg.omega(0, 1, 0, 1) - 1.0).abs() < 1e-12);
        assert!((pg.scalar_curvature() - 2.0).abs() < 1e-12);
        // Γ^th_{ph ph} = −sin cos, Γ^ph_{th ph} = cot
        assert!((pg.gamma(0, 1, 1) + th.sin() * th.cos()).abs() < 1e-14);
        assert!((pg.gamma(1, 0, 1) - th.cos() / th.sin()).abs() < 1e-14);
    }

    #[test]
    fn frame_is_orthonormal_and_oriented() {
        let pg = sphere(2.0).point_geometry(&[0.7, 4.0]).unwrap();
        let e = &pg.frame;
        let m = e.transpose() * &pg.g * e;
        assert!((m - DMatrix::identity(2, 2)).abs().max() < 1e-12);
        assert!(e.determinant() > 0.0);
        assert!((pg.sectional_curvature(0, 1) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_metric_and_outside_points() {
        let c = Chart::new(
            "bad",
            &["x", "y"],
            &[(-1.0, 1.0), (-1.0, 1.0)],
            &[false, false],
            &[vec!["1", "0"], vec!["x"]],
            None,
            &[],
        )
        .unwrap();
        assert!(matches!(
            c.point_geometry(&[-0.5, 0.0]),
            Err(GeometryError::NotPositiveDefinite { .. })
        ));
        assert!(matches!(
            c.point_geometry(&[1.5, 0.0]),
            Err(GeometryError::OutsideChart { .. })
        ));
        assert!(matches!(
            Chart::new("bad", &["x"], &[(0.0, 1.0)], &[false], &[vec!["q"]], None, &[]),
            Err(GeometryError::Parse { .. })
        ));
    }

    #[test]
    fn flat_geodesic_is_straight() {
        let c = flat2();
        let path = geodesic(&c, &[0.1, 0.2], &[3.0, 4.0], 0.5, 100).unwrap();
        let (x, _) = path.end();
        assert!((x[0] - 0.4).abs() < 1e-15 && (x[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn equator_is_closed() {
        let c = sphere(1.0);
        let path = geodesic(&c, &[PI / 2.0, 0.0], &[0.0, 1.0], 2.0 * PI, 2000).unwrap();
        let (x, _) = path.end();
        let diff = c.difference(&[PI / 2.0, 0.0], x);
        assert!(diff.iter().all(|v| v.abs() < 1e-8), "{diff:?}");
    }

    #[test]
    fn meridian_reaches_pole_and_keeps_speed() {
        let c = sphere(1.0);
        let len = PI / 2.0 - 1e-3;
        let path = geodesic(&c, &[PI / 2.0, 0.3], &[-1.0, 0.0], len, 2000).unwrap();
        let (x, _) = path.end();
        assert!((x[0] - 1e-3).abs() < 1e-10);
        let speed_drift = path
            .points
            .iter()
            .zip(&path.velocities)
            .map(|(x, v)| {
                let g = c.metric(x).unwrap();
                let v = DVector::from_column_slice(v);
                ((v.transpose() * g * &v)[(0, 0)] - 1.0).abs()
            })
            .fold(0.0, f64::max);
        assert!(speed_drift < 1e-10, "{speed_drift}");
    }

    #[test]
    fn normal_coordinates_on_sphere() {
        let c = sphere(1.0);
        let center = [PI / 2.0 - 0.1, 0.4];
        let nc = NormalCoordinates::new(&c, &center).unwrap();
        assert_eq!(nc.distance(&center).unwrap(), 0.0);
        let y = [PI / 2.0 + 0.15, 0.7];
        let embed = |p: &[f64]| [p[0].sin() * p[1].cos(), p[0].sin() * p[1].sin(), p[0].cos()];
        let (a, b) = (embed(&center), embed(&y));
        let expected = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).acos();
        let r = nc.distance(&y).unwrap();
        assert!((r - expected).abs() < 1e-7, "{r} vs {expected}");
        let z = nc.from_chart(&y).unwrap();
        let back = nc.to_chart(&z).unwrap();
        assert!(c.difference(&y, &back).iter().all(|v| v.abs() < 1e-10));

        let g0 = nc.metric_at(&[0.0, 0.0]).unwrap();
        assert!((g0 - DMatrix::identity(2, 2)).abs().max() < 1e-12);
        let rr: f64 = 0.3;
        let det = nc.det_metric_at(&[rr * 0.6, rr * 0.8]).unwrap();
        let expected = (rr.sin() / rr).powi(2);
        assert!(((det - expected) / expected).abs() < 1e-6, "{det} vs {expected}");
    }
}
