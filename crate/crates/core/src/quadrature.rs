//! Deterministic tensor-product quadrature over chart boxes.
//!
//! Non-periodic axes use Gauss–Legendre (open nodes, so coordinate
//! singularities on the box boundary are never sampled); periodic axes use the
//! offset uniform trapezoid rule. Node values are computed in parallel but
//! always summed in ascending multi-index order by a fixed pairwise tree, so
//! results are bitwise reproducible regardless of thread count.

use std::fmt::Display;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{Atlas, Chart};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("invalid quadrature spec: {0}")]
    InvalidSpec(String),
    #[error("chart {chart}: density failed at {x:?}: {message}")]
    Density {
        chart: String,
        x: Vec<f64>,
        message: String,
    },
    #[error("Richardson extrapolation needs at least two levels with increasing node counts")]
    TooFewLevels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    GaussLegendre,
    Trapezoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpec {
    pub nodes: Vec<usize>,
    pub rules: Vec<Rule>,
    pub extrapolation_levels: usize,
}

impl QuadratureSpec {
    /// `n` nodes per axis, rule chosen from the chart's periodic flags.
    pub fn for_chart(chart: &Chart, n: usize) -> QuadratureSpec {
        QuadratureSpec::uniform(chart.periodic(), n)
    }

    pub fn uniform(periodic: &[bool], n: usize) -> QuadratureSpec {
        QuadratureSpec {
            nodes: vec![n; periodic.len()],
            rules: periodic
                .iter()
                .map(|&p| if p { Rule::Trapezoid } else { Rule::GaussLegendre })
                .collect(),
            extrapolation_levels: 0,
        }
    }

    pub fn validate(&self, periodic: &[bool]) -> Result<(), QuadratureError> {
        if self.nodes.len() != periodic.len() || self.rules.len() != periodic.len() {
            return Err(QuadratureError::InvalidSpec(format!(
                "spec has {} axes, chart has {}",
                self.nodes.len(),
                periodic.len()
            )));
        }
        for (k, &n) in self.nodes.iter().enumerate() {
            if n < 2 {
                return Err(QuadratureError::InvalidSpec(format!(
                    "axis {} has {n} nodes, need at least 2",
                    k + 1
                )));
            }
            if periodic[k] && self.rules[k] != Rule::Trapezoid {
                return Err(QuadratureError::InvalidSpec(format!(
                    "periodic axis {} must use the uniform rule",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Hermite nodes and weights for `∫ f(y) e^{−y²} dy`, nodes ascending.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        // standard initial guesses for the largest roots, then from neighbours
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[n - 1],
            3 => 1.91 * z - 0.91 * nodes[n - 2],
            _ => 2.0 * z - nodes[n + 1 - i],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            // orthonormal Hermite recurrence
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[n - 1 - i] = z;
        nodes[i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Nodes and weights of one axis on `[lo, hi]`.
pub fn axis_rule(lo: f64, hi: f64, rule: Rule, n: usize) -> Vec<(f64, f64)> {
    match rule {
        Rule::GaussLegendre => {
            let (x, w) = gauss_legendre(n);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            x.iter().zip(&w).map(|(x, w)| (mid + half * x, half * w)).collect()
        }
        Rule::Trapezoid => {
            let h = (hi - lo) / n as f64;
            (0..n).map(|j| (lo + (j as f64 + 0.5) * h, h)).collect()
        }
    }
}

/// Sum by a fixed balanced binary tree.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Tensor-product sum `Σ w·f(x)` over the given axes.
pub fn integrate_axes<E, F>(axes: &[Vec<(f64, f64)>], f: F) -> Result<f64, (Vec<f64>, E)>
where
    F: Fn(&[f64]) -> Result<f64, E> + Sync,
    E: Send,
{
    let dims: Vec<usize> = axes.iter().map(|a| a.len()).collect();
    let total: usize = dims.iter().product();
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rest = flat;
            let mut x = vec![0.0; dims.len()];
            let mut w = 1.0;
            for k in (0..dims.len()).rev() {
                let i = rest % dims[k];
                rest /= dims[k];
                x[k] = axes[k][i].0;
                w *= axes[k][i].1;
            }
            f(&x).map(|v| w * v).map_err(|e| (x, e))
        })
        .collect::<Result<_, _>>()?;
    Ok(pairwise_sum(&values))
}

/// `∫ density · √det g · weight` over the chart box.
pub fn integrate_chart<E, F>(
    chart: &Chart,
    density: F,
    spec: &QuadratureSpec,
) -> Result<f64, QuadratureError>
where
    F: Fn(&[f64]) -> Result<f64, E> + Sync,
    E: Display + Send,
{
    spec.validate(chart.periodic())?;
    let axes: Vec<_> = (0..chart.dim())
        .map(|k| {
            let (lo, hi) = chart.ranges()[k];
            axis_rule(lo, hi, spec.rules[k], spec.nodes[k])
        })
        .collect();
    integrate_axes(&axes, |x| -> Result<f64, String> {
        let w = chart.weight(x).map_err(|e| e.to_string())?;
        if w == 0.0 {
            return Ok(0.0);
        }
        let vol = chart.volume_factor(x).map_err(|e| e.to_string())?;
        let v = density(x).map_err(|e| e.to_string())?;
        Ok(v * vol * w)
    })
    .map_err(|(x, message)| QuadratureError::Density {
        chart: chart.name().to_string(),
        x,
        message,
    })
}

/// Sum of [`integrate_chart`] over the charts; `density` receives the chart
/// index.
pub fn integrate_atlas<E, F>(atlas: &Atlas, density: F, n: usize) -> Result<f64, QuadratureError>
where
    F: Fn(usize, &[f64]) -> Result<f64, E> + Sync,
    E: Display + Send,
{
    let mut parts = Vec::with_capacity(atlas.charts.len());
    for (k, chart) in atlas.charts.iter().enumerate() {
        let spec = QuadratureSpec::for_chart(chart, n);
        parts.push(integrate_chart(chart, |x| density(k, x), &spec)?);
    }
    Ok(pairwise_sum(&parts))
}

/// Extrapolated value and error estimate `|last − extrapolated|` from
/// `(node_count, value)` pairs, modelling the error as `c·n^{−p}`.
pub fn richardson(values: &[(usize, f64)]) -> Result<(f64, f64), QuadratureError> {
    if values.len() < 2 || values.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(QuadratureError::TooFewLevels);
    }
    let k = values.len();
    let (n2, v2) = (values[k - 1].0 as f64, values[k - 1].1);
    let (n1, v1) = (values[k - 2].0 as f64, values[k - 2].1);
    let mut order = 2.0;
    if k >= 3 {
        let (n0, v0) = (values[k - 3].0 as f64, values[k - 3].1);
        let (d1, d2) = (v1 - v0, v2 - v1);
        if d2 == 0.0 {
            return Ok((v2, 0.0));
        }
        let ratio = d1 / d2;
        let model = |p: f64| (n0.powf(-p) - n1.powf(-p)) / (n1.powf(-p) - n2.powf(-p));
        if !(ratio.is_finite() && ratio > model(2.0)) {
            // slower than second order, oscillating or noisy: no acceleration
            if ratio.is_finite() && ratio > 1.0 && ratio <= model(2.0) {
                order = 2.0;
            } else {
                return Ok((v2, 0.0));
            }
        } else {
            let (mut lo, mut hi) = (2.0, 64.0);
            if ratio >= model(hi) {
                return Ok((v2, 0.0));
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if model(mid) < ratio {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            order = 0.5 * (lo + hi);
        }
    } else if v2 == v1 {
        return Ok((v2, 0.0));
    }
    let (a1, a2) = (n1.powf(order), n2.powf(order));
    let extrapolated = (v2 * a2 - v1 * a1) / (a2 - a1);
    Ok((extrapolated, (v2 - extrapolated).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn flat_unit() -> Chart {
        Chart::new(
            "flat",
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
    fn legendre_rule_is_exact_for_low_degree() {
        for n in 2..12 {
            let (x, w) = gauss_legendre(n);
            let sum: f64 = w.iter().sum();
            assert!((sum - 2.0).abs() < 1e-14);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
            assert!(x.windows(2).all(|p| p[0] < p[1]));
            assert!(x[0] > -1.0 && x[n - 1] < 1.0);
        }
    }

    #[test]
    fn constant_on_flat_torus() {
        let c = flat_unit();
        for n in [2, 4, 64] {
            let v = integrate_chart(&c, |_| Ok::<_, String>(1.0), &QuadratureSpec::for_chart(&c, n)).unwrap();
            assert_eq!(v, 1.0);
        }
        // weights 1/n² are not representable; the rule is still exact
        for n in [3, 7, 33] {
            let v = integrate_chart(&c, |_| Ok::<_, String>(1.0), &QuadratureSpec::for_chart(&c, n)).unwrap();
            assert!((v - 1.0).abs() <= 4.0 * f64::EPSILON, "{n}: {v}");
        }
    }

    #[test]
    fn hermite_rule_moments() {
        for n in [1, 2, 5, 12, 40] {
            let (x, w) = gauss_hermite(n);
            assert!(x.windows(2).all(|p| p[0] < p[1]));
            let m0: f64 = w.iter().sum();
            assert!((m0 - PI.sqrt()).abs() < 1e-13, "n={n}: {m0}");
            if n >= 2 {
                let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
                assert!((m2 - PI.sqrt() / 2.0).abs() < 1e-13);
            }
            if n >= 3 {
                let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
                assert!((m4 - 0.75 * PI.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cubic_exactness() {
        let c = Chart::new("line", &["x"], &[(0.0, 1.0)], &[false], &[vec!["1"]], None, &[]).unwrap();
        let v = integrate_chart(&c, |x| Ok::<_, String>(x[0] * x[0]), &QuadratureSpec::for_chart(&c, 2)).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn sphere_area() {
        let c = Chart::new(
            "sphere",
            &["th", "ph"],
            &[(0.0, PI), (0.0, 2.0 * PI)],
            &[false, true],
            &[vec!["1", "0"], vec!["sin(th)^2"]],
            None,
            &[],
        )
        .unwrap();
        let v = integrate_chart(&c, |_| Ok::<_, String>(1.0), &QuadratureSpec::for_chart(&c, 64)).unwrap();
        assert!((v - 4.0 * PI).abs() < 1e-8);
    }

    #[test]
    fn trigonometric_trapezoid_converges_fast() {
        let c = flat_unit();
        let f = |x: &[f64]| Ok::<_, String>((2.0 * PI * x[0]).sin().powi(2) * (4.0 * PI * x[1]).cos().exp());
        // ∫ sin² = 1/2, ∫ e^{cos} over a period = I0(1)
        let i0 = 1.266_065_877_752_008_4;
        let v = integrate_chart(&c, f, &QuadratureSpec::for_chart(&c, 32)).unwrap();
        assert!((v - 0.5 * i0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn errors_carry_the_node() {
        let c = flat_unit();
        let err = integrate_chart(
            &c,
            |x| if x[0] > 0.5 { Err("boom") } else { Ok(1.0) },
            &QuadratureSpec::for_chart(&c, 4),
        )
        .unwrap_err();
        match err {
            QuadratureError::Density { x, message, .. } => {
                assert!(x[0] > 0.5);
                assert_eq!(message, "boom");
            }
            other => panic!("{other:?}"),
        }
        let bad = QuadratureSpec::for_chart(&c, 1);
        assert!(integrate_chart(&c, |_| Ok::<_, String>(1.0), &bad).is_err());
    }

    #[test]
    fn richardson_cases() {
        let (v, e) = richardson(&[(8, 3.0), (16, 3.0), (32, 3.0)]).unwrap();
        assert_eq!((v, e), (3.0, 0.0));
        let model = |n: usize| 1.25 + 0.7 / (n * n) as f64;
        let (v, _) = richardson(&[(16, model(16)), (32, model(32)), (64, model(64))]).unwrap();
        assert!((v - 1.25).abs() < 1e-12);
        let cubic = |n: usize| 2.0 - 3.0 / (n * n * n) as f64;
        let (v, _) = richardson(&[(16, cubic(16)), (24, cubic(24)), (32, cubic(32))]).unwrap();
        assert!((v - 2.0).abs() < 1e-10, "{v}");
        assert!(richardson(&[(16, 1.0)]).is_err());
        assert!(richardson(&[(16, 1.0), (8, 1.0)]).is_err());
    }

    #[test]
    fn pairwise_sum_is_order_fixed() {
        let v: Vec<f64> = (0..1001).map(|k| 1.0 / (k as f64 + 1.0)).collect();
        assert_eq!(pairwise_sum(&v).to_bits(), pairwise_sum(&v).to_bits());
        assert!((pairwise_sum(&v) - v.iter().sum::<f64>()).abs() < 1e-12);
    }
}
