//! Heat traces and supertraces on flat tori and the round 2-sphere, small-t
//! asymptotics, and the scalar heat parametrix in dimension 2.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{Chart, GeometryError, NormalCoordinates};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeatError {
    #[error("heat time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("form degree {p} out of range for dimension {d}")]
    Degree { p: usize, d: usize },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("least-squares fit needs at least {needed} times, got {got}")]
    TooFewTimes { needed: usize, got: usize },
    #[error("least-squares fit is ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),
    #[error("the parametrix is implemented for 2-dimensional charts, got dimension {0}")]
    Dimension(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Spectrum of the Hodge Laplacian on a model space.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumModel {
    /// `ℝ^d / ⊕ L_i ℤ`, eigenvalues `Σ (2π m_i / L_i)²`, multiplicity
    /// `C(d, p)` per lattice vector.
    FlatTorus { periods: Vec<f64> },
    /// Round sphere of radius `ρ`: eigenvalues `l(l+1)/ρ²` with multiplicity
    /// `2l+1` on functions and 2-forms and `2(2l+1)`, `l ≥ 1`, on 1-forms.
    RoundS2 { radius: f64 },
}

/// A truncated spectral sum with a bound on the neglected tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatValue {
    pub value: f64,
    pub tail_bound: f64,
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

fn check_time(t: f64) -> Result<(), HeatError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(HeatError::NonPositiveTime(t))
    }
}

/// `Σ_{m∈ℤ} e^{−c m²}` truncated once `e^{−cM²}/(cM)` (a bound on the two
/// tails) drops below `tol`.
fn theta_sum(c: f64, tol: f64) -> (f64, f64) {
    let mut sum = 1.0;
    let mut m = 1u64;
    loop {
        let mf = m as f64;
        sum += 2.0 * (-c * mf * mf).exp();
        let bound = (-c * mf * mf).exp() / (c * mf);
        if bound < tol || m > 10_000_000 {
            return (sum, bound);
        }
        m += 1;
    }
}

impl SpectrumModel {
    pub fn flat_torus(d: usize) -> SpectrumModel {
        SpectrumModel::FlatTorus {
            periods: vec![1.0; d],
        }
    }

    pub fn round_s2(radius: f64) -> SpectrumModel {
        SpectrumModel::RoundS2 { radius }
    }

    pub fn dim(&self) -> usize {
        match self {
            SpectrumModel::FlatTorus { periods } => periods.len(),
            SpectrumModel::RoundS2 { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<(), HeatError> {
        match self {
            SpectrumModel::FlatTorus { periods } => {
                if periods.is_empty() || periods.iter().any(|l| l.is_nan() || *l <= 0.0) {
                    return Err(HeatError::Model(format!("bad torus periods {periods:?}")));
                }
            }
            SpectrumModel::RoundS2 { radius } => {
                if radius.is_nan() || *radius <= 0.0 {
                    return Err(HeatError::Model(format!("bad sphere radius {radius}")));
                }
            }
        }
        Ok(())
    }

    fn check_degree(&self, p: usize) -> Result<(), HeatError> {
        let d = self.dim();
        if p > d {
            return Err(HeatError::Degree { p, d });
        }
        Ok(())
    }

    /// Distinct eigenvalues of `Δ` on `p`-forms below `lambda_max`,
    /// ascending, with multiplicities.
    pub fn eigenvalues(&self, p: usize, lambda_max: f64) -> Result<Vec<(f64, u64)>, HeatError> {
        self.validate()?;
        self.check_degree(p)?;
        match self {
            SpectrumModel::FlatTorus { periods } => {
                let d = periods.len();
                let bounds: Vec<i64> = periods
                    .iter()
                    .map(|l| (lambda_max.sqrt() * l / (2.0 * PI)).floor() as i64)
                    .collect();
                let mut values: Vec<f64> = Vec::new();
                let mut m = vec![0i64; d];
                for (k, b) in bounds.iter().enumerate() {
                    m[k] = -b;
                }
                'outer: loop {
                    let lambda: f64 = m
                        .iter()
                        .zip(periods)
                        .map(|(mi, l)| (2.0 * PI * *mi as f64 / l).powi(2))
                        .sum();
                    if lambda <= lambda_max {
                        values.push(lambda);
                    }
                    for k in 0..d {
                        if m[k] < bounds[k] {
                            m[k] += 1;
                            continue 'outer;
                        }
                        m[k] = -bounds[k];
                    }
                    break;
                }
                values.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
                let per_mode = binomial(d, p);
                let mut out: Vec<(f64, u64)> = Vec::new();
                for v in values {
                    match out.last_mut() {
                        Some((last, mult)) if (v - *last).abs() <= 1e-9 * (1.0 + v) => *mult += per_mode,
                        _ => out.push((v, per_mode)),
                    }
                }
                Ok(out)
            }
            SpectrumModel::RoundS2 { radius } => {
                let mut out = Vec::new();
                let start = if p == 1 { 1 } else { 0 };
                let mut l = start;
                loop {
                    let lambda = (l * (l + 1)) as f64 / (radius * radius);
                    if lambda > lambda_max {
                        break;
                    }
                    let m = (2 * l + 1) as u64;
                    out.push((lambda, if p == 1 { 2 * m } else { m }));
                    l += 1;
                }
                Ok(out)
            }
        }
    }

    /// Dimension of the harmonic `p`-forms.
    pub fn betti(&self, p: usize) -> u64 {
        match self {
            SpectrumModel::FlatTorus { periods } => binomial(periods.len(), p),
            SpectrumModel::RoundS2 { .. } => {
                if p == 1 {
                    0
                } else {
                    1
                }
            }
        }
    }
}

/// `Tr e^{−tΔ_p} = Σ_i e^{−λ_i t}`, truncated when the tail bound drops below
/// `tail_tol`.
pub fn heat_trace(model: &SpectrumModel, p: usize, t: f64, tail_tol: f64) -> Result<HeatValue, HeatError> {
    model.validate()?;
    model.check_degree(p)?;
    check_time(t)?;
    match model {
        SpectrumModel::FlatTorus { periods } => {
            let d = periods.len();
            let per_axis = tail_tol / (4.0 * d as f64);
            let mut prod = 1.0;
            let mut prod_upper = 1.0;
            for l in periods {
                let (s, b) = theta_sum(4.0 * PI * PI * t / (l * l), per_axis);
                prod *= s;
                prod_upper *= s + b;
            }
            let c = binomial(d, p) as f64;
            Ok(HeatValue {
                value: c * prod,
                tail_bound: c * (prod_upper - prod),
            })
        }
        SpectrumModel::RoundS2 { radius } => {
            let s = t / (radius * radius);
            let factor = if p == 1 { 2.0 } else { 1.0 };
            let mut sum = 0.0;
            let mut l: u64 = if p == 1 { 1 } else { 0 };
            loop {
                let lf = l as f64;
                sum += factor * (2.0 * lf + 1.0) * (-lf * (lf + 1.0) * s).exp();
                // ∫_l^∞ (2x+1) e^{−x(x+1)s} dx = e^{−l(l+1)s}/s
                let bound = factor * (-lf * (lf + 1.0) * s).exp() / s;
                if (bound < tail_tol && l >= 1) || l > 100_000_000 {
                    return Ok(HeatValue {
                        value: sum,
                        tail_bound: bound,
                    });
                }
                l += 1;
            }
        }
    }
}

/// `Σ_p (−1)^p Tr e^{−tΔ_p}`.
pub fn supertrace(model: &SpectrumModel, t: f64, tail_tol: f64) -> Result<HeatValue, HeatError> {
    let d = model.dim();
    let mut value = 0.0;
    let mut bound = 0.0;
    for p in 0..=d {
        let h = heat_trace(model, p, t, tail_tol)?;
        value += if p % 2 == 0 { h.value } else { -h.value };
        bound += h.tail_bound;
    }
    Ok(HeatValue {
        value,
        tail_bound: bound,
    })
}

/// Polynomial coefficients `a_0, a_1, …` of a least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticFit {
    pub coefficients: Vec<f64>,
    pub condition: f64,
    pub max_residual: f64,
}

/// Condition numbers beyond this abort the fit.
pub const MAX_CONDITION: f64 = 1e10;

/// Least squares fit of `y(t) ≈ Σ_{k ≤ degree} a_k t^k`.
pub fn polynomial_fit(samples: &[(f64, f64)], degree: usize) -> Result<AsymptoticFit, HeatError> {
    let needed = (degree + 1).max(3);
    if samples.len() < needed {
        return Err(HeatError::TooFewTimes {
            needed,
            got: samples.len(),
        });
    }
    let a = DMatrix::from_fn(samples.len(), degree + 1, |i, k| samples[i].0.powi(k as i32));
    let b = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(HeatError::IllConditioned(condition));
    }
    let x = svd.solve(&b, 0.0).map_err(|_| HeatError::IllConditioned(condition))?;
    let max_residual = (&a * &x - &b).amax();
    Ok(AsymptoticFit {
        coefficients: x.iter().copied().collect(),
        condition,
        max_residual,
    })
}

/// Fits `(4πt)^{d/2} Tr e^{−tΔ_p}` by a polynomial in `t`; `a_0` is the
/// volume and `a_1` the integral of `R/6` for functions.
pub fn asymptotic_fit(
    model: &SpectrumModel,
    p: usize,
    times: &[f64],
    degree: usize,
    tail_tol: f64,
) -> Result<AsymptoticFit, HeatError> {
    let d = model.dim() as i32;
    let samples = times
        .iter()
        .map(|&t| Ok((t, heat_trace(model, p, t, tail_tol)?.value * (4.0 * PI * t).powf(d as f64 / 2.0))))
        .collect::<Result<Vec<_>, HeatError>>()?;
    polynomial_fit(&samples, degree)
}

/// Fits the supertrace itself by a polynomial in `t`.
pub fn supertrace_fit(
    model: &SpectrumModel,
    times: &[f64],
    degree: usize,
    tail_tol: f64,
) -> Result<AsymptoticFit, HeatError> {
    let samples = times
        .iter()
        .map(|&t| Ok((t, supertrace(model, t, tail_tol)?.value)))
        .collect::<Result<Vec<_>, HeatError>>()?;
    polynomial_fit(&samples, degree)
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

/// Legendre polynomials `P_0..=P_L` at `x` by the three-term recurrence.
pub fn legendre_values(l_max: usize, x: f64) -> Vec<f64> {
    let mut p = vec![1.0; l_max + 1];
    if l_max >= 1 {
        p[1] = x;
    }
    for l in 2..=l_max {
        let lf = l as f64;
        p[l] = ((2.0 * lf - 1.0) * x * p[l - 1] - (lf - 1.0) * p[l - 2]) / lf;
    }
    p
}

/// Heat kernel of functions on the sphere of radius `ρ` at geodesic
/// distance `r`: `Σ (2l+1)/(4πρ²) P_l(cos(r/ρ)) e^{−l(l+1)t/ρ²}`.
pub fn spectral_kernel_s2(t: f64, r: f64, radius: f64, tail_tol: f64) -> Result<HeatValue, HeatError> {
    check_time(t)?;
    let s = t / (radius * radius);
    // same tail bound as the trace, with |P_l| ≤ 1
    let mut l_max = 1usize;
    while (-((l_max * (l_max + 1)) as f64) * s).exp() / s / (4.0 * PI * radius * radius) >= tail_tol {
        l_max += 1;
    }
    let p = legendre_values(l_max, (r / radius).cos());
    let mut sum = 0.0;
    for (l, pl) in p.iter().enumerate() {
        let lf = l as f64;
        sum += (2.0 * lf + 1.0) * pl * (-lf * (lf + 1.0) * s).exp();
    }
    Ok(HeatValue {
        value: sum / (4.0 * PI * radius * radius),
        tail_bound: (-((l_max * (l_max + 1)) as f64) * s).exp() / s / (4.0 * PI * radius * radius),
    })
}

/// Heat kernel of the flat unit torus `T^d` at displacement `dx` by the
/// Fourier series, truncated at `|m_i| ≤ modes`.
pub fn torus_kernel_spectral(t: f64, dx: &[f64], modes: i64) -> Result<f64, HeatError> {
    check_time(t)?;
    let mut prod = 1.0;
    for &x in dx {
        let mut s = 1.0;
        for m in 1..=modes {
            let mf = m as f64;
            s += 2.0 * (-4.0 * PI * PI * mf * mf * t).exp() * (2.0 * PI * mf * x).cos();
        }
        prod *= s;
    }
    Ok(prod)
}

/// Heat kernel of the flat unit torus by the method of images, with images
/// `|n_i| ≤ images`.
pub fn torus_kernel_images(t: f64, dx: &[f64], images: i64) -> Result<f64, HeatError> {
    check_time(t)?;
    let mut prod = 1.0;
    for &x in dx {
        let mut s = 0.0;
        for n in -images..=images {
            let y = x + n as f64;
            s += (-y * y / (4.0 * t)).exp();
        }
        prod *= s / (4.0 * PI * t).sqrt();
    }
    Ok(prod)
}

// ---------------------------------------------------------------------------
// Parametrix (functions, dimension 2)
// ---------------------------------------------------------------------------

fn check_surface(chart: &Chart) -> Result<(), HeatError> {
    if chart.dim() != 2 {
        return Err(HeatError::Dimension(chart.dim()));
    }
    Ok(())
}

/// `u⁰(x, y) = det G(y)^{−1/4}` with `G` the metric in normal coordinates
/// centered at `x`.
pub fn parametrix_u0(chart: &Chart, x: &[f64], y: &[f64]) -> Result<f64, HeatError> {
    check_surface(chart)?;
    let nc = NormalCoordinates::new(chart, x)?;
    let z = nc.from_chart(y)?;
    Ok(nc.det_metric_at(&z)?.powf(-0.25))
}

const NORMAL_FD_STEP: f64 = 0.05;

/// `u¹(x, x) = −Δu⁰(x, ·)|_x`. In normal coordinates at `x` the metric is
/// the identity to first order, so `Δ = −Σ ∂²/∂z_a²` there; the second
/// derivatives use fourth-order central differences.
pub fn parametrix_u1_diag(chart: &Chart, x: &[f64]) -> Result<f64, HeatError> {
    check_surface(chart)?;
    let nc = NormalCoordinates::new(chart, x)?;
    let u0 = |z: &[f64]| -> Result<f64, HeatError> { Ok(nc.det_metric_at(z)?.powf(-0.25)) };
    let h = NORMAL_FD_STEP;
    let mut sum = 0.0;
    for a in 0..2 {
        let at = |s: f64| {
            let mut z = [0.0, 0.0];
            z[a] = s;
            u0(&z)
        };
        let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
        sum += (-p2 + 16.0 * p1 - 30.0 + 16.0 * m1 - m2) / (12.0 * h * h);
    }
    Ok(sum)
}

const CHART_FD_STEP: f64 = 0.01;

/// `Δ_y u⁰(x, y)` in chart coordinates,
/// `Δf = −g^{ij}(∂_i∂_j f − Γ^k_ij ∂_k f)`, with central differences.
fn laplacian_u0(chart: &Chart, nc: &NormalCoordinates, y: &[f64]) -> Result<f64, HeatError> {
    let f = |p: &[f64]| -> Result<f64, HeatError> {
        let z = nc.from_chart(p)?;
        Ok(nc.det_metric_at(&z)?.powf(-0.25))
    };
    let h = CHART_FD_STEP;
    let shifted = |da: f64, db: f64| f(&[y[0] + da, y[1] + db]);
    let f0 = f(y)?;
    let (fxp, fxm) = (shifted(h, 0.0)?, shifted(-h, 0.0)?);
    let (fyp, fym) = (shifted(0.0, h)?, shifted(0.0, -h)?);
    let grad = [(fxp - fxm) / (2.0 * h), (fyp - fym) / (2.0 * h)];
    let fxx = (fxp - 2.0 * f0 + fxm) / (h * h);
    let fyy = (fyp - 2.0 * f0 + fym) / (h * h);
    let fxy = (shifted(h, h)? - shifted(h, -h)? - shifted(-h, h)? + shifted(-h, -h)?) / (4.0 * h * h);
    let hess = [[fxx, fxy], [fxy, fyy]];
    let g_inv = chart.metric(y)?.try_inverse().ok_or(GeometryError::NotPositiveDefinite {
        chart: chart.name().to_string(),
        x: y.to_vec(),
    })?;
    let gamma = chart.christoffel(y)?;
    let mut lap = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let mut v = hess[i][j];
            for (k, gk) in grad.iter().enumerate() {
                v -= gamma[(k * 2 + i) * 2 + j] * gk;
            }
            lap -= g_inv[(i, j)] * v;
        }
    }
    Ok(lap)
}

/// `u¹(x, y) = −r^{−1} g^{−1/4}(y) ∫_0^r g^{1/4}(y(s)) Δu⁰(y(s)) ds` along the
/// radial geodesic `y(s)` from `x`; on the diagonal it is
/// [`parametrix_u1_diag`].
pub fn parametrix_u1(chart: &Chart, x: &[f64], y: &[f64], nodes: usize) -> Result<f64, HeatError> {
    check_surface(chart)?;
    let nc = NormalCoordinates::new(chart, x)?;
    let z = nc.from_chart(y)?;
    let r = (z[0] * z[0] + z[1] * z[1]).sqrt();
    if r < 1e-8 {
        return parametrix_u1_diag(chart, x);
    }
    let (nodes_std, weights) = gauss_legendre(nodes);
    let mut integral = 0.0;
    for (xi, w) in nodes_std.iter().zip(&weights) {
        let frac = 0.5 * (xi + 1.0);
        let zs = [z[0] * frac, z[1] * frac];
        let ys = nc.to_chart(&zs)?;
        let g14 = nc.det_metric_at(&zs)?.powf(0.25);
        integral += 0.5 * r * w * g14 * laplacian_u0(chart, &nc, &ys)?;
    }
    let g_y = nc.det_metric_at(&z)?;
    Ok(-integral / r * g_y.powf(-0.25))
}

/// `H_N(t, x, y) = (4πt)^{−1} e^{−r²/4t} Σ_{i ≤ N} t^i u^i(x, y)` for `N ≤ 1`.
pub fn parametrix_kernel(chart: &Chart, order: usize, t: f64, x: &[f64], y: &[f64]) -> Result<f64, HeatError> {
    check_surface(chart)?;
    check_time(t)?;
    if order > 1 {
        return Err(HeatError::Model(format!("parametrix order {order} > 1 is not implemented")));
    }
    let nc = NormalCoordinates::new(chart, x)?;
    let z = nc.from_chart(y)?;
    let r2 = z[0] * z[0] + z[1] * z[1];
    let mut series = nc.det_metric_at(&z)?.powf(-0.25);
    if order == 1 {
        series += t * parametrix_u1(chart, x, y, 8)?;
    }
    Ok((-r2 / (4.0 * t)).exp() / (4.0 * PI * t) * series)
}

/// Largest `|r ∂_r (g^{1/4} u⁰)|` along the ray from `x` in the normal
/// direction `dir`, sampled at `samples` radii up to `r_max`; the transport
/// equation for `u⁰` requires zero.
pub fn u0_transport_residual(
    chart: &Chart,
    x: &[f64],
    dir: [f64; 2],
    r_max: f64,
    samples: usize,
) -> Result<f64, HeatError> {
    check_surface(chart)?;
    let nc = NormalCoordinates::new(chart, x)?;
    let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
    let unit = [dir[0] / norm, dir[1] / norm];
    let product = |r: f64| -> Result<f64, HeatError> {
        let z = [unit[0] * r, unit[1] * r];
        let y = nc.to_chart(&z)?;
        let u0 = parametrix_u0(chart, x, &y)?;
        Ok(nc.det_metric_at(&z)?.powf(0.25) * u0)
    };
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for k in 1..=samples {
        let r = r_max * k as f64 / samples as f64;
        let d = (product(r + h)? - product(r - h)?) / (2.0 * h);
        worst = worst.max((r * d).abs());
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Grid oracles for the spectra
// ---------------------------------------------------------------------------

fn sorted_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    ev
}

/// Eigenvalues of the periodic second-difference Laplacian on `n` points of
/// the unit circle (functions and 1-forms share it).
pub fn grid_spectrum_circle(n: usize) -> Vec<f64> {
    let h = 1.0 / n as f64;
    let m = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            2.0 / (h * h)
        } else if (i + 1) % n == j || (j + 1) % n == i {
            -1.0 / (h * h)
        } else {
            0.0
        }
    });
    sorted_eigenvalues(m)
}

/// Eigenvalues of the discrete-exterior-calculus Hodge Laplacian on
/// `p`-cochains of the `n × n` periodic square grid of the unit torus.
pub fn dec_spectrum_torus2(n: usize, p: usize) -> Vec<f64> {
    let h = 1.0 / n as f64;
    let nv = n * n;
    let vid = |i: usize, j: usize| (i % n) * n + (j % n);
    // edges: horizontal (i,j)->(i+1,j) then vertical (i,j)->(i,j+1)
    let mut d0 = DMatrix::zeros(2 * nv, nv);
    for i in 0..n {
        for j in 0..n {
            let e = vid(i, j);
            d0[(e, vid(i + 1, j))] += 1.0;
            d0[(e, vid(i, j))] -= 1.0;
            d0[(nv + e, vid(i, j + 1))] += 1.0;
            d0[(nv + e, vid(i, j))] -= 1.0;
        }
    }
    // face (i,j) boundary: h(i,j) + v(i+1,j) − h(i,j+1) − v(i,j)
    let mut d1 = DMatrix::zeros(nv, 2 * nv);
    for i in 0..n {
        for j in 0..n {
            let f = vid(i, j);
            d1[(f, vid(i, j))] += 1.0;
            d1[(f, nv + vid(i + 1, j))] += 1.0;
            d1[(f, vid(i, j + 1))] -= 1.0;
            d1[(f, nv + vid(i, j))] -= 1.0;
        }
    }
    // on a uniform grid all Hodge stars are powers of h and cancel to 1/h²
    let scale = 1.0 / (h * h);
    let lap = match p {
        0 => d0.transpose() * &d0,
        1 => &d0 * d0.transpose() + d1.transpose() * &d1,
        _ => &d1 * d1.transpose(),
    };
    sorted_eigenvalues(lap * scale)
}

/// Eigenvalues of the Laplacian on functions `f(θ) e^{imφ}` of the unit
/// sphere, discretized by finite volumes on `cells` polar cells.
pub fn grid_spectrum_s2_mode(m: i64, cells: usize) -> Vec<f64> {
    let h = PI / cells as f64;
    let theta = |j: f64| j * h;
    let mf = (m * m) as f64;
    let mut a = DMatrix::zeros(cells, cells);
    for j in 0..cells {
        let sc = theta(j as f64 + 0.5).sin();
        let sp = theta(j as f64 + 1.0).sin();
        let sm = theta(j as f64).sin();
        a[(j, j)] = (sp + sm) / (h * h) + mf / sc;
        if j + 1 < cells {
            a[(j, j + 1)] = -sp / (h * h);
            a[(j + 1, j)] = -sp / (h * h);
        }
    }
    // A f = λ M f with M = diag(sin θ_j); symmetrize with M^{−1/2}
    let mhalf: Vec<f64> = (0..cells).map(|j| theta(j as f64 + 0.5).sin().sqrt()).collect();
    let b = DMatrix::from_fn(cells, cells, |i, j| a[(i, j)] / (mhalf[i] * mhalf[j]));
    sorted_eigenvalues(b)
}

/// Richardson combination of a second-order grid quantity at two
/// resolutions `n1 < n2`.
pub fn richardson_second_order(v1: f64, n1: usize, v2: f64, n2: usize) -> f64 {
    let (a, b) = ((n1 * n1) as f64, (n2 * n2) as f64);
    (b * v2 - a * v1) / (b - a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_trace_matches_direct_sum() {
        let t1 = SpectrumModel::flat_torus(1);
        let h = heat_trace(&t1, 0, 1.0, 1e-15).unwrap();
        let direct: f64 = (-50i64..=50).map(|m| (-4.0 * PI * PI * (m * m) as f64).exp()).sum();
        assert!((h.value - direct).abs() < 1e-15);
    }

    #[test]
    fn sphere_trace_matches_direct_sum() {
        let s2 = SpectrumModel::round_s2(1.0);
        let h = heat_trace(&s2, 0, 0.5, 1e-12).unwrap();
        let direct: f64 = (0..200).map(|l| (2 * l + 1) as f64 * (-((l * (l + 1)) as f64) * 0.5).exp()).sum();
        assert!((h.value - direct).abs() < 1e-12);
        assert!(h.tail_bound < 1e-12);
    }

    #[test]
    fn long_time_limit_counts_harmonic_forms() {
        for model in [SpectrumModel::flat_torus(2), SpectrumModel::round_s2(1.0)] {
            for p in 0..=2 {
                let h = heat_trace(&model, p, 60.0, 1e-14).unwrap();
                assert!((h.value - model.betti(p) as f64).abs() < 1e-12, "{model:?} p={p}");
            }
        }
    }

    #[test]
    fn nonpositive_time_is_rejected() {
        let s2 = SpectrumModel::round_s2(1.0);
        assert!(matches!(heat_trace(&s2, 0, 0.0, 1e-12), Err(HeatError::NonPositiveTime(_))));
        assert!(matches!(supertrace(&s2, -1.0, 1e-12), Err(HeatError::NonPositiveTime(_))));
    }

    #[test]
    fn legendre_recurrence() {
        let p = legendre_values(3, 0.3);
        assert!((p[2] - 0.5 * (3.0 * 0.09 - 1.0)).abs() < 1e-15);
        assert!((p[3] - 0.5 * (5.0 * 0.027 - 0.9)).abs() < 1e-15);
    }

    #[test]
    fn torus_images_and_fourier_agree() {
        for t in [0.01, 0.05, 0.3] {
            let a = torus_kernel_spectral(t, &[0.25, 0.1], 200).unwrap();
            let b = torus_kernel_images(t, &[0.25, 0.1], 20).unwrap();
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "t={t}: {a} {b}");
        }
    }

    #[test]
    fn eigenvalue_enumeration() {
        let t2 = SpectrumModel::flat_torus(2);
        let ev = t2.eigenvalues(1, 4.0 * PI * PI * 2.5).unwrap();
        let l = 4.0 * PI * PI;
        assert_eq!(ev.len(), 3);
        assert_eq!(ev[0], (0.0, 2));
        assert!((ev[1].0 - l).abs() < 1e-9 && ev[1].1 == 8);
        assert!((ev[2].0 - 2.0 * l).abs() < 1e-9 && ev[2].1 == 8);
        let s2 = SpectrumModel::round_s2(1.0);
        assert_eq!(s2.eigenvalues(1, 6.5).unwrap(), vec![(2.0, 6), (6.0, 10)]);
    }

    #[test]
    fn polynomial_fit_recovers_coefficients() {
        let samples: Vec<(f64, f64)> = (1..8).map(|k| {
            let t = 0.02 * k as f64;
            (t, 3.0 - 2.0 * t + 0.5 * t * t)
        }).collect();
        let fit = polynomial_fit(&samples, 2).unwrap();
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-10);
        assert!((fit.coefficients[1] + 2.0).abs() < 1e-9);
        assert!(matches!(polynomial_fit(&samples[..2], 1), Err(HeatError::TooFewTimes { .. })));
    }

    #[test]
    fn parametrix_on_the_unit_sphere() {
        let c = crate::library::sphere2_chart(1.0).unwrap();
        let x = [PI / 2.0, 1.0];
        let y = [PI / 2.0 + 0.5, 1.0];
        let u0 = parametrix_u0(&c, &x, &y).unwrap();
        assert!((u0 - (0.5f64 / 0.5f64.sin()).sqrt()).abs() < 1e-5);
        assert!((parametrix_u1_diag(&c, &x).unwrap() - 1.0 / 3.0).abs() < 1e-5);
        let errs: Vec<f64> = [0.005, 0.01, 0.02]
            .iter()
            .map(|&t| {
                let k = spectral_kernel_s2(t, 0.5, 1.0, 1e-14).unwrap().value;
                (parametrix_kernel(&c, 1, t, &x, &y).unwrap() - k).abs() / k
            })
            .collect();
        assert!(errs[1] < 0.05 && errs[0] < errs[1] && errs[1] < errs[2], "{errs:?}");
    }

    #[test]
    fn grid_spectra_match_the_models() {
        let circle = grid_spectrum_circle(400);
        assert!((circle[1] - 4.0 * PI * PI).abs() / (4.0 * PI * PI) < 1e-4);
        let s2 = grid_spectrum_s2_mode(1, 200);
        assert!((s2[0] - 2.0).abs() < 1e-3 && (s2[1] - 6.0).abs() < 1e-3);
        for p in 0..=2 {
            let z = binomial(2, p) as usize;
            let a = dec_spectrum_torus2(12, p);
            let b = dec_spectrum_torus2(16, p);
            assert!(b[..z].iter().all(|v| v.abs() < 1e-8));
            let rich = richardson_second_order(a[z], 12, b[z], 16);
            assert!((rich - 4.0 * PI * PI).abs() / (4.0 * PI * PI) < 1e-3);
            let cluster = &b[z..z + 4 * z];
            assert!(cluster.iter().all(|v| (v - b[z]).abs() < 1e-8));
        }
    }
}
