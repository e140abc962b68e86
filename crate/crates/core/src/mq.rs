//! The Mathai–Quillen Thom form.
//!
//! Over a point the fiber `ℝⁿ` carries `u = ε(n)(2π)^{−n/2} B(exp(−|x|²/2 − i dx))`
//! with `dx = Σ dx^k ⊗ e_k`. Over the annulus chart of a plane bundle the
//! total space has coordinates `(y¹, y², x¹, x²)` and generators
//! `(dy¹, dy², dx¹, dx²)`; with the northern connection form `θ`
//!
//! ```text
//! Q = |x|²/2 + i[(dx¹ − θx²)⊗e₁ + (dx² + θx¹)⊗e₂] + Ω dy¹∧dy² ⊗ e₁∧e₂,
//! u = (2π)^{−1} B(exp(−Q)),
//! ```
//!
//! where `Ω = dθ`. Exponentials are exact because the algebra is nilpotent
//! away from the scalar part.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bundles::{BundleError, PlaneBundle};
use crate::exterior::{pfaffian, BigradedElement, ExteriorError, FormElement};
use crate::quadrature::gauss_hermite;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MqError {
    #[error(transparent)]
    Exterior(#[from] ExteriorError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("fiber rank {0} is too large for the point model (at most 8)")]
    RankTooLarge(usize),
    #[error("Thom form coefficient has imaginary part {0:e}")]
    NotReal(f64),
}

const REAL_TOL: f64 = 1e-12;

/// `1` for even `n`, `i` for odd `n`.
pub fn epsilon(n: usize) -> Complex64 {
    if n.is_multiple_of(2) {
        Complex64::new(1.0, 0.0)
    } else {
        Complex64::new(0.0, 1.0)
    }
}

/// Thom form of the rank-`n` bundle over a point, at fiber point `x`, as an
/// element of the exterior algebra on `dx¹, …, dxⁿ`.
pub fn mq_form_point(x: &[f64]) -> Result<FormElement, MqError> {
    let n = x.len();
    if n > 8 {
        return Err(MqError::RankTooLarge(n));
    }
    let norm2: f64 = x.iter().map(|v| v * v).sum();
    let mut minus_q = BigradedElement::scalar(n, n, -0.5 * norm2);
    for k in 0..n {
        minus_q = minus_q.try_add(&BigradedElement::term(n, n, &[k], &[k], Complex64::new(0.0, -1.0))?)?;
    }
    let b = minus_q.exp().berezin_fiber();
    Ok(b.scale(epsilon(n) * (2.0 * PI).powf(-(n as f64) / 2.0)))
}

/// Top coefficient of [`mq_form_point`], checked to be real.
pub fn point_density(x: &[f64]) -> Result<f64, MqError> {
    let c = mq_form_point(x)?.berezin();
    if c.im.abs() > REAL_TOL {
        return Err(MqError::NotReal(c.im));
    }
    Ok(c.re)
}

/// Tensor Gauss–Hermite rule for `∫_{ℝⁿ} f` with `f` decaying like
/// `e^{−|x|²/2}`: nodes `x = √2 y` and weights `w e^{y²} √2` per axis.
fn hermite_grid(n: usize, nodes: usize) -> Vec<(Vec<f64>, f64)> {
    let (y, w) = gauss_hermite(nodes);
    let axis: Vec<(f64, f64)> = y
        .iter()
        .zip(&w)
        .map(|(y, w)| (2f64.sqrt() * y, w * (y * y).exp() * 2f64.sqrt()))
        .collect();
    let mut grid = vec![(Vec::new(), 1.0)];
    for _ in 0..n {
        grid = grid
            .into_iter()
            .flat_map(|(p, wt)| {
                axis.iter().map(move |(x, w)| {
                    let mut q = p.clone();
                    q.push(*x);
                    (q, wt * w)
                })
            })
            .collect();
    }
    grid
}

/// `∫_{ℝⁿ} u` for the point model.
pub fn fiber_integral_point(n: usize, nodes: usize) -> Result<f64, MqError> {
    let mut total = 0.0;
    for (x, w) in hermite_grid(n, nodes) {
        total += w * point_density(&x)?;
    }
    Ok(total)
}

/// Index of `dx^k` among the total-space generators.
const DX: [usize; 2] = [2, 3];
const DY: [usize; 2] = [0, 1];

/// `Q` at base point `y` (annulus chart) and fiber point `x`.
pub fn q_element(bundle: &PlaneBundle, y: &[f64], x: &[f64]) -> Result<BigradedElement, MqError> {
    let conn = bundle.connection_from_transitions(y)?;
    let theta = conn.theta_north;
    let omega = conn.curvature_north;
    let i = Complex64::new(0.0, 1.0);
    let mut q = BigradedElement::scalar(4, 2, 0.5 * (x[0] * x[0] + x[1] * x[1]));
    // i ∇x = i[(dx¹ − θx²)⊗e₁ + (dx² + θx¹)⊗e₂]
    let fiber_coef = [(-x[1], 0usize), (x[0], 1usize)];
    for (k, &(xs, f)) in fiber_coef.iter().enumerate() {
        q = q.try_add(&BigradedElement::term(4, 2, &[DX[k]], &[f], i)?)?;
        for (a, &dy) in DY.iter().enumerate() {
            if theta[a] != 0.0 && xs != 0.0 {
                q = q.try_add(&BigradedElement::term(4, 2, &[dy], &[f], i * theta[a] * xs)?)?;
            }
        }
    }
    if omega != 0.0 {
        q = q.try_add(&BigradedElement::term(4, 2, &DY, &[0, 1], omega)?)?;
    }
    Ok(q)
}

/// `u = (2π)^{−1} B(exp(−Q))` as a form on the total space.
pub fn mq_form_bundle(bundle: &PlaneBundle, y: &[f64], x: &[f64]) -> Result<FormElement, MqError> {
    let q = q_element(bundle, y, x)?;
    let u = q.scale(-1.0).exp().berezin_fiber().scale(1.0 / (2.0 * PI));
    let im = u.max_imag();
    if im > REAL_TOL {
        return Err(MqError::NotReal(im));
    }
    Ok(u)
}

/// `∫_{fiber} u` over the fiber at base point `y`.
pub fn fiber_integral(bundle: &PlaneBundle, y: &[f64], nodes: usize) -> Result<f64, MqError> {
    let mut total = 0.0;
    for (x, w) in hermite_grid(2, nodes) {
        total += w * mq_form_bundle(bundle, y, &x)?.coefficient(&DX).re;
    }
    Ok(total)
}

/// `dy¹∧dy²` coefficient of the pullback of `u` by the zero section.
pub fn zero_section_pullback(bundle: &PlaneBundle, y: &[f64]) -> Result<f64, MqError> {
    Ok(mq_form_bundle(bundle, y, &[0.0, 0.0])?.coefficient(&DY).re)
}

/// `(2π)^{−1}` times the Pfaffian of the skew matrix `−Θ_{ij}` of curvature
/// 2-forms, `Θ_{ij} = ⟨Θe_i, e_j⟩`, as a `dy¹∧dy²` coefficient.
pub fn pfaffian_curvature_density(bundle: &PlaneBundle, y: &[f64]) -> Result<f64, MqError> {
    let omega = bundle.connection_from_transitions(y)?.curvature_north;
    let entry = |c: f64| FormElement::monomial(2, &[0, 1], c);
    let m = vec![
        vec![FormElement::zero(2), entry(-omega)?],
        vec![entry(omega)?, FormElement::zero(2)],
    ];
    Ok(pfaffian(&m)?.berezin().re / (2.0 * PI))
}

/// `∫_{S²}` of the zero-section pullback.
pub fn mq_euler_number(bundle: &PlaneBundle, base_resolution: usize) -> Result<f64, MqError> {
    Ok(bundle.integrate_form(|y| zero_section_pullback(bundle, y), base_resolution)?)
}

/// Contraction `a(s)(ω⊗e_{k₁}∧…∧e_{k_j}) = Σ_r (−1)^{deg ω + r − 1} s_{k_r} ω⊗(… ê_{k_r} …)`.
pub fn contraction(s: &[f64], eta: &BigradedElement) -> Result<BigradedElement, MqError> {
    let (nb, nf) = (eta.n_base(), eta.n_fiber());
    let mut out = BigradedElement::zero(nb, nf);
    for ((base, fiber), c) in eta.terms() {
        for (r, &k) in fiber.iter().enumerate() {
            let sign = if (base.len() + r) % 2 == 0 { 1.0 } else { -1.0 };
            let rest: Vec<usize> = fiber.iter().copied().filter(|&f| f != k).collect();
            out = out.try_add(&BigradedElement::term(nb, nf, &base, &rest, c * sign * s[k])?)?;
        }
    }
    Ok(out)
}

/// Fourth-order central difference step used by the probes.
const FD_STEP: f64 = 1e-3;

fn central_difference<F>(f: F, z: &[f64], m: usize) -> Result<FormElement, MqError>
where
    F: Fn(&[f64]) -> Result<FormElement, MqError>,
{
    let at = |delta: f64| {
        let mut p = z.to_vec();
        p[m] += delta;
        f(&p)
    };
    let h = FD_STEP;
    let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
    let num = (&(&p1 - &m1).scale(8.0) - &(&p2 - &m2)).scale(1.0 / (12.0 * h));
    Ok(num)
}

fn exterior_derivative<F>(f: F, z: &[f64]) -> Result<FormElement, MqError>
where
    F: Fn(&[f64]) -> Result<FormElement, MqError>,
{
    let n = f(z)?.n_generators();
    let mut out = FormElement::zero(n);
    for m in 0..z.len() {
        let dm = central_difference(&f, z, m)?;
        out = out.try_add(&FormElement::generator(n, m).wedge(&dm)?)?;
    }
    Ok(out)
}

/// Largest coefficient of `du` at total-space point `(y, x)`, by finite
/// differences of the coefficient functions.
pub fn closedness_residual(bundle: &PlaneBundle, y: &[f64], x: &[f64]) -> Result<f64, MqError> {
    let f = |z: &[f64]| mq_form_bundle(bundle, &z[..2], &z[2..]);
    let z: Vec<f64> = y.iter().chain(x).copied().collect();
    let du = exterior_derivative(f, &z)?;
    Ok(du.terms().map(|(_, c)| c.norm()).fold(0.0, f64::max))
}

/// Action of `J: e₁ ↦ e₂, e₂ ↦ −e₁` extended to `Λ(fiber)` as a derivation.
fn rotate_fiber(eta: &BigradedElement) -> Result<BigradedElement, MqError> {
    let (nb, nf) = (eta.n_base(), eta.n_fiber());
    let mut out = BigradedElement::zero(nb, nf);
    for ((base, fiber), c) in eta.terms() {
        for r in 0..fiber.len() {
            let (img, sign) = if fiber[r] == 0 { (1, 1.0) } else { (0, -1.0) };
            let mut f = fiber.clone();
            f[r] = img;
            out = out.try_add(&BigradedElement::term(nb, nf, &base, &f, c * sign)?)?;
        }
    }
    Ok(out)
}

/// Largest coefficient of `(∇ − i a(x))Q` at `(y, x)`, with
/// `∇(ω⊗ξ) = dω⊗ξ + (−1)^{deg ω} (ω∧θ)⊗Jξ` and `dω` by finite differences.
pub fn q_annihilation_residual(bundle: &PlaneBundle, y: &[f64], x: &[f64]) -> Result<f64, MqError> {
    let z: Vec<f64> = y.iter().chain(x).copied().collect();
    let q = q_element(bundle, y, x)?;
    let (nb, nf) = (4, 2);
    let mut nabla = BigradedElement::zero(nb, nf);
    // dω ⊗ ξ, one fiber monomial at a time
    for fiber in [vec![], vec![0], vec![1], vec![0, 1]] {
        let part = |p: &[f64]| -> Result<FormElement, MqError> {
            let qp = q_element(bundle, &p[..2], &p[2..])?;
            let mut f = FormElement::zero(nb);
            for ((b, fb), c) in qp.terms() {
                if fb == fiber {
                    f = f.try_add(&FormElement::monomial(nb, &b, c)?)?;
                }
            }
            Ok(f)
        };
        let d = exterior_derivative(part, &z)?;
        for (b, c) in d.terms() {
            nabla = nabla.try_add(&BigradedElement::term(nb, nf, &b, &fiber, c)?)?;
        }
    }
    let theta = bundle.connection_from_transitions(y)?.theta_north;
    let j_q = rotate_fiber(&q)?;
    for ((base, fiber), c) in j_q.terms() {
        let sign = if base.len() % 2 == 0 { 1.0 } else { -1.0 };
        for (a, &dy) in DY.iter().enumerate() {
            let mut b = base.clone();
            b.push(dy);
            nabla = nabla.try_add(&BigradedElement::term(nb, nf, &b, &fiber, c * sign * theta[a])?)?;
        }
    }
    let i = Complex64::new(0.0, 1.0);
    let res = nabla.try_add(&contraction(x, &q)?.scale(-i))?;
    Ok(res.terms().map(|(_, c)| c.norm()).fold(0.0, f64::max))
}

/// Summary of the Thom form checks on one bundle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MqReport {
    pub k: i32,
    pub fiber_nodes: usize,
    pub base_points: Vec<[f64; 2]>,
    pub fiber_integrals: Vec<f64>,
    pub fiber_integral_spread: f64,
    pub max_fiber_error: f64,
    pub max_pullback_residual: f64,
    pub max_closedness: f64,
    pub max_q_residual: f64,
    pub euler_number: f64,
}

/// Pseudo-random points of the open annulus.
pub fn sample_base_points(bundle: &PlaneBundle, count: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (bundle.profile.a, bundle.profile.b);
    (0..count)
        .map(|_| [rng.random_range(a + 0.02..b - 0.02), rng.random_range(0.0..2.0 * PI)])
        .collect()
}

/// Fiber normalization, zero-section pullback, closedness and the Euler
/// number of `bundle`.
pub fn run_checks(
    bundle: &PlaneBundle,
    fiber_nodes: usize,
    base_resolution: usize,
    base_points: usize,
) -> Result<MqReport, MqError> {
    let points = sample_base_points(bundle, base_points, 17);
    let integrals: Vec<f64> = points
        .iter()
        .map(|y| fiber_integral(bundle, y, fiber_nodes))
        .collect::<Result<_, _>>()?;
    let mean = integrals.iter().sum::<f64>() / integrals.len().max(1) as f64;
    let spread = (integrals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / integrals.len().max(1) as f64).sqrt();
    let mut pullback: f64 = 0.0;
    let mut closed: f64 = 0.0;
    let mut qres: f64 = 0.0;
    for (j, y) in points.iter().enumerate() {
        let direct = zero_section_pullback(bundle, y)?;
        pullback = pullback.max((direct - bundle.pfaffian_form(y)?).abs());
        let x = [0.3 * (j as f64).cos(), -0.4 + 0.1 * j as f64];
        closed = closed.max(closedness_residual(bundle, y, &x)?);
        qres = qres.max(q_annihilation_residual(bundle, y, &x)?);
    }
    Ok(MqReport {
        k: bundle.k,
        fiber_nodes,
        base_points: points,
        max_fiber_error: integrals.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max),
        fiber_integrals: integrals,
        fiber_integral_spread: spread,
        max_pullback_residual: pullback,
        max_closedness: closed,
        max_q_residual: qres,
        euler_number: mq_euler_number(bundle, base_resolution)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_model_is_a_gaussian() {
        for n in 1..=4 {
            let x: Vec<f64> = (0..n).map(|k| 0.3 * k as f64 - 0.2).collect();
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let expect = (2.0 * PI).powf(-(n as f64) / 2.0) * (-0.5 * r2).exp();
            let got = point_density(&x).unwrap();
            assert!((got - expect).abs() < 1e-15, "n={n}: {got} vs {expect}");
            // only the top degree survives
            let f = mq_form_point(&x).unwrap();
            assert_eq!(f.terms().count(), 1);
        }
        assert!((point_density(&[0.0, 0.0]).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-16);
    }

    #[test]
    fn point_fiber_integral() {
        assert!((fiber_integral_point(2, 40).unwrap() - 1.0).abs() < 1e-10);
        assert!((fiber_integral_point(3, 12).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn flat_bundle_reduces_to_point_model() {
        let b = PlaneBundle::new(0);
        for y in sample_base_points(&b, 5, 3) {
            let x = [0.4, -1.1];
            let u = mq_form_bundle(&b, &y, &x).unwrap();
            assert!((u.coefficient(&DX).re - point_density(&x).unwrap()).abs() < 1e-15);
            assert_eq!(u.terms().count(), 1);
        }
    }

    #[test]
    fn contraction_signs() {
        // a(s)(dy ⊗ e₁∧e₂) = −s₁ dy⊗e₂ + s₂ dy⊗e₁
        let eta = BigradedElement::term(1, 2, &[0], &[0, 1], 1.0).unwrap();
        let c = contraction(&[2.0, 3.0], &eta).unwrap();
        assert_eq!(c.coefficient(&[0], &[1]), Complex64::new(-2.0, 0.0));
        assert_eq!(c.coefficient(&[0], &[0]), Complex64::new(3.0, 0.0));
    }

    #[test]
    fn twisted_bundle_identities() {
        let b = PlaneBundle::new(2);
        for y in sample_base_points(&b, 3, 5) {
            let pull = zero_section_pullback(&b, &y).unwrap();
            assert!((pull - b.pfaffian_form(&y).unwrap()).abs() < 1e-12);
            assert!((pull - pfaffian_curvature_density(&b, &y).unwrap()).abs() < 1e-12);
            assert!((fiber_integral(&b, &y, 40).unwrap() - 1.0).abs() < 1e-10);
            let x = [0.7, -0.2];
            assert!(closedness_residual(&b, &y, &x).unwrap() < 1e-7);
            assert!(q_annihilation_residual(&b, &y, &x).unwrap() < 1e-7);
        }
    }
}
