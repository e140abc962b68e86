//! Oriented plane bundles `E_k` over the 2-sphere built by clutching.
//!
//! The sphere is covered by a northern and a southern trivialization that
//! overlap in an annulus `a < |z| < b` of the northern stereographic
//! coordinate `z = r e^{it}`. The fiber angle in the northern frame equals the
//! southern angle plus `φ_NS`, with `φ_NS = k t` for `E_k`. A partition of
//! unity `ρ_N + ρ_S = 1` with `ρ_N ≡ 1` for `|z| ≤ a` and `ρ_N ≡ 0` for
//! `|z| ≥ b` gives
//!
//! * the Euler form `e = (1/2π) dρ_S ∧ dφ_NS`,
//! * compatible connection forms `θ_N = −ρ_S dφ_NS`, `θ_S = ρ_N dφ_NS`,
//! * curvature `dθ_N = dθ_S` with Pfaffian density `−(1/2π) dθ`.
//!
//! All three are supported in the annulus, so integrals over the sphere are
//! computed on the polar annulus chart `(r, t)` with the round metric.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{BinOp, EvalError, Expr, Jet2};
use crate::geometry::{Chart, GeometryError};
use crate::index::{index_sum, IndexError, VectorFieldSpec};
use crate::library::stereographic_sphere;
use crate::quadrature::{integrate_chart, QuadratureError, QuadratureSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BundleError {
    #[error("invalid partition profile: need 0 < a < 1 < b with a·b = 1, got a = {a}, b = {b}")]
    Profile { a: f64, b: f64 },
    #[error("bundle data failed to evaluate at {x:?}: {source}")]
    Eval { x: Vec<f64>, source: EvalError },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Annulus `a < |z| < b` on which `ρ_N` drops from 1 to 0 along
/// `ρ_N = (1 + tanh(g/2))/2`, `g = 1/s − 1/(1−s)`, `s = (r−a)/(b−a)`.
/// `a·b = 1` keeps the annulus invariant under `z ↦ 1/z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartitionProfile {
    pub a: f64,
    pub b: f64,
}

impl PartitionProfile {
    pub fn standard() -> Self {
        PartitionProfile { a: 0.6, b: 1.0 / 0.6 }
    }

    /// A wider annulus, used to check that nothing depends on the choice.
    pub fn wide() -> Self {
        PartitionProfile { a: 0.4, b: 2.5 }
    }

    pub fn new(a: f64) -> Result<Self, BundleError> {
        let p = PartitionProfile { a, b: 1.0 / a };
        if !(a > 0.0 && a < 1.0) {
            return Err(BundleError::Profile { a: p.a, b: p.b });
        }
        Ok(p)
    }

    pub fn rho_north_text(&self) -> String {
        let (a, b) = (self.a, self.b);
        let s = format!("((r - {a}) / ({b} - {a}))");
        format!("(1 + tanh((1 / {s} - 1 / (1 - {s})) / 2)) / 2")
    }
}

/// The plane bundle `E_k` (or its pullback under `z ↦ 1/z`).
#[derive(Debug, Clone)]
pub struct PlaneBundle {
    pub k: i32,
    pub profile: PartitionProfile,
    swapped: bool,
    /// `ρ_N` on the open annulus, in `(r, t)`.
    rho_north: Expr,
    /// `φ_NS` on the open annulus, in `(r, t)`.
    phi: Expr,
}

const ANNULUS_VARS: [&str; 2] = ["r", "t"];

/// Connection and curvature data at a point of the annulus chart. 1-forms are
/// `(dr, dt)` coefficients, 2-forms coefficients of `dr∧dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConnectionForms {
    pub theta_north: [f64; 2],
    pub theta_south: [f64; 2],
    pub curvature_north: f64,
    pub curvature_south: f64,
}

impl PlaneBundle {
    pub fn new(k: i32) -> PlaneBundle {
        PlaneBundle::with_profile(k, PartitionProfile::standard())
    }

    pub fn with_profile(k: i32, profile: PartitionProfile) -> PlaneBundle {
        let rho_north = Expr::parse(&profile.rho_north_text(), &ANNULUS_VARS, &[])
            .expect("partition profile parses");
        let phi = Expr::parse(&format!("{k} * t"), &ANNULUS_VARS, &[]).expect("transition parses");
        PlaneBundle {
            k,
            profile,
            swapped: false,
            rho_north,
            phi,
        }
    }

    /// Bundle from user expressions in the annulus coordinates `(r, t)`:
    /// `rho` is `ρ_N` on the open annulus (it must tend to 1 at `r = a` and
    /// to 0 at `r = b`) and `phi` is `φ_NS`.
    pub fn from_text(k: i32, profile: PartitionProfile, rho: &str, phi: &str) -> Result<PlaneBundle, BundleError> {
        let parse = |t: &str| {
            Expr::parse(t, &ANNULUS_VARS, &[]).map_err(|source| {
                BundleError::Geometry(GeometryError::Parse {
                    chart: "annulus".into(),
                    what: t.to_string(),
                    source,
                })
            })
        };
        Ok(PlaneBundle {
            k,
            profile,
            swapped: false,
            rho_north: parse(rho)?,
            phi: parse(phi)?,
        })
    }

    /// Pullback under the pole swap `ι: z ↦ 1/z`, which in polar annulus
    /// coordinates is `(r, t) ↦ (1/r, −t)`. The new northern trivialization
    /// is the pulled-back southern one, so `φ' = −φ∘ι` and `ρ'_N = (1−ρ_N)∘ι`.
    pub fn swapped(&self) -> PlaneBundle {
        let inv = [
            Expr::binary(BinOp::Div, Expr::num(1.0), Expr::var(0)),
            Expr::Neg(Box::new(Expr::var(1))),
        ];
        PlaneBundle {
            k: self.k,
            profile: self.profile,
            swapped: !self.swapped,
            rho_north: Expr::binary(BinOp::Sub, Expr::num(1.0), self.rho_north.substitute(&inv)),
            phi: Expr::Neg(Box::new(self.phi.substitute(&inv))),
        }
    }

    pub fn is_swapped(&self) -> bool {
        self.swapped
    }

    /// Polar chart `(r, t)` of the overlap annulus with the round unit metric
    /// `4/(1+r²)² (dr² + r² dt²)`.
    pub fn base_chart(&self) -> Result<Chart, GeometryError> {
        let (a, b) = (self.profile.a, self.profile.b);
        Chart::new(
            "annulus",
            &ANNULUS_VARS,
            &[(a, b), (0.0, 2.0 * PI)],
            &[false, true],
            &[vec!["4 / (1 + r^2)^2", "0"], vec!["4 * r^2 / (1 + r^2)^2"]],
            None,
            &[],
        )
    }

    fn eval_err(x: &[f64], source: EvalError) -> BundleError {
        BundleError::Eval {
            x: x.to_vec(),
            source,
        }
    }

    /// Jet of `ρ_N` at `(r, t)`; constant outside the open annulus.
    pub fn rho_north_jet(&self, x: &[f64]) -> Result<Jet2, BundleError> {
        if x[0] <= self.profile.a {
            return Ok(Jet2::constant(2, 1.0));
        }
        if x[0] >= self.profile.b {
            return Ok(Jet2::constant(2, 0.0));
        }
        self.rho_north
            .eval_jet2(x, &[])
            .map_err(|e| Self::eval_err(x, e))
    }

    /// Jet of `φ_NS` at `(r, t)`.
    pub fn phi_jet(&self, x: &[f64]) -> Result<Jet2, BundleError> {
        self.phi.eval_jet2(x, &[]).map_err(|e| Self::eval_err(x, e))
    }

    /// Euler form `(1/2π) dρ_S∧dφ_NS` as a `dr∧dt` coefficient.
    pub fn euler_form_transition(&self, x: &[f64]) -> Result<f64, BundleError> {
        let rho = self.rho_north_jet(x)?;
        let phi = self.phi_jet(x)?;
        // ρ_S = 1 − ρ_N
        let (dr_s, dt_s) = (-rho.grad(0), -rho.grad(1));
        Ok((dr_s * phi.grad(1) - dt_s * phi.grad(0)) / (2.0 * PI))
    }

    /// The same Euler form computed from the southern side,
    /// `−(1/2π) dρ_N∧dφ_NS`.
    pub fn euler_form_transition_south(&self, x: &[f64]) -> Result<f64, BundleError> {
        let rho = self.rho_north_jet(x)?;
        let phi = self.phi_jet(x)?;
        Ok(-(rho.grad(0) * phi.grad(1) - rho.grad(1) * phi.grad(0)) / (2.0 * PI))
    }

    /// Largest violation of `0 ≤ ρ_N ≤ 1` over the samples.
    pub fn partition_violation(&self, samples: &[[f64; 2]]) -> Result<f64, BundleError> {
        let mut worst: f64 = 0.0;
        for x in samples {
            let v = self.rho_north_jet(x)?.value;
            worst = worst.max(-v).max(v - 1.0);
        }
        Ok(worst)
    }

    /// Connection forms built from the transition data and the partition of
    /// unity, with their exterior derivatives.
    pub fn connection_from_transitions(&self, x: &[f64]) -> Result<ConnectionForms, BundleError> {
        let rho = self.rho_north_jet(x)?;
        let phi = self.phi_jet(x)?;
        let rho_s = 1.0 - rho.value;
        let dphi = [phi.grad(0), phi.grad(1)];
        let theta_north = [-rho_s * dphi[0], -rho_s * dphi[1]];
        let theta_south = [rho.value * dphi[0], rho.value * dphi[1]];
        // d(f dφ) = ∂r(f ∂tφ) − ∂t(f ∂rφ)
        let d_of = |f: f64, df: [f64; 2]| {
            df[0] * dphi[1] + f * phi.hess(0, 1) - (df[1] * dphi[0] + f * phi.hess(1, 0))
        };
        let curvature_north = d_of(-rho_s, [rho.grad(0), rho.grad(1)]);
        let curvature_south = d_of(rho.value, [rho.grad(0), rho.grad(1)]);
        Ok(ConnectionForms {
            theta_north,
            theta_south,
            curvature_north,
            curvature_south,
        })
    }

    /// Pfaffian density `−(1/2π) dθ_N` as a `dr∧dt` coefficient.
    pub fn pfaffian_form(&self, x: &[f64]) -> Result<f64, BundleError> {
        Ok(-self.connection_from_transitions(x)?.curvature_north / (2.0 * PI))
    }

    /// Integral over the sphere of a 2-form given by its `dr∧dt` coefficient
    /// on the annulus (the form must vanish outside it).
    pub fn integrate_form<F, E>(&self, form: F, n: usize) -> Result<f64, BundleError>
    where
        F: Fn(&[f64]) -> Result<f64, E> + Sync,
        E: std::fmt::Display,
    {
        let chart = self.base_chart()?;
        let spec = QuadratureSpec::for_chart(&chart, n);
        // integrate_chart multiplies by the volume factor, so divide it out
        let density = |x: &[f64]| -> Result<f64, String> {
            let v = form(x).map_err(|e| e.to_string())?;
            let vol = chart.volume_factor(x).map_err(|e| e.to_string())?;
            Ok(v / vol)
        };
        Ok(integrate_chart(&chart, density, &spec)?)
    }

    /// `∫ e` from the transition-function formula at `n` nodes per axis.
    pub fn euler_integral_transition(&self, n: usize) -> Result<f64, BundleError> {
        self.integrate_form(|x| self.euler_form_transition(x), n)
    }

    /// `∫ Pf(Ω)/2π` of the clutched connection at `n` nodes per axis.
    pub fn euler_integral_pfaffian(&self, n: usize) -> Result<f64, BundleError> {
        self.integrate_form(|x| self.pfaffian_form(x), n)
    }

    /// Largest `|θ_N − θ_S + dφ_NS|` over the samples.
    pub fn overlap_residual(&self, samples: &[[f64; 2]]) -> Result<f64, BundleError> {
        let mut worst: f64 = 0.0;
        for x in samples {
            let c = self.connection_from_transitions(x)?;
            let phi = self.phi_jet(x)?;
            for i in 0..2 {
                worst = worst.max((c.theta_north[i] - c.theta_south[i] + phi.grad(i)).abs());
            }
        }
        Ok(worst)
    }

    /// Largest `|dθ_N − dθ_S|` over the samples.
    pub fn curvature_mismatch(&self, samples: &[[f64; 2]]) -> Result<f64, BundleError> {
        let mut worst: f64 = 0.0;
        for x in samples {
            let c = self.connection_from_transitions(x)?;
            worst = worst.max((c.curvature_north - c.curvature_south).abs());
        }
        Ok(worst)
    }

    /// Winding number of the clutching map `e^{iφ_NS}` around `|z| = 1`.
    pub fn clutching_winding(&self) -> Result<f64, BundleError> {
        let n = 720;
        let mut total = 0.0;
        let mut prev: Option<f64> = None;
        for j in 0..=n {
            let x = [1.0, 2.0 * PI * j as f64 / n as f64];
            let p = self.phi_jet(&x)?.value;
            let angle = p.sin().atan2(p.cos());
            if let Some(q) = prev {
                let mut da = angle - q;
                da -= 2.0 * PI * (da / (2.0 * PI)).round();
                total += da;
            }
            prev = Some(angle);
        }
        Ok(total / (2.0 * PI))
    }

    /// Section components in the northern and southern frames on the
    /// stereographic atlas: `s_N = z^k/(1+|z|²)^{|k|/2}` (with `z̄^{|k|}` for
    /// `k < 0`) and `s_S = (1+|w|²)^{−|k|/2} (1, 0)`, swapped for the pullback.
    pub fn section(&self) -> Result<VectorFieldSpec, BundleError> {
        let atlas = stereographic_sphere(1.0)?;
        let m = self.k.unsigned_abs();
        let (re, im) = power_text(m, self.k < 0, "x", "y");
        let norm_n = format!("(1 + x^2 + y^2)^({m} / 2)");
        let twisted = [format!("({re}) / {norm_n}"), format!("({im}) / {norm_n}")];
        let plain = [format!("1 / (1 + u^2 + v^2)^({m} / 2)"), "0".to_string()];
        let (north, south) = if self.swapped {
            // pulled-back components live in the other chart's coordinates
            (
                [plain[0].replace('u', "x").replace('v', "y"), plain[1].clone()],
                [twisted[0].replace('x', "u").replace('y', "v"), twisted[1].replace('x', "u").replace('y', "v")],
            )
        } else {
            (twisted, plain)
        };
        let parse = |t: &str, vars: &[&str]| {
            Expr::parse(t, vars, &[]).map_err(|source| {
                BundleError::Geometry(GeometryError::Parse {
                    chart: "bundle section".into(),
                    what: t.to_string(),
                    source,
                })
            })
        };
        let components = vec![
            north.iter().map(|t| parse(t, &["x", "y"])).collect::<Result<Vec<_>, _>>()?,
            south.iter().map(|t| parse(t, &["u", "v"])).collect::<Result<Vec<_>, _>>()?,
        ];
        Ok(VectorFieldSpec {
            name: format!("section_k{}", self.k),
            atlas,
            components,
            expected: self.k as i64,
        })
    }

    /// Largest `|s_N − R(φ_NS) s_S|` at annulus points `(r, t)`.
    pub fn section_consistency(&self, samples: &[[f64; 2]]) -> Result<f64, BundleError> {
        let section = self.section()?;
        let mut worst: f64 = 0.0;
        for x in samples {
            let (r, t) = (x[0], x[1]);
            let z = [r * t.cos(), r * t.sin()];
            let w = [t.cos() / r, -t.sin() / r];
            let sn = section.value(0, &z)?;
            let ss = section.value(1, &w)?;
            let p = self.phi_jet(x)?.value;
            let rotated = [p.cos() * ss[0] - p.sin() * ss[1], p.sin() * ss[0] + p.cos() * ss[1]];
            worst = worst.max((sn[0] - rotated[0]).abs()).max((sn[1] - rotated[1]).abs());
        }
        Ok(worst)
    }
}

/// Real and imaginary parts of `z^m` (or `z̄^m`) as polynomial text in `x, y`.
fn power_text(m: u32, conjugate: bool, x: &str, y: &str) -> (String, String) {
    if m == 0 {
        return ("1".into(), "0".into());
    }
    let mut re = Vec::new();
    let mut im = Vec::new();
    let mut binom: u64 = 1;
    for j in 0..=m {
        // term C(m,j) x^{m−j} (i y)^j, with y → −y for the conjugate
        let mut sign = if (j / 2) % 2 == 0 { 1 } else { -1 };
        if conjugate && j % 2 == 1 {
            sign = -sign;
        }
        let mono = format!("{sign} * {binom} * {x}^{} * {y}^{j}", m - j);
        if j % 2 == 0 {
            re.push(mono);
        } else {
            im.push(mono);
        }
        binom = binom * (m - j) as u64 / (j + 1) as u64;
    }
    let join = |v: Vec<String>| if v.is_empty() { "0".to_string() } else { v.join(" + ") };
    (join(re), join(im))
}

/// Euler number of a plane bundle computed three ways.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundleReport {
    pub k: i32,
    pub swapped: bool,
    pub profile: PartitionProfile,
    pub transition_integral: f64,
    pub pfaffian_integral: f64,
    pub clutching_winding: f64,
    pub section_degree: i64,
    pub section_zeros: usize,
    pub max_error: f64,
}

/// Generalized Gauss–Bonnet check for `E_k`: the Euler form from transition
/// functions, the Pfaffian of the clutched connection and the zero count of
/// a section must all give `k`.
pub fn generalized_gbc(bundle: &PlaneBundle, n: usize, scan_resolution: usize) -> Result<BundleReport, BundleError> {
    let transition_integral = bundle.euler_integral_transition(n)?;
    let pfaffian_integral = bundle.euler_integral_pfaffian(n)?;
    let clutching_winding = bundle.clutching_winding()?;
    let zeros = index_sum(&bundle.section()?, scan_resolution)?;
    let k = bundle.k as f64;
    let max_error = (transition_integral - k)
        .abs()
        .max((pfaffian_integral - k).abs())
        .max((zeros.sum as f64 - k).abs());
    Ok(BundleReport {
        k: bundle.k,
        swapped: bundle.swapped,
        profile: bundle.profile,
        transition_integral,
        pfaffian_integral,
        clutching_winding,
        section_degree: zeros.sum,
        section_zeros: zeros.zeros.len(),
        max_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn annulus_samples(p: PartitionProfile) -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        for i in 0..7 {
            for j in 0..5 {
                let r = 0.3 + (p.b + 0.5 - 0.3) * i as f64 / 6.0;
                out.push([r, 0.1 + 1.3 * j as f64]);
            }
        }
        out
    }

    #[test]
    fn power_text_matches_complex_power() {
        let (re, im) = power_text(3, false, "x", "y");
        let e_re = Expr::parse(&re, &["x", "y"], &[]).unwrap();
        let e_im = Expr::parse(&im, &["x", "y"], &[]).unwrap();
        let (x, y) = (0.7, -0.4);
        let z = num_complex::Complex64::new(x, y).powu(3);
        assert!((e_re.eval(&[x, y], &[]).unwrap() - z.re).abs() < 1e-14);
        assert!((e_im.eval(&[x, y], &[]).unwrap() - z.im).abs() < 1e-14);
        let (re, im) = power_text(2, true, "x", "y");
        let zc = num_complex::Complex64::new(x, -y).powu(2);
        assert!((Expr::parse(&re, &["x", "y"], &[]).unwrap().eval(&[x, y], &[]).unwrap() - zc.re).abs() < 1e-14);
        assert!((Expr::parse(&im, &["x", "y"], &[]).unwrap().eval(&[x, y], &[]).unwrap() - zc.im).abs() < 1e-14);
    }

    #[test]
    fn partition_is_smooth_at_the_ends() {
        let b = PlaneBundle::new(1);
        let p = b.profile;
        let inner = b.rho_north_jet(&[p.a + 1e-3, 0.0]).unwrap();
        let outer = b.rho_north_jet(&[p.b - 1e-3, 0.0]).unwrap();
        assert!((inner.value - 1.0).abs() < 1e-12 && outer.value.abs() < 1e-12);
        assert!(inner.grad(0).abs() < 1e-10 && outer.grad(0).abs() < 1e-10);
    }

    #[test]
    fn transitions_are_compatible() {
        for k in [-2, 1, 3] {
            for bundle in [PlaneBundle::new(k), PlaneBundle::new(k).swapped()] {
                let s = annulus_samples(bundle.profile);
                assert!(bundle.overlap_residual(&s).unwrap() < 1e-12);
                assert!(bundle.curvature_mismatch(&s).unwrap() < 1e-12);
                assert!(bundle.section_consistency(&s).unwrap() < 1e-12, "k = {k}");
                assert!((bundle.clutching_winding().unwrap() - k as f64).abs() < 1e-9);
                assert!(bundle.partition_violation(&s).unwrap() <= 0.0);
                for x in &s {
                    let n = bundle.euler_form_transition(x).unwrap();
                    let so = bundle.euler_form_transition_south(x).unwrap();
                    assert!((n - so).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn euler_integrals() {
        for k in [-1, 2] {
            let b = PlaneBundle::new(k);
            let t = b.euler_integral_transition(96).unwrap();
            let p = b.euler_integral_pfaffian(96).unwrap();
            assert!((t - k as f64).abs() < 1e-6, "{t}");
            assert!((p - k as f64).abs() < 1e-6, "{p}");
        }
    }
}
