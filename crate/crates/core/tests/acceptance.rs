//! Acceptance criteria 1-10, one PASS/FAIL line each. Runs as a plain
//! binary (`harness = false`) so the lines are always printed.

use std::f64::consts::PI;
use std::time::Instant;

use gbcheck::bundles::{generalized_gbc, PlaneBundle};
use gbcheck::exterior::{
    double_permutation_sum, dp_extend, dp_extend4, lambda_basis, patodi_coefficient, pfaffian, supertrace,
    BigradedElement, Tensor4,
};
use gbcheck::gbc::{integrand_report, verify_gbc};
use gbcheck::geometry::Chart;
use gbcheck::heat::{
    asymptotic_fit, parametrix_kernel, parametrix_u1_diag, spectral_kernel_s2, supertrace as heat_supertrace,
    SpectrumModel,
};
use gbcheck::index::index_sum;
use gbcheck::library::builtin_manifold;
use gbcheck::mq::{fiber_integral, pfaffian_curvature_density, run_checks, sample_base_points, zero_section_pullback};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn gbc_case(name: &str, params: &[(&str, f64)], res: usize, extrapolate: bool, tol: f64) -> Outcome {
    let params: Vec<(String, f64)> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let m = builtin_manifold(name, &params).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let r = verify_gbc(&m.atlas, res, extrapolate).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let line = format!("{name}={:.9} (err {:.1e}, {secs:.1}s)", r.integral, r.abs_error);
    if r.abs_error < tol {
        Ok(line)
    } else {
        Err(line)
    }
}

fn join(parts: Vec<Outcome>) -> Outcome {
    let ok = parts.iter().all(|p| p.is_ok());
    let text = parts
        .into_iter()
        .map(|p| match p {
            Ok(s) => s,
            Err(s) => format!("[FAILED {s}]"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let sphere = gbc_case("sphere2", &[], 128, false, 1e-6);
    let sphere = match sphere {
        Ok(s) if start.elapsed().as_secs_f64() < 2.0 => Ok(s),
        Ok(s) => Err(format!("{s} slower than 2 s")),
        e => e,
    };
    join(vec![
        sphere,
        gbc_case("torus2", &[], 16, false, 1e-12),
        gbc_case("bumpy_sphere", &[("eps", 0.3)], 128, false, 1e-4),
    ])
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let sphere4 = gbc_case("sphere4", &[], 32, true, 1e-3);
    let sphere4 = match sphere4 {
        Ok(s) if start.elapsed().as_secs_f64() < 120.0 => Ok(s),
        Ok(s) => Err(format!("{s} slower than 120 s")),
        e => e,
    };
    join(vec![
        sphere4,
        gbc_case("s2xs2", &[], 24, false, 1e-3),
        gbc_case("torus4", &[], 4, false, 1e-12),
        gbc_case("cp2", &[], 24, false, 1e-2),
    ])
}

fn interior_point(rng: &mut ChaCha8Rng, chart: &Chart) -> Vec<f64> {
    chart
        .ranges()
        .iter()
        .map(|(lo, hi)| {
            let w = hi - lo;
            rng.random_range(lo + 0.1 * w..hi - 0.1 * w)
        })
        .collect()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut parts = Vec::new();
    for name in ["sphere2", "bumpy_sphere", "sphere2_stereo", "sphere4", "s2xs2", "cp2"] {
        let m = builtin_manifold(name, &[]).map_err(|e| e.to_string())?;
        let mut worst: f64 = 0.0;
        for k in 0..200 {
            let chart = &m.atlas.charts[k % m.atlas.charts.len()];
            let x = interior_point(&mut rng, chart);
            let r = integrand_report(chart, &x).map_err(|e| e.to_string())?;
            worst = worst.max(r.discrepancy / r.pfaffian_density.abs());
        }
        let line = format!("{name} {worst:.1e}");
        parts.push(if worst < 1e-9 { Ok(line) } else { Err(line) });
    }
    join(parts)
}

fn random_skew(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in (i + 1)..d {
            let v: f64 = rng.random_range(-1.0..1.0);
            a[i][j] = v;
            a[j][i] = -v;
        }
    }
    a
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_det: f64 = 0.0;
    for d in [2, 4, 6, 8] {
        for _ in 0..1000 {
            let a = random_skew(&mut rng, d);
            let pf = pfaffian(&a).map_err(|e| e.to_string())?;
            let det = DMatrix::from_fn(d, d, |i, j| a[i][j]).determinant();
            worst_det = worst_det.max((pf * pf - det).abs() / det.abs());
        }
    }
    let mut worst_b: f64 = 0.0;
    for d in [2, 4, 6] {
        for _ in 0..200 {
            let a = random_skew(&mut rng, d);
            let mut omega = BigradedElement::zero(0, d);
            for i in 0..d {
                for j in (i + 1)..d {
                    let t = BigradedElement::term(0, d, &[], &[i, j], a[i][j]).map_err(|e| e.to_string())?;
                    omega = omega.try_add(&t).map_err(|e| e.to_string())?;
                }
            }
            let b = omega.exp().berezin_fiber().scalar_part();
            let pf = pfaffian(&a).map_err(|e| e.to_string())?;
            worst_b = worst_b.max((b.re - pf).abs().max(b.im.abs()) / pf.abs().max(1e-12));
        }
    }
    let line = format!("max rel |Pf²−det| {worst_det:.1e}, max rel |B(exp)−Pf| {worst_b:.1e}");
    if worst_det < 1e-10 && worst_b < 1e-10 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0))
}

/// Supertrace of a product family and the sum of the Frobenius norms of
/// its members, the scale the result is compared against.
fn supertrace_with_scale(ops: impl Fn(usize) -> DMatrix<f64>, d: usize) -> (f64, f64) {
    let scale = (0..=d).map(|p| ops(p).norm()).sum::<f64>();
    (supertrace(ops, d), scale.max(1.0))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut vanish: f64 = 0.0;
    let mut top: f64 = 0.0;
    for d in 1..=5 {
        for k in 1..=d {
            for _ in 0..100 {
                let mats: Vec<_> = (0..k).map(|_| random_matrix(&mut rng, d)).collect();
                let ext: Vec<Vec<DMatrix<f64>>> = (0..=d)
                    .map(|p| mats.iter().map(|m| dp_extend(m, p).expect("p ≤ d")).collect())
                    .collect();
                let (s, scale) = supertrace_with_scale(
                    |p| {
                        let n = lambda_basis(d, p).len();
                        ext[p].iter().fold(DMatrix::identity(n, n), |acc, m| acc * m)
                    },
                    d,
                );
                if k < d {
                    vanish = vanish.max(s.abs() / scale);
                } else {
                    let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
                    let a = patodi_coefficient(&mats).map_err(|e| e.to_string())?;
                    top = top.max((s - sign * a).abs() / a.abs().max(1.0));
                }
            }
        }
    }
    let mut tensor: f64 = 0.0;
    for d in [4, 6] {
        // l < d/2 operators
        for l in 1..=(d - 1) / 2 {
            for _ in 0..100 {
                let ts: Vec<Tensor4> = (0..l)
                    .map(|_| Tensor4::from_fn(d, |_, _, _, _| rng.random_range(-1.0..1.0)))
                    .collect();
                let mats: Vec<Vec<DMatrix<f64>>> = (0..=d)
                    .map(|p| ts.iter().map(|t| dp_extend4(t, p).expect("p ≤ d")).collect())
                    .collect();
                let (s, scale) = supertrace_with_scale(
                    |p| {
                        let n = lambda_basis(d, p).len();
                        mats[p].iter().fold(DMatrix::identity(n, n), |acc, m| acc * m)
                    },
                    d,
                );
                tensor = tensor.max(s.abs() / scale);
            }
        }
    }
    let mut identity: f64 = 0.0;
    for d in [2, 4] {
        for _ in 0..100 {
            let t = Tensor4::from_fn(d, |_, _, _, _| rng.random_range(-1.0..1.0));
            let s = supertrace(
                |p| {
                    let m = dp_extend4(&t, p).expect("p ≤ d");
                    (1..d / 2).fold(m.clone(), |acc, _| acc * &m)
                },
                d,
            );
            let oracle = double_permutation_sum(&t).map_err(|e| e.to_string())?;
            identity = identity.max((s - oracle).abs() / oracle.abs().max(1e-3));
        }
    }
    let line = format!(
        "k<d vanishing {vanish:.1e}·scale, k=d top coefficient {top:.1e}, 4-tensor vanishing {tensor:.1e}·scale, permutation identity {identity:.1e}"
    );
    if vanish < 1e-12 && top < 1e-10 && tensor < 1e-12 && identity < 1e-10 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_6() -> Outcome {
    let mut parts = Vec::new();
    for (manifold, field) in [("sphere2", "morse"), ("torus2", "constant"), ("sphere2", "z"), ("sphere2", "z2")] {
        let m = builtin_manifold(manifold, &[]).map_err(|e| e.to_string())?;
        let f = m.field(field).map_err(|e| e.to_string())?;
        let r = index_sum(f, 48).map_err(|e| e.to_string())?;
        let stable = r
            .zeros
            .iter()
            .all(|z| (z.raw_degree - z.local_degree as f64).abs() < 0.1);
        let line = format!("{field}={} (expected {})", r.sum, r.expected);
        parts.push(if r.sum == r.expected && stable { Ok(line) } else { Err(line) });
    }
    join(parts)
}

fn criterion_7() -> Outcome {
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for k in -2..=3 {
        let r = generalized_gbc(&PlaneBundle::new(k), 64, 48).map_err(|e| e.to_string())?;
        let kf = k as f64;
        let err = (r.transition_integral - kf).abs().max((r.pfaffian_integral - kf).abs());
        worst = worst.max(err);
        if err >= 1e-5 || r.section_degree != k as i64 {
            parts.push(Err(format!(
                "k={k}: {} {} {}",
                r.transition_integral, r.pfaffian_integral, r.section_degree
            )));
        }
    }
    parts.insert(0, Ok(format!("k=-2..3, max integral error {worst:.1e}, section degrees exact")));
    join(parts)
}

fn criterion_8() -> Outcome {
    let bundle = PlaneBundle::new(2);
    let points = sample_base_points(&bundle, 10, 8);
    let mut fiber: f64 = 0.0;
    let mut pullback: f64 = 0.0;
    for y in &points {
        fiber = fiber.max((fiber_integral(&bundle, y, 40).map_err(|e| e.to_string())? - 1.0).abs());
        let s = zero_section_pullback(&bundle, y).map_err(|e| e.to_string())?;
        let e = pfaffian_curvature_density(&bundle, y).map_err(|e| e.to_string())?;
        pullback = pullback.max((s - e).abs());
    }
    let euler = run_checks(&bundle, 40, 64, 2).map_err(|e| e.to_string())?.euler_number;
    let line = format!("fiber integral err {fiber:.1e}, pullback err {pullback:.1e}, Euler number {euler:.10}");
    if fiber < 1e-8 && pullback < 1e-10 && (euler - 2.0).abs() < 1e-5 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_9() -> Outcome {
    let mut torus: f64 = 0.0;
    for d in 1..=4 {
        for t in [0.01, 0.1, 1.0] {
            let s = heat_supertrace(&SpectrumModel::flat_torus(d), t, 1e-14).map_err(|e| e.to_string())?;
            torus = torus.max(s.value.abs());
        }
    }
    let s2 = SpectrumModel::round_s2(1.0);
    let mut values = Vec::new();
    for k in 0..20 {
        let t = 0.05 + (2.0 - 0.05) * k as f64 / 19.0;
        values.push(heat_supertrace(&s2, t, 1e-13).map_err(|e| e.to_string())?);
    }
    let err = values.iter().map(|v| (v.value - 2.0).abs()).fold(0.0, f64::max);
    let bound = values.iter().map(|v| v.tail_bound).fold(0.0, f64::max);
    let hi = values.iter().map(|v| v.value).fold(f64::MIN, f64::max);
    let lo = values.iter().map(|v| v.value).fold(f64::MAX, f64::min);
    let line = format!(
        "tori max |Str| {torus:.1e}; S² max err {err:.1e} (tail bound {bound:.1e}), spread {:.1e}",
        hi - lo
    );
    if torus < 1e-12 && err <= 1e-10 && bound <= 1e-10 && hi - lo < 1e-10 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn criterion_10() -> Outcome {
    let s2 = SpectrumModel::round_s2(1.0);
    let times: Vec<f64> = (1..=10).map(|k| 0.001 * k as f64).collect();
    let fit = asymptotic_fit(&s2, 0, &times, 3, 1e-14).map_err(|e| e.to_string())?;
    let a0 = (fit.coefficients[0] - 4.0 * PI).abs() / (4.0 * PI);
    let a1 = (fit.coefficients[1] - 4.0 * PI / 3.0).abs() / (4.0 * PI / 3.0);
    let chart = gbcheck::library::sphere2_chart(1.0).map_err(|e| e.to_string())?;
    let x = [PI / 2.0, 1.0];
    let y = [PI / 2.0 + 0.5, 1.0];
    let u1 = parametrix_u1_diag(&chart, &x).map_err(|e| e.to_string())?;
    let mut errs = Vec::new();
    for t in [0.005, 0.01, 0.02] {
        let k = spectral_kernel_s2(t, 0.5, 1.0, 1e-15).map_err(|e| e.to_string())?.value;
        let h = parametrix_kernel(&chart, 1, t, &x, &y).map_err(|e| e.to_string())?;
        errs.push((h - k).abs() / k);
    }
    let line = format!(
        "a0 rel {a0:.1e}, a1 rel {a1:.1e}, u1(x,x) {u1:.8}, H1 rel err {:.1e}/{:.1e}/{:.1e} at t=0.005/0.01/0.02",
        errs[0], errs[1], errs[2]
    );
    if a0 < 0.01 && a1 < 0.02 && (u1 - 1.0 / 3.0).abs() < 1e-3 && errs[1] < 0.05 && errs[0] < errs[1] && errs[1] < errs[2] {
        Ok(line)
    } else {
        Err(line)
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("GBC surfaces", criterion_1),
        ("GBC dimension 4", criterion_2),
        ("Pfaffian vs Allendoerfer-Weil integrand", criterion_3),
        ("Pfaffian/Berezin algebra", criterion_4),
        ("Patodi lemmas", criterion_5),
        ("Poincare-Hopf", criterion_6),
        ("plane bundles", criterion_7),
        ("Mathai-Quillen", criterion_8),
        ("McKean-Singer", criterion_9),
        ("heat asymptotics and parametrix", criterion_10),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name} [{secs:.1}s]: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} [{secs:.1}s]: {detail}", k + 1)
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
