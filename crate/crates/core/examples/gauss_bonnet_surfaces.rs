// Integrates the Euler form over closed surfaces and compares with χ.

use std::error::Error;

use gbcheck::gbc::verify_gbc;
use gbcheck::library::builtin_manifold;

type Case<'a> = (&'a str, &'a [(&'a str, f64)], usize, f64);

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let cases: [Case; 5] = [
        ("sphere2", &[], 128, 1e-6),
        ("sphere2", &[("r", 3.0)], 128, 1e-6),
        ("torus2", &[], 16, 1e-12),
        ("bumpy_sphere", &[("eps", 0.3)], 128, 1e-4),
        ("sphere2_stereo", &[], 160, 1e-6),
    ];
    for (name, params, res, tol) in cases {
        let params: Vec<(String, f64)> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let m = builtin_manifold(name, &params)?;
        let report = verify_gbc(&m.atlas, res, false)?;
        println!(
            "{name:<15} {params:?} n={res:<4} ∫Ω = {:+.12}  χ = {}  error {:.1e}",
            report.integral, report.expected_chi, report.abs_error
        );
        if report.abs_error >= tol {
            return Err(format!("{name}: error {} exceeds {tol}", report.abs_error).into());
        }
    }

    // convergence of the polar chart integral
    let m = builtin_manifold("bumpy_sphere", &[])?;
    let report = verify_gbc(&m.atlas, 64, true)?;
    for (n, v) in &report.convergence {
        println!("  bumpy_sphere n={n:<3} {v:.14}");
    }
    println!("  extrapolated {:.14}", report.integral);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
