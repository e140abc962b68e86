// Gauss-Bonnet-Chern in dimension four: the Pfaffian of the curvature
// integrates to χ on S⁴, S²×S² and T⁴.

use std::error::Error;
use std::time::Instant;

use gbcheck::gbc::verify_gbc;
use gbcheck::library::builtin_manifold;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    for (name, res, extrapolate, tol) in [
        ("torus4", 4, false, 1e-12),
        ("s2xs2", 12, false, 1e-3),
        ("sphere4", 16, true, 1e-3),
    ] {
        let start = Instant::now();
        let m = builtin_manifold(name, &[])?;
        let report = verify_gbc(&m.atlas, res, extrapolate)?;
        println!(
            "{name:<8} n={res:<3} ∫Ω = {:+.10}  χ = {}  error {:.1e}  ({:.1} s)",
            report.integral,
            report.expected_chi,
            report.abs_error,
            start.elapsed().as_secs_f64()
        );
        if extrapolate {
            for (n, v) in &report.convergence {
                println!("    n={n:<3} {v:.10}");
            }
        }
        if report.abs_error >= tol {
            return Err(format!("{name}: error {} exceeds {tol}", report.abs_error).into());
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
