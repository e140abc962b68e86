// The heat parametrix `(4πt)^{−1} e^{−r²/4t} (u⁰ + t u¹)` on round spheres
// against the exact spectral kernel.

use std::error::Error;
use std::f64::consts::PI;

use gbcheck::heat::{parametrix_kernel, parametrix_u0, parametrix_u1_diag, spectral_kernel_s2};
use gbcheck::library::{flat_torus, sphere2_chart};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let unit = sphere2_chart(1.0)?;
    let x = [PI / 2.0, 1.0];
    for r in [0.1f64, 0.3, 0.5] {
        let y = [PI / 2.0 + r, 1.0];
        let u0 = parametrix_u0(&unit, &x, &y)?;
        println!("u⁰ at r={r}: {u0:.10}, (r/sin r)^½ = {:.10}", (r / r.sin()).sqrt());
    }
    for (label, chart, expect) in [
        ("unit S²", sphere2_chart(1.0)?, 1.0 / 3.0),
        ("S² radius 2", sphere2_chart(2.0)?, 1.0 / 12.0),
    ] {
        let u1 = parametrix_u1_diag(&chart, &x)?;
        println!("u¹(x,x) on {label}: {u1:.8}  (R/6 = {expect:.8})");
        if (u1 - expect).abs() > 1e-3 {
            return Err(format!("{label}: u¹ = {u1}").into());
        }
    }
    let flat = parametrix_u1_diag(&flat_torus(2)?, &[0.5, 0.5])?;
    println!("u¹(x,x) on the flat torus: {flat:.2e}");

    let y = [PI / 2.0 + 0.5, 1.0];
    let mut previous = 0.0;
    for t in [0.005, 0.01, 0.02] {
        let exact = spectral_kernel_s2(t, 0.5, 1.0, 1e-15)?.value;
        let h0 = parametrix_kernel(&unit, 0, t, &x, &y)?;
        let h1 = parametrix_kernel(&unit, 1, t, &x, &y)?;
        let err = (h1 - exact).abs() / exact;
        println!(
            "t={t:<6} K = {exact:.10e}  H₀ rel err {:.1e}  H₁ rel err {err:.1e}",
            (h0 - exact).abs() / exact
        );
        if err <= previous || err > 0.05 {
            return Err(format!("parametrix error {err} at t={t}").into());
        }
        previous = err;
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
