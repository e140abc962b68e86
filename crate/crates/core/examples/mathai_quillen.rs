// The Mathai-Quillen Thom form: a Gaussian in the fiber whose fiber
// integral is one and whose zero-section pullback is the Euler form.

use std::error::Error;

use gbcheck::bundles::PlaneBundle;
use gbcheck::mq::{fiber_integral_point, point_density, run_checks};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    for n in 1..=4 {
        let one = fiber_integral_point(n, 24)?;
        println!("point model, rank {n}: density at 0 = {:.12}, ∫ = {one:.14}", point_density(&vec![0.0; n])?);
        if (one - 1.0).abs() > 1e-10 {
            return Err(format!("rank {n}: fiber integral {one}").into());
        }
    }

    for k in [1, 2, -1] {
        let bundle = PlaneBundle::new(k);
        let r = run_checks(&bundle, 40, 64, 10)?;
        println!(
            "E_{k}: max |∫_fiber u − 1| = {:.1e}, max |s*u − e| = {:.1e}, closedness {:.1e}, Euler number {:.10}",
            r.max_fiber_error, r.max_pullback_residual, r.max_closedness, r.euler_number
        );
        if r.max_fiber_error > 1e-8 || r.max_pullback_residual > 1e-10 || (r.euler_number - k as f64).abs() > 1e-5 {
            return Err(format!("Thom form checks fail for k={k}").into());
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
