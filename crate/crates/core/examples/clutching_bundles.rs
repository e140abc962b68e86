// Oriented plane bundles `E_k` over the 2-sphere glued by `z ↦ z^k` on the
// equator. The Euler number comes out of the transition function, the
// Pfaffian of a connection built from it, and the zeros of a section.

use std::error::Error;

use gbcheck::bundles::{generalized_gbc, PartitionProfile, PlaneBundle};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    println!(" k  swapped  transition      Pfaffian        winding  section zeros");
    for k in -2..=3 {
        for bundle in [PlaneBundle::new(k), PlaneBundle::new(k).swapped()] {
            let r = generalized_gbc(&bundle, 64, 48)?;
            println!(
                "{:+}  {:<7}  {:+.12}  {:+.12}  {:+.3}   {:+} ({} zeros)",
                r.k, r.swapped, r.transition_integral, r.pfaffian_integral, r.clutching_winding, r.section_degree, r.section_zeros
            );
            if r.max_error > 1e-5 {
                return Err(format!("k={k}: error {}", r.max_error).into());
            }
        }
    }

    // the answer does not depend on where the partition of unity switches
    let standard = PlaneBundle::new(2).euler_integral_pfaffian(64)?;
    let wide = PlaneBundle::with_profile(2, PartitionProfile::wide()).euler_integral_pfaffian(64)?;
    println!("k=2 standard profile {standard:.12}, wide profile {wide:.12}");
    if (standard - wide).abs() > 2e-5 {
        return Err("profile dependence".into());
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
