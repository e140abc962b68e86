// Pfaffians three ways: recursive expansion, the Berezin integral of an
// exponential, and the square root of the determinant. Then the Pfaffian
// curvature density against the Allendoerfer-Weil double sum.

use std::error::Error;

use gbcheck::exterior::{pfaffian, FormElement};
use gbcheck::gbc::integrand_report;
use gbcheck::library::{cp2, sphere4};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for d in [2, 4, 6, 8] {
        let mut worst_det: f64 = 0.0;
        let mut worst_berezin: f64 = 0.0;
        for _ in 0..20 {
            let a = random_skew(&mut rng, d);
            let pf = pfaffian(&a)?;
            let det = DMatrix::from_fn(d, d, |i, j| a[i][j]).determinant();
            worst_det = worst_det.max((pf * pf - det).abs() / det.abs().max(1e-300));
            // ω = Σ_{i<j} a_ij e_i ∧ e_j, B(exp ω) = Pf(a)
            let mut omega = FormElement::zero(d);
            for i in 0..d {
                for j in (i + 1)..d {
                    omega = omega.try_add(&FormElement::monomial(d, &[i, j], a[i][j])?)?;
                }
            }
            let b = omega.exp().berezin();
            worst_berezin = worst_berezin.max((b.re - pf).abs() + b.im.abs());
        }
        println!("d={d}: max |Pf²−det|/|det| = {worst_det:.1e}, max |B(e^ω)−Pf| = {worst_berezin:.1e}");
        if worst_det > 1e-10 || worst_berezin > 1e-10 {
            return Err(format!("Pfaffian identities fail at d={d}").into());
        }
    }

    for (name, chart, center) in [
        ("sphere4", sphere4(2.0)?, [1.2, 0.9, 1.7, 3.0]),
        ("cp2", cp2()?, [0.4, 0.7, 1.1, 2.0]),
    ] {
        let r = integrand_report(&chart, &center)?;
        println!(
            "{name:<8} Pf density {:+.12e}  AW density {:+.12e}  rel diff {:.1e}",
            r.pfaffian_density,
            r.aw_density,
            r.discrepancy / r.pfaffian_density.abs()
        );
        if r.discrepancy > 1e-9 * r.pfaffian_density.abs() {
            return Err(format!("{name}: densities disagree").into());
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
