// Patodi's algebraic cancellations: supertraces of products of derivation
// extensions `D^p A` on the exterior algebra.

use std::error::Error;

use gbcheck::exterior::{
    double_permutation_sum, dp_extend, dp_extend4, lambda_basis, patodi_coefficient, supertrace, Tensor4,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0))
}

fn product_supertrace(mats: &[DMatrix<f64>], d: usize) -> Result<f64, Box<dyn Error>> {
    let mut ext: Vec<Vec<DMatrix<f64>>> = Vec::new();
    for p in 0..=d {
        ext.push(mats.iter().map(|m| dp_extend(m, p)).collect::<Result<_, _>>()?);
    }
    Ok(supertrace(
        |p| {
            let n = lambda_basis(d, p).len();
            ext[p].iter().fold(DMatrix::identity(n, n), |acc, m| acc * m)
        },
        d,
    ))
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for d in 2..=5 {
        for k in 1..=d {
            let mats: Vec<_> = (0..k).map(|_| random_matrix(&mut rng, d)).collect();
            let s = product_supertrace(&mats, d)?;
            if k < d {
                println!("d={d} k={k}: Str(D A1 ∘ … ∘ D Ak) = {s:+.2e}");
                if s.abs() > 1e-12 {
                    return Err(format!("no cancellation at d={d}, k={k}").into());
                }
            } else {
                let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
                let a = patodi_coefficient(&mats)?;
                println!("d={d} k={d}: Str = {s:+.12}, (−1)^d a_1…d = {:+.12}", sign * a);
                if (s - sign * a).abs() > 1e-10 * a.abs().max(1.0) {
                    return Err(format!("top coefficient mismatch at d={d}").into());
                }
            }
        }
    }

    for d in [4, 6] {
        let t = Tensor4::from_fn(d, |_, _, _, _| rng.random_range(-1.0..1.0));
        let s = supertrace(|p| dp_extend4(&t, p).expect("p ≤ d"), d);
        println!("d={d}: Str(D^p A) for one 4-tensor = {s:+.2e}");
        if s.abs() > 1e-10 {
            return Err(format!("4-tensor supertrace does not vanish at d={d}").into());
        }
    }

    for d in [2, 4] {
        let t = Tensor4::from_fn(d, |_, _, _, _| rng.random_range(-1.0..1.0));
        let s = supertrace(
            |p| {
                let m = dp_extend4(&t, p).expect("p ≤ d");
                (1..d / 2).fold(m.clone(), |acc, _| acc * &m)
            },
            d,
        );
        let oracle = double_permutation_sum(&t)?;
        println!("d={d}: Str((D^p A)^(d/2)) = {s:+.12}, permutation sum = {oracle:+.12}");
        if (s - oracle).abs() > 1e-10 * oracle.abs().max(1.0) {
            return Err(format!("double permutation identity fails at d={d}").into());
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
