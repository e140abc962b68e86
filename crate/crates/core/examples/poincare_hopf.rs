// Sums of local indices of vector fields: zeros are found by a cell scan
// plus Newton, and each local degree comes from a winding number.

use std::error::Error;

use gbcheck::index::index_sum;
use gbcheck::library::builtin_manifold;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    for name in ["sphere2", "torus2"] {
        let m = builtin_manifold(name, &[])?;
        for field in &m.fields {
            let report = index_sum(field, 48)?;
            println!("{name}/{}: Σ ind = {}  (χ = {})", field.name, report.sum, report.expected);
            for z in &report.zeros {
                println!(
                    "    zero in {:<5} at ({:+.6}, {:+.6})  index {:+}  raw {:+.9}",
                    z.chart, z.x[0], z.x[1], z.local_degree, z.raw_degree
                );
            }
            for w in &report.warnings {
                println!("    warning: {w}");
            }
            if report.sum != report.expected {
                return Err(format!("{name}/{}: index sum {} != {}", field.name, report.sum, report.expected).into());
            }
        }
    }

    // rescaling the field leaves every index unchanged
    let m = builtin_manifold("sphere2", &[])?;
    let morse = m.field("morse")?;
    for lambda in [0.1, 7.0] {
        let r = index_sum(&morse.scaled(lambda), 48)?;
        println!("morse scaled by {lambda}: Σ ind = {}", r.sum);
        if r.sum != 2 {
            return Err("index sum changed under rescaling".into());
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
