// Manifolds and bundles loaded from TOML spec files.

use std::error::Error;
use std::path::Path;

use gbcheck::bundles::generalized_gbc;
use gbcheck::gbc::verify_gbc;
use gbcheck::index::index_sum;
use gbcheck::specfile;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/specs");

    let torus = specfile::load(&dir.join("torus_of_revolution.toml"))?;
    let atlas = torus.atlas.as_ref().ok_or("torus spec has no charts")?;
    let gbc = verify_gbc(atlas, 64, false)?;
    println!("{}: ∫Ω = {:+.3e} (χ = {})", torus.name, gbc.integral, gbc.expected_chi);
    if gbc.abs_error > torus.tolerance.unwrap_or(1e-6) {
        return Err("torus of revolution fails".into());
    }
    let field = torus.field(None).ok_or("torus spec has no field")?;
    let idx = index_sum(field, 48)?;
    for z in &idx.zeros {
        println!("    zero at ({:.4}, {:.4}) index {:+}", z.x[0], z.x[1], z.local_degree);
    }
    println!("{}: Σ ind = {}", field.name, idx.sum);
    if idx.sum != idx.expected {
        return Err("height gradient index sum".into());
    }

    let twisted = specfile::load(&dir.join("twisted_bundle.toml"))?;
    let bundle = twisted.bundle.as_ref().ok_or("no bundle block")?;
    let r = generalized_gbc(bundle, 64, 48)?;
    println!(
        "{}: transition {:.10}, Pfaffian {:.10}, winding {:.4}",
        twisted.name, r.transition_integral, r.pfaffian_integral, r.clutching_winding
    );
    let expected = twisted.expected_euler.unwrap_or(0) as f64;
    if (r.transition_integral - expected).abs() > 1e-5 || (r.pfaffian_integral - expected).abs() > 1e-5 {
        return Err("twisted bundle Euler number".into());
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
