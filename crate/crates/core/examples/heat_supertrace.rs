// McKean-Singer: the alternating sum of heat traces over form degrees is
// independent of t and equals χ. Also the small-t expansion of the scalar
// heat trace and grid approximations of the spectra.

use std::error::Error;
use std::f64::consts::PI;

use gbcheck::heat::{
    asymptotic_fit, dec_spectrum_torus2, grid_spectrum_s2_mode, heat_trace, richardson_second_order, supertrace,
    supertrace_fit, SpectrumModel,
};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let s2 = SpectrumModel::round_s2(1.0);
    println!("     t      Tr Δ0          Tr Δ1          Tr Δ2          supertrace");
    for t in [0.05, 0.2, 1.0, 2.0] {
        let tr: Vec<f64> = (0..=2).map(|p| heat_trace(&s2, p, t, 1e-13).map(|h| h.value)).collect::<Result<_, _>>()?;
        let s = supertrace(&s2, t, 1e-13)?;
        println!("S²  {t:<5} {:14.8} {:14.8} {:14.8}  {:.14}", tr[0], tr[1], tr[2], s.value);
        if (s.value - 2.0).abs() > 1e-10 {
            return Err(format!("S² supertrace {} at t={t}", s.value).into());
        }
    }
    for d in 1..=4 {
        let s = supertrace(&SpectrumModel::flat_torus(d), 0.1, 1e-13)?;
        println!("T^{d} supertrace at t=0.1: {:+.2e}", s.value);
        if s.value.abs() > 1e-10 {
            return Err(format!("T^{d} supertrace {}", s.value).into());
        }
    }

    let times: Vec<f64> = (1..=10).map(|k| 0.001 * k as f64).collect();
    let fit = asymptotic_fit(&s2, 0, &times, 3, 1e-14)?;
    println!(
        "S² (4πt) Tr e^(−tΔ0) ≈ {:.8} + {:.8} t + …   (4π = {:.8}, 4π/3 = {:.8})",
        fit.coefficients[0],
        fit.coefficients[1],
        4.0 * PI,
        4.0 * PI / 3.0
    );
    let st = supertrace_fit(&s2, &times, 2, 1e-14)?;
    println!("S² supertrace fit: {:?}", st.coefficients);

    // second-order grids, extrapolated
    let a = dec_spectrum_torus2(12, 1);
    let b = dec_spectrum_torus2(16, 1);
    let first = richardson_second_order(a[2], 12, b[2], 16);
    println!("T² 1-forms, grid λ₁ = {first:.6} (exact 4π² = {:.6})", 4.0 * PI * PI);
    let modes = grid_spectrum_s2_mode(0, 200);
    println!("S² axisymmetric grid modes: {:.5} {:.5} {:.5} (exact 0 2 6)", modes[0], modes[1], modes[2]);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
