//! Adaptive quadrature on integrands with endpoint singularities, and the
//! angular average of the jump kernel between two spheres.
//!
//!     cargo run --example quadrature

use frac_hardy::quadrature::{integrate, integrate_with, radial_jump_kernel, IntegrateOptions, QuadratureSpec};

fn main() -> frac_hardy::Result<()> {
    let spec = QuadratureSpec::default();
    // plain bisection gives up on a strong power singularity
    match integrate(|x| x.powf(-0.7), 0.0, 1.0, &spec) {
        Ok(res) => println!("int_0^1 x^-0.7 without a hint: {:.12}", res.value),
        Err(e) => println!("int_0^1 x^-0.7 without a hint: {e}"),
    }
    let opts = IntegrateOptions { left_exponent: Some(-0.7), ..Default::default() };
    let res = integrate_with(|x| x.powf(-0.7), 0.0, 1.0, &opts, &spec)?;
    println!("with the exponent hint: {:.12} (exact {:.12}, err {:.1e})", res.value, 1.0 / 0.3, res.error);
    let res = integrate(|x| x.ln() * x.sqrt(), 0.0, 1.0, &spec)?;
    println!("int_0^1 sqrt(x) ln x = {:.12} (exact {:.12}, err {:.1e})", res.value, -4.0 / 9.0, res.error);

    // the kernel blows up like |r - s|^{-1-alpha} as the spheres meet
    for s in [2.0, 1.5, 1.1, 1.01] {
        println!("  d = 3, alpha = 1, r = 1, s = {s}: {:.6e}", radial_jump_kernel(3, 1.0, 1.0, s, &spec)?);
    }
    Ok(())
}
