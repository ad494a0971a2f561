//! Isotropic stable densities by three routes: series and asymptotics,
//! Fourier inversion, and subordination of the Gaussian (alpha = 1 only).
//!
//!     cargo run --example stable_kernels

use frac_hardy::kernels::{
    cauchy_density, kernel_bound_check, stable_density, stable_density_fourier, stable_density_subordination,
};
use frac_hardy::quadrature::QuadratureSpec;

fn main() -> frac_hardy::Result<()> {
    let spec = QuadratureSpec::default();
    println!("d = 3, alpha = 1, t = 1");
    for r in [0.0, 0.5, 2.0, 10.0] {
        let fourier = if r > 0.0 { format!("{:.12e}", stable_density_fourier(3, 1.0, 1.0, r)?.value) } else { "-".into() };
        println!(
            "  r = {r:>4}: closed {:.12e}  series {:.12e}  fourier {fourier}  subordination {:.12e}",
            cauchy_density(3, 1.0, r),
            stable_density(3, 1.0, 1.0, r)?,
            stable_density_subordination(3, 1.0, r, &spec)?
        );
    }
    println!("d = 2, alpha = 1.5: p_t(r) / (t nu(r)) tends to 1 as t -> 0");
    for t in [1e-1, 1e-2, 1e-3] {
        let rep = kernel_bound_check(2, 1.5, t, 1.0)?;
        println!("  t = {t:.0e}: density {:.6e}, ratio {:.5}", rep.density, rep.levy_ratio);
    }
    Ok(())
}
