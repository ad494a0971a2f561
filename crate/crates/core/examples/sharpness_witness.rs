//! Smooth compactly supported functions that break the Hardy inequality for
//! constants above the optimal one.
//!
//!     cargo run --release --example sharpness_witness

use frac_hardy::forms::{energy_p, weighted_lp_norm};
use frac_hardy::quadrature::QuadratureSpec;
use frac_hardy::specfun::{kappa_max, kappa_optimal, Params};
use frac_hardy::testfun::find_witness;

fn main() -> frac_hardy::Result<()> {
    let spec = QuadratureSpec::default();
    let params = Params::new(3, 1.0, 3.0)?;
    let (k_opt, k_max) = (kappa_optimal(&params), kappa_max(&params).value);
    println!("optimal constant {k_opt:.6}, largest weight {k_max:.6}");
    for frac in [1.0, 0.5] {
        let target = k_opt + frac * (k_max - k_opt);
        let (f, rep) = find_witness(&params, target, &spec)?;
        let e = energy_p(&f, &params, &spec)?;
        let w = weighted_lp_norm(&f, &params, &spec)?;
        println!(
            "kappa = {target:.6}: beta = {:.3}, R = {:.0e}, eta = {}, E = {:.6e}, kappa W = {:.6e}, ratio {:.5}, found {}",
            rep.beta,
            rep.big_r,
            rep.eta,
            e.value,
            target * w.value,
            e.value / (target * w.value),
            rep.success
        );
    }
    Ok(())
}
