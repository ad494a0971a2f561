//! The Hardy identity E_p[u] = kappa_beta int |u|^p |x|^-alpha + remainder on
//! the test corpus, with the small-time semigroup form as a second opinion.
//!
//!     cargo run --release --example hardy_identity

use frac_hardy::forms::{semigroup_limit, verify_identity};
use frac_hardy::quadrature::QuadratureSpec;
use frac_hardy::specfun::Params;
use frac_hardy::testfun::identity_corpus;

fn main() -> frac_hardy::Result<()> {
    let spec = QuadratureSpec::default();
    let params = Params::new(3, 1.0, 3.0)?;
    for (name, u) in identity_corpus(&params)? {
        for beta in [params.gap() / params.p, params.gap() / 2.0] {
            let rep = verify_identity(&u, beta, &params, &spec)?;
            println!(
                "{name:<16} beta = {beta:.3}: E = {:.10}, kappa W = {:.10}, remainder = {:.10}, rel. residual {:.1e}, pass {}",
                rep.energy,
                rep.constant_term,
                rep.remainder_term,
                rep.relative_residual(),
                rep.pass
            );
        }
        let (lim, raw) = semigroup_limit(&u, &params, 0.01, &spec)?;
        println!("{name:<16} semigroup form at t = 0.01, 0.005, 0.0025: {raw:.8?}, limit {:.10} +- {:.1e}", lim.value, lim.error);
    }
    Ok(())
}
