//! The semigroup of the fractional Laplacian plus kappa_delta |x|^-alpha:
//! contraction on L^p below the optimal constant, and the Chapman-Kolmogorov
//! check on a truncated potential.
//!
//!     cargo run --release --example schrodinger_semigroup

use frac_hardy::quadrature::QuadratureSpec;
use frac_hardy::schrodinger::{contractivity_probe, semigroup_property_check, PotentialSpec, SeriesSpec};
use frac_hardy::specfun::Params;
use frac_hardy::testfun::{semigroup_corpus, RadialFunction};

fn main() -> frac_hardy::Result<()> {
    let spec = QuadratureSpec::default();
    let series = SeriesSpec::default();
    let params = Params::new(3, 1.0, 2.0)?;
    let corpus = semigroup_corpus();
    for (p, delta) in [(2.0, 1.0), (4.0, 0.5)] {
        let rep = contractivity_probe(p, delta, &corpus, &[0.25, 1.0], 1e4, &params, &series, &spec)?;
        println!("p = {p}, delta = {delta}: predicted contraction {}", rep.predicted_contractive);
        for row in &rep.rows {
            println!("  {:<16} t = {:.2}: ||P t f|| / ||f|| = {:.5}", row.name, row.t, row.ratio);
        }
    }
    let pot = PotentialSpec::new(&params, 0.5, 100.0)?;
    let chk = semigroup_property_check(&RadialFunction::gaussian(1.0, 1.0), 0.25, 0.25, &pot, &params, &series, &spec)?;
    println!("P_s P_t vs P_(s+t): residual {:.2e}, refined {:.2e}", chk.residual, chk.refined_residual);
    Ok(())
}
