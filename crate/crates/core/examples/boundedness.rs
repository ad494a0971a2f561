//! For which p the semigroup stays bounded on L^p, and what the blow-up at the
//! origin looks like.
//!
//!     cargo run --release --example boundedness

use frac_hardy::quadrature::QuadratureSpec;
use frac_hardy::schrodinger::{bounded_predicate, boundedness_probe, SeriesSpec};
use frac_hardy::specfun::Params;

fn main() -> frac_hardy::Result<()> {
    println!("bounded on L^p (d = 3, alpha = 1); rows 1/p, columns delta");
    for j in (1..10).rev() {
        let inv_p = j as f64 / 10.0;
        let row: String = (0..=10).map(|i| if bounded_predicate(3, 1.0 / inv_p, i as f64 * 0.1) { '#' } else { '.' }).collect();
        println!("  {inv_p:.1} {row}");
    }
    let params = Params::new(3, 1.0, 2.0)?;
    let rep = boundedness_probe(4.0, 1.0, &params, &SeriesSpec::default(), &QuadratureSpec::default())?;
    println!("p = 4, delta = 1: P_1 1_B ~ r^{:.3} near 0", rep.slope);
    for (eps, v) in &rep.truncated_norms {
        println!("  int_(|x| > {eps:.0e}) |P_1 1_B|^4 = {v:.4}");
    }
    Ok(())
}
