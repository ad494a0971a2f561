//! Feynman-Kac estimates of the truncated semigroup against the series
//! solution.
//!
//!     cargo run --release --example monte_carlo

use frac_hardy::montecarlo::{compare_with_reference, McConfig};
use frac_hardy::quadrature::QuadratureSpec;
use frac_hardy::schrodinger::{apply_semigroup, PotentialSpec, SeriesSpec};
use frac_hardy::specfun::Params;
use frac_hardy::testfun::RadialFunction;

fn main() -> frac_hardy::Result<()> {
    let spec = QuadratureSpec::default();
    let params = Params::new(3, 1.0, 2.0)?;
    let pot = PotentialSpec::new(&params, 0.5, 100.0)?;
    let f = RadialFunction::indicator(1.0, 1.0);
    let t = 0.5;
    let (u, state) = apply_semigroup(&f, t, &pot, &params, &SeriesSpec::default(), &spec)?;
    if state.direct {
        println!("series: direct implicit march");
    } else {
        println!("series: {} terms", state.n_terms);
    }
    let cfg = McConfig { n_paths: 20_000, time_step: 0.01, seed: 1, m: 100.0 };
    for x0 in [0.1, 1.0, 3.0] {
        let c = compare_with_reference(&f, x0, t, &pot, &params, &cfg, u.eval(x0))?;
        println!(
            "  |x| = {x0}: series {:.5}, Monte Carlo {:.5} +- {:.5} (step allowance {:.1e}), agree {}",
            c.reference, c.estimate.mean, c.estimate.stderr, c.allowance, c.pass
        );
    }
    Ok(())
}
