//! Hardy weights kappa_beta, the optimal L^p constant and the constant
//! obtained from the quadratic inequality.
//!
//!     cargo run --example hardy_constants

use frac_hardy::forms::{figure1_data, inverse_p_grid};
use frac_hardy::specfun::{kappa_max, kappa_optimal, kappa_value, subgoal_constant, Params};

fn main() -> frac_hardy::Result<()> {
    let params = Params::new(3, 1.0, 4.0)?;
    println!("kappa_beta for d = 3, alpha = 1");
    for i in 0..=8 {
        let beta = params.gap() * i as f64 / 8.0;
        println!("  beta = {beta:.3}  kappa = {:.12}", kappa_value(3, 1.0, beta)?);
    }
    let top = kappa_max(&params);
    println!("maximum {:.12} at beta = {}", top.value, top.beta);
    println!("p = 4: optimal {:.12}, from p = 2 {:.12}", kappa_optimal(&params), subgoal_constant(&params));

    // a coarse version of the comparison curve; the gap closes only at p = 2
    for row in figure1_data(3, 1.0, &inverse_p_grid(9))? {
        println!("  1/p = {:.1}  optimal {:.6}  subgoal {:.6}", row.inv_p, row.kappa_opt, row.kappa_subgoal);
    }
    Ok(())
}
