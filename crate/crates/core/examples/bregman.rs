//! Bregman divergence of |x|^p, its symmetrization and the two-sided
//! comparison with (b^<p/2> - a^<p/2>)^2.
//!
//!     cargo run --example bregman

use frac_hardy::powers::{bregman, sandwich_check, signed_pow, symmetrized_bregman};

fn main() -> frac_hardy::Result<()> {
    let pairs = [(1.0, 2.0), (-1.0, 3.0), (0.0, -0.5), (1e-3, 1e3)];
    for p in [1.5, 2.0, 3.0] {
        println!("p = {p}");
        for (a, b) in pairs {
            let f_ab = bregman(p, a, b)?.value;
            let f_ba = bregman(p, b, a)?.value;
            let sym = symmetrized_bregman(p, a, b)?;
            let half = signed_pow(b, p / 2.0) - signed_pow(a, p / 2.0);
            let (lower, upper) = sandwich_check(p, a, b);
            println!(
                "  a = {a:>6}, b = {b:>6}: F(a,b) = {f_ab:.6e}, F(b,a) = {f_ba:.6e}, mean {:.6e} vs {sym:.6e}; (b^<p/2> - a^<p/2>)^2 = {:.6e}, sandwich {lower}/{upper}",
                0.5 * (f_ab + f_ba),
                half * half
            );
        }
    }
    Ok(())
}
