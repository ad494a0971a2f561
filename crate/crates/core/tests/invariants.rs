use proptest::prelude::*;

use frac_hardy::kernels::stable_density;
use frac_hardy::montecarlo::{feynman_kac_estimate, McConfig};
use frac_hardy::powers::signed_pow;
use frac_hardy::quadrature::RadialGrid;
use frac_hardy::schrodinger::PotentialSpec;
use frac_hardy::specfun::{kappa, kappa_max, kappa_value, Params};
use frac_hardy::testfun::{u_witness, RadialFunction};

fn stable_pair() -> impl Strategy<Value = (u32, f64)> {
    (1u32..=3).prop_flat_map(|d| (Just(d), 0.05f64..(d as f64).min(2.0) - 0.05))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn params_accept_exactly_the_standing_assumptions(d in 1u32..=4, alpha in -0.5f64..2.5, p in 0.5f64..6.0) {
        let ok = (1..=3).contains(&d) && alpha > 0.0 && alpha < (d as f64).min(2.0) && p > 1.0;
        prop_assert_eq!(Params::new(d, alpha, p).is_ok(), ok);
    }

    #[test]
    fn weight_exponents_respect_their_ranges((d, alpha) in stable_pair(), p in 1.05f64..6.0, x in -0.5f64..1.5) {
        let params = Params::new(d, alpha, p).unwrap();
        let beta = x * params.beta_max();
        prop_assert_eq!(params.with_beta(beta).is_ok(), (0.0..=params.beta_max()).contains(&beta));
        let delta = x * params.gap() / 2.0;
        prop_assert_eq!(params.with_delta(delta).is_ok(), (0.0..=params.gap() / 2.0).contains(&delta));
        let floor = (d as f64 / p).max(0.0);
        prop_assert!(params.with_mu(floor + 0.1).is_ok());
        prop_assert!(params.with_mu(floor).is_err());
    }

    #[test]
    fn kappa_is_symmetric_and_vanishes_only_at_the_ends((d, alpha) in stable_pair(), x in 0.0f64..1.0) {
        let gap = d as f64 - alpha;
        let beta = x * gap;
        let k = kappa_value(d, alpha, beta).unwrap();
        let mirror = kappa_value(d, alpha, gap - beta).unwrap();
        prop_assert!((k - mirror).abs() <= 1e-12 * k.max(1e-300));
        prop_assert!(k >= 0.0);
        prop_assert_eq!(k == 0.0, beta == 0.0);
        let top = kappa_max(&Params::new(d, alpha, 2.0).unwrap()).value;
        prop_assert!(k <= top * (1.0 + 1e-12));
    }

    #[test]
    fn kappa_increases_up_to_the_midpoint((d, alpha) in stable_pair(), x in 0.01f64..0.99) {
        let half = (d as f64 - alpha) / 2.0;
        let (a, b) = (x * half, (x + 0.01).min(1.0) * half);
        prop_assert!(kappa_value(d, alpha, a).unwrap() < kappa_value(d, alpha, b).unwrap());
    }

    #[test]
    fn hardy_constant_records_its_exponent((d, alpha) in stable_pair(), x in 0.0f64..1.0) {
        let params = Params::new(d, alpha, 2.0).unwrap();
        let c = kappa(&params, x * params.gap()).unwrap();
        prop_assert_eq!(c.value, kappa_value(d, alpha, x * params.gap()).unwrap());
        prop_assert_eq!(c.beta, x * params.gap());
    }

    #[test]
    fn signed_powers_compose(a in -1e3f64..1e3, k in 0.1f64..4.0, m in 0.1f64..4.0) {
        let lhs = signed_pow(signed_pow(a, k), m);
        let rhs = signed_pow(a, k * m);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-300));
        prop_assert_eq!(signed_pow(-a, k), -signed_pow(a, k));
    }

    #[test]
    fn stable_densities_scale((d, alpha) in stable_pair(), t in 0.05f64..20.0, r in 0.0f64..10.0) {
        let direct = stable_density(d, alpha, t, r).unwrap();
        let scaled = t.powf(-(d as f64) / alpha) * stable_density(d, alpha, 1.0, r * t.powf(-1.0 / alpha)).unwrap();
        prop_assert!((direct - scaled).abs() <= 1e-9 * direct);
    }

    #[test]
    fn truncated_potential_is_capped(delta in 0.0f64..1.0, m in 1.0f64..1e4, r in 1e-4f64..10.0) {
        let params = Params::new(3, 1.0, 2.0).unwrap();
        let pot = PotentialSpec::new(&params, delta, m).unwrap();
        prop_assert_eq!(pot.kappa, kappa(&params, delta).unwrap().value);
        let want = (pot.kappa / r).min(m);
        prop_assert!((pot.q(1.0, r) - want).abs() <= 1e-15 * want);
    }

    #[test]
    fn witness_profiles_are_continuous_and_nonincreasing(p in 2.2f64..6.0, x in 0.05f64..0.95, lr in 0.5f64..6.0) {
        let params = Params::new(3, 1.0, p).unwrap();
        let (lo, hi) = (params.gap() / p, (p - 1.0) * params.gap() / p);
        let beta = lo + x * (hi - lo);
        let mu = beta.max(3.0 / p) + 0.5;
        let u = u_witness(&params, beta, mu, 10f64.powf(lr)).unwrap();
        for b in u.breakpoints() {
            let (left, right) = (u.eval(b * (1.0 - 1e-12)), u.eval(b * (1.0 + 1e-12)));
            prop_assert!((left - right).abs() <= 1e-9 * left.abs().max(1.0));
        }
        prop_assert!(u.check_nonincreasing().is_ok());
    }

    #[test]
    fn grid_weights_integrate_monomials_to_second_order(d in 1u32..=3, k in 0u32..3) {
        let err = |n: usize| {
            let grid = RadialGrid::log_spaced(d, 1e-3, 10.0, n).unwrap();
            // the weights cover [0, r_max], with the innermost cell taken as constant
            let (r0, dk) = (grid.nodes[0], (d + k) as i32);
            let want = r0.powi(dk) / d as f64 + (10f64.powi(dk) - r0.powi(dk)) / dk as f64;
            let vals: Vec<f64> = grid.nodes.iter().map(|r| r.powi(k as i32)).collect();
            (grid.integrate(&vals) - want).abs() / want
        };
        let (coarse, fine) = (err(24), err(48));
        prop_assert!(coarse <= 5e-3, "{}", coarse);
        prop_assert!(fine <= 0.3 * coarse || fine <= 1e-12, "{} then {}", coarse, fine);
    }
}

#[test]
fn monte_carlo_is_deterministic_given_the_seed() {
    let params = Params::new(3, 1.0, 2.0).unwrap();
    let pot = PotentialSpec::new(&params, 0.5, 100.0).unwrap();
    let f = RadialFunction::gaussian(1.0, 1.0);
    let cfg = McConfig { n_paths: 2_000, time_step: 0.02, seed: 5, m: 100.0 };
    let a = feynman_kac_estimate(&f, 0.7, 0.3, &pot, &params, &cfg).unwrap();
    let b = feynman_kac_estimate(&f, 0.7, 0.3, &pot, &params, &cfg).unwrap();
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    assert_eq!(a.config_hash, b.config_hash);
    let c = feynman_kac_estimate(&f, 0.7, 0.3, &pot, &params, &McConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.mean, c.mean);
}
