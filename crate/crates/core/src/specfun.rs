//! Gamma and Bessel functions together with the closed-form constants of the
//! fractional Hardy problem: the jump-kernel constant, the Hardy weights
//! `kappa_beta`, and the comparison constants used for the `L^p` gap.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Problem configuration: dimension, stability index, integrability exponent
/// and the optional weight exponents used by the different experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub d: u32,
    pub alpha: f64,
    pub p: f64,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub mu: Option<f64>,
}

impl Params {
    /// Validates `d in {1,2,3}`, `0 < alpha < min(2, d)` and `1 < p < inf`.
    pub fn new(d: u32, alpha: f64, p: f64) -> Result<Self> {
        check_stable(d, alpha)?;
        if !(p > 1.0 && p.is_finite()) {
            return domain(format!("p must lie in (1, inf), got {p}"));
        }
        Ok(Self { d, alpha, p, beta: None, delta: None, mu: None })
    }

    /// `d - alpha`, the homogeneity gap that appears everywhere.
    pub fn gap(&self) -> f64 {
        self.d as f64 - self.alpha
    }

    /// Conjugate exponent `p / (p - 1)`.
    pub fn conjugate(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// Largest admissible weight exponent for the Hardy identity,
    /// `min(d - alpha, (d - alpha)/(p - 1))`.
    pub fn beta_max(&self) -> f64 {
        self.gap().min(self.gap() / (self.p - 1.0))
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        if !(0.0..=self.beta_max() + 1e-15).contains(&beta) {
            return domain(format!("beta = {beta} outside [0, {}]", self.beta_max()));
        }
        self.beta = Some(beta);
        Ok(self)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if !(0.0..=self.gap() / 2.0 + 1e-15).contains(&delta) {
            return domain(format!("delta = {delta} outside [0, {}]", self.gap() / 2.0));
        }
        self.delta = Some(delta);
        Ok(self)
    }

    pub fn with_mu(mut self, mu: f64) -> Result<Self> {
        let floor = self.beta.unwrap_or(0.0).max(self.d as f64 / self.p);
        if !(mu > floor) {
            return domain(format!("mu = {mu} must exceed max(beta, d/p) = {floor}"));
        }
        self.mu = Some(mu);
        Ok(self)
    }
}

pub(crate) fn check_stable(d: u32, alpha: f64) -> Result<()> {
    if !(1..=3).contains(&d) {
        return domain(format!("dimension {d} not supported (1, 2 or 3)"));
    }
    if !(alpha > 0.0 && alpha < 2.0_f64.min(d as f64)) {
        return domain(format!("alpha = {alpha} outside (0, min(2, {d}))"));
    }
    Ok(())
}

/// Value of `kappa_beta` tagged with the exponent and configuration it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardyConstant {
    pub value: f64,
    pub beta: f64,
    pub params: Params,
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn ln_gamma_lanczos(x: f64) -> f64 {
    // x >= 0.5
    let z = x - 1.0;
    let mut series = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        series += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + series.ln()
}

fn ln_gamma_stirling(x: f64) -> f64 {
    // Bernoulli corrections B_{2k} / (2k (2k-1) x^{2k-1}) up to k = 7.
    const C: [f64; 7] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        1.0 / 156.0,
    ];
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut corr = 0.0;
    let mut pow = inv;
    for c in C {
        corr += c * pow;
        pow *= inv2;
    }
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + corr
}

/// Natural logarithm of `Gamma(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return domain(format!("log_gamma requires a positive finite argument, got {x}"));
    }
    Ok(ln_gamma_pos(x))
}

pub(crate) fn ln_gamma_pos(x: f64) -> f64 {
    if x >= 10.0 {
        ln_gamma_stirling(x)
    } else if x >= 0.5 {
        ln_gamma_lanczos(x)
    } else {
        // reflection, Gamma(x) > 0 on (0, 1/2)
        (PI / (PI * x).sin()).ln() - ln_gamma_lanczos(1.0 - x)
    }
}

/// `Gamma(x)` for any real `x` that is not a pole.
pub fn gamma(x: f64) -> Result<f64> {
    if x > 0.0 {
        return Ok(ln_gamma_pos(x).exp());
    }
    if x == x.floor() {
        return domain(format!("Gamma has a pole at {x}"));
    }
    // Gamma(x) Gamma(1 - x) = pi / sin(pi x)
    Ok(PI / ((PI * x).sin() * ln_gamma_pos(1.0 - x).exp()))
}

/// `|Gamma(-a)|` for `0 < a < 1`, via `|Gamma(-a)| = pi / (sin(pi a) Gamma(1 + a))`.
pub(crate) fn abs_gamma_neg(a: f64) -> f64 {
    PI / ((PI * a).sin() * ln_gamma_pos(1.0 + a).exp())
}

/// Jump-kernel constant `A_{d,-alpha}` of the fractional Laplacian.
pub fn nu_constant(d: u32, alpha: f64) -> Result<f64> {
    check_stable(d, alpha)?;
    let df = d as f64;
    Ok(2f64.powf(alpha) * ln_gamma_pos((df + alpha) / 2.0).exp() * PI.powf(-df / 2.0)
        / abs_gamma_neg(alpha / 2.0))
}

/// Surface area of the unit sphere in `R^d` (2 for `d = 1`).
pub fn sphere_area(d: u32) -> f64 {
    let df = d as f64;
    2.0 * PI.powf(df / 2.0) / ln_gamma_pos(df / 2.0).exp()
}

/// `kappa_beta` as a bare number; exact zero at `beta in {0, d - alpha}`.
pub fn kappa_value(d: u32, alpha: f64, beta: f64) -> Result<f64> {
    check_stable(d, alpha)?;
    let gap = d as f64 - alpha;
    let slack = 1e-14 * gap.max(1.0);
    if beta < -slack || beta > gap + slack {
        return domain(format!("beta = {beta} outside [0, {gap}]"));
    }
    // 1/Gamma(beta/2) and 1/Gamma((d-beta-alpha)/2) vanish at the endpoints.
    if beta.abs() <= slack || (gap - beta).abs() <= slack {
        return Ok(0.0);
    }
    let df = d as f64;
    let ln = ln_gamma_pos((beta + alpha) / 2.0) + ln_gamma_pos((df - beta) / 2.0)
        - ln_gamma_pos(beta / 2.0)
        - ln_gamma_pos((df - beta - alpha) / 2.0);
    Ok(2f64.powf(alpha) * ln.exp())
}

/// Hardy weight `kappa_beta` for `0 <= beta <= d - alpha`.
pub fn kappa(params: &Params, beta: f64) -> Result<HardyConstant> {
    let value = kappa_value(params.d, params.alpha, beta)?;
    Ok(HardyConstant { value, beta, params: *params })
}

/// The maximal Hardy weight, attained at `beta = (d - alpha)/2`.
pub fn kappa_max(params: &Params) -> HardyConstant {
    let df = params.d as f64;
    let a = params.alpha;
    let ln = 2.0 * (ln_gamma_pos((df + a) / 4.0) - ln_gamma_pos((df - a) / 4.0));
    HardyConstant {
        value: 2f64.powf(a) * ln.exp(),
        beta: params.gap() / 2.0,
        params: *params,
    }
}

/// Optimal `L^p` Hardy constant `kappa_{(d-alpha)/p}`.
pub fn kappa_optimal(params: &Params) -> f64 {
    kappa_value(params.d, params.alpha, params.gap() / params.p)
        .expect("(d - alpha)/p lies in [0, d - alpha]")
}

/// Constant obtained by transferring the quadratic Hardy inequality to `L^p`:
/// `4(p-1)/p^2 * kappa_{(d-alpha)/2}`.
pub fn subgoal_constant(params: &Params) -> f64 {
    let p = params.p;
    4.0 * (p - 1.0) / (p * p) * kappa_max(params).value
}

/// Improvement of the optimal constant over [`subgoal_constant`].
pub fn lemma7_gap(params: &Params) -> f64 {
    kappa_optimal(params) - subgoal_constant(params)
}

/// `kappa_beta` in the local limit `alpha = 2`: `beta (d - 2 - beta)`.
pub fn kappa_local_limit(d: u32, beta: f64) -> f64 {
    beta * (d as f64 - 2.0 - beta)
}

/// Supported Bessel orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BesselOrder {
    MinusHalf,
    Zero,
    Half,
}

impl BesselOrder {
    pub fn from_f64(nu: f64) -> Result<Self> {
        match nu {
            x if x == -0.5 => Ok(Self::MinusHalf),
            x if x == 0.0 => Ok(Self::Zero),
            x if x == 0.5 => Ok(Self::Half),
            _ => domain(format!("Bessel order {nu} not supported")),
        }
    }
}

/// Bessel function of the first kind of order -1/2, 0 or 1/2.
pub fn bessel_j(order: f64, x: f64) -> Result<f64> {
    let order = BesselOrder::from_f64(order)?;
    if !(x >= 0.0) {
        return domain(format!("bessel_j requires x >= 0, got {x}"));
    }
    match order {
        BesselOrder::Zero => Ok(bessel_j0(x)),
        BesselOrder::Half => {
            if x == 0.0 {
                Ok(0.0)
            } else {
                Ok((2.0 / (PI * x)).sqrt() * x.sin())
            }
        }
        BesselOrder::MinusHalf => {
            if x == 0.0 {
                domain("J_{-1/2} is singular at 0")
            } else {
                Ok((2.0 / (PI * x)).sqrt() * x.cos())
            }
        }
    }
}

/// `J_0` by Miller's backward recurrence below 25 and the Hankel expansion above.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x < 1e-8 {
        return 1.0 - 0.25 * x * x;
    }
    if x > 25.0 {
        return j0_hankel(x);
    }
    let mut m = (x as usize + 20 + (40.0 * x).sqrt() as usize) & !1;
    if m < 20 {
        m = 20;
    }
    let (mut jp1, mut j) = (0.0_f64, 1e-300_f64);
    let mut norm = 0.0;
    let mut j0 = 0.0;
    for n in (1..=m).rev() {
        let jm1 = 2.0 * n as f64 / x * j - jp1;
        jp1 = j;
        j = jm1;
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp1 *= 1e-250;
            norm *= 1e-250;
        }
        let k = n - 1;
        if k == 0 {
            j0 = j;
            norm += j;
        } else if k % 2 == 0 {
            norm += 2.0 * j;
        }
    }
    j0 / norm
}

fn j0_hankel(x: f64) -> f64 {
    // a_k = prod_{i=1..k} (2i-1)^2 / (k! 8^k)
    let mut p = 0.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut k = 0usize;
    loop {
        if k > 0 {
            let two_k_minus_1 = (2 * k - 1) as f64;
            term *= two_k_minus_1 * two_k_minus_1 / (k as f64 * 8.0 * x);
        }
        let even = (k / 2) % 2 == 0;
        if k % 2 == 0 {
            p += if even { term } else { -term };
        } else {
            q += if even { -term } else { term };
        }
        k += 1;
        if term.abs() < 1e-17 || k > 60 {
            break;
        }
    }
    let chi = x - PI / 4.0;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p31() -> Params {
        Params::new(3, 1.0, 2.0).unwrap()
    }

    #[test]
    fn log_gamma_known_values() {
        assert_eq!(log_gamma(1.0).unwrap().abs() < 1e-15, true);
        assert!((log_gamma(0.5).unwrap() - PI.sqrt().ln()).abs() < 1e-14);
        assert!((log_gamma(5.0).unwrap() - 24f64.ln()).abs() < 1e-13);
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-1.5).is_err());
    }

    #[test]
    fn log_gamma_recurrence() {
        let mut x = 0.1;
        while x < 100.0 {
            let lhs = log_gamma(x + 1.0).unwrap();
            let rhs = log_gamma(x).unwrap() + x.ln();
            assert!((lhs - rhs).abs() < 1e-12, "x = {x}: {lhs} vs {rhs}");
            x *= 1.07;
        }
    }

    #[test]
    fn log_gamma_reference_values() {
        // mpmath.loggamma at 50 digits
        let cases = [
            (1e-3, 6.907_178_885_383_853_5),
            (0.25, 1.288_022_524_698_077_5),
            (3.7, 1.428_072_326_665_387_9),
            (10.0, 12.801_827_480_081_469),
            (200.0, 857.933_669_825_857_4),
        ];
        for (x, want) in cases {
            let got = log_gamma(x).unwrap();
            assert!((got - want).abs() < 1e-13 * want.abs().max(1.0), "lnGamma({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn gamma_negative_reflection() {
        assert!((gamma(-0.5).unwrap() + 2.0 * PI.sqrt()).abs() < 1e-13);
        assert!((abs_gamma_neg(0.5) - 2.0 * PI.sqrt()).abs() < 1e-13);
        assert!(gamma(-2.0).is_err());
    }

    #[test]
    fn kappa_closed_forms() {
        let p = p31();
        assert_eq!(kappa(&p, 0.0).unwrap().value, 0.0);
        assert_eq!(kappa(&p, 2.0).unwrap().value, 0.0);
        assert!((kappa(&p, 1.0).unwrap().value - 2.0 / PI).abs() < 1e-14);
        assert!((kappa(&p, 0.5).unwrap().value - 0.5).abs() < 1e-14);
        assert!((kappa(&p, 1.5).unwrap().value - 0.5).abs() < 1e-14);
        assert!(kappa(&p, 2.1).is_err());
        assert!(kappa(&p, -0.1).is_err());
    }

    #[test]
    fn kappa_max_agrees_with_midpoint() {
        for (d, a) in [(3, 1.0), (3, 0.3), (2, 1.5), (1, 0.5), (3, 1.9)] {
            let p = Params::new(d, a, 2.0).unwrap();
            let km = kappa_max(&p).value;
            let mid = kappa(&p, p.gap() / 2.0).unwrap().value;
            assert!((km - mid).abs() < 1e-13 * (1.0 + km), "d={d} a={a}");
            for i in 0..=200 {
                let b = p.gap() * i as f64 / 200.0;
                assert!(kappa(&p, b).unwrap().value <= km + 1e-14);
            }
        }
    }

    #[test]
    fn nu_constant_values() {
        assert!((nu_constant(1, 0.5).unwrap() - 0.199_471_140_200_716_34).abs() < 1e-15);
        assert!((nu_constant(2, 1.0).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!(nu_constant(3, 1.0).unwrap() > 0.0);
        assert!(nu_constant(1, 1.0).is_err());
        assert!(nu_constant(3, 2.0).is_err());
    }

    #[test]
    fn subgoal_and_gap() {
        let p2 = p31();
        assert!((subgoal_constant(&p2) - kappa_max(&p2).value).abs() < 1e-15);
        assert!(lemma7_gap(&p2).abs() < 1e-14);
        let p4 = Params::new(3, 1.0, 4.0).unwrap();
        assert!((subgoal_constant(&p4) - 1.5 / PI).abs() < 1e-14);
        assert!((lemma7_gap(&p4) - (0.5 - 1.5 / PI)).abs() < 1e-14);
        let p43 = Params::new(3, 1.0, 4.0 / 3.0).unwrap();
        assert!((lemma7_gap(&p43) - lemma7_gap(&p4)).abs() < 1e-14);
        assert!(subgoal_constant(&Params::new(3, 1.0, 1.0 + 1e-9).unwrap()) < 1e-8);
    }

    #[test]
    fn local_limit_matches_classical() {
        // kappa_beta -> beta (d - 2 - beta) as alpha -> 2 (d = 3)
        let a = 2.0 - 1e-7;
        let k = kappa_value(3, a, 0.4).unwrap();
        assert!((k - kappa_local_limit(3, 0.4)).abs() < 1e-5);
    }

    #[test]
    fn bessel_closed_forms() {
        assert!(bessel_j(0.5, PI).unwrap().abs() < 1e-12);
        assert!(bessel_j(-0.5, PI / 2.0).unwrap().abs() < 1e-12);
        assert_eq!(bessel_j(0.0, 0.0).unwrap(), 1.0);
        assert!(bessel_j(1.0, 1.0).is_err());
        assert!(bessel_j(-0.5, 0.0).is_err());
    }

    #[test]
    fn bessel_j0_reference() {
        // mpmath.besselj(0, x)
        let cases = [
            (0.5, 0.938_469_807_240_812_9),
                        (7.3, 0.288_216_947_635_014_38),
            (24.9, 0.083_245_968_353_015_682),
            (25.1, 0.108_275_671_499_949_29),
            (100.0, 0.019_985_850_304_223_122),
        ];
        for (x, want) in cases {
            let got = bessel_j0(x);
            assert!((got - want).abs() < 1e-12, "J0({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn params_validation() {
        assert!(Params::new(3, 1.0, 1.0).is_err());
        assert!(Params::new(1, 1.0, 2.0).is_err());
        assert!(Params::new(4, 1.0, 2.0).is_err());
        let p = Params::new(3, 1.0, 3.0).unwrap();
        assert!((p.beta_max() - 1.0).abs() < 1e-15);
        assert!(p.with_beta(1.01).is_err());
        assert!(p.with_delta(1.01).is_err());
        assert!(p.with_beta(0.9).unwrap().with_mu(1.0).is_err());
        assert!(p.with_beta(0.9).unwrap().with_mu(1.01).is_ok());
    }
}
