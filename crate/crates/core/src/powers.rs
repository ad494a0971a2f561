//! Signed powers, the Bregman divergence `F_p` and the elementary two-sided
//! inequalities around it.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// `F_p(a, b)` together with its arguments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BregmanValue {
    pub p: f64,
    pub a: f64,
    pub b: f64,
    pub value: f64,
}

/// `|a|^k sgn a`, with `0^<k> = 0` for every `k`.
pub fn signed_pow(a: f64, k: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a.abs().powf(k).copysign(a)
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return domain(format!("p must lie in (1, inf), got {p}"));
    }
    Ok(())
}

/// Raw `F_p(a, b)` without argument checking.
pub(crate) fn bregman_raw(p: f64, a: f64, b: f64) -> f64 {
    let diff = b - a;
    let scale = a.abs() + b.abs();
    if diff.abs() <= 1e-8 * scale {
        let xi = 0.5 * (a + b);
        if xi == 0.0 {
            return 0.0;
        }
        let second = 0.5 * p * (p - 1.0) * xi.abs().powf(p - 2.0);
        let third = p * (p - 1.0) * (p - 2.0) * signed_pow(xi, p - 3.0) / 12.0;
        return (second - third * diff) * diff * diff;
    }
    let v = b.abs().powf(p) - a.abs().powf(p) - p * signed_pow(a, p - 1.0) * diff;
    v.max(0.0)
}

/// Bregman divergence `F_p(a,b) = |b|^p - |a|^p - p a^<p-1> (b - a)`.
pub fn bregman(p: f64, a: f64, b: f64) -> Result<BregmanValue> {
    check_p(p)?;
    Ok(BregmanValue { p, a, b, value: bregman_raw(p, a, b) })
}

pub(crate) fn symmetrized_raw(p: f64, a: f64, b: f64) -> f64 {
    0.5 * p * (b - a) * (signed_pow(b, p - 1.0) - signed_pow(a, p - 1.0))
}

/// `(p/2)(b - a)(b^<p-1> - a^<p-1>)`, the average of `F_p(a,b)` and `F_p(b,a)`.
pub fn symmetrized_bregman(p: f64, a: f64, b: f64) -> Result<f64> {
    check_p(p)?;
    Ok(symmetrized_raw(p, a, b))
}

/// Checks `4(p-1)/p^2 (b^<p/2> - a^<p/2>)^2 <= (b-a)(b^<p-1> - a^<p-1>) <= 2 (b^<p/2> - a^<p/2>)^2`.
pub fn sandwich_check(p: f64, a: f64, b: f64) -> (bool, bool) {
    let half = signed_pow(b, p / 2.0) - signed_pow(a, p / 2.0);
    let sq = half * half;
    let middle = (b - a) * (signed_pow(b, p - 1.0) - signed_pow(a, p - 1.0));
    let slack = 1e-12 * (a.abs() + b.abs()).powf(p);
    let lower = 4.0 * (p - 1.0) / (p * p) * sq;
    (lower <= middle + slack, middle <= 2.0 * sq + slack)
}

/// `F_p(a,b) / ((b-a)^2 (|a|+|b|)^{p-2})`.
pub fn taylor_remainder_ratio(p: f64, a: f64, b: f64) -> Result<f64> {
    check_p(p)?;
    if a == b {
        return domain("taylor_remainder_ratio is 0/0 on the diagonal");
    }
    let diff = b - a;
    Ok(bregman_raw(p, a, b) / (diff * diff * (a.abs() + b.abs()).powf(p - 2.0)))
}

/// `F_p(a,b) / (|b-a|^lambda (|a|+|b|)^{p-lambda})`.
pub fn comparison_ratio(p: f64, lambda: f64, a: f64, b: f64) -> Result<f64> {
    check_p(p)?;
    if a == b {
        return domain("comparison_ratio is undefined on the diagonal");
    }
    Ok(bregman_raw(p, a, b) / ((b - a).abs().powf(lambda) * (a.abs() + b.abs()).powf(p - lambda)))
}
