//! The Sobolev-Bregman form `E_p`, weighted `L^p` norms, the Hardy identity
//! with its Bregman remainder, and the sharpness experiments.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::powers::{bregman_raw, signed_pow};
use crate::quadrature::{
    double_radial_integral, integrate_lenient, IntegrateOptions, Integral, PairIntegrand, QuadratureSpec,
};
use crate::kernels::apply_exact;
use crate::specfun::{kappa_max, kappa_optimal, kappa_value, sphere_area, subgoal_constant, Params};
use crate::testfun::{u_witness, RadialFunction, Tail};

/// A radial profile seen through a pointwise map, with its structural data.
pub struct Profile<'a> {
    pub eval: Box<dyn Fn(f64) -> f64 + Sync + 'a>,
    pub breakpoints: Vec<f64>,
    pub at_zero: Tail,
    pub at_infinity: Tail,
}

impl<'a> Profile<'a> {
    pub fn of(u: &'a RadialFunction) -> Self {
        Self {
            eval: Box::new(move |r| u.eval(r)),
            breakpoints: u.breakpoints(),
            at_zero: u.tail_at_zero(),
            at_infinity: u.tail_at_infinity(),
        }
    }

    /// `u^<a>`.
    pub fn signed_power(u: &'a RadialFunction, a: f64) -> Self {
        let scale = |t: Tail| match t {
            Tail::Power { exponent, exact } => Tail::Power { exponent: exponent * a, exact },
            Tail::Negligible => Tail::Negligible,
        };
        Self {
            eval: Box::new(move |r| signed_pow(u.eval(r), a)),
            breakpoints: u.breakpoints(),
            at_zero: scale(u.tail_at_zero()),
            at_infinity: scale(u.tail_at_infinity()),
        }
    }
}

fn degree(t: Tail, p: f64) -> (Option<f64>, bool) {
    match t {
        Tail::Power { exponent, exact } => (Some(p * exponent), exact),
        Tail::Negligible => (None, true),
    }
}

fn check_lp(v: &Profile, d: u32, p: f64) -> Result<()> {
    let df = d as f64;
    if let Tail::Power { exponent, .. } = v.at_infinity {
        if p * exponent + df >= 0.0 {
            return domain(format!("profile ~ r^{exponent} at infinity is not in L^{p}"));
        }
    }
    if let Tail::Power { exponent, .. } = v.at_zero {
        if p * exponent + df <= 0.0 {
            return domain(format!("profile ~ r^{exponent} at 0 is not in L^{p}"));
        }
    }
    Ok(())
}

fn pair<'a>(
    f: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    v: &Profile,
    p: f64,
) -> PairIntegrand<'a> {
    let (dz, ez) = degree(v.at_zero, p);
    let (di, ei) = degree(v.at_infinity, p);
    PairIntegrand {
        f,
        breakpoints: v.breakpoints.clone(),
        degree_at_zero: dz,
        degree_at_infinity: di,
        exact_tails: ez && ei,
    }
}

/// `E_p[v] = (1/2) int int (v(x) - v(y)) (v^<p-1>(x) - v^<p-1>(y)) nu(x, y) dy dx`.
pub fn energy_profile(v: &Profile, d: u32, alpha: f64, p: f64, spec: &QuadratureSpec) -> Result<Integral> {
    check_lp(v, d, p)?;
    let e = &v.eval;
    let f = |r: f64, s: f64| {
        let (a, b) = (e(r), e(s));
        0.5 * (a - b) * (signed_pow(a, p - 1.0) - signed_pow(b, p - 1.0))
    };
    double_radial_integral(&pair(&f, v, p), d, alpha, spec)
}

/// The Sobolev-Bregman form `E_p[u]`.
pub fn energy_p(u: &RadialFunction, params: &Params, spec: &QuadratureSpec) -> Result<Integral> {
    if u.is_zero() {
        return Ok(Integral::default());
    }
    energy_profile(&Profile::of(u), params.d, params.alpha, params.p, spec)
}

/// `|S^{d-1}| int_0^inf |v(r)|^p r^{d-1-sigma} dr`.
pub fn radial_power_integral(v: &Profile, d: u32, p: f64, sigma: f64, spec: &QuadratureSpec) -> Result<Integral> {
    let gap = d as f64 - sigma;
    if let Tail::Power { exponent, .. } = v.at_zero {
        if p * exponent + gap <= 0.0 {
            return domain(format!("integral of |u|^{p} |x|^-{sigma} diverges at 0"));
        }
    }
    if let Tail::Power { exponent, .. } = v.at_infinity {
        if p * exponent + gap >= 0.0 {
            return domain(format!("integral of |u|^{p} |x|^-{sigma} diverges at infinity"));
        }
    }
    let e = &v.eval;
    let g = |a: f64| (a * gap).exp() * e(a.exp()).abs().powf(p);
    let logs: Vec<f64> = v.breakpoints.iter().map(|b| b.ln()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let window = 0.5 * (spec.r_max / spec.r_min).ln();
    let (a0, a1) = (lo - 2.0 * window, hi + 2.0 * window);
    let opts = IntegrateOptions { breakpoints: logs, ..Default::default() };
    let mut res = integrate_lenient(g, a0, a1, &opts, &spec.with_rel_tol(spec.rel_tol * 0.1));
    if let Tail::Power { exponent, exact } = v.at_zero {
        let t = g(a0) / (p * exponent + gap);
        res.value += t;
        if !exact {
            res.error += t.abs();
        }
    }
    if let Tail::Power { exponent, exact } = v.at_infinity {
        let t = -g(a1) / (p * exponent + gap);
        res.value += t;
        if !exact {
            res.error += t.abs();
        }
    }
    Ok(res * sphere_area(d))
}

/// `int |u|^p |x|^{-alpha} dx`.
pub fn weighted_lp_norm(u: &RadialFunction, params: &Params, spec: &QuadratureSpec) -> Result<Integral> {
    if u.is_zero() {
        return Ok(Integral::default());
    }
    radial_power_integral(&Profile::of(u), params.d, params.p, params.alpha, spec)
}

/// `||u||_p^p`.
pub fn lp_norm_pow(u: &RadialFunction, d: u32, p: f64, spec: &QuadratureSpec) -> Result<Integral> {
    if u.is_zero() {
        return Ok(Integral::default());
    }
    radial_power_integral(&Profile::of(u), d, p, 0.0, spec)
}

/// Factor `(kappa_{(p-1) beta} + (p-1) kappa_beta) / p` of the Hardy identity.
pub fn identity_factor(params: &Params, beta: f64) -> Result<f64> {
    if !(beta >= 0.0 && beta <= params.beta_max() * (1.0 + 1e-14)) {
        return domain(format!("beta = {beta} outside [0, {}]", params.beta_max()));
    }
    let p = params.p;
    let k1 = kappa_value(params.d, params.alpha, ((p - 1.0) * beta).min(params.gap()))?;
    let k2 = kappa_value(params.d, params.alpha, beta)?;
    Ok((k1 + (p - 1.0) * k2) / p)
}

/// Constant and Bregman remainder terms of the Hardy identity with weight `h_beta`.
pub fn hardy_rhs(u: &RadialFunction, beta: f64, params: &Params, spec: &QuadratureSpec) -> Result<(Integral, Integral)> {
    let factor = identity_factor(params, beta)?;
    if u.is_zero() {
        return Ok((Integral::default(), Integral::default()));
    }
    let norm = weighted_lp_norm(u, params, spec)?;
    let p = params.p;
    let f = |r: f64, s: f64| {
        let (a, b) = (u.eval(r) * r.powf(beta), u.eval(s) * s.powf(beta));
        bregman_raw(p, a, b) * r.powf(-beta * (p - 1.0)) * s.powf(-beta) / p
    };
    let view = Profile::of(u);
    let rem = double_radial_integral(&pair(&f, &view, p), params.d, params.alpha, spec)?;
    Ok((norm * factor, rem))
}

/// Both sides of the Hardy identity and their agreement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormReport {
    pub energy: f64,
    pub weighted_norm: f64,
    pub constant_term: f64,
    pub remainder_term: f64,
    pub residual: f64,
    pub err_estimate: f64,
    /// Residual after one refinement of the quadrature tolerances.
    pub refined_residual: f64,
    pub pass: bool,
}

impl FormReport {
    pub fn relative_residual(&self) -> f64 {
        if self.energy == 0.0 {
            self.residual
        } else {
            self.residual / self.energy.abs()
        }
    }
}

fn identity_terms(u: &RadialFunction, beta: f64, params: &Params, spec: &QuadratureSpec) -> Result<(Integral, Integral, Integral, Integral)> {
    let e = energy_p(u, params, spec)?;
    let n = weighted_lp_norm(u, params, spec)?;
    let (c, r) = hardy_rhs(u, beta, params, spec)?;
    Ok((e, n, c, r))
}

/// Tolerance refinement factor used by [`verify_identity`].
pub const REFINE_FACTOR: f64 = 16.0;

/// Residual level below which a refined evaluation counts as converged.
pub const NOISE_FLOOR: f64 = 1e-9;

/// Evaluates both sides of the Hardy identity at `spec` and at a refined spec.
///
/// Passes when the relative residual is at most `1e-2`, within the combined
/// error estimate, and the refined residual has halved or reached the noise floor.
pub fn verify_identity(u: &RadialFunction, beta: f64, params: &Params, spec: &QuadratureSpec) -> Result<FormReport> {
    let (e, n, c, r) = identity_terms(u, beta, params, spec)?;
    let residual = (e.value - c.value - r.value).abs();
    let err = e.error + c.error + r.error;
    let fine = spec.refined(REFINE_FACTOR);
    let (e2, _, c2, r2) = identity_terms(u, beta, params, &fine)?;
    let refined = (e2.value - c2.value - r2.value).abs();
    let scale = e.value.abs().max(f64::MIN_POSITIVE);
    let halves = refined <= 0.5 * residual || refined <= NOISE_FLOOR * scale;
    let pass = if e.value == 0.0 && c.value == 0.0 && r.value == 0.0 {
        true
    } else {
        residual <= 1e-2 * scale && residual <= err.max(NOISE_FLOOR * scale) && halves
    };
    Ok(FormReport {
        energy: e.value,
        weighted_norm: n.value,
        constant_term: c.value,
        remainder_term: r.value,
        residual,
        err_estimate: err,
        refined_residual: refined,
        pass,
    })
}

/// `E^(t)(u, u^<p-1>) = (1/t) int u^<p-1> (u - P_t u) dx`, the symmetric double
/// integral against `p_t` rewritten through conservativeness of `P_t`.
///
/// `P_t u` is evaluated by direct quadrature at every outer node, so the only
/// cancellation is `u - P_t u = O(t)`, which costs `~1e-10 / t` in relative accuracy.
pub fn form_via_semigroup(u: &RadialFunction, params: &Params, t: f64, spec: &QuadratureSpec) -> Result<Integral> {
    if !(t > 0.0) {
        return domain("semigroup time must be positive");
    }
    if u.is_zero() {
        return Ok(Integral::default());
    }
    let (d, p) = (params.d, params.p);
    let g = |a: f64| {
        let r = a.exp();
        let ur = u.eval(r);
        if ur == 0.0 {
            return 0.0;
        }
        let pu = apply_exact(d, params.alpha, t, u, &[r], spec).map(|v| v[0]).unwrap_or(f64::NAN);
        r.powi(d as i32) * signed_pow(ur, p - 1.0) * (ur - pu)
    };
    let bps: Vec<f64> = u.breakpoints().into_iter().filter(|b| *b > 0.0).collect();
    let lo = bps.iter().copied().fold(1.0f64, f64::min);
    let hi = u.support_radius().unwrap_or(spec.r_max);
    let width = t.powf(1.0 / params.alpha);
    let (a0, a1) = ((spec.r_min * lo).min(1e-3 * width).ln(), hi.ln());
    let logs: Vec<f64> = bps.iter().map(|b| b.ln()).filter(|&b| b > a0 && b < a1).collect();
    let opts = IntegrateOptions { breakpoints: logs, ..Default::default() };
    let mut res = integrate_lenient(&g, a0, a1, &opts, &spec.with_rel_tol(spec.rel_tol.max(1e-7)));
    // below the first node the integrand is ~ r^{d + p e} for u ~ r^e
    let e = match u.tail_at_zero() {
        Tail::Power { exponent, .. } => exponent,
        Tail::Negligible => 0.0,
    };
    res.value += g(a0) / (d as f64 + p * e);
    if !res.value.is_finite() {
        return domain("semigroup form did not converge");
    }
    Ok(res * (sphere_area(d) / t))
}

/// Exponents of the two leading terms of `E_p - E^(t)` in powers of `t`.
///
/// Smooth and kinked profiles expand in integer powers; a power `r^e` at the
/// origin adds `t^((d - alpha + p e) / alpha)`.
pub fn semigroup_exponents(u: &RadialFunction, params: &Params) -> [f64; 2] {
    if let Tail::Power { exponent, .. } = u.tail_at_zero() {
        if exponent < 0.0 {
            let g = (params.gap() + params.p * exponent) / params.alpha;
            if (g - 1.0).abs() > 0.05 && g < 2.0 {
                return if g < 1.0 { [g, 1.0] } else { [1.0, g] };
            }
        }
    }
    [1.0, 2.0]
}

/// Extrapolation of [`form_via_semigroup`] from `t0, t0/2, t0/4` to `t = 0`,
/// eliminating the two leading terms given by [`semigroup_exponents`].
///
/// The error estimate is the distance to the one-term elimination on the two
/// smallest times, plus the amplified quadrature errors.
pub fn semigroup_limit(u: &RadialFunction, params: &Params, t0: f64, spec: &QuadratureSpec) -> Result<(Integral, [f64; 3])> {
    let mut e = [0.0; 3];
    let mut qerr = 0.0;
    for (k, slot) in e.iter_mut().enumerate() {
        let v = form_via_semigroup(u, params, t0 / (1u32 << k) as f64, spec)?;
        *slot = v.value;
        qerr += v.error;
    }
    let [g1, g2] = semigroup_exponents(u, params);
    // E(t) = L + a t^g1 + b t^g2 at t = 4h, 2h, h with h = 1
    let (f1, f2) = (2f64.powf(g1), 2f64.powf(g2));
    let one = |x: f64, y: f64, f: f64| (f * y - x) / (f - 1.0);
    let (s1, s2) = (one(e[0], e[1], f1), one(e[1], e[2], f1));
    // eliminating t^g1 leaves the t^g2 coefficient scaled by (f2 - f1) / (f1 - 1)
    let lim = one(s1, s2, f2);
    let amp = (f1 / (f1 - 1.0)) * (f2 / (f2 - 1.0)) * 4.0;
    Ok((Integral::new(lim, (lim - s2).abs() + amp * qerr), e))
}

/// One row of the sharpness scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SharpnessRow {
    pub beta: f64,
    pub big_r: f64,
    pub mu: f64,
    pub energy: f64,
    /// `kappa_beta * int |u_R|^p |x|^{-alpha}`.
    pub bound: f64,
    pub ratio: f64,
    pub err: f64,
    /// Ground-state cross terms over `B1 x B2`, `B3 x B3`, `B1 x B3`, `B2 x B3`.
    pub i3: f64,
    pub i4: f64,
    pub i5: f64,
    pub i6: f64,
}

impl SharpnessRow {
    /// The row beats the Hardy inequality with constant `kappa_beta`.
    pub fn beats(&self) -> bool {
        self.energy + self.err < self.bound
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Zone {
    Inner,
    Middle,
    Outer,
}

/// Ground-state remainder integrand of the three-power profile restricted
/// to a pair of zones.
fn zone_integral(
    u: &RadialFunction,
    beta: f64,
    big_r: f64,
    zones: (Zone, Zone),
    params: &Params,
    mu: f64,
    spec: &QuadratureSpec,
) -> Result<Integral> {
    let p = params.p;
    let zone = |r: f64| {
        if r < 1.0 {
            Zone::Inner
        } else if r < big_r {
            Zone::Middle
        } else {
            Zone::Outer
        }
    };
    let f = |r: f64, s: f64| {
        if (zone(r), zone(s)) != zones {
            return 0.0;
        }
        let (a, b) = (u.eval(r), u.eval(s));
        let (hr, hs) = (r.powf(-beta), s.powf(-beta));
        (a / hr - b / hs) * (signed_pow(a, p - 1.0) / hr - signed_pow(b, p - 1.0) / hs) * hr * hs
    };
    let integrand = PairIntegrand {
        f: &f,
        breakpoints: vec![1.0, big_r],
        degree_at_zero: None,
        degree_at_infinity: if zones == (Zone::Outer, Zone::Outer) { Some(-p * mu) } else { None },
        exact_tails: true,
    };
    double_radial_integral(&integrand, params.d, params.alpha, spec)
}

/// Evaluates `E_p[u_R]` against `kappa_beta * int |u_R|^p |x|^{-alpha}` over a
/// grid of `(beta, R)`.
pub fn sharpness_scan(params: &Params, betas: &[f64], rs: &[f64], spec: &QuadratureSpec) -> Result<Vec<SharpnessRow>> {
    if params.p <= 2.0 {
        return domain("sharpness_scan needs p > 2");
    }
    let mut rows = Vec::new();
    for &beta in betas {
        let mu = crate::testfun::default_mu(params, beta);
        let k = kappa_value(params.d, params.alpha, beta)?;
        for &big_r in rs {
            let u = u_witness(params, beta, mu, big_r)?;
            let e = energy_p(&u, params, spec)?;
            let n = weighted_lp_norm(&u, params, spec)?;
            let zi = |z: (Zone, Zone)| zone_integral(&u, beta, big_r, z, params, mu, spec);
            let i3 = zi((Zone::Inner, Zone::Middle))?;
            let i4 = zi((Zone::Outer, Zone::Outer))?;
            let i5 = zi((Zone::Inner, Zone::Outer))?;
            let i6 = zi((Zone::Middle, Zone::Outer))?;
            let bound = k * n.value;
            rows.push(SharpnessRow {
                beta,
                big_r,
                mu,
                energy: e.value,
                bound,
                ratio: e.value / bound,
                err: e.error + k * n.error,
                i3: i3.value,
                i4: i4.value,
                i5: i5.value,
                i6: i6.value,
            });
        }
    }
    Ok(rows)
}

/// `(1/p, kappa_{(d-alpha)/p}, 4(p-1)/p^2 kappa_{(d-alpha)/2})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Figure1Row {
    pub inv_p: f64,
    pub kappa_opt: f64,
    pub kappa_subgoal: f64,
}

pub fn figure1_data(d: u32, alpha: f64, p_grid: &[f64]) -> Result<Vec<Figure1Row>> {
    let mut rows = Vec::with_capacity(p_grid.len());
    for &p in p_grid {
        let params = Params::new(d, alpha, p)?;
        rows.push(Figure1Row {
            inv_p: 1.0 / p,
            kappa_opt: kappa_optimal(&params),
            kappa_subgoal: subgoal_constant(&params),
        });
    }
    Ok(rows)
}

/// `n` equispaced values of `1/p` strictly inside `(0, 1)`, converted to `p`.
pub fn inverse_p_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| 1.0 / (i as f64 / (n + 1) as f64)).collect()
}

/// `kappa_max` for the configuration, used as the default witness target.
pub fn default_target(params: &Params) -> f64 {
    kappa_max(params).value
}
