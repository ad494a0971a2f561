//! Radial test functions: power weights, the three-power sharpness profile and
//! the truncation/mollification pipeline producing compactly supported smooth
//! witnesses.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::quadrature::{integrate_lenient, IntegrateOptions, QuadratureSpec};
use crate::specfun::{check_stable, Params};

/// Representation of one piece of a radial profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Repr {
    /// `coef * r^exponent + offset`.
    Power {
        coef: f64,
        exponent: f64,
        offset: f64,
    },
    /// Monotone cubic Hermite interpolation in `ln r`.
    Samples {
        nodes: Vec<f64>,
        values: Vec<f64>,
        slopes: Vec<f64>,
    },
    /// `amplitude * exp(-(r/scale)^2)`.
    Gaussian {
        amplitude: f64,
        scale: f64,
    },
    Zero,
}

impl Repr {
    pub fn power(coef: f64, exponent: f64) -> Self {
        Repr::Power {
            coef,
            exponent,
            offset: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Repr::Power {
            coef: c,
            exponent: 0.0,
            offset: 0.0,
        }
    }

    /// Samples given at radii `nodes`; slopes are computed with the
    /// Fritsch-Carlson limiter so monotone data stay monotone.
    pub fn samples(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != values.len() {
            return domain("samples need at least two nodes and matching values");
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes[0] <= 0.0 {
            return domain("sample nodes must be positive and increasing");
        }
        let x: Vec<f64> = nodes.iter().map(|r| r.ln()).collect();
        let slopes = pchip_slopes(&x, &values);
        Ok(Repr::Samples {
            nodes: x,
            values,
            slopes,
        })
    }

    fn eval(&self, r: f64) -> f64 {
        match self {
            Repr::Power {
                coef,
                exponent,
                offset,
            } => {
                if *exponent == 0.0 {
                    coef + offset
                } else {
                    coef * r.powf(*exponent) + offset
                }
            }
            Repr::Samples {
                nodes,
                values,
                slopes,
            } => hermite(nodes, values, slopes, r.ln()),
            Repr::Gaussian { amplitude, scale } => {
                let z = r / scale;
                amplitude * (-z * z).exp()
            }
            Repr::Zero => 0.0,
        }
    }
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut m = vec![0.0; n];
    if n == 2 {
        m[0] = del[0];
        m[1] = del[0];
        return m;
    }
    for i in 1..n - 1 {
        if del[i - 1] * del[i] > 0.0 {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s * d0 <= 0.0 {
            0.0
        } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    m[0] = end(h[0], h[1], del[0], del[1]);
    m[n - 1] = end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    m
}

fn hermite(x: &[f64], y: &[f64], m: &[f64], t: f64) -> f64 {
    let n = x.len();
    if t <= x[0] {
        return y[0];
    }
    if t >= x[n - 1] {
        return y[n - 1];
    }
    let i = match x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
        Ok(i) => return y[i],
        Err(i) => i - 1,
    };
    let h = x[i + 1] - x[i];
    let s = (t - x[i]) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * y[i] + h10 * h * m[i] + h01 * y[i + 1] + h11 * h * m[i + 1]
}

/// Behavior of a profile near `0` or near `infinity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tail {
    /// `u ~ c r^exponent`; `exact` when the piece is a pure power.
    Power { exponent: f64, exact: bool },
    /// Zero, smooth and flat, or decaying faster than any power.
    Negligible,
}

/// Radial function `u(x) = U(|x|)` given piecewise on `(0, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialFunction {
    /// Interior piece boundaries, strictly increasing.
    pub breaks: Vec<f64>,
    /// `breaks.len() + 1` pieces.
    pub pieces: Vec<Repr>,
}

impl RadialFunction {
    pub fn new(breaks: Vec<f64>, pieces: Vec<Repr>) -> Result<Self> {
        if pieces.len() != breaks.len() + 1 {
            return domain("need exactly one more piece than breaks");
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) || breaks.first().is_some_and(|&b| b <= 0.0) {
            return domain("breaks must be positive and increasing");
        }
        if matches!(pieces[0], Repr::Samples { .. }) {
            return domain("the innermost piece cannot be sampled data");
        }
        if matches!(pieces.last(), Some(Repr::Samples { .. })) {
            return domain("the outermost piece cannot be sampled data");
        }
        Ok(Self { breaks, pieces })
    }

    pub fn single(repr: Repr) -> Self {
        Self {
            breaks: vec![],
            pieces: vec![repr],
        }
    }

    pub fn zero() -> Self {
        Self::single(Repr::Zero)
    }

    /// Constant `c` on the closed ball of radius `radius`, zero outside.
    pub fn indicator(radius: f64, c: f64) -> Self {
        Self {
            breaks: vec![radius],
            pieces: vec![Repr::constant(c), Repr::Zero],
        }
    }

    pub fn gaussian(amplitude: f64, scale: f64) -> Self {
        Self::single(Repr::Gaussian { amplitude, scale })
    }

    fn piece_index(&self, r: f64) -> usize {
        self.breaks.partition_point(|&b| b < r)
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.pieces[self.piece_index(r)].eval(r)
    }

    /// Radii where the profile or its derivative may jump, never empty.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.breaks.clone();
        for p in &self.pieces {
            if let Repr::Gaussian { scale, .. } = p {
                b.push(*scale);
            }
        }
        if b.is_empty() {
            b.push(1.0);
        }
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.dedup();
        b
    }

    pub fn tail_at_zero(&self) -> Tail {
        match &self.pieces[0] {
            Repr::Power {
                coef,
                exponent,
                offset,
            } => {
                if *coef == 0.0 || *exponent == 0.0 {
                    Tail::Power {
                        exponent: 0.0,
                        exact: true,
                    }
                } else if *exponent > 0.0 {
                    if *offset == 0.0 {
                        Tail::Power {
                            exponent: *exponent,
                            exact: true,
                        }
                    } else {
                        Tail::Power {
                            exponent: 0.0,
                            exact: false,
                        }
                    }
                } else {
                    Tail::Power {
                        exponent: *exponent,
                        exact: *offset == 0.0,
                    }
                }
            }
            Repr::Gaussian { .. } => Tail::Power {
                exponent: 0.0,
                exact: false,
            },
            _ => Tail::Negligible,
        }
    }

    pub fn tail_at_infinity(&self) -> Tail {
        match self.pieces.last().unwrap() {
            Repr::Power {
                coef,
                exponent,
                offset,
            } => {
                if *coef == 0.0 && *offset == 0.0 {
                    Tail::Negligible
                } else if *offset != 0.0 || *exponent >= 0.0 {
                    Tail::Power {
                        exponent: 0.0,
                        exact: true,
                    }
                } else {
                    Tail::Power {
                        exponent: *exponent,
                        exact: true,
                    }
                }
            }
            _ => Tail::Negligible,
        }
    }

    /// Radius beyond which the function vanishes identically.
    pub fn support_radius(&self) -> Option<f64> {
        match self.pieces.last() {
            Some(Repr::Zero) => {
                let mut k = self.pieces.len() - 1;
                while k > 0 && self.pieces[k - 1] == Repr::Zero {
                    k -= 1;
                }
                if k == 0 {
                    Some(0.0)
                } else {
                    Some(self.breaks[k - 1])
                }
            }
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.pieces.iter().all(|p| match p {
            Repr::Zero => true,
            Repr::Power { coef, offset, .. } => *coef == 0.0 && *offset == 0.0,
            Repr::Samples { values, .. } => values.iter().all(|v| *v == 0.0),
            Repr::Gaussian { amplitude, .. } => *amplitude == 0.0,
        })
    }

    /// `c * u`.
    pub fn scaled(&self, c: f64) -> Self {
        let pieces = self
            .pieces
            .iter()
            .map(|p| match p {
                Repr::Power {
                    coef,
                    exponent,
                    offset,
                } => Repr::Power {
                    coef: c * coef,
                    exponent: *exponent,
                    offset: c * offset,
                },
                Repr::Samples {
                    nodes,
                    values,
                    slopes,
                } => Repr::Samples {
                    nodes: nodes.clone(),
                    values: values.iter().map(|v| c * v).collect(),
                    slopes: slopes.iter().map(|v| c * v).collect(),
                },
                Repr::Gaussian { amplitude, scale } => Repr::Gaussian {
                    amplitude: c * amplitude,
                    scale: *scale,
                },
                Repr::Zero => Repr::Zero,
            })
            .collect();
        Self {
            breaks: self.breaks.clone(),
            pieces,
        }
    }

    /// `r -> u(l r)`.
    pub fn dilated(&self, l: f64) -> Self {
        let pieces = self
            .pieces
            .iter()
            .map(|p| match p {
                Repr::Power {
                    coef,
                    exponent,
                    offset,
                } => Repr::Power {
                    coef: coef * l.powf(*exponent),
                    exponent: *exponent,
                    offset: *offset,
                },
                Repr::Samples {
                    nodes,
                    values,
                    slopes,
                } => Repr::Samples {
                    nodes: nodes.iter().map(|x| x - l.ln()).collect(),
                    values: values.clone(),
                    slopes: slopes.clone(),
                },
                Repr::Gaussian { amplitude, scale } => Repr::Gaussian {
                    amplitude: *amplitude,
                    scale: scale / l,
                },
                Repr::Zero => Repr::Zero,
            })
            .collect();
        Self {
            breaks: self.breaks.iter().map(|b| b / l).collect(),
            pieces,
        }
    }

    /// `u^a` when every piece is a pure power or zero; `None` otherwise.
    pub fn powf(&self, a: f64) -> Option<Self> {
        let mut pieces = Vec::with_capacity(self.pieces.len());
        for p in &self.pieces {
            pieces.push(match p {
                Repr::Power {
                    coef,
                    exponent,
                    offset,
                } if *offset == 0.0 && *coef > 0.0 => Repr::Power {
                    coef: coef.powf(a),
                    exponent: exponent * a,
                    offset: 0.0,
                },
                Repr::Zero if a > 0.0 => Repr::Zero,
                _ => return None,
            });
        }
        Some(Self {
            breaks: self.breaks.clone(),
            pieces,
        })
    }

    /// Checks that the profile is nonnegative and nonincreasing.
    pub fn check_nonincreasing(&self) -> Result<()> {
        let mut prev = f64::INFINITY;
        for (k, p) in self.pieces.iter().enumerate() {
            let lo = if k == 0 { 0.0 } else { self.breaks[k - 1] };
            let ok = match p {
                Repr::Power { coef, exponent, .. } => {
                    *exponent == 0.0 || *coef == 0.0 || (*coef > 0.0 && *exponent < 0.0)
                }
                Repr::Samples { values, .. } => {
                    values.windows(2).all(|w| w[1] <= w[0] + 1e-15 * w[0].abs())
                }
                Repr::Gaussian { amplitude, .. } => *amplitude >= 0.0,
                Repr::Zero => true,
            };
            if !ok {
                return domain(format!("piece {k} is not nonincreasing"));
            }
            let start = if lo == 0.0 {
                self.pieces[k].eval(f64::MIN_POSITIVE.sqrt())
            } else {
                p.eval(lo)
            };
            if start > prev * (1.0 + 1e-12) + 1e-300 {
                return domain(format!("profile increases across r = {lo}"));
            }
            let end = if k < self.breaks.len() {
                p.eval(self.breaks[k])
            } else {
                0.0
            };
            if end < -1e-12 * start.abs().min(prev) - 1e-300 {
                return domain("profile takes negative values");
            }
            prev = end.max(0.0);
            if k == self.breaks.len() && !matches!(p, Repr::Zero) {
                // outermost piece must decay
                if p.eval(1e300f64.sqrt()) < 0.0 {
                    return domain("profile takes negative values");
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: RadialFunction = serde_json::from_str(s)?;
        RadialFunction::new(f.breaks.clone(), f.pieces.clone())?;
        Ok(f)
    }
}

/// `h_beta(x) = |x|^{-beta}`.
pub fn h_beta(beta: f64) -> RadialFunction {
    RadialFunction::single(Repr::power(1.0, -beta))
}

/// `min(|x|^{-beta/(p-1)}, |x|^{-beta})`.
pub fn u_informal(beta: f64, p: f64) -> Result<RadialFunction> {
    if !(beta > 0.0 && p > 2.0) {
        return domain("u_informal needs beta > 0 and p > 2");
    }
    RadialFunction::new(
        vec![1.0],
        vec![Repr::power(1.0, -beta / (p - 1.0)), Repr::power(1.0, -beta)],
    )
}

/// `min(|x|^{-beta/(p-1)}, |x|^{-beta}, R^{mu-beta} |x|^{-mu})`.
pub fn u_witness(params: &Params, beta: f64, mu: f64, big_r: f64) -> Result<RadialFunction> {
    let p = params.p;
    if p <= 2.0 {
        return domain("the witness profile needs p > 2");
    }
    let gap = params.gap();
    if !(beta > gap / p && beta < (p - 1.0) * gap / p) {
        return domain(format!(
            "beta = {beta} outside ({}, {})",
            gap / p,
            (p - 1.0) * gap / p
        ));
    }
    if !(mu > beta.max(params.d as f64 / p)) {
        return domain(format!("mu = {mu} must exceed max(beta, d/p)"));
    }
    if !(big_r > 1.0) {
        return domain("R must exceed 1");
    }
    RadialFunction::new(
        vec![1.0, big_r],
        vec![
            Repr::power(1.0, -beta / (p - 1.0)),
            Repr::power(1.0, -beta),
            Repr::power(big_r.powf(mu - beta), -mu),
        ],
    )
}

/// Samples `f` on `[r0, r1]`, `per_decade` log-spaced nodes plus `extra` radii.
fn sample_profile(
    f: &dyn Fn(f64) -> f64,
    r0: f64,
    r1: f64,
    per_decade: usize,
    extra: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = (((r1 / r0).log10() * per_decade as f64).ceil() as usize).max(2);
    let step = (r1 / r0).ln() / n as f64;
    let mut nodes: Vec<f64> = (0..=n).map(|i| r0 * (step * i as f64).exp()).collect();
    nodes[n] = r1;
    nodes.extend(extra.iter().copied().filter(|&x| x > r0 && x < r1));
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nodes.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    let values = nodes.iter().map(|&r| f(r)).collect();
    (nodes, values)
}

/// `(u - eps) v 0` for nonnegative nonincreasing `u`.
pub fn truncate(u: &RadialFunction, eps: f64) -> Result<RadialFunction> {
    if eps < 0.0 {
        return domain("eps must be nonnegative");
    }
    u.check_nonincreasing()?;
    if eps == 0.0 {
        return Ok(u.clone());
    }
    // a Gaussian has no closed truncation; resample first
    let u = if u.pieces.iter().any(|p| matches!(p, Repr::Gaussian { .. })) {
        resample_gaussians(u)?
    } else {
        u.clone()
    };
    let mut breaks = Vec::new();
    let mut pieces = Vec::new();
    for (k, p) in u.pieces.iter().enumerate() {
        let lo = if k == 0 { 0.0 } else { u.breaks[k - 1] };
        let hi = u.breaks.get(k).copied().unwrap_or(f64::INFINITY);
        let at_lo = if k == 0 {
            p.eval(1e-300f64.max(hi.min(1.0) * 1e-30))
        } else {
            p.eval(lo)
        };
        if k == 0 && at_lo <= eps {
            return Ok(RadialFunction::zero());
        }
        if k > 0 && at_lo <= eps {
            break;
        }
        let at_hi = if hi.is_finite() {
            p.eval(hi)
        } else {
            limit_at_infinity(p)
        };
        let cross = if at_hi > eps {
            None
        } else {
            Some(crossing(p, lo, hi, eps))
        };
        let shifted = match p {
            Repr::Power {
                coef,
                exponent,
                offset,
            } => {
                if *exponent == 0.0 {
                    Repr::constant(coef + offset - eps)
                } else {
                    Repr::Power {
                        coef: *coef,
                        exponent: *exponent,
                        offset: offset - eps,
                    }
                }
            }
            Repr::Samples { nodes, values, .. } => {
                let r: Vec<f64> = nodes.iter().map(|x| x.exp()).collect();
                let v: Vec<f64> = values.iter().map(|v| (v - eps).max(0.0)).collect();
                Repr::samples(r, v)?
            }
            Repr::Zero => Repr::Zero,
            Repr::Gaussian { .. } => unreachable!(),
        };
        let is_first = pieces.is_empty();
        if is_first && matches!(shifted, Repr::Samples { .. }) {
            return domain("innermost piece cannot be sampled data");
        }
        pieces.push(shifted);
        match cross {
            Some(rc) => {
                breaks.push(rc);
                break;
            }
            None => {
                if hi.is_finite() {
                    breaks.push(hi);
                }
            }
        }
    }
    if pieces.len() == breaks.len() {
        pieces.push(Repr::Zero);
    }
    if pieces.is_empty() {
        return Ok(RadialFunction::zero());
    }
    if breaks.is_empty() {
        // sup u <= eps
        return Ok(RadialFunction::zero());
    }
    RadialFunction::new(breaks, pieces)
}

fn limit_at_infinity(p: &Repr) -> f64 {
    match p {
        Repr::Power {
            coef,
            exponent,
            offset,
        } => {
            if *exponent < 0.0 {
                *offset
            } else if *exponent == 0.0 {
                coef + offset
            } else {
                f64::INFINITY * coef.signum()
            }
        }
        Repr::Samples { values, .. } => *values.last().unwrap(),
        _ => 0.0,
    }
}

fn crossing(p: &Repr, lo: f64, hi: f64, eps: f64) -> f64 {
    if let Repr::Power {
        coef,
        exponent,
        offset,
    } = p
    {
        if *exponent != 0.0 && *coef > 0.0 && eps > *offset {
            let r = ((eps - offset) / coef).powf(1.0 / exponent);
            return r.clamp(lo, hi);
        }
    }
    // bisection in log r on a monotone piece
    let mut a = if lo > 0.0 {
        lo
    } else {
        1e-300f64.max(hi * 1e-30)
    };
    let mut b = if hi.is_finite() {
        hi
    } else {
        a.max(1.0) * 1e30
    };
    if p.eval(a) <= eps {
        return a;
    }
    for _ in 0..200 {
        let m = (a * b).sqrt();
        if p.eval(m) > eps {
            a = m;
        } else {
            b = m;
        }
        if b / a - 1.0 < 1e-15 {
            break;
        }
    }
    b
}

fn resample_gaussians(u: &RadialFunction) -> Result<RadialFunction> {
    let mut breaks = Vec::new();
    let mut pieces = Vec::new();
    for (k, p) in u.pieces.iter().enumerate() {
        let lo = if k == 0 { 0.0 } else { u.breaks[k - 1] };
        let hi = u.breaks.get(k).copied();
        if let Repr::Gaussian { amplitude, scale } = p {
            let r0 = if lo > 0.0 { lo } else { 1e-4 * scale };
            let r1 = hi.unwrap_or(8.0 * scale);
            if lo == 0.0 {
                pieces.push(Repr::constant(*amplitude));
                breaks.push(r0);
            }
            let (n, v) = sample_profile(&|r| p.eval(r), r0, r1, 256, &[]);
            pieces.push(Repr::samples(n, v)?);
            breaks.push(r1);
            if hi.is_none() {
                pieces.push(Repr::Zero);
            }
        } else {
            pieces.push(p.clone());
            if let Some(h) = hi {
                breaks.push(h);
            }
        }
    }
    RadialFunction::new(breaks, pieces)
}

/// Normalizing constant of `exp(-1/(1-|x|^2))` on the unit ball of `R^d`.
fn bump_normalizer(d: u32) -> f64 {
    static CACHE: OnceLock<[f64; 3]> = OnceLock::new();
    let c = CACHE.get_or_init(|| {
        let spec = QuadratureSpec {
            rel_tol: 1e-13,
            ..Default::default()
        };
        let mut out = [0.0; 3];
        for (i, dd) in [1u32, 2, 3].iter().enumerate() {
            let area = crate::specfun::sphere_area(*dd);
            let m = integrate_lenient(
                |r: f64| bump_raw(r) * r.powi(*dd as i32 - 1),
                0.0,
                1.0,
                &IntegrateOptions::default(),
                &spec,
            )
            .value;
            out[i] = 1.0 / (area * m);
        }
        out
    });
    c[(d - 1) as usize]
}

fn bump_raw(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r * r)).exp()
    }
}

/// The mollifier `phi_eta(x) = eta^{-d} phi(x/eta)` as a radial profile value.
pub fn mollifier(d: u32, eta: f64, r: f64) -> f64 {
    bump_normalizer(d) * bump_raw(r / eta) / eta.powi(d as i32)
}

/// Options for [`mollify_power`].
#[derive(Debug, Clone, Copy)]
pub struct MollifyOptions {
    pub per_decade: usize,
    pub rel_tol: f64,
}

impl Default for MollifyOptions {
    fn default() -> Self {
        Self {
            per_decade: 128,
            rel_tol: 1e-10,
        }
    }
}

/// `u_eta = (u^{p/2} * phi_eta)^{2/p}` on `R^d`, returned as sampled data.
pub fn mollify_power(u: &RadialFunction, d: u32, p: f64, eta: f64) -> Result<RadialFunction> {
    mollify_power_with(u, d, p, eta, &MollifyOptions::default())
}

pub fn mollify_power_with(
    u: &RadialFunction,
    d: u32,
    p: f64,
    eta: f64,
    opts: &MollifyOptions,
) -> Result<RadialFunction> {
    if !(1..=3).contains(&d) {
        return domain("dimension must be 1, 2 or 3");
    }
    if !(eta > 0.0) || !(p > 1.0) {
        return domain("mollify_power needs eta > 0 and p > 1");
    }
    u.check_nonincreasing()?;
    let Some(support) = u.support_radius() else {
        return domain("mollify_power needs a compactly supported function");
    };
    if support == 0.0 || u.is_zero() {
        return Ok(RadialFunction::zero());
    }
    let half = p / 2.0;
    let g = |r: f64| u.eval(r).max(0.0).powf(half);
    let lead = match u.tail_at_zero() {
        Tail::Power { exponent, .. } => exponent * half,
        Tail::Negligible => 0.0,
    };
    let spec = QuadratureSpec {
        rel_tol: opts.rel_tol,
        abs_tol: 1e-300,
        ..Default::default()
    };
    let bps: Vec<f64> = u.breaks.clone();

    let conv: Box<dyn Fn(f64) -> f64 + Sync> = match d {
        3 => {
            let prim = Primitive::build(&g, lead, &bps, support, eta * 1e-9, &spec);
            Box::new(move |r: f64| {
                // v(r) = (2 pi / r) int_0^eta phi(rho) rho [G(r+rho) - G(|r-rho|)] drho
                let f = |rho: f64| {
                    mollifier(3, eta, rho) * rho * (prim.eval(r + rho) - prim.eval((r - rho).abs()))
                };
                let o = IntegrateOptions {
                    breakpoints: vec![r],
                    ..Default::default()
                };
                2.0 * PI / r * integrate_lenient(f, 0.0, eta, &o, &spec).value
            })
        }
        1 => {
            let bps = bps.clone();
            Box::new(move |r: f64| {
                let f = |rho: f64| mollifier(1, eta, rho) * (g((r - rho).abs()) + g(r + rho));
                let mut b: Vec<f64> = vec![r];
                for &k in &bps {
                    b.push((k - r).abs());
                    b.push(k + r);
                }
                let sing = if lead < 0.0 { Some(lead) } else { None };
                if r < eta {
                    let o1 = IntegrateOptions {
                        breakpoints: b.clone(),
                        right_exponent: sing,
                        ..Default::default()
                    };
                    let o2 = IntegrateOptions {
                        breakpoints: b,
                        left_exponent: sing,
                        ..Default::default()
                    };
                    integrate_lenient(f, 0.0, r, &o1, &spec).value
                        + integrate_lenient(f, r, eta, &o2, &spec).value
                } else {
                    let o = IntegrateOptions {
                        breakpoints: b,
                        ..Default::default()
                    };
                    integrate_lenient(f, 0.0, eta, &o, &spec).value
                }
            })
        }
        _ => Box::new(move |r: f64| {
            let inner = |rho: f64| {
                let ang = |t: f64| {
                    let h = (0.5 * t).sin();
                    g(((r - rho) * (r - rho) + 4.0 * r * rho * h * h).sqrt())
                };
                let o = IntegrateOptions {
                    left_exponent: if lead < 0.0 { Some(lead) } else { None },
                    ..Default::default()
                };
                2.0 * integrate_lenient(ang, 0.0, PI, &o, &spec).value
            };
            let f = |rho: f64| mollifier(2, eta, rho) * rho * inner(rho);
            let o = IntegrateOptions {
                breakpoints: vec![r],
                ..Default::default()
            };
            integrate_lenient(f, 0.0, eta, &o, &spec).value
        }),
    };

    let r0 = eta * 1e-3;
    let r1 = support + eta;
    let mut extra = Vec::new();
    for &b in &bps {
        for k in -24i32..=24 {
            extra.push(b + eta * k as f64 / 8.0);
        }
    }
    let (nodes, mut vals) = sample_profile(&|r| conv(r), r0, r1, opts.per_decade, &extra);
    let last = vals.len() - 1;
    vals[last] = 0.0;
    // clamp rounding-level increases so the data stay monotone
    for i in 1..vals.len() {
        if vals[i] > vals[i - 1] {
            vals[i] = vals[i - 1];
        }
    }
    let exps: Vec<f64> = vals.iter().map(|v| v.max(0.0).powf(1.0 / half)).collect();
    let head = exps[0];
    RadialFunction::new(
        vec![r0, r1],
        vec![
            Repr::constant(head),
            Repr::samples(nodes, exps)?,
            Repr::Zero,
        ],
    )
}

/// Cumulative integral `G(t) = int_0^t g(s) s ds` with cubic Hermite
/// interpolation using the exact derivative `t g(t)`.
struct Primitive<'a> {
    g: &'a (dyn Fn(f64) -> f64 + Sync),
    x: Vec<f64>,
    y: Vec<f64>,
    lead: f64,
    top: f64,
}

impl<'a> Primitive<'a> {
    fn build(
        g: &'a (dyn Fn(f64) -> f64 + Sync),
        lead: f64,
        bps: &[f64],
        top: f64,
        t_lo: f64,
        spec: &QuadratureSpec,
    ) -> Self {
        let per_decade = 160usize;
        let n = ((top / t_lo).log10() * per_decade as f64).ceil() as usize;
        let step = (top / t_lo).ln() / n as f64;
        let mut x: Vec<f64> = (0..=n).map(|i| t_lo * (step * i as f64).exp()).collect();
        x[n] = top;
        x.extend(bps.iter().copied().filter(|&b| b > t_lo && b < top));
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        x.dedup();
        let mut y = vec![0.0; x.len()];
        // leading power near zero
        y[0] = g(t_lo) * t_lo * t_lo / (lead + 2.0);
        let o = IntegrateOptions::default();
        for i in 1..x.len() {
            let cell = integrate_lenient(|s| g(s) * s, x[i - 1], x[i], &o, spec).value;
            y[i] = y[i - 1] + cell;
        }
        Self { g, x, y, lead, top }
    }

    fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let n = self.x.len();
        if t >= self.top {
            return self.y[n - 1];
        }
        if t <= self.x[0] {
            return self.y[0] * (t / self.x[0]).powf(self.lead + 2.0);
        }
        let i = self.x.partition_point(|&v| v < t).max(1) - 1;
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let s = (t - x0) / h;
        let d0 = (self.g)(x0) * x0;
        let d1 = (self.g)(x1) * x1;
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.y[i]
            + (s3 - 2.0 * s2 + s) * h * d0
            + (-2.0 * s3 + 3.0 * s2) * self.y[i + 1]
            + (s3 - s2) * h * d1
    }
}

/// Parameters and diagnostics of a witness search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessReport {
    pub success: bool,
    pub beta: f64,
    pub mu: f64,
    pub big_r: f64,
    pub eps: f64,
    pub eta: f64,
    pub energy: f64,
    pub weighted_norm: f64,
    pub kappa_target: f64,
    /// `energy / (kappa_target * weighted_norm)`.
    pub ratio: f64,
    pub err: f64,
    pub tried: usize,
}

/// Default exponent at infinity used by the witness scan.
pub fn default_mu(params: &Params, beta: f64) -> f64 {
    beta.max(params.d as f64 / params.p) + 0.5
}

/// Searches `u_witness -> truncate -> mollify_power` for a smooth compactly
/// supported `f` with `E_p[f] < kappa_target * int |f|^p |x|^{-alpha}`.
pub fn find_witness(
    params: &Params,
    kappa_target: f64,
    spec: &QuadratureSpec,
) -> Result<(RadialFunction, WitnessReport)> {
    check_stable(params.d, params.alpha)?;
    if params.p <= 2.0 {
        return domain("find_witness needs p > 2");
    }
    let k_opt = crate::specfun::kappa_optimal(params);
    if kappa_target <= k_opt {
        return domain(format!(
            "kappa_target {kappa_target} does not exceed the optimal constant {k_opt}"
        ));
    }
    let gap = params.gap();
    // kappa_beta is symmetric about gap / 2, and above it the inner power carries most
    // of the weighted norm into the mollified core, so only the lower half is used
    let (lo, hi) = (gap / params.p, gap / 2.0);
    // the piecewise power profiles are cheap to evaluate exactly; rank them by E/W
    // and smooth only the promising ones, smallest R first
    let mut ranked = Vec::new();
    for i in 1..=10 {
        let beta = lo + (hi - lo) * i as f64 / 10.0;
        let mu = default_mu(params, beta);
        for k in 1..=10 {
            let big_r = 10f64.powi(k);
            let u = u_witness(params, beta, mu, big_r)?;
            let e = crate::forms::energy_p(&u, params, spec)?;
            let n = crate::forms::weighted_lp_norm(&u, params, spec)?;
            ranked.push((e.value / n.value, beta, mu, big_r));
        }
    }
    let mut promising: Vec<_> = ranked.iter().copied().filter(|c| c.0 < kappa_target * (1.0 - 2e-3)).collect();
    promising.sort_by(|a, b| a.3.total_cmp(&b.3).then(a.0.total_cmp(&b.0)));
    if promising.is_empty() {
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
        promising.push(ranked[0]);
    }
    let mut best: Option<(RadialFunction, WitnessReport)> = None;
    let mut tried = 0usize;
    for &(_, beta, mu, big_r) in promising.iter().take(4) {
        let u = u_witness(params, beta, mu, big_r)?;
        let eps = big_r.powf(-beta) * 2f64.powf(-mu);
        let ut = truncate(&u, eps)?;
        for &eta in &[0.05, 0.01, 0.002] {
            tried += 1;
            let f = mollify_power(&ut, params.d, params.p, eta)?;
            let e = crate::forms::energy_p(&f, params, spec)?;
            let n = crate::forms::weighted_lp_norm(&f, params, spec)?;
            let bound = kappa_target * n.value;
            let err = e.error + kappa_target * n.error;
            let rep = WitnessReport {
                success: e.value + err < bound,
                beta,
                mu,
                big_r,
                eps,
                eta,
                energy: e.value,
                weighted_norm: n.value,
                kappa_target,
                ratio: e.value / bound,
                err,
                tried,
            };
            if rep.success {
                return Ok((f, rep));
            }
            if best.as_ref().is_none_or(|b| rep.ratio < b.1.ratio) {
                best = Some((f, rep));
            }
        }
    }
    let (f, mut rep) = best.expect("scan is nonempty");
    rep.tried = tried;
    Ok((f, rep))
}

/// Fixed test corpus for the Hardy identity: a mollified witness, a
/// Gaussian-profile bump and a power with a kinked cutoff. The witness needs `p > 2`;
/// for `p <= 2` it is built at `p = 2.5`.
pub fn identity_corpus(params: &Params) -> Result<Vec<(String, RadialFunction)>> {
    let pw = if params.p > 2.0 { params.p } else { 2.5 };
    let wp = Params::new(params.d, params.alpha, pw)?;
    let beta = wp.gap() / 2.0;
    let mu = default_mu(&wp, beta);
    let big_r = 10.0;
    let u = u_witness(&wp, beta, mu, big_r)?;
    let ut = truncate(&u, big_r.powf(-beta) * 2f64.powf(-mu))?;
    let witness = mollify_power(&ut, params.d, pw, 0.05)?;
    // r^{-b} on the unit ball, then 2 - r down to zero; finite energy needs b < (d - alpha) / p
    let b = params.gap() / (4.0 * params.p);
    let capped = RadialFunction::new(
        vec![1.0, 2.0],
        vec![Repr::power(1.0, -b), Repr::Power { coef: -1.0, exponent: 1.0, offset: 2.0 }, Repr::Zero],
    )?;
    Ok(vec![
        ("mollified_witness".to_string(), witness),
        ("gaussian_bump".to_string(), RadialFunction::gaussian(1.0, 1.0)),
        ("truncated_power".to_string(), capped),
    ])
}

/// Nonnegative initial data for semigroup experiments: a Gaussian bump, the
/// indicator of the unit ball and a truncated power.
pub fn semigroup_corpus() -> Vec<(String, RadialFunction)> {
    vec![
        ("gaussian".to_string(), RadialFunction::gaussian(1.0, 1.0)),
        ("ball".to_string(), RadialFunction::indicator(1.0, 1.0)),
        ("truncated_power".to_string(), truncate(&h_beta(0.5), 1.0).expect("valid truncation")),
    ]
}
