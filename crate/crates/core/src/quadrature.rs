//! Adaptive Gauss-Kronrod integration, the radial reduction of the jump kernel
//! and the double integral over pairs of radii used by every form evaluation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::specfun::{check_stable, nu_constant, sphere_area};

/// Tolerances and windows shared by all quadrature routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Maximal bisection depth of a single panel.
    pub max_depth: u32,
    pub r_min: f64,
    pub r_max: f64,
    pub n_angular: usize,
    /// Relative distance `|r - s| / (r + s)` below which angular integrals
    /// switch from the fixed rule to adaptive refinement.
    pub diagonal_split_width: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-14,
            max_depth: 40,
            r_min: 1e-4,
            r_max: 1e4,
            n_angular: 64,
            diagonal_split_width: 0.1,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return domain("quadrature tolerances must be positive");
        }
        if !(self.r_min > 0.0 && self.r_min < self.r_max) {
            return domain("need 0 < r_min < r_max");
        }
        if self.n_angular < 16 {
            return domain("n_angular must be at least 16");
        }
        Ok(())
    }

    /// One refinement step: tolerances divided by `factor`, angular rule doubled,
    /// diagonal band halved.
    pub fn refined(&self, factor: f64) -> Self {
        Self {
            rel_tol: self.rel_tol / factor,
            abs_tol: self.abs_tol / factor,
            max_depth: self.max_depth + 4,
            n_angular: self.n_angular * 2,
            diagonal_split_width: self.diagonal_split_width / 2.0,
            ..*self
        }
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }
}

/// A value with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

impl Integral {
    pub fn new(value: f64, error: f64) -> Self {
        Self { value, error }
    }
}

impl std::ops::Add for Integral {
    type Output = Integral;
    fn add(self, o: Integral) -> Integral {
        Integral::new(self.value + o.value, self.error + o.error)
    }
}

impl std::ops::Mul<f64> for Integral {
    type Output = Integral;
    fn mul(self, c: f64) -> Integral {
        Integral::new(self.value * c, self.error * c.abs())
    }
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    let mut resabs = rk.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let x = h * XGK[j];
        let f1 = f(c - x);
        let f2 = f(c + x);
        fv1[j] = f1;
        fv2[j] = f2;
        rk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            rg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = rk * 0.5;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let result = rk * h;
    resabs *= h.abs();
    resasc *= h.abs();
    let mut err = ((rk - rg) * h).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    if !result.is_finite() {
        return (result, f64::INFINITY);
    }
    (result, err)
}

#[derive(Debug, Clone, Copy)]
enum Map {
    Identity,
    /// x = a + (b - a) u^k on u in [0, 1]
    PowerLeft { a: f64, len: f64, k: f64 },
    /// x = b - (b - a) u^k on u in [0, 1]
    PowerRight { b: f64, len: f64, k: f64 },
    /// x = a + u / (1 - u) on u in [0, 1)
    Infinite { a: f64 },
}

impl Map {
    fn eval(&self, f: &dyn Fn(f64) -> f64, u: f64) -> f64 {
        match *self {
            Map::Identity => f(u),
            Map::PowerLeft { a, len, k } => {
                if u <= 0.0 {
                    return 0.0;
                }
                let uk1 = u.powf(k - 1.0);
                f(a + len * uk1 * u) * len * k * uk1
            }
            Map::PowerRight { b, len, k } => {
                if u <= 0.0 {
                    return 0.0;
                }
                let uk1 = u.powf(k - 1.0);
                f(b - len * uk1 * u) * len * k * uk1
            }
            Map::Infinite { a } => {
                if u >= 1.0 {
                    return 0.0;
                }
                let w = 1.0 - u;
                let x = a + u / w;
                if !x.is_finite() {
                    return 0.0;
                }
                f(x) / (w * w)
            }
        }
    }
}

struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
    depth: u32,
    map: usize,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> Ordering {
        self.error.partial_cmp(&o.error).unwrap_or(Ordering::Equal)
    }
}

/// Options for [`integrate_with`].
#[derive(Debug, Clone, Default)]
pub struct IntegrateOptions {
    /// Interior points where the integrand is not smooth.
    pub breakpoints: Vec<f64>,
    /// Exponent `g` of a power behavior `(x - a)^g` at the lower limit.
    pub left_exponent: Option<f64>,
    /// Exponent `g` of a power behavior `(b - x)^g` at a finite upper limit.
    pub right_exponent: Option<f64>,
}

fn grading(g: f64) -> f64 {
    // substitution exponent making u^{k(g+1)-1} bounded
    (1.0 / (g + 1.0)).clamp(1.0, 8.0)
}

const MAX_PANELS: usize = 4000;

fn adapt(
    f: &dyn Fn(f64) -> f64,
    pieces: Vec<(f64, f64, Map)>,
    spec: &QuadratureSpec,
) -> (Integral, bool) {
    let maps: Vec<Map> = pieces.iter().map(|p| p.2).collect();
    let mut heap = BinaryHeap::new();
    let mut done: Vec<Panel> = Vec::new();
    for (i, &(lo, hi, m)) in pieces.iter().enumerate() {
        let g = |u: f64| m.eval(f, u);
        let (v, e) = gk15(&g, lo, hi);
        heap.push(Panel { lo, hi, value: v, error: e, depth: 0, map: i });
    }
    let total = |heap: &BinaryHeap<Panel>, done: &[Panel]| {
        let mut s = KahanSum::default();
        let mut e = 0.0;
        for p in heap.iter().chain(done.iter()) {
            s.add(p.value);
            e += p.error;
        }
        (s.value(), e)
    };
    let (mut value, mut error) = total(&heap, &done);
    let mut count = heap.len();
    let mut converged = false;
    loop {
        if !error.is_finite() && heap.peek().is_none_or(|p| p.error.is_finite()) {
            break;
        }
        if error <= spec.abs_tol.max(spec.rel_tol * value.abs()) {
            converged = true;
            break;
        }
        let Some(p) = heap.pop() else { break };
        let mid = 0.5 * (p.lo + p.hi);
        if p.depth >= spec.max_depth || count >= MAX_PANELS || !(mid > p.lo && mid < p.hi) {
            done.push(p);
            if heap.is_empty() {
                break;
            }
            continue;
        }
        let m = maps[p.map];
        let g = |u: f64| m.eval(f, u);
        let (v1, e1) = gk15(&g, p.lo, mid);
        let (v2, e2) = gk15(&g, mid, p.hi);
        value += v1 + v2 - p.value;
        error += e1 + e2 - p.error;
        heap.push(Panel { lo: p.lo, hi: mid, value: v1, error: e1, depth: p.depth + 1, map: p.map });
        heap.push(Panel { lo: mid, hi: p.hi, value: v2, error: e2, depth: p.depth + 1, map: p.map });
        count += 1;
        if count % 64 == 0 {
            let t = total(&heap, &done);
            value = t.0;
            error = t.1;
        }
    }
    let (value, error) = total(&heap, &done);
    let ok = converged || error <= spec.abs_tol.max(spec.rel_tol * value.abs());
    (Integral::new(value, error), ok)
}

fn build_pieces(a: f64, b: f64, opts: &IntegrateOptions) -> Result<Vec<(f64, f64, Map)>> {
    if !(a.is_finite()) || b.is_nan() || !(b > a) {
        return domain(format!("invalid integration interval [{a}, {b}]"));
    }
    let mut pts = vec![a];
    let mut bp: Vec<f64> = opts
        .breakpoints
        .iter()
        .copied()
        .filter(|&x| x > a && x < b)
        .collect();
    bp.sort_by(|x, y| x.partial_cmp(y).unwrap());
    bp.dedup();
    pts.extend(bp);
    let infinite = b == f64::INFINITY;
    if infinite {
        if opts.left_exponent.is_some() && pts.len() == 1 {
            pts.push(a + 1.0);
        }
    } else {
        pts.push(b);
    }
    let seg_count = pts.len() - 1;
    let mut pieces = Vec::new();
    for i in 0..seg_count {
        let (lo, hi) = (pts[i], pts[i + 1]);
        let left = i == 0 && opts.left_exponent.is_some();
        let right = !infinite && i + 1 == seg_count && opts.right_exponent.is_some();
        match (left, right) {
            (true, true) => {
                let m = 0.5 * (lo + hi);
                let kl = grading(opts.left_exponent.unwrap());
                let kr = grading(opts.right_exponent.unwrap());
                pieces.push((0.0, 1.0, Map::PowerLeft { a: lo, len: m - lo, k: kl }));
                pieces.push((0.0, 1.0, Map::PowerRight { b: hi, len: hi - m, k: kr }));
            }
            (true, false) => {
                let k = grading(opts.left_exponent.unwrap());
                pieces.push((0.0, 1.0, Map::PowerLeft { a: lo, len: hi - lo, k }));
            }
            (false, true) => {
                let k = grading(opts.right_exponent.unwrap());
                pieces.push((0.0, 1.0, Map::PowerRight { b: hi, len: hi - lo, k }));
            }
            (false, false) => pieces.push((lo, hi, Map::Identity)),
        }
    }
    if infinite {
        pieces.push((0.0, 1.0, Map::Infinite { a: *pts.last().unwrap() }));
    }
    Ok(pieces)
}

/// Integrates `f` over `[a, b]`; `b` may be `+inf`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<Integral> {
    integrate_with(f, a, b, &IntegrateOptions::default(), spec)
}

/// Integrates `f` over `[a, b]` with breakpoints and endpoint power hints.
pub fn integrate_with<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    opts: &IntegrateOptions,
    spec: &QuadratureSpec,
) -> Result<Integral> {
    let pieces = build_pieces(a, b, opts)?;
    let (res, ok) = adapt(&f, pieces, spec);
    if ok {
        Ok(res)
    } else {
        Err(Error::NonConvergence { value: res.value, error: res.error })
    }
}

/// Like [`integrate_with`] but returns the best estimate even without convergence.
pub fn integrate_lenient<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    opts: &IntegrateOptions,
    spec: &QuadratureSpec,
) -> Integral {
    match build_pieces(a, b, opts) {
        Ok(pieces) => adapt(&f, pieces, spec).0,
        Err(_) => Integral::new(f64::NAN, f64::INFINITY),
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// `k_d(r, s)`: the jump kernel from `r e_1` integrated over the sphere `|y| = s`.
pub fn radial_jump_kernel(d: u32, alpha: f64, r: f64, s: f64, spec: &QuadratureSpec) -> Result<f64> {
    check_stable(d, alpha)?;
    if !(r > 0.0 && s > 0.0) {
        return domain("radial_jump_kernel needs r, s > 0");
    }
    if r == s {
        return domain("radial_jump_kernel is singular on the diagonal r = s");
    }
    let a = nu_constant(d, alpha)?;
    Ok(match d {
        1 => a * ((r - s).abs().powf(-1.0 - alpha) + (r + s).powf(-1.0 - alpha)),
        3 => {
            a * 2.0 * PI * s * s * ((r - s).abs().powf(-1.0 - alpha) - (r + s).powf(-1.0 - alpha))
                / (r * s * (1.0 + alpha))
        }
        _ => a * s * angular_2d(alpha, r, s, spec),
    })
}

/// `int_0^{2 pi} (r^2 + s^2 - 2 r s cos t)^{-(d+alpha)/2} dt` for `d = 2`.
fn angular_2d(alpha: f64, r: f64, s: f64, spec: &QuadratureSpec) -> f64 {
    let e = -(2.0 + alpha) / 2.0;
    let g = |t: f64| {
        // r^2 + s^2 - 2rs cos t = (r - s)^2 + 4 r s sin^2(t/2)
        let h = (0.5 * t).sin();
        ((r - s) * (r - s) + 4.0 * r * s * h * h).powf(e)
    };
    let rel = (r - s).abs() / (r + s);
    if rel > spec.diagonal_split_width {
        let (x, w) = gauss_legendre(spec.n_angular);
        let mut acc = KahanSum::default();
        for (xi, wi) in x.iter().zip(&w) {
            acc.add(wi * g(0.5 * PI * (xi + 1.0)));
        }
        PI * acc.value()
    } else {
        let width = (r - s).abs() / (r * s).sqrt();
        let opts = IntegrateOptions {
            breakpoints: vec![width, 4.0 * width, 16.0 * width]
                .into_iter()
                .filter(|&x| x < PI)
                .collect(),
            ..Default::default()
        };
        2.0 * integrate_lenient(g, 0.0, PI, &opts, &spec.with_rel_tol(1e-12)).value
    }
}

/// `W(1, e^tau) e^tau` where `W(r, s) = |S^{d-1}| r^{d-1} k_d(r, s)` is the
/// symmetric radial jump density.
pub(crate) fn log_ratio_weight(d: u32, alpha: f64, a_const: f64, tau: f64, spec: &QuadratureSpec) -> f64 {
    let s = tau.exp();
    // |1 - s| computed without cancellation
    let diff = tau.exp_m1().abs();
    match d {
        1 => 2.0 * a_const * (diff.powf(-1.0 - alpha) + (1.0 + s).powf(-1.0 - alpha)) * s,
        3 => {
            8.0 * PI * PI * a_const * s * s * (diff.powf(-1.0 - alpha) - (1.0 + s).powf(-1.0 - alpha))
                / (1.0 + alpha)
        }
        _ => 2.0 * PI * a_const * s * s * angular_2d_diff(alpha, diff, s, spec),
    }
}

fn angular_2d_diff(alpha: f64, diff: f64, s: f64, spec: &QuadratureSpec) -> f64 {
    // angular integral at r = 1 with |r - s| = diff supplied exactly
    let e = -(2.0 + alpha) / 2.0;
    let g = |t: f64| {
        let h = (0.5 * t).sin();
        (diff * diff + 4.0 * s * h * h).powf(e)
    };
    let rel = diff / (1.0 + s);
    if rel > spec.diagonal_split_width {
        let (x, w) = gauss_legendre(spec.n_angular);
        let mut acc = KahanSum::default();
        for (xi, wi) in x.iter().zip(&w) {
            acc.add(wi * g(0.5 * PI * (xi + 1.0)));
        }
        PI * acc.value()
    } else {
        let width = diff / s.sqrt();
        let opts = IntegrateOptions {
            breakpoints: vec![width, 4.0 * width, 16.0 * width]
                .into_iter()
                .filter(|&x| x < PI)
                .collect(),
            ..Default::default()
        };
        2.0 * integrate_lenient(g, 0.0, PI, &opts, &spec.with_rel_tol(1e-12)).value
    }
}

/// Integrand `F(r, s)` of [`double_radial_integral`] with its structural data.
pub struct PairIntegrand<'a> {
    pub f: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    /// Radii where `F` fails to be smooth in either argument; must be nonempty.
    pub breakpoints: Vec<f64>,
    /// Degree `g` with `F(lr, ls) = l^g F(r, s)` for all radii below every breakpoint.
    pub degree_at_zero: Option<f64>,
    /// Same above every breakpoint.
    pub degree_at_infinity: Option<f64>,
    /// Whether the declared degrees describe `F` exactly (pure power pieces) or only
    /// to leading order.
    pub exact_tails: bool,
}

/// `int_0^inf int_0^inf F(r, s) W(r, s) dr ds` with `W(r, s) = |S^{d-1}| r^{d-1} k_d(r, s)`,
/// i.e. `int int F(|x|, |y|) nu(x, y) dx dy` for radial data.
///
/// Works in the variables `r` and `tau = ln(s/r) > 0`, folding both orderings,
/// so the diagonal singularity becomes the endpoint behavior `tau^{1-alpha}`.
pub fn double_radial_integral(
    integrand: &PairIntegrand,
    d: u32,
    alpha: f64,
    spec: &QuadratureSpec,
) -> Result<Integral> {
    check_stable(d, alpha)?;
    spec.validate()?;
    if integrand.breakpoints.is_empty() {
        return domain("double_radial_integral needs at least one breakpoint");
    }
    let gap = d as f64 - alpha;
    if let Some(g) = integrand.degree_at_zero {
        if g + gap <= 0.0 {
            return domain(format!("integrand of degree {g} at 0 is not integrable"));
        }
    }
    if let Some(g) = integrand.degree_at_infinity {
        if g + gap >= 0.0 {
            return domain(format!("integrand of degree {g} at infinity is not integrable"));
        }
    }
    let a_const = nu_constant(d, alpha)?;
    let mut logs: Vec<f64> = integrand.breakpoints.iter().map(|b| b.ln()).collect();
    logs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    logs.dedup();
    let (lo, hi) = (logs[0], *logs.last().unwrap());
    let window = 0.5 * (spec.r_max / spec.r_min).ln();
    let inner_spec = spec.with_rel_tol(spec.rel_tol * 0.1);
    let f = integrand.f;

    let inner = |tau: f64| -> (f64, f64) {
        let et = tau.exp();
        let g = |a: f64| {
            let r = a.exp();
            let s = r * et;
            (a * gap).exp() * (f(r, s) + f(s, r))
        };
        let mut bps: Vec<f64> = Vec::with_capacity(2 * logs.len());
        for &l in &logs {
            bps.push(l);
            bps.push(l - tau);
        }
        let a0 = lo - tau - window;
        let a1 = hi + window;
        let opts = IntegrateOptions { breakpoints: bps, ..Default::default() };
        let mut res = integrate_lenient(&g, a0, a1, &opts, &inner_spec);
        if let Some(deg) = integrand.degree_at_zero {
            let t = g(a0) / (deg + gap);
            res.value += t;
            if !integrand.exact_tails {
                res.error += t.abs();
            }
        }
        if let Some(deg) = integrand.degree_at_infinity {
            let t = -g(a1) / (deg + gap);
            res.value += t;
            if !integrand.exact_tails {
                res.error += t.abs();
            }
        }
        (res.value, res.error)
    };

    let err_acc = std::cell::Cell::new(0.0f64);
    let outer = |tau: f64| {
        if tau <= 0.0 || tau > 700.0 {
            return 0.0;
        }
        let w = log_ratio_weight(d, alpha, a_const, tau, spec);
        if !w.is_finite() {
            return 0.0;
        }
        let (v, e) = inner(tau);
        err_acc.set(err_acc.get().max(e * w));
        v * w
    };

    let mut kinks: Vec<f64> = Vec::new();
    for &x in &logs {
        for &y in &logs {
            if y - x > 1e-12 {
                kinks.push(y - x);
            }
        }
    }
    let near: Vec<f64> = kinks.iter().copied().filter(|&k| k < 1.0).collect();
    let far: Vec<f64> = kinks.iter().copied().filter(|&k| k > 1.0).collect();
    let near_opts = IntegrateOptions {
        breakpoints: near,
        left_exponent: Some(1.0 - alpha),
        right_exponent: None,
    };
    let far_opts = IntegrateOptions { breakpoints: far, ..Default::default() };
    let r1 = integrate_lenient(&outer, 0.0, 1.0, &near_opts, spec);
    let r2 = integrate_lenient(&outer, 1.0, f64::INFINITY, &far_opts, spec);
    let value = r1.value + r2.value;
    // inner errors enter through the outer rule with total weight of order the value
    let error = r1.error + r2.error + spec.rel_tol * 0.1 * value.abs() + err_acc.get() * 1e-3;
    Ok(Integral::new(value, error))
}

/// Log-spaced radial grid with hat-function weights `w_j = int phi_j(s) s^{d-1} ds`,
/// the first hat extended to the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub d: u32,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RadialGrid {
    pub fn log_spaced(d: u32, r_min: f64, r_max: f64, per_decade: usize) -> Result<Self> {
        if !(r_min > 0.0 && r_max > r_min) || per_decade == 0 {
            return domain("invalid radial grid bounds");
        }
        let decades = (r_max / r_min).log10();
        let n = ((decades * per_decade as f64).ceil() as usize).max(2) + 1;
        let step = (r_max / r_min).ln() / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|i| r_min * (step * i as f64).exp()).collect();
        Self::from_nodes(d, nodes)
    }

    pub fn from_nodes(d: u32, nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes[0] <= 0.0 {
            return domain("grid nodes must be positive and strictly increasing");
        }
        let n = nodes.len();
        let mut weights = vec![0.0; n];
        weights[0] = (nodes[0]).powi(d as i32) / d as f64;
        for i in 0..n - 1 {
            let (a, b) = (nodes[i], nodes[i + 1]);
            let (up, down) = hat_moments(d, a, b);
            weights[i] += down;
            weights[i + 1] += up;
        }
        Ok(Self { d, nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `sum_j w_j f(r_j)`, approximating `int_0^{r_max} f(s) s^{d-1} ds`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let mut acc = KahanSum::default();
        for (w, v) in self.weights.iter().zip(values) {
            acc.add(w * v);
        }
        acc.value()
    }

    /// Stable hash of the node set used as a cache key.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.d.to_le_bytes());
        for x in &self.nodes {
            h.update(x.to_le_bytes());
        }
        let out = h.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// `(int_a^b (s-a)/(b-a) s^{d-1} ds, int_a^b (b-s)/(b-a) s^{d-1} ds)` by 3-point Gauss.
pub(crate) fn hat_moments(d: u32, a: f64, b: f64) -> (f64, f64) {
    let x = [-(0.6f64).sqrt(), 0.0, (0.6f64).sqrt()];
    let w = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let h = 0.5 * (b - a);
    let (mut up, mut down) = (0.0, 0.0);
    for k in 0..3 {
        let t = 0.5 * (1.0 + x[k]);
        let s = a + (b - a) * t;
        let m = s.powi(d as i32 - 1) * w[k] * h;
        up += t * m;
        down += (1.0 - t) * m;
    }
    (up, down)
}

/// `|S^{d-1}|` re-exported for modules working with radial densities.
pub fn surface(d: u32) -> f64 {
    sphere_area(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> QuadratureSpec {
        QuadratureSpec { rel_tol: 1e-11, ..Default::default() }
    }

    #[test]
    fn integrate_examples() {
        let s = spec();
        assert!((integrate(|x| x, 0.0, 1.0, &s).unwrap().value - 0.5).abs() < 1e-14);
        assert!((integrate(|x| (-x).exp(), 0.0, f64::INFINITY, &s).unwrap().value - 1.0).abs() < 1e-10);
        let opts = IntegrateOptions { left_exponent: Some(-0.5), ..Default::default() };
        let v = integrate_with(|x: f64| x.powf(-0.5), 0.0, 1.0, &opts, &s).unwrap();
        assert!((v.value - 2.0).abs() < 1e-10, "{v:?}");
        let plain = integrate(|x: f64| x.powf(-0.5), 0.0, 1.0, &s.with_rel_tol(1e-6)).unwrap();
        assert!((plain.value - 2.0).abs() < 2e-6, "{plain:?}");
    }

    #[test]
    fn integrate_right_singularity_and_breakpoints() {
        let s = spec();
        let opts = IntegrateOptions { right_exponent: Some(-0.7), breakpoints: vec![0.3], ..Default::default() };
        let v = integrate_with(|x: f64| (1.0 - x).powf(-0.7), 0.0, 1.0, &opts, &s).unwrap();
        assert!((v.value - 1.0 / 0.3).abs() < 1e-8, "{v:?}");
        let opts = IntegrateOptions { breakpoints: vec![0.5], ..Default::default() };
        let v = integrate_with(|x: f64| (x - 0.5).abs(), 0.0, 1.0, &opts, &s).unwrap();
        assert!((v.value - 0.25).abs() < 1e-14);
        let v = integrate(|x: f64| 1.0 / (1.0 + x * x), 0.0, f64::INFINITY, &s).unwrap();
        assert!((v.value - PI / 2.0).abs() < 1e-10);
    }

    #[test]
    fn integrate_reports_nonconvergence() {
        let s = QuadratureSpec { max_depth: 3, rel_tol: 1e-14, abs_tol: 1e-300, ..Default::default() };
        match integrate(|x: f64| (50.0 * x).sin().abs(), 0.0, 10.0, &s) {
            Err(Error::NonConvergence { value, .. }) => assert!(value.is_finite()),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in [1usize, 2, 3, 8, 17, 64] {
            let (x, w) = gauss_legendre(n);
            let total: f64 = w.iter().sum();
            assert!((total - 2.0).abs() < 1e-13);
            let deg = 2 * n - 1;
            let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32 - 1)).sum();
            let want = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((m - want).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn jump_kernel_symmetry_and_closed_forms() {
        let s = spec();
        for d in [1u32, 2, 3] {
            let alpha = if d == 1 { 0.5 } else { 1.3 };
            for (r, t) in [(0.3, 2.0), (1.0, 1.05), (5.0, 0.01)] {
                let k1 = radial_jump_kernel(d, alpha, r, t, &s).unwrap() / t.powi(d as i32 - 1);
                let k2 = radial_jump_kernel(d, alpha, t, r, &s).unwrap() / r.powi(d as i32 - 1);
                assert!((k1 - k2).abs() < 1e-10 * k1, "d={d} r={r} s={t}");
            }
        }
        assert!(radial_jump_kernel(3, 1.0, 1.0, 1.0, &s).is_err());
    }

    #[test]
    fn jump_kernel_d3_matches_angular_quadrature() {
        let s = spec();
        let alpha = 0.7;
        let a = nu_constant(3, alpha).unwrap();
        for (r, t) in [(1.0, 2.0), (0.5, 0.6), (3.0, 0.2)] {
            let closed = radial_jump_kernel(3, alpha, r, t, &s).unwrap();
            let g = |u: f64| (r * r + t * t - 2.0 * r * t * u).powf(-(3.0 + alpha) / 2.0);
            let num = integrate(g, -1.0, 1.0, &s).unwrap().value * 2.0 * PI * t * t * a;
            assert!((closed - num).abs() < 1e-10 * closed);
        }
    }

    #[test]
    fn log_ratio_weight_matches_kernel() {
        let s = spec();
        for d in [1u32, 2, 3] {
            let alpha = if d == 1 { 0.4 } else { 1.2 };
            let a = nu_constant(d, alpha).unwrap();
            for tau in [0.01f64, 0.3, 2.0] {
                let et: f64 = tau.exp();
                let want = sphere_area(d) * radial_jump_kernel(d, alpha, 1.0, et, &s).unwrap() * et;
                let got = log_ratio_weight(d, alpha, a, tau, &s);
                assert!((got - want).abs() < 1e-9 * want, "d={d} tau={tau}");
            }
        }
    }

    #[test]
    fn double_integral_zero() {
        let zero = |_: f64, _: f64| 0.0;
        let it = PairIntegrand {
            f: &zero,
            breakpoints: vec![1.0],
            degree_at_zero: None,
            degree_at_infinity: None,
            exact_tails: true,
        };
        let v = double_radial_integral(&it, 3, 1.0, &QuadratureSpec::default()).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn double_integral_indicator_energy_d1() {
        // 1/2 int int (1_{|x|<1} - 1_{|y|<1})^2 nu = A int_{-1}^1 int_{|y|>1} |x-y|^{-1-a}
        // = (2A/a) int_{-1}^1 (1-x)^{-a} dx = 2A 2^{1-a} / (a (1-a))
        let alpha = 0.5;
        let ind = |r: f64| if r < 1.0 { 1.0f64 } else { 0.0 };
        let f = move |r: f64, s: f64| 0.5 * (ind(r) - ind(s)).powi(2);
        let it = PairIntegrand {
            f: &f,
            breakpoints: vec![1.0],
            degree_at_zero: Some(0.0),
            degree_at_infinity: None,
            exact_tails: true,
        };
        let s = QuadratureSpec { rel_tol: 1e-9, ..Default::default() };
        let v = double_radial_integral(&it, 1, alpha, &s).unwrap();
        let a = nu_constant(1, alpha).unwrap();
        let want = 2.0 * a * 2f64.powf(1.0 - alpha) / (alpha * (1.0 - alpha));
        assert!((v.value - want).abs() < 1e-7 * want, "{} vs {want}", v.value);
    }

    #[test]
    fn radial_grid_weights() {
        let g = RadialGrid::log_spaced(3, 1e-3, 10.0, 256).unwrap();
        let vals: Vec<f64> = g.nodes.iter().map(|r| (-r * r).exp()).collect();
        let want = PI.sqrt() / 4.0;
        assert!((g.integrate(&vals) - want).abs() < 2e-4 * want, "{}", g.integrate(&vals));
        let ones = vec![1.0; g.len()];
        assert!((g.integrate(&ones) - 1000.0 / 3.0).abs() < 1e-9);
        assert!(RadialGrid::from_nodes(3, vec![1.0, 0.5]).is_err());
    }
}
