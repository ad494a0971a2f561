//! The isotropic alpha-stable transition density `p_t`, its action on radial
//! functions, and the potentials `f_beta`, `q_beta`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quadrature::{gauss_legendre, integrate_lenient, IntegrateOptions, Integral, QuadratureSpec, RadialGrid};
use crate::specfun::{abs_gamma_neg, bessel_j0, check_stable, ln_gamma_pos, sphere_area};
use crate::testfun::RadialFunction;

/// Environment variable naming a directory for cached transition matrices.
pub const CACHE_ENV: &str = "FRAC_HARDY_CACHE_DIR";

fn check_density(d: u32, alpha: f64) -> Result<()> {
    if !(1..=3).contains(&d) {
        return domain(format!("stable densities are implemented for d <= 3, got d = {d}"));
    }
    if !(alpha > 0.0 && alpha < 2.0) {
        return domain(format!("alpha must lie in (0, 2), got {alpha}"));
    }
    Ok(())
}

/// Power series in `r^2`; `None` when it does not deliver full precision.
fn density_series(d: u32, alpha: f64, t: f64, r: f64) -> Option<f64> {
    let df = d as f64;
    let c = 2.0 / (alpha * (4.0 * PI).powf(0.5 * df));
    let ln_t = t.ln();
    let lead = ln_gamma_pos(df / alpha) - df / alpha * ln_t - ln_gamma_pos(0.5 * df);
    if r == 0.0 {
        return Some(c * lead.exp());
    }
    let ln_h = (0.5 * r).ln();
    let (mut sum, mut max_term) = (0.0f64, 0.0f64);
    let mut prev = f64::INFINITY;
    for k in 0..800 {
        let kf = k as f64;
        let e = (2.0 * kf + df) / alpha;
        let ln_term = 2.0 * kf * ln_h + ln_gamma_pos(e) - e * ln_t - ln_gamma_pos(kf + 1.0) - ln_gamma_pos(kf + 0.5 * df);
        let term = ln_term.exp();
        if !term.is_finite() {
            return None;
        }
        sum += if k % 2 == 0 { term } else { -term };
        max_term = max_term.max(term);
        if term < 1e-17 * sum.abs() && term < prev {
            return (sum > 0.0 && max_term < 1e3 * sum).then_some(c * sum);
        }
        prev = term;
    }
    None
}

/// Expansion in powers of `t r^{-alpha}`; convergent for `alpha < 1` and
/// `alpha = 1, r > t`, asymptotic otherwise.
fn density_asymptotic(d: u32, alpha: f64, t: f64, r: f64, max_loss: f64) -> Option<f64> {
    if r == 0.0 {
        return None;
    }
    let df = d as f64;
    let c = PI.powf(-0.5 * df - 1.0);
    let (ln_t, ln_r) = (t.ln(), r.ln());
    let (mut sum, mut max_term) = (0.0f64, 0.0f64);
    let mut prev = f64::INFINITY;
    for k in 1..800 {
        let kf = k as f64;
        let ka = kf * alpha;
        let ln_mag = ln_gamma_pos(0.5 * ka + 1.0) + ln_gamma_pos(0.5 * (ka + df)) + ka * 2f64.ln() + kf * ln_t
            - (ka + df) * ln_r
            - ln_gamma_pos(kf + 1.0);
        let mag = ln_mag.exp();
        // below alpha = 1 the series converges and early terms may grow
        if !mag.is_finite() || alpha >= 1.0 && mag > prev * 1.0001 && mag > 1e-16 * sum.abs() {
            return None;
        }
        let s = (0.5 * PI * ka).sin();
        let term = mag * s;
        sum += if k % 2 == 1 { term } else { -term };
        max_term = max_term.max(mag);
        if mag < 1e-17 * sum.abs() {
            return (sum > 0.0 && max_term < max_loss * sum).then_some(c * sum);
        }
        prev = mag;
    }
    None
}

/// Wynn's epsilon algorithm applied to a sequence of partial sums.
pub fn wynn_epsilon(seq: &[f64]) -> f64 {
    let n = seq.len();
    if n == 0 {
        return f64::NAN;
    }
    let mut best = seq[n - 1];
    let mut prev = vec![0.0; n + 1];
    let mut cur = seq.to_vec();
    let mut k = 0usize;
    while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for j in 0..cur.len() - 1 {
            let diff = cur[j + 1] - cur[j];
            if diff == 0.0 {
                return if k % 2 == 0 { cur[j + 1] } else { best };
            }
            next.push(prev[j + 1] + 1.0 / diff);
        }
        k += 1;
        if k % 2 == 0 {
            let v = *next.last().unwrap();
            if v.is_finite() {
                best = v;
            }
        }
        prev = cur;
        cur = next;
    }
    best
}

/// Radial Fourier inversion, integrated between zeros of the oscillatory factor
/// and accelerated with Wynn's epsilon algorithm.
pub fn stable_density_fourier(d: u32, alpha: f64, t: f64, r: f64) -> Result<Integral> {
    check_density(d, alpha)?;
    if !(t > 0.0 && r > 0.0) {
        return domain("the Fourier path needs t > 0 and r > 0");
    }
    let rho_max = (46.0 / t).powf(1.0 / alpha);
    let scale = t.powf(-1.0 / alpha);
    let (pref, offset) = match d {
        1 => (1.0 / PI, 0.5),
        2 => (1.0 / (2.0 * PI), 0.75),
        _ => (1.0 / (2.0 * PI * PI * r), 1.0),
    };
    let f = |rho: f64| {
        let damp = (-t * rho.powf(alpha)).exp();
        match d {
            1 => damp * (r * rho).cos(),
            2 => damp * bessel_j0(r * rho) * rho,
            _ => damp * rho * (r * rho).sin(),
        }
    };
    let spec = QuadratureSpec { rel_tol: 1e-13, abs_tol: 1e-300, max_depth: 50, ..Default::default() };
    let mut sums = Vec::new();
    let (mut total, mut err) = (0.0, 0.0);
    let mut a = 0.0;
    let mut last_est = f64::NAN;
    let mut agree = 0;
    for k in 0..200_000usize {
        let b = ((k as f64 + offset) * PI / r).min(rho_max);
        let ladder: Vec<f64> = (-12..40)
            .map(|j| scale * 2f64.powi(j))
            .filter(|&x| x > a && x < b)
            .collect();
        let opts = IntegrateOptions { breakpoints: ladder, ..Default::default() };
        let piece = integrate_lenient(f, a, b, &opts, &spec);
        total += piece.value;
        err += piece.error;
        if b >= rho_max {
            return Ok(Integral::new(pref * total, pref * err));
        }
        sums.push(total);
        if sums.len() >= 6 {
            let tail = &sums[sums.len().saturating_sub(24)..];
            let est = wynn_epsilon(tail);
            if (est - last_est).abs() <= 1e-14 * est.abs() {
                agree += 1;
                if agree >= 2 {
                    let e = err + (est - last_est).abs();
                    return Ok(Integral::new(pref * est, pref * e));
                }
            } else {
                agree = 0;
            }
            last_est = est;
        }
        a = b;
    }
    Err(Error::NonConvergence { value: pref * total, error: f64::INFINITY })
}

/// `Gamma((d+1)/2) pi^{-(d+1)/2} t (t^2 + r^2)^{-(d+1)/2}`, the `alpha = 1` density.
pub fn cauchy_density(d: u32, t: f64, r: f64) -> f64 {
    let h = 0.5 * (d as f64 + 1.0);
    ln_gamma_pos(h).exp() * PI.powf(-h) * t * (t * t + r * r).powf(-h)
}

/// `p_t(r)`, the rotation invariant `alpha`-stable density at radius `r`.
pub fn stable_density(d: u32, alpha: f64, t: f64, r: f64) -> Result<f64> {
    check_density(d, alpha)?;
    if !(t > 0.0 && r >= 0.0) {
        return domain(format!("stable_density needs t > 0 and r >= 0, got t = {t}, r = {r}"));
    }
    let x = r * t.powf(-1.0 / alpha);
    if x <= 4.0 {
        if let Some(v) = density_series(d, alpha, t, r) {
            return Ok(v);
        }
    }
    if x >= 0.5 || alpha < 1.0 {
        if let Some(v) = density_asymptotic(d, alpha, t, r, 1e3) {
            return Ok(v);
        }
    }
    let fourier = stable_density_fourier(d, alpha, t, r);
    if let Ok(v) = &fourier {
        if v.value > 0.0 && v.error <= 1e-8 * v.value {
            return Ok(v.value);
        }
    }
    // small alpha near the origin: accept heavier cancellation in the convergent series
    if alpha < 1.0 {
        if let Some(v) = density_asymptotic(d, alpha, t, r, 1e6) {
            return Ok(v);
        }
    }
    match fourier {
        Ok(v) if v.value > 0.0 && v.error <= 1e-6 * v.value => Ok(v.value),
        Ok(_) | Err(_) if alpha == 1.0 => Ok(cauchy_density(d, t, r)),
        Ok(v) => Err(Error::NonConvergence { value: v.value, error: v.error }),
        Err(e) => Err(e),
    }
}

/// Density of the `1/2`-stable subordinator,
/// `eta_t(s) = t / (2 sqrt(pi)) s^{-3/2} exp(-t^2 / (4 s))`.
pub fn subordinator_density(t: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    t / (2.0 * PI.sqrt()) * s.powf(-1.5) * (-t * t / (4.0 * s)).exp()
}

/// Gaussian kernel `g_s(r) = (4 pi s)^{-d/2} exp(-r^2 / (4 s))`.
pub fn gaussian_kernel(d: u32, s: f64, r: f64) -> f64 {
    (4.0 * PI * s).powf(-0.5 * d as f64) * (-r * r / (4.0 * s)).exp()
}

/// `p_t(r)` for `alpha = 1` as the subordinated Gaussian `int g_s(r) eta_t(s) ds`.
pub fn stable_density_subordination(d: u32, t: f64, r: f64, spec: &QuadratureSpec) -> Result<f64> {
    check_density(d, 1.0)?;
    if !(t > 0.0 && r >= 0.0) {
        return domain("stable_density_subordination needs t > 0 and r >= 0");
    }
    // in u = ln s the integrand is a smooth bump with a power tail at +infinity
    let q = t * t + r * r;
    let f = |u: f64| {
        let s = u.exp();
        s * gaussian_kernel(d, s, r) * subordinator_density(t, s)
    };
    let peak = (q / (2.0 * (d as f64 + 3.0))).ln();
    let (a, b) = (peak - 8.0, peak + 80.0);
    let opts = IntegrateOptions { breakpoints: vec![peak, peak + 2.0, peak + 8.0], ..Default::default() };
    let body = integrate_lenient(f, a, b, &opts, &spec.with_rel_tol(spec.rel_tol.min(1e-12)));
    // beyond b the integrand is e^{-(d+1) u / 2} times a constant
    let tail = f(b) / (0.5 * (d as f64 + 1.0));
    Ok(body.value + tail)
}

/// `A_{d,-alpha}` without the `alpha < d` restriction of the Hardy setting.
fn jump_constant(d: u32, alpha: f64) -> f64 {
    let df = d as f64;
    2f64.powf(alpha) * ln_gamma_pos(0.5 * (df + alpha)).exp() * PI.powf(-0.5 * df) / abs_gamma_neg(0.5 * alpha)
}

/// Ratios of `p_t(r)` to its two-sided bound and to `t nu(r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelBoundReport {
    pub t: f64,
    pub r: f64,
    pub density: f64,
    /// `p_t(r) / min(t^{-d/alpha}, t r^{-d-alpha})`.
    pub bound_ratio: f64,
    /// `p_t(r) / (t nu(r))`.
    pub levy_ratio: f64,
}

pub fn kernel_bound_check(d: u32, alpha: f64, t: f64, r: f64) -> Result<KernelBoundReport> {
    if !(r > 0.0) {
        return domain("kernel_bound_check needs r > 0");
    }
    let p = stable_density(d, alpha, t, r)?;
    let df = d as f64;
    let bound = t.powf(-df / alpha).min(t * r.powf(-df - alpha));
    let nu = jump_constant(d, alpha) * r.powf(-df - alpha);
    Ok(KernelBoundReport { t, r, density: p, bound_ratio: p / bound, levy_ratio: p / (t * nu) })
}

/// [`kernel_bound_check`] over a rectangle of times and radii.
pub fn kernel_bound_scan(d: u32, alpha: f64, ts: &[f64], rs: &[f64]) -> Result<Vec<KernelBoundReport>> {
    let pairs: Vec<(f64, f64)> = ts.iter().flat_map(|&t| rs.iter().map(move |&r| (t, r))).collect();
    pairs.par_iter().map(|&(t, r)| kernel_bound_check(d, alpha, t, r)).collect()
}

/// `ln p_1` tabulated against `ln x` with cubic Hermite interpolation.
#[derive(Debug)]
pub(crate) struct DensityTable {
    d: u32,
    alpha: f64,
    lo: f64,
    step: f64,
    vals: Vec<f64>,
    slopes: Vec<f64>,
    at_zero: f64,
}

const TABLE_LO: f64 = 1e-4;
const TABLE_HI: f64 = 1e4;
const TABLE_PER_DECADE: usize = 128;

impl DensityTable {
    fn build(d: u32, alpha: f64) -> Result<Self> {
        let lo = TABLE_LO.ln();
        let n = 8 * TABLE_PER_DECADE + 1;
        let step = (TABLE_HI.ln() - lo) / (n - 1) as f64;
        let delta = 1e-4;
        let rows: Result<Vec<(f64, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let y = lo + step * i as f64;
                let v = stable_density(d, alpha, 1.0, y.exp())?.ln();
                let vp = stable_density(d, alpha, 1.0, (y + delta).exp())?.ln();
                let vm = stable_density(d, alpha, 1.0, (y - delta).exp())?.ln();
                Ok((v, (vp - vm) / (2.0 * delta)))
            })
            .collect();
        let (vals, slopes) = rows?.into_iter().unzip();
        let at_zero = stable_density(d, alpha, 1.0, 0.0)?;
        Ok(Self { d, alpha, lo, step, vals, slopes, at_zero })
    }

    /// `p_1(x)`.
    pub(crate) fn eval(&self, x: f64) -> f64 {
        if x == 0.0 {
            return self.at_zero;
        }
        let y = x.ln();
        let pos = (y - self.lo) / self.step;
        if pos < 0.0 || pos >= (self.vals.len() - 1) as f64 {
            return stable_density(self.d, self.alpha, 1.0, x).unwrap_or(0.0);
        }
        let i = pos as usize;
        let s = pos - i as f64;
        let (y0, y1) = (self.vals[i], self.vals[i + 1]);
        let (m0, m1) = (self.slopes[i] * self.step, self.slopes[i + 1] * self.step);
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * m1;
        v.exp()
    }

    /// `p_t(r)` by scaling.
    pub(crate) fn eval_t(&self, t: f64, r: f64) -> f64 {
        let l = t.powf(-1.0 / self.alpha);
        l.powi(self.d as i32) * self.eval(r * l)
    }
}

type TableKey = (u32, u64);

fn table_cache() -> &'static Mutex<HashMap<TableKey, Arc<DensityTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<TableKey, Arc<DensityTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

pub(crate) fn density_table(d: u32, alpha: f64) -> Result<Arc<DensityTable>> {
    check_density(d, alpha)?;
    let key = (d, alpha.to_bits());
    if let Some(t) = table_cache().lock().unwrap().get(&key) {
        return Ok(t.clone());
    }
    let table = Arc::new(DensityTable::build(d, alpha)?);
    table_cache().lock().unwrap().insert(key, table.clone());
    Ok(table)
}

/// `ln f` against `ln x` for a positive profile: cubic Hermite inside the
/// table, power laws outside.
#[derive(Debug)]
pub(crate) struct LogTable {
    lo: f64,
    step: f64,
    vals: Vec<f64>,
    slopes: Vec<f64>,
}

impl LogTable {
    fn from_values(lo: f64, step: f64, vals: Vec<f64>) -> Self {
        let n = vals.len();
        let mut slopes = vec![0.0; n];
        for i in 0..n {
            slopes[i] = if i >= 2 && i + 2 < n {
                (-vals[i + 2] + 8.0 * vals[i + 1] - 8.0 * vals[i - 1] + vals[i - 2]) / (12.0 * step)
            } else if i == 0 {
                (-3.0 * vals[0] + 4.0 * vals[1] - vals[2]) / (2.0 * step)
            } else if i == n - 1 {
                (3.0 * vals[n - 1] - 4.0 * vals[n - 2] + vals[n - 3]) / (2.0 * step)
            } else {
                (vals[i + 1] - vals[i - 1]) / (2.0 * step)
            };
        }
        Self { lo, step, vals, slopes }
    }

    pub(crate) fn eval(&self, x: f64) -> f64 {
        // time integrals from 0 may blow up at the origin; x = 0 only occurs on the diagonal
        if x <= 0.0 {
            return self.vals[0].exp();
        }
        let y = x.ln();
        let pos = (y - self.lo) / self.step;
        let last = self.vals.len() - 1;
        if pos <= 0.0 {
            return (self.vals[0] + self.slopes[0] * (y - self.lo)).exp();
        }
        if pos >= last as f64 {
            let y1 = self.lo + self.step * last as f64;
            return (self.vals[last] + self.slopes[last] * (y - y1)).exp();
        }
        let i = pos as usize;
        let s = pos - i as f64;
        let (y0, y1) = (self.vals[i], self.vals[i + 1]);
        let (m0, m1) = (self.slopes[i] * self.step, self.slopes[i + 1] * self.step);
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * m1;
        v.exp()
    }
}

/// Linear weight on a time window `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeWeight {
    /// `(tau - a) / (b - a)`.
    Up,
    /// `(b - tau) / (b - a)`.
    Down,
    /// `1`.
    Flat,
}

impl TimeWeight {
    fn eval(self, a: f64, b: f64, tau: f64) -> f64 {
        match self {
            Self::Up => (tau - a) / (b - a),
            Self::Down => (b - tau) / (b - a),
            Self::Flat => 1.0,
        }
    }

    fn mass(self, a: f64, b: f64) -> f64 {
        match self {
            Self::Flat => b - a,
            _ => 0.5 * (b - a),
        }
    }
}

/// Time window of an integrated kernel `int_a^b w(tau) p_tau dtau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub a: f64,
    pub b: f64,
    pub weight: TimeWeight,
}

impl Window {
    pub fn new(a: f64, b: f64, weight: TimeWeight) -> Result<Self> {
        if !(a >= 0.0 && b > a && b.is_finite()) {
            return domain(format!("invalid time window [{a}, {b}]"));
        }
        Ok(Self { a, b, weight })
    }

    pub fn mass(&self) -> f64 {
        self.weight.mass(self.a, self.b)
    }
}

const WINDOW_PER_DECADE: usize = 48;

fn integrated_table(d: u32, alpha: f64, w: Window) -> Result<Arc<LogTable>> {
    type Key = (u32, u64, u64, u64, TimeWeight);
    static CACHE: OnceLock<Mutex<HashMap<Key, Arc<LogTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (d, alpha.to_bits(), w.a.to_bits(), w.b.to_bits(), w.weight);
    if let Some(t) = cache.lock().unwrap().get(&key) {
        return Ok(t.clone());
    }
    let base = density_table(d, alpha)?;
    let scale = w.b.powf(1.0 / alpha);
    let lo = (1e-16 * scale).ln();
    let n = 23 * WINDOW_PER_DECADE + 1;
    let step = (1e23f64).ln() / (n - 1) as f64;
    let spec = QuadratureSpec { rel_tol: 1e-12, abs_tol: 1e-300, ..Default::default() };
    let vals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = (lo + step * i as f64).exp();
            let f = |tau: f64| w.weight.eval(w.a, w.b, tau) * base.eval_t(tau, x);
            let knee = x.powf(alpha);
            let bps: Vec<f64> = (-6..=6).map(|k| knee * 2f64.powi(k)).filter(|&s| s > w.a && s < w.b).collect();
            let opts = IntegrateOptions { breakpoints: bps, ..Default::default() };
            integrate_lenient(f, w.a, w.b, &opts, &spec).value.max(f64::MIN_POSITIVE).ln()
        })
        .collect();
    let table = Arc::new(LogTable::from_values(lo, step, vals));
    let mut guard = cache.lock().unwrap();
    if guard.len() > 4096 {
        guard.clear();
    }
    guard.insert(key, table.clone());
    Ok(table)
}

#[derive(Clone)]
enum Profile {
    Scaled { table: Arc<DensityTable>, t: f64 },
    Tabulated(Arc<LogTable>),
}

impl Profile {
    fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Scaled { table, t } => table.eval_t(*t, x),
            Self::Tabulated(table) => table.eval(x),
        }
    }
}

/// Parity of functions on the line; radial functions in `d = 1` are even.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Parity {
    #[default]
    Even,
    Odd,
}

/// What a [`KernelMatrix`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MatrixKind {
    /// `P_t`.
    Transition { t: f64 },
    /// `int_a^b w(tau) P_tau dtau`.
    Integrated(Window),
}

impl MatrixKind {
    fn mass(&self) -> f64 {
        match self {
            Self::Transition { .. } => 1.0,
            Self::Integrated(w) => w.mass(),
        }
    }

    fn tag(&self) -> String {
        match self {
            Self::Transition { t } => format!("t{:016x}", t.to_bits()),
            Self::Integrated(w) => {
                let k = match w.weight {
                    TimeWeight::Up => 'u',
                    TimeWeight::Down => 'd',
                    TimeWeight::Flat => 'f',
                };
                format!("w{k}{:016x}{:016x}", w.a.to_bits(), w.b.to_bits())
            }
        }
    }
}

/// `k(r, s) = s^{d-1} int_{S^{d-1}} p(|r e - s theta|) dtheta` for `p = p_t` or a time
/// integral of it, so that `P u(r) = int_0^inf k(r, s) u(s) ds` for radial `u`.
#[derive(Clone)]
pub struct RadialKernel {
    d: u32,
    odd: bool,
    width: f64,
    smooth_origin: bool,
    one: Profile,
    own: Profile,
    gl: (Vec<f64>, Vec<f64>),
}

impl RadialKernel {
    pub fn new(d: u32, alpha: f64, t: f64) -> Result<Self> {
        Self::with_kind(d, alpha, MatrixKind::Transition { t }, Parity::Even)
    }

    pub fn with_kind(d: u32, alpha: f64, kind: MatrixKind, parity: Parity) -> Result<Self> {
        check_density(d, alpha)?;
        if parity == Parity::Odd && d != 1 {
            return domain("odd parity is only meaningful in d = 1");
        }
        let (one, own, width, smooth_origin) = match kind {
            MatrixKind::Transition { t } => {
                if !(t > 0.0) {
                    return domain("transition time must be positive");
                }
                let one = Profile::Scaled { table: density_table(1, alpha)?, t };
                let own = Profile::Scaled { table: density_table(d, alpha)?, t };
                (one, own, t.powf(1.0 / alpha), true)
            }
            MatrixKind::Integrated(w) => {
                let one = Profile::Tabulated(integrated_table(1, alpha, w)?);
                let own = if d == 1 { one.clone() } else { Profile::Tabulated(integrated_table(d, alpha, w)?) };
                (one, own, w.b.powf(1.0 / alpha), w.a > 0.0)
            }
        };
        Ok(Self { d, odd: parity == Parity::Odd, width, smooth_origin, one, own, gl: gauss_legendre(8) })
    }

    /// The underlying density at radius `r`.
    pub fn density(&self, r: f64) -> f64 {
        self.own.eval(r)
    }

    fn gauss<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        let (x, w) = &self.gl;
        let (h, m) = (0.5 * (b - a), 0.5 * (a + b));
        x.iter().zip(w).map(|(xi, wi)| wi * f(m + h * xi)).sum::<f64>() * h
    }

    pub fn eval(&self, r: f64, s: f64) -> f64 {
        match self.d {
            1 => {
                let (a, b) = (self.one.eval((r - s).abs()), self.one.eval(r + s));
                if self.odd {
                    a - b
                } else {
                    a + b
                }
            }
            3 => {
                let (lo, hi) = ((r - s).abs(), r + s);
                if r.min(s) < 0.1 * r.max(s) || (self.smooth_origin && hi <= 0.2 * self.width) {
                    // p^1(lo) - p^1(hi) = int_lo^hi 2 pi y p^3(y) dy, on max(r,s) +- min(r,s)
                    let (c, hw) = (r.max(s), r.min(s));
                    let (x, w) = &self.gl;
                    let g: f64 = x.iter().zip(w).map(|(xi, wi)| {
                        let y = c + hw * xi;
                        wi * 2.0 * PI * y * self.own.eval(y)
                    }).sum::<f64>() * hw;
                    s / r * g
                } else {
                    s / r * (self.one.eval(lo) - self.one.eval(hi))
                }
            }
            _ => {
                // 2 s int_0^pi p(sqrt(r^2 + s^2 - 2 r s cos phi)) dphi, graded towards phi = 0
                let theta0 = ((r - s).abs().max(self.width.min(r.max(s))) / r.max(s)).min(PI);
                let f = |phi: f64| {
                    let h = (0.5 * phi).sin();
                    self.own.eval(((r - s) * (r - s) + 4.0 * r * s * h * h).sqrt())
                };
                let mut acc = self.gauss(f, 0.0, theta0);
                let mut a = theta0;
                while a < PI {
                    let b = (2.0 * a).min(PI);
                    acc += self.gauss(f, a, b);
                    a = b;
                }
                2.0 * s * acc
            }
        }
    }
}

/// Radial operator on hat functions of a radial grid.
///
/// `entries[i * n + j]` approximates `int phi_j(s) k(r_i, s) ds`; `tail[i]` is the
/// mass beyond the last node, charged to the last nodal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub d: u32,
    pub alpha: f64,
    pub t: f64,
    pub kind: MatrixKind,
    #[serde(default)]
    pub parity: Parity,
    pub grid: RadialGrid,
    pub entries: Vec<f64>,
    pub tail: Vec<f64>,
    /// Largest relative `|row sum + tail - mass|` over interior rows before balancing.
    pub mass_defect: f64,
}

/// Tolerance on the unbalanced row sums.
pub const MASS_TOLERANCE: f64 = 1e-6;

fn segment_moments(k: &RadialKernel, r: f64, a: f64, b: f64) -> (f64, f64) {
    let len = b - a;
    let dist = if r < a { a - r } else if r > b { r - b } else { 0.0 };
    let f_up = |s: f64| k.eval(r, s) * (s - a) / len;
    let f_down = |s: f64| k.eval(r, s) * (b - s) / len;
    if dist >= len {
        return (k.gauss(f_up, a, b), k.gauss(f_down, a, b));
    }
    let spec = QuadratureSpec { rel_tol: 1e-12, abs_tol: 1e-300, ..Default::default() };
    let bp = if dist == 0.0 { vec![r] } else { vec![] };
    let opts = IntegrateOptions { breakpoints: bp, ..Default::default() };
    (
        integrate_lenient(f_up, a, b, &opts, &spec).value,
        integrate_lenient(f_down, a, b, &opts, &spec).value,
    )
}

fn interior(grid: &RadialGrid, i: usize) -> bool {
    let (lo, hi) = (grid.nodes[0], grid.nodes[grid.len() - 1]);
    grid.nodes[i] >= 10.0 * lo && grid.nodes[i] <= hi / 10.0
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n() + j]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        let n = self.n();
        self.entries[i * n..(i + 1) * n].iter().sum::<f64>() + self.tail[i]
    }

    /// `max |K_ij w_i - K_ji w_j| / (K_ij w_i)` over nonzero entries.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.n();
        let w = &self.grid.weights;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                let a = self.entry(i, j) * w[i];
                let b = self.entry(j, i) * w[j];
                let m = a.abs().max(b.abs());
                if m > 0.0 {
                    worst = worst.max((a - b).abs() / m);
                }
            }
        }
        worst
    }

    /// The operator at the nodes for nodal values `u`, extending `u` beyond the grid by its last value.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(u.len(), n, "vector length must match the grid");
        let last = u[n - 1];
        (0..n)
            .into_par_iter()
            .map(|i| {
                let row = &self.entries[i * n..(i + 1) * n];
                row.iter().zip(u).map(|(k, v)| k * v).sum::<f64>() + self.tail[i] * last
            })
            .collect()
    }

    pub fn cache_key(&self) -> String {
        cache_key(self.d, self.alpha, &self.kind, self.parity, &self.grid)
    }

    /// Writes `<key>.grid.json` and `<key>.matrix.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let key = self.cache_key();
        let meta = MatrixMeta {
            d: self.d,
            alpha: self.alpha,
            t: self.t,
            kind: self.kind,
            parity: self.parity,
            grid: self.grid.clone(),
            tail: self.tail.clone(),
            mass_defect: self.mass_defect,
        };
        fs::write(dir.join(format!("{key}.grid.json")), serde_json::to_string(&meta)?)?;
        let mut out = std::io::BufWriter::new(fs::File::create(dir.join(format!("{key}.matrix.csv")))?);
        let n = self.n();
        for i in 0..n {
            let row: Vec<String> = self.entries[i * n..(i + 1) * n].iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path, key: &str) -> Result<Self> {
        let meta: MatrixMeta = serde_json::from_str(&fs::read_to_string(dir.join(format!("{key}.grid.json")))?)?;
        let text = fs::read_to_string(dir.join(format!("{key}.matrix.csv")))?;
        let mut entries = Vec::with_capacity(meta.grid.len() * meta.grid.len());
        for line in text.lines() {
            for v in line.split(',') {
                entries.push(v.parse::<f64>().map_err(|e| Error::Config(format!("bad matrix entry {v}: {e}")))?);
            }
        }
        if entries.len() != meta.grid.len() * meta.grid.len() {
            return Err(Error::Config(format!("matrix file for {key} has the wrong size")));
        }
        Ok(Self {
            d: meta.d,
            alpha: meta.alpha,
            t: meta.t,
            kind: meta.kind,
            parity: meta.parity,
            grid: meta.grid,
            entries,
            tail: meta.tail,
            mass_defect: meta.mass_defect,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixMeta {
    d: u32,
    alpha: f64,
    t: f64,
    kind: MatrixKind,
    #[serde(default)]
    parity: Parity,
    grid: RadialGrid,
    tail: Vec<f64>,
    mass_defect: f64,
}

fn cache_key(d: u32, alpha: f64, kind: &MatrixKind, parity: Parity, grid: &RadialGrid) -> String {
    let par = if parity == Parity::Odd { "-odd" } else { "" };
    format!("d{d}-a{:016x}-{}{par}-{}", alpha.to_bits(), kind.tag(), grid.fingerprint())
}

fn build_matrix(d: u32, alpha: f64, kind: MatrixKind, parity: Parity, grid: &RadialGrid) -> Result<KernelMatrix> {
    if grid.d != d {
        return domain("grid dimension does not match d");
    }
    let k = RadialKernel::with_kind(d, alpha, kind, parity)?;
    let mass = kind.mass();
    let n = grid.len();
    let nodes = &grid.nodes;
    let big_r = nodes[n - 1];
    let tail_spec = QuadratureSpec { rel_tol: 1e-11, abs_tol: 1e-300, ..Default::default() };
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = nodes[i];
            let mut row = vec![0.0; n];
            row[0] = integrate_lenient(|s| k.eval(r, s), 0.0, nodes[0], &IntegrateOptions::default(), &tail_spec).value;
            for j in 0..n - 1 {
                let (up, down) = segment_moments(&k, r, nodes[j], nodes[j + 1]);
                row[j] += down;
                row[j + 1] += up;
            }
            let tail = integrate_lenient(|s| k.eval(r, s), big_r, f64::INFINITY, &IntegrateOptions::default(), &tail_spec).value;
            (row, tail)
        })
        .collect();
    let mut entries = Vec::with_capacity(n * n);
    let mut tail = Vec::with_capacity(n);
    let mut mass_defect = 0.0f64;
    let mut worst_row = 0;
    for (i, (row, tl)) in rows.into_iter().enumerate() {
        if parity == Parity::Even && interior(grid, i) {
            let defect = (row.iter().sum::<f64>() + tl - mass).abs() / mass;
            if defect > mass_defect {
                mass_defect = defect;
                worst_row = i;
            }
        }
        entries.extend(row);
        tail.push(tl);
    }
    // symmetrize K_ij / w_j, then rebalance rows symmetrically
    let w = &grid.weights;
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = 0.5 * (entries[i * n + j] / w[j] + entries[j * n + i] / w[i]);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    let mut scale = vec![1.0; n];
    if parity == Parity::Even {
        let target: Vec<f64> = tail.iter().map(|t| mass - t).collect();
        for _ in 0..500 {
            let sums: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| scale[i] * (0..n).map(|j| a[i * n + j] * w[j] * scale[j]).sum::<f64>())
                .collect();
            let worst = sums.iter().zip(&target).map(|(s, t)| (s / t - 1.0).abs()).fold(0.0, f64::max);
            if worst < 1e-14 {
                break;
            }
            for i in 0..n {
                scale[i] *= (target[i] / sums[i]).sqrt();
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            entries[i * n + j] = scale[i] * a[i * n + j] * w[j] * scale[j];
        }
    }
    let t = match kind {
        MatrixKind::Transition { t } => t,
        MatrixKind::Integrated(w) => w.b,
    };
    if mass_defect > MASS_TOLERANCE {
        return domain(format!(
            "kernel matrix {kind:?} loses mass {mass_defect:e} at r = {:e}; refine the grid",
            grid.nodes[worst_row]
        ));
    }
    Ok(KernelMatrix { d, alpha, t, kind, parity, grid: grid.clone(), entries, tail, mass_defect })
}

fn matrix_cache() -> &'static Mutex<HashMap<String, Arc<KernelMatrix>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<KernelMatrix>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).map(PathBuf::from)
}

/// Shared handle to a kernel matrix, memoized in-process and, when
/// `FRAC_HARDY_CACHE_DIR` is set, on disk.
pub fn shared_kernel_matrix(d: u32, alpha: f64, kind: MatrixKind, parity: Parity, grid: &RadialGrid) -> Result<Arc<KernelMatrix>> {
    check_density(d, alpha)?;
    let key = cache_key(d, alpha, &kind, parity, grid);
    if let Some(m) = matrix_cache().lock().unwrap().get(&key) {
        return Ok(m.clone());
    }
    let dir = cache_dir();
    let loaded = dir.as_ref().and_then(|dir| KernelMatrix::load(dir, &key).ok()).filter(|m| &m.grid == grid);
    let m = match loaded {
        Some(m) => m,
        None => {
            let m = build_matrix(d, alpha, kind, parity, grid)?;
            if let Some(dir) = &dir {
                m.save(dir)?;
            }
            m
        }
    };
    let m = Arc::new(m);
    let mut cache = matrix_cache().lock().unwrap();
    if cache.len() >= 256 {
        cache.clear();
    }
    cache.insert(key, m.clone());
    Ok(m)
}

/// Shared handle to the transition matrix of `P_t`.
pub fn shared_matrix(d: u32, alpha: f64, t: f64, grid: &RadialGrid) -> Result<Arc<KernelMatrix>> {
    shared_kernel_matrix(d, alpha, MatrixKind::Transition { t }, Parity::Even, grid)
}

/// Shared handle to the matrix of `int_a^b w(tau) P_tau dtau`.
pub fn integrated_matrix(d: u32, alpha: f64, window: Window, grid: &RadialGrid) -> Result<Arc<KernelMatrix>> {
    shared_kernel_matrix(d, alpha, MatrixKind::Integrated(window), Parity::Even, grid)
}

/// The transition matrix of `P_t` on `grid`.
pub fn transition_matrix(d: u32, alpha: f64, t: f64, grid: &RadialGrid, spec: &QuadratureSpec) -> Result<KernelMatrix> {
    spec.validate()?;
    if !(t > 0.0) {
        return domain("transition time must be positive");
    }
    Ok((*shared_matrix(d, alpha, t, grid)?).clone())
}

/// `P_t f` at the given radii by direct quadrature against `f`.
pub fn apply_exact(d: u32, alpha: f64, t: f64, f: &RadialFunction, radii: &[f64], spec: &QuadratureSpec) -> Result<Vec<f64>> {
    check_density(d, alpha)?;
    let k = RadialKernel::new(d, alpha, t)?;
    let support = f.support_radius().unwrap_or(f64::INFINITY);
    let bps = f.breakpoints();
    let spec = spec.with_rel_tol(spec.rel_tol.min(1e-10));
    Ok(radii
        .par_iter()
        .map(|&r| {
            let mut b: Vec<f64> = bps.iter().copied().filter(|&x| x < support).collect();
            if r < support {
                b.push(r);
            }
            let opts = IntegrateOptions { breakpoints: b, ..Default::default() };
            integrate_lenient(|s| k.eval(r, s) * f.eval(s), 0.0, support, &opts, &spec).value
        })
        .collect())
}

/// `||u||_p^p = |S^{d-1}| sum_j w_j |u_j|^p` for nodal values.
pub fn grid_lp_pow(grid: &RadialGrid, u: &[f64], p: f64) -> f64 {
    let v: Vec<f64> = u.iter().map(|x| x.abs().powf(p)).collect();
    sphere_area(grid.d) * grid.integrate(&v)
}

/// `f_beta(s) = c s^{(d - alpha - beta) / alpha}`, normalized so that
/// `int_0^inf f_beta(s) p_s(x) ds = 1` at `|x| = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FBeta {
    pub d: u32,
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
}

/// `int_0^inf s^gamma p_s(r) ds` in `u = ln s` with the two power tails added analytically.
fn time_moment(table: &DensityTable, d: u32, alpha: f64, gamma: f64, r: f64, spec: &QuadratureSpec) -> Result<f64> {
    let df = d as f64;
    let lo_exp = gamma + 2.0;
    let hi_exp = gamma + 1.0 - df / alpha;
    if !(lo_exp > 0.0 && hi_exp < 0.0) {
        return domain(format!("time moment of order {gamma} diverges"));
    }
    let g = |u: f64| {
        let s = u.exp();
        (u * (gamma + 1.0)).exp() * table.eval_t(s, r)
    };
    // x = r s^{-1/alpha} runs over [1e-8, 1e8]
    let (u0, u1) = (alpha * (r.ln() - 8.0 * 10f64.ln()), alpha * (r.ln() + 8.0 * 10f64.ln()));
    let opts = IntegrateOptions { breakpoints: vec![alpha * r.ln()], ..Default::default() };
    let body = integrate_lenient(g, u0, u1, &opts, &spec.with_rel_tol(spec.rel_tol.min(1e-11)));
    Ok(body.value + g(u0) / lo_exp - g(u1) / hi_exp)
}

impl FBeta {
    pub fn calibrate(d: u32, alpha: f64, beta: f64, spec: &QuadratureSpec) -> Result<Self> {
        check_stable(d, alpha)?;
        let gap = d as f64 - alpha;
        if !(beta > 0.0 && beta < gap) {
            return domain(format!("beta = {beta} outside (0, {gap})"));
        }
        let table = density_table(d, alpha)?;
        let m = time_moment(&table, d, alpha, (gap - beta) / alpha, 1.0, spec)?;
        Ok(Self { d, alpha, beta, c: 1.0 / m })
    }

    pub fn exponent(&self) -> f64 {
        (self.d as f64 - self.alpha - self.beta) / self.alpha
    }

    /// `int_0^inf f_beta(s) p_s(r) ds`, which should equal `r^{-beta}`.
    pub fn potential(&self, r: f64, spec: &QuadratureSpec) -> Result<f64> {
        let table = density_table(self.d, self.alpha)?;
        Ok(self.c * time_moment(&table, self.d, self.alpha, self.exponent(), r, spec)?)
    }

    /// `(1 / h_beta(r)) int_0^inf f_beta'(s) p_s(r) ds`.
    pub fn q(&self, r: f64, spec: &QuadratureSpec) -> Result<f64> {
        let table = density_table(self.d, self.alpha)?;
        let g = self.exponent();
        let m = time_moment(&table, self.d, self.alpha, g - 1.0, r, spec)?;
        Ok(self.c * g * m * r.powf(self.beta))
    }
}

/// `q_beta(r)`, to be compared with `kappa_beta r^{-alpha}`.
pub fn q_beta_numeric(d: u32, alpha: f64, beta: f64, r: f64, spec: &QuadratureSpec) -> Result<f64> {
    if !(r > 0.0) {
        return domain("q_beta_numeric needs r > 0");
    }
    FBeta::calibrate(d, alpha, beta, spec)?.q(r, spec)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::kappa_value;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn closed_forms_alpha_one() {
        assert!(rel(stable_density(1, 1.0, 1.0, 0.0).unwrap(), 1.0 / PI) < 1e-14);
        assert!(rel(stable_density(3, 1.0, 1.0, 1.0).unwrap(), 0.25 / (PI * PI)) < 1e-10);
        for d in [1, 2, 3] {
            for t in [0.1, 1.0, 10.0] {
                for k in 0..=100 {
                    let r = 0.5 * k as f64;
                    let got = stable_density(d, 1.0, t, r).unwrap();
                    let want = cauchy_density(d, t, r);
                    assert!(rel(got, want) < 1e-9, "d={d} t={t} r={r} {got} {want}");
                }
            }
        }
    }

    #[test]
    fn fourier_agrees_with_expansions() {
        for (d, alpha) in [(1, 0.5), (1, 1.5), (3, 0.7), (3, 1.5), (2, 1.2)] {
            for r in [0.3, 1.0, 2.5, 6.0] {
                let f = stable_density_fourier(d, alpha, 1.0, r).unwrap().value;
                let v = stable_density(d, alpha, 1.0, r).unwrap();
                assert!(rel(f, v) < 1e-9, "d={d} alpha={alpha} r={r} {f} {v}");
            }
        }
    }

    #[test]
    fn gaussian_limit_of_series() {
        // the series at alpha = 2 sums to the heat kernel
        for r in [0.0, 0.5, 1.3] {
            let v = density_series(3, 2.0, 1.0, r).unwrap();
            assert!(rel(v, gaussian_kernel(3, 1.0, r)) < 1e-12);
        }
    }

    #[test]
    fn scaling_relation() {
        for (d, alpha) in [(1, 0.5), (3, 1.0), (3, 1.5)] {
            for t in [0.01, 0.3, 7.0] {
                for r in [0.0, 0.2, 1.0, 5.0, 40.0] {
                    let a = stable_density(d, alpha, t, r).unwrap();
                    let l = t.powf(-1.0 / alpha);
                    let b = l.powi(d as i32) * stable_density(d, alpha, 1.0, r * l).unwrap();
                    assert!(rel(a, b) < 1e-10, "d={d} alpha={alpha} t={t} r={r}");
                }
            }
        }
    }

    #[test]
    fn subordination_path() {
        let spec = QuadratureSpec { rel_tol: 1e-12, ..Default::default() };
        for d in [1, 3] {
            for k in 0..=25 {
                let r = 2.0 * k as f64;
                let a = stable_density_subordination(d, 1.0, r, &spec).unwrap();
                let b = stable_density(d, 1.0, 1.0, r).unwrap();
                assert!(rel(a, b) < 1e-6, "d={d} r={r} {a} {b}");
            }
        }
        // in u = ln s, with the s^{-1/2} tail beyond e^30 added in closed form
        let t = 1.3f64;
        let body = integrate_lenient(
            |u: f64| u.exp() * subordinator_density(t, u.exp()),
            -10.0,
            30.0,
            &IntegrateOptions::default(),
            &spec,
        );
        let tail = t / PI.sqrt() * (-15.0f64).exp();
        let mass = Integral::new(body.value + tail, body.error);
        assert!((mass.value - 1.0).abs() < 1e-8, "{mass:?}");
    }

    #[test]
    fn small_time_levy_limit() {
        let rep = kernel_bound_check(3, 1.0, 1e-3, 1.0).unwrap();
        assert!((rep.levy_ratio - 1.0).abs() < 1e-2);
        let seq: Vec<f64> = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]
            .iter()
            .map(|&t| kernel_bound_check(3, 1.0, t, 1.0).unwrap().levy_ratio)
            .collect();
        assert!(seq.windows(2).all(|w| (w[1] - 1.0).abs() < (w[0] - 1.0).abs()), "{seq:?}");
        let ts: Vec<f64> = (0..9).map(|k| 1e-3 * 10f64.powf(k as f64 * 0.5)).collect();
        let rs: Vec<f64> = (0..13).map(|k| 0.1 * 10f64.powf(k as f64 / 4.0)).collect();
        let reps = kernel_bound_scan(3, 1.0, &ts, &rs).unwrap();
        let hi = reps.iter().map(|r| r.bound_ratio).fold(0.0, f64::max);
        let lo = reps.iter().map(|r| r.bound_ratio).fold(f64::INFINITY, f64::min);
        assert!(hi < 1.0 && lo > 0.01, "{lo} {hi}");
    }

    #[test]
    fn table_matches_direct() {
        for (d, alpha) in [(1, 1.0), (3, 1.0), (1, 0.5), (3, 1.5)] {
            let tab = density_table(d, alpha).unwrap();
            for k in 0..200 {
                let x = 1e-4 * 10f64.powf(8.0 * (k as f64 + 0.37) / 200.0);
                let a = tab.eval(x);
                let b = stable_density(d, alpha, 1.0, x).unwrap();
                assert!(rel(a, b) < 1e-8, "d={d} alpha={alpha} x={x}");
            }
        }
    }

    #[test]
    fn radial_kernel_closed_form_d3() {
        // k_t(r, s) = (s / r) (p^1_t(|r - s|) - p^1_t(r + s)) with Cauchy p^1
        let k = RadialKernel::new(3, 1.0, 0.7).unwrap();
        let c = |x: f64| cauchy_density(1, 0.7, x);
        for (r, s) in [(1.0f64, 2.0f64), (0.01, 3.0), (5.0, 5.001), (1e-3, 2e-3)] {
            let want = s / r * (c((r - s).abs()) - c(r + s));
            assert!(rel(k.eval(r, s), want) < 1e-7, "r={r} s={s}");
        }
        let k2 = RadialKernel::new(2, 1.0, 0.7).unwrap();
        let spec = QuadratureSpec { rel_tol: 1e-12, ..Default::default() };
        for (r, s) in [(1.0f64, 2.0f64), (0.5, 0.52)] {
            let direct = integrate_lenient(
                |phi: f64| 2.0 * s * cauchy_density(2, 0.7, (r * r + s * s - 2.0 * r * s * phi.cos()).sqrt()),
                0.0,
                PI,
                &IntegrateOptions::default(),
                &spec,
            );
            assert!(rel(k2.eval(r, s), direct.value) < 1e-7);
        }
    }

    #[test]
    fn wynn_accelerates_alternating_series() {
        let mut s = 0.0;
        let sums: Vec<f64> = (0..20)
            .map(|k| {
                s += if k % 2 == 0 { 1.0 } else { -1.0 } / (2 * k + 1) as f64;
                s
            })
            .collect();
        assert!((wynn_epsilon(&sums) - PI / 4.0).abs() < 1e-13);
    }

    #[test]
    fn matrix_invariants() {
        let grid = RadialGrid::log_spaced(3, 1e-3, 1e3, 32).unwrap();
        let spec = QuadratureSpec::default();
        let m = transition_matrix(3, 1.0, 0.5, &grid, &spec).unwrap();
        assert!(m.mass_defect < MASS_TOLERANCE, "{}", m.mass_defect);
        assert!(m.symmetry_defect() < 1e-10);
        let ones = vec![1.0; grid.len()];
        let out = m.apply(&ones);
        assert!(out.iter().all(|v| (v - 1.0).abs() < 1e-6));
        for beta in [0.0, 0.5, 1.0, 2.0] {
            let h: Vec<f64> = grid.nodes.iter().map(|r| r.powf(-beta)).collect();
            let ph = m.apply(&h);
            for i in 0..grid.len() {
                if interior(&grid, i) {
                    assert!(ph[i] <= h[i] * (1.0 + 1e-6), "beta={beta} r={}", grid.nodes[i]);
                }
            }
        }
    }

    #[test]
    fn matrix_matches_exact_and_cache_roundtrip() {
        let grid = RadialGrid::log_spaced(1, 1e-3, 1e3, 32).unwrap();
        let spec = QuadratureSpec::default();
        let m = transition_matrix(1, 1.0, 1.0, &grid, &spec).unwrap();
        let f = RadialFunction::gaussian(1.0, 1.0);
        let u: Vec<f64> = grid.nodes.iter().map(|&r| f.eval(r)).collect();
        let approx = m.apply(&u);
        let exact = apply_exact(1, 1.0, 1.0, &f, &grid.nodes, &spec).unwrap();
        for i in 0..grid.len() {
            if grid.nodes[i] < 10.0 {
                assert!(rel(approx[i], exact[i]) < 2e-3, "r={} {} {}", grid.nodes[i], approx[i], exact[i]);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = KernelMatrix::load(dir.path(), &m.cache_key()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn q_beta_matches_kappa() {
        let spec = QuadratureSpec::default();
        for beta in [0.5, 1.0, 1.5] {
            let q = q_beta_numeric(3, 1.0, beta, 1.0, &spec).unwrap();
            let k = kappa_value(3, 1.0, beta).unwrap();
            assert!(rel(q, k) < 1e-3, "beta={beta} q={q} kappa={k}");
        }
        let f = FBeta::calibrate(3, 1.0, 0.5, &spec).unwrap();
        for r in [0.1, 0.5, 2.0, 10.0] {
            assert!(rel(f.potential(r, &spec).unwrap(), r.powf(-0.5)) < 1e-4);
        }
        let rs: Vec<f64> = (0..9).map(|k| 0.25 * 2f64.powf(k as f64 / 2.0)).collect();
        let qs: Vec<f64> = rs.iter().map(|&r| f.q(r, &spec).unwrap()).collect();
        assert!((log_log_slope(&rs, &qs) + 1.0).abs() < 1e-2);
        let a = q_beta_numeric(3, 1.0, 0.5, 1.0, &spec).unwrap();
        let b = q_beta_numeric(3, 1.0, 1.5, 1.0, &spec).unwrap();
        assert!(rel(a, b) < 1e-3);
    }
    #[test]
    fn integrated_kernels() {
        let (d, alpha) = (3, 1.0);
        let w = Window::new(0.0, 0.5, TimeWeight::Up).unwrap();
        let table = integrated_table(d, alpha, w).unwrap();
        let spec = QuadratureSpec { rel_tol: 1e-12, abs_tol: 1e-300, ..Default::default() };
        for x in [1e-3, 0.1, 0.5, 2.0, 30.0] {
            // Cauchy: p_tau(x) = tau / (pi^2 (tau^2 + x^2)^2)
            let want = integrate_lenient(|t| t / 0.5 * t / (PI * PI * (t * t + x * x).powi(2)), 0.0, 0.5, &IntegrateOptions::default(), &spec).value;
            assert!(rel(table.eval(x), want) < 1e-7, "x={x}");
        }
        let grid = RadialGrid::log_spaced(d, 1e-3, 1e3, 32).unwrap();
        let f = RadialFunction::gaussian(1.0, 1.0);
        let u: Vec<f64> = grid.nodes.iter().map(|&r| f.eval(r)).collect();
        let apply = |a: f64, b: f64, wt: TimeWeight| {
            let m = integrated_matrix(d, alpha, Window::new(a, b, wt).unwrap(), &grid).unwrap();
            assert!(m.mass_defect < MASS_TOLERANCE, "{:e}", m.mass_defect);
            assert!(m.symmetry_defect() < 1e-10);
            m.apply(&u)
        };
        let up = apply(0.5, 1.0, TimeWeight::Up);
        let down = apply(0.5, 1.0, TimeWeight::Down);
        let flat = apply(0.5, 1.0, TimeWeight::Flat);
        let (gx, gw) = gauss_legendre(12);
        let idx: Vec<usize> = [0.05, 0.5, 1.0, 3.0].iter().map(|&r| grid.nodes.iter().position(|&x| x >= r).unwrap()).collect();
        let probes: Vec<f64> = idx.iter().map(|&i| grid.nodes[i]).collect();
        let mut exact = vec![0.0; probes.len()];
        for (x, wt) in gx.iter().zip(&gw) {
            let tau = 0.75 + 0.25 * x;
            let v = apply_exact(d, alpha, tau, &f, &probes, &spec).unwrap();
            for k in 0..probes.len() {
                exact[k] += 0.25 * wt * v[k];
            }
        }
        for (k, &i) in idx.iter().enumerate() {
            assert!(rel(up[i] + down[i], flat[i]) < 1e-6, "{:e}", rel(up[i] + down[i], flat[i]));
            assert!(rel(flat[i], exact[k]) < 2e-3, "r={} {} {}", probes[k], flat[i], exact[k]);
        }
    }

}
