//! Monte Carlo for the stable process and its Feynman-Kac weights, by
//! subordinating Brownian motion.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{domain, Result};
use crate::schrodinger::PotentialSpec;
use crate::specfun::Params;
use crate::testfun::RadialFunction;

/// Settings of a Feynman-Kac run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub time_step: f64,
    pub seed: u64,
    /// Truncation level of the potential.
    pub m: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { n_paths: 100_000, time_step: 0.01, seed: 1, m: 100.0 }
    }
}

/// A sample mean with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub config_hash: String,
}

/// The random stream of path `index`: one ChaCha8 stream per path, so results
/// do not depend on how paths are scheduled.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One increment over `dt` of the `alpha/2`-stable subordinator, with Laplace
/// transform `exp(-dt u^{alpha/2})`, by the Chambers-Mallows-Stuck formula.
pub fn sample_subordinator_increment<R: Rng + ?Sized>(alpha: f64, dt: f64, rng: &mut R) -> f64 {
    if alpha == 2.0 {
        return dt;
    }
    let a = alpha / 2.0;
    // U uniform on (0, pi), E standard exponential
    let u = std::f64::consts::PI * rng.random::<f64>();
    let e: f64 = Exp1.sample(rng);
    let s = (a * u).sin() / u.sin().powf(1.0 / a) * ((1.0 - a) * u).sin().powf((1.0 - a) / a) / e.powf((1.0 - a) / a);
    dt.powf(1.0 / a) * s
}

/// The `1/2`-stable increment as `dt^2 / (2 N^2)` with `N` standard normal.
pub fn levy_increment<R: Rng + ?Sized>(dt: f64, rng: &mut R) -> f64 {
    let n: f64 = StandardNormal.sample(rng);
    dt * dt / (2.0 * n * n)
}

/// Density of the `1/2`-stable subordinator at time `dt`.
pub fn levy_density(dt: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    dt / (2.0 * std::f64::consts::PI.sqrt()) * s.powf(-1.5) * (-dt * dt / (4.0 * s)).exp()
}

/// Distribution function of the `1/2`-stable subordinator, `erfc(dt / (2 sqrt s))`.
pub fn levy_cdf(dt: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    statrs::function::erf::erfc(dt / (2.0 * s.sqrt()))
}

/// One step `sqrt(2S) Z` of the isotropic `alpha`-stable process in `R^d`.
pub fn sample_stable_step<R: Rng + ?Sized>(d: u32, alpha: f64, dt: f64, rng: &mut R) -> Vec<f64> {
    let s = sample_subordinator_increment(alpha, dt, rng);
    let scale = (2.0 * s).sqrt();
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// `sup |F_n - F|` of the empirical distribution of `samples` against `cdf`.
pub fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn config_hash(payload: &impl Serialize) -> String {
    let json = serde_json::to_string(payload).expect("plain data serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

const CHUNK: usize = 4096;

/// Path sums of `exp(action) f(X_t)` with the action as a left-endpoint sum at
/// step `dt` and, on the same path, at step `2 dt`.
struct Sums {
    fine: (f64, f64),
    coarse: (f64, f64),
}

fn run_paths(
    f: &RadialFunction,
    x0: f64,
    steps: usize,
    dt: f64,
    pot: &PotentialSpec,
    params: &Params,
    n_paths: usize,
    seed: u64,
) -> Sums {
    let (d, alpha) = (params.d, params.alpha);
    let path = |index: usize| {
        let mut rng = path_rng(seed, index as u64);
        let mut x = vec![0.0; d as usize];
        x[0] = x0;
        let (mut fine, mut coarse) = (0.0, 0.0);
        for k in 0..steps {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let q = pot.q(alpha, r);
            fine += q * dt;
            if k % 2 == 0 {
                coarse += q * 2.0 * dt;
            }
            let step = sample_stable_step(d, alpha, dt, &mut rng);
            for (a, b) in x.iter_mut().zip(step) {
                *a += b;
            }
        }
        let v = f.eval(x.iter().map(|v| v * v).sum::<f64>().sqrt());
        (fine.exp() * v, coarse.exp() * v)
    };
    let chunks: Vec<Sums> = (0..n_paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let hi = ((c + 1) * CHUNK).min(n_paths);
            let mut s = Sums { fine: (0.0, 0.0), coarse: (0.0, 0.0) };
            for (a, b) in (c * CHUNK..hi).map(path) {
                s.fine = (s.fine.0 + a, s.fine.1 + a * a);
                s.coarse = (s.coarse.0 + b, s.coarse.1 + b * b);
            }
            s
        })
        .collect();
    // fixed chunk order keeps the reduction reproducible
    chunks.iter().fold(Sums { fine: (0.0, 0.0), coarse: (0.0, 0.0) }, |acc, s| Sums {
        fine: (acc.fine.0 + s.fine.0, acc.fine.1 + s.fine.1),
        coarse: (acc.coarse.0 + s.coarse.0, acc.coarse.1 + s.coarse.1),
    })
}

fn mean_and_stderr((sum, sum2): (f64, f64), n: usize) -> (f64, f64) {
    let n = n as f64;
    let mean = sum / n;
    let var = ((sum2 - n * mean * mean) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

fn check_run(t: f64, x0: f64, cfg: &McConfig) -> Result<()> {
    if !cfg.m.is_finite() || cfg.m <= 0.0 {
        return domain("Monte Carlo needs a finite truncation level");
    }
    if !(t > 0.0 && cfg.time_step > 0.0 && x0 >= 0.0) || cfg.n_paths < 2 {
        return domain("need t, time_step > 0, x0 >= 0 and at least two paths");
    }
    Ok(())
}

/// `E[exp(int_0^t q(X_s) ds) f(X_t)]` for the stable process started at
/// distance `x0` from the origin. The time integral is a left-endpoint sum on
/// the grid of step `cfg.time_step` (rounded so that it divides `t`) and `q`
/// is capped at `cfg.m`.
pub fn feynman_kac_estimate(
    f: &RadialFunction,
    x0: f64,
    t: f64,
    potential: &PotentialSpec,
    params: &Params,
    cfg: &McConfig,
) -> Result<McEstimate> {
    check_run(t, x0, cfg)?;
    let pot = potential.with_m(cfg.m);
    let steps = (t / cfg.time_step).ceil().max(1.0) as usize;
    let sums = run_paths(f, x0, steps, t / steps as f64, &pot, params, cfg.n_paths, cfg.seed);
    let (mean, stderr) = mean_and_stderr(sums.fine, cfg.n_paths);
    let hash = config_hash(&(cfg, x0, t, pot, params.d, params.alpha, f));
    Ok(McEstimate { mean, stderr, n_paths: cfg.n_paths, seed: cfg.seed, config_hash: hash })
}

/// A Monte Carlo estimate against a reference value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McComparison {
    pub x0: f64,
    pub reference: f64,
    pub estimate: McEstimate,
    /// Estimate from the same paths at twice the step.
    pub coarse_mean: f64,
    /// `|estimate - coarse|`, the step error of a first-order scheme.
    pub allowance: f64,
    pub pass: bool,
}

/// Runs [`feynman_kac_estimate`] and, on the same paths, the sum at twice the
/// step; passes when `|estimate - reference| <= 3 stderr + allowance`.
pub fn compare_with_reference(
    f: &RadialFunction,
    x0: f64,
    t: f64,
    potential: &PotentialSpec,
    params: &Params,
    cfg: &McConfig,
    reference: f64,
) -> Result<McComparison> {
    check_run(t, x0, cfg)?;
    let pot = potential.with_m(cfg.m);
    let steps = 2 * (0.5 * t / cfg.time_step).ceil().max(1.0) as usize;
    let sums = run_paths(f, x0, steps, t / steps as f64, &pot, params, cfg.n_paths, cfg.seed);
    let (mean, stderr) = mean_and_stderr(sums.fine, cfg.n_paths);
    let (coarse_mean, _) = mean_and_stderr(sums.coarse, cfg.n_paths);
    let hash = config_hash(&(cfg, x0, t, pot, params.d, params.alpha, f));
    let estimate = McEstimate { mean, stderr, n_paths: cfg.n_paths, seed: cfg.seed, config_hash: hash };
    let allowance = (mean - coarse_mean).abs();
    let pass = (mean - reference).abs() <= 3.0 * stderr + allowance;
    Ok(McComparison { x0, reference, estimate, coarse_mean, allowance, pass })
}
