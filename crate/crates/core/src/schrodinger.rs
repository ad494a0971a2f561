//! The Feynman-Kac semigroup of `Delta^{alpha/2} + kappa_delta |x|^{-alpha}` on
//! radial functions, through the Duhamel equation
//! `u(t) = P_t f + int_0^t P_{t-s}(q u(s)) ds` with a truncated potential.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use rayon::prelude::*;

use crate::kernels::{
    apply_exact, density_table, integrated_matrix, shared_kernel_matrix, DensityTable, KernelMatrix, MatrixKind, Parity, TimeWeight, Window,
};
use crate::quadrature::{gauss_legendre, integrate_lenient, IntegrateOptions, QuadratureSpec, RadialGrid};
use crate::specfun::{kappa_value, sphere_area, Params};
use crate::testfun::{RadialFunction, Repr};

/// `q^{(M)}(x) = min(kappa |x|^{-alpha}, M)` with `kappa = kappa_delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub delta: f64,
    pub kappa: f64,
    /// Truncation level, `f64::INFINITY` for none.
    pub m: f64,
}

impl PotentialSpec {
    pub fn new(params: &Params, delta: f64, m: f64) -> Result<Self> {
        let gap = params.gap();
        if !(0.0..=gap / 2.0 + 1e-15).contains(&delta) {
            return domain(format!("delta = {delta} outside [0, {}]", gap / 2.0));
        }
        if !(m > 0.0) {
            return domain("truncation level must be positive");
        }
        let kappa = kappa_value(params.d, params.alpha, delta.min(gap / 2.0))?;
        Ok(Self { delta, kappa, m })
    }

    /// No potential at all.
    pub fn free() -> Self {
        Self { delta: 0.0, kappa: 0.0, m: f64::INFINITY }
    }

    pub fn with_m(self, m: f64) -> Self {
        Self { m, ..self }
    }

    pub fn q(&self, alpha: f64, r: f64) -> f64 {
        if self.kappa == 0.0 {
            return 0.0;
        }
        (self.kappa * r.powf(-alpha)).min(self.m)
    }

    /// Radius below which the truncation is active.
    fn knee(&self, alpha: f64) -> f64 {
        if self.m.is_finite() {
            (self.kappa / self.m).powf(1.0 / alpha)
        } else {
            0.0
        }
    }

    /// `int_a^b q(r) r^{d-1} w(r) dr` for a linear weight `w`, split at the knee.
    fn moment(&self, d: u32, alpha: f64, a: f64, b: f64, w: impl Fn(f64) -> f64) -> f64 {
        let (x, gw) = gauss_legendre(16);
        let knee = self.knee(alpha);
        let mut cuts = vec![a];
        if knee > a && knee < b {
            cuts.push(knee);
        }
        cuts.push(b);
        cuts.windows(2)
            .map(|c| {
                let (h, m) = (0.5 * (c[1] - c[0]), 0.5 * (c[0] + c[1]));
                x.iter()
                    .zip(&gw)
                    .map(|(xi, wi)| {
                        let r = m + h * xi;
                        wi * self.q(alpha, r) * r.powi(d as i32 - 1) * w(r)
                    })
                    .sum::<f64>()
                    * h
            })
            .sum()
    }

    /// Hat-averaged potential `int phi_i q r^{d-1} dr / int phi_i r^{d-1} dr` on `grid`.
    pub fn cell_averages(&self, alpha: f64, grid: &RadialGrid) -> Vec<f64> {
        let (d, nodes, n) = (grid.d, &grid.nodes, grid.len());
        if self.kappa == 0.0 {
            return vec![0.0; n];
        }
        let df = d as f64;
        let r0 = nodes[0];
        let knee = self.knee(alpha).min(r0);
        // the first hat is 1 on [0, r0]
        let mut num = vec![0.0; n];
        num[0] = self.m.min(f64::MAX) * knee.powf(df) / df * (knee > 0.0) as u8 as f64
            + self.kappa * (r0.powf(df - alpha) - knee.powf(df - alpha)) / (df - alpha);
        for j in 0..n - 1 {
            let (a, b) = (nodes[j], nodes[j + 1]);
            num[j] += self.moment(d, alpha, a, b, |r| (b - r) / (b - a));
            num[j + 1] += self.moment(d, alpha, a, b, |r| (r - a) / (b - a));
        }
        num.iter().zip(&grid.weights).map(|(v, w)| v / w).collect()
    }
}

/// Solver settings of the Duhamel iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesSpec {
    pub time_steps: usize,
    pub per_decade: usize,
    pub r_min: f64,
    pub r_max: f64,
    /// Picard iterations before switching to the direct solve.
    pub max_terms: usize,
    /// Stop when the last correction is below `rel_tol` times the iterate, in `L^p`.
    pub rel_tol: f64,
    pub p: f64,
}

impl Default for SeriesSpec {
    fn default() -> Self {
        Self { time_steps: 20, per_decade: 32, r_min: 1e-3, r_max: 1e3, max_terms: 40, rel_tol: 1e-10, p: 2.0 }
    }
}

impl SeriesSpec {
    /// Twice the time steps and twice the radial resolution.
    pub fn refined(&self) -> Self {
        Self { time_steps: 2 * self.time_steps, per_decade: 2 * self.per_decade, ..*self }
    }

    pub fn with_p(self, p: f64) -> Self {
        Self { p, ..self }
    }

    pub fn grid(&self, d: u32) -> Result<RadialGrid> {
        RadialGrid::log_spaced(d, self.r_min, self.r_max, self.per_decade)
    }

    /// The log grid with the sample nodes of `f` added where they are at least
    /// five times denser, so that narrow features of `f` are resolved.
    pub fn grid_for(&self, d: u32, f: &RadialFunction) -> Result<RadialGrid> {
        let base = self.grid(d)?;
        let step = 10f64.ln() / self.per_decade as f64;
        let mut extra = Vec::new();
        for piece in &f.pieces {
            if let Repr::Samples { nodes, .. } = piece {
                for w in nodes.windows(2) {
                    if w[1] - w[0] < 0.2 * step {
                        extra.push(w[0].exp());
                        extra.push(w[1].exp());
                    }
                }
            }
        }
        // jumps at the breaks are kept within a relative width of 1e-6
        for &b in &f.breaks {
            extra.extend([b * (1.0 - 1e-6), b, b * (1.0 + 1e-6)]);
        }
        if extra.is_empty() {
            return Ok(base);
        }
        let mut all: Vec<f64> = base.nodes.iter().copied().chain(extra.into_iter().filter(|&r| r > self.r_min && r < self.r_max)).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut nodes: Vec<f64> = Vec::with_capacity(all.len());
        for r in all {
            if nodes.last().is_none_or(|&l| r > l * (1.0 + 1e-8)) {
                nodes.push(r);
            }
        }
        RadialGrid::from_nodes(d, nodes)
    }
}

/// Outcome of [`apply_semigroup`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesState {
    /// Picard iterates computed.
    pub n_terms: usize,
    pub time_steps: usize,
    pub t: f64,
    pub grid: RadialGrid,
    /// Nodal values of the result.
    pub current: Vec<f64>,
    /// `L^p` norms of successive Picard corrections at the final time.
    pub term_norms: Vec<f64>,
    /// The fixed point was obtained by time stepping after the Picard budget ran out.
    pub direct: bool,
}

/// Product-integration discretization of the Duhamel equation on a fixed grid
/// and time step `h`: `u(tau)` is linear in `tau` on each step and the time
/// integrals of `P_s` against the two hat weights are exact.
pub struct Propagator {
    pub d: u32,
    pub alpha: f64,
    pub h: f64,
    pub grid: RadialGrid,
    pub q: Vec<f64>,
    up: Vec<Arc<KernelMatrix>>,
    down: Vec<Arc<KernelMatrix>>,
}

impl Propagator {
    pub fn new(d: u32, alpha: f64, potential: &PotentialSpec, h: f64, steps: usize, grid: &RadialGrid) -> Result<Self> {
        if !(h > 0.0) || steps == 0 {
            return domain("need a positive time step and at least one step");
        }
        let q = potential.cell_averages(alpha, grid);
        let mut up = Vec::with_capacity(steps);
        let mut down = Vec::with_capacity(steps);
        if potential.kappa > 0.0 {
            for j in 1..=steps {
                let (a, b) = ((j - 1) as f64 * h, j as f64 * h);
                up.push(integrated_matrix(d, alpha, Window::new(a, b, TimeWeight::Up)?, grid)?);
                down.push(integrated_matrix(d, alpha, Window::new(a, b, TimeWeight::Down)?, grid)?);
            }
        }
        Ok(Self { d, alpha, h, grid: grid.clone(), q, up, down })
    }

    pub fn steps(&self) -> usize {
        self.up.len()
    }

    fn qu(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.q).map(|(a, b)| a * b).collect()
    }

    /// Duhamel history `sum_m (A^up_{k-m} q u_m + A^down_{k-m} q u_{m+1})` at step `k`,
    /// leaving out the implicit `A^down_1 q u_k` term when `implicit`.
    fn history(&self, k: usize, qu: &[Vec<f64>], implicit: bool) -> Vec<f64> {
        let n = self.grid.len();
        let mut acc = vec![0.0; n];
        for m in 0..k {
            let j = k - m;
            let a = self.up[j - 1].apply(&qu[m]);
            for (x, y) in acc.iter_mut().zip(&a) {
                *x += y;
            }
            if !(implicit && j == 1) {
                let b = self.down[j - 1].apply(&qu[m + 1]);
                for (x, y) in acc.iter_mut().zip(&b) {
                    *x += y;
                }
            }
        }
        acc
    }

    /// Picard sweep `U -> F + L U` over all time levels.
    fn picard(&self, free: &[Vec<f64>], u: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let qu: Vec<Vec<f64>> = u.iter().map(|v| self.qu(v)).collect();
        let mut out = vec![free[0].clone()];
        for k in 1..free.len() {
            let hist = self.history(k, &qu, false);
            out.push(free[k].iter().zip(&hist).map(|(a, b)| a + b).collect());
        }
        out
    }

    /// Time stepping with the implicit step `(I - A^down_1 Q) u_k = ...`.
    fn march(&self, free: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        let mut lhs = DMatrix::<f64>::identity(n, n);
        if let Some(b1) = self.down.first() {
            for i in 0..n {
                for j in 0..n {
                    lhs[(i, j)] -= b1.entry(i, j) * self.q[j];
                }
                lhs[(i, n - 1)] -= b1.tail[i] * self.q[n - 1];
            }
        }
        let lu = lhs.lu();
        let mut u = vec![free[0].clone()];
        let mut qu = vec![self.qu(&free[0])];
        for k in 1..free.len() {
            qu.push(vec![0.0; n]);
            let hist = self.history(k, &qu, true);
            let rhs = DVector::from_iterator(n, free[k].iter().zip(&hist).map(|(a, b)| a + b));
            let x = lu.solve(&rhs).expect("I - A Q is invertible for a nonnegative step");
            let x: Vec<f64> = x.iter().copied().collect();
            qu[k] = self.qu(&x);
            u.push(x);
        }
        u
    }
}

/// `int g(x) dx` over nodes `x` by piecewise quadratic interpolation.
fn quadratic_rule(x: &[f64], g: &[f64]) -> f64 {
    let n = x.len();
    if n < 3 {
        return 0.5 * (x[1] - x[0]) * (g[0] + g[1]);
    }
    // exact integral over [lo, hi] of the parabola through three points
    let panel = |i: usize, lo: f64, hi: f64| {
        let c = x[i + 1];
        let (x0, x1, x2, lo, hi) = (x[i] - c, 0.0, x[i + 2] - c, lo - c, hi - c);
        let w = |xa: f64, xb: f64, xc: f64| {
            let prim = |t: f64| t * t * t / 3.0 - (xb + xc) * t * t / 2.0 + xb * xc * t;
            (prim(hi) - prim(lo)) / ((xa - xb) * (xa - xc))
        };
        g[i] * w(x0, x1, x2) + g[i + 1] * w(x1, x0, x2) + g[i + 2] * w(x2, x0, x1)
    };
    let mut acc = 0.0;
    let mut i = 0;
    while i + 1 < n {
        let h0 = x[i + 1] - x[i];
        let even = i + 2 < n && {
            let ratio = (x[i + 2] - x[i + 1]) / h0;
            (1.0 / 3.0..=3.0).contains(&ratio)
        };
        if even {
            acc += panel(i, x[i], x[i + 2]);
            i += 2;
        } else {
            // uneven spacing marks a jump of the data: no interpolation across it
            acc += 0.5 * h0 * (g[i] + g[i + 1]);
            i += 1;
        }
    }
    acc
}

/// `||u||_p^p` for nodal values on `grid`: piecewise quadratic in `ln r` on the
/// grid, the constant head below it and the `r^{-(d+alpha)}` tail above it.
pub fn lp_pow_with_tail(grid: &RadialGrid, alpha: f64, u: &[f64], p: f64) -> f64 {
    let d = grid.d as f64;
    let n = grid.len();
    let nodes = &grid.nodes;
    let (r0, big_r) = (nodes[0], nodes[n - 1]);
    let x: Vec<f64> = nodes.iter().map(|r| r.ln()).collect();
    let g: Vec<f64> = u.iter().zip(nodes).map(|(v, r)| v.abs().powf(p) * r.powf(d)).collect();
    let body = quadratic_rule(&x, &g).max(0.0);
    let head = u[0].abs().powf(p) * r0.powf(d) / d;
    let tail = u[n - 1].abs().powf(p) * big_r.powf(d) / (p * (d + alpha) - d);
    sphere_area(grid.d) * (head + body + tail)
}

/// Radial function through nodal values: constant below the grid, monotone
/// Hermite on it and `c r^{-(d+alpha)}` above it.
pub fn nodal_function(grid: &RadialGrid, alpha: f64, u: &[f64]) -> Result<RadialFunction> {
    let n = grid.len();
    let (r0, r1) = (grid.nodes[0], grid.nodes[n - 1]);
    let expo = -(grid.d as f64 + alpha);
    let tail = u[n - 1] * r1.powf(-expo);
    RadialFunction::new(
        vec![r0, r1],
        vec![Repr::constant(u[0]), Repr::samples(grid.nodes.clone(), u.to_vec())?, Repr::power(tail, expo)],
    )
}

/// Nodal trajectory `u_k ~ P~_{k h} f`, `k = 0..=steps`.
pub struct Trajectory {
    pub grid: RadialGrid,
    pub h: f64,
    pub levels: Vec<Vec<f64>>,
    pub n_terms: usize,
    pub term_norms: Vec<f64>,
    pub direct: bool,
}

/// Runs the Duhamel solver for `f` up to `steps * h`.
pub fn evolve(
    f: &RadialFunction,
    h: f64,
    steps: usize,
    potential: &PotentialSpec,
    params: &Params,
    series: &SeriesSpec,
    spec: &QuadratureSpec,
) -> Result<Trajectory> {
    let grid = series.grid(params.d)?;
    evolve_on(f, h, steps, potential, params, series, &grid, spec)
}

#[allow(clippy::too_many_arguments)]
pub fn evolve_on(
    f: &RadialFunction,
    h: f64,
    steps: usize,
    potential: &PotentialSpec,
    params: &Params,
    series: &SeriesSpec,
    grid: &RadialGrid,
    spec: &QuadratureSpec,
) -> Result<Trajectory> {
    let free = free_levels(f, h, steps, params, grid, spec)?;
    solve_levels(free, h, potential, params, series, grid)
}

/// `P_{k h} f` at the nodes of `grid`, `k = 0..=steps`.
pub fn free_levels(f: &RadialFunction, h: f64, steps: usize, params: &Params, grid: &RadialGrid, spec: &QuadratureSpec) -> Result<Vec<Vec<f64>>> {
    let mut free = vec![grid.nodes.iter().map(|&r| f.eval(r)).collect::<Vec<f64>>()];
    for k in 1..=steps {
        free.push(apply_exact(params.d, params.alpha, k as f64 * h, f, &grid.nodes, spec)?);
    }
    Ok(free)
}

/// Solves the discrete Duhamel equation for given free levels: Picard
/// iteration first, time stepping if the iteration budget runs out.
pub fn solve_levels(
    free: Vec<Vec<f64>>,
    h: f64,
    potential: &PotentialSpec,
    params: &Params,
    series: &SeriesSpec,
    grid: &RadialGrid,
) -> Result<Trajectory> {
    let alpha = params.alpha;
    let steps = free.len() - 1;
    if potential.kappa == 0.0 || steps == 0 {
        return Ok(Trajectory { grid: grid.clone(), h, levels: free, n_terms: 0, term_norms: vec![], direct: false });
    }
    let prop = Propagator::new(params.d, alpha, potential, h, steps, grid)?;
    let p = series.p;
    let mut u = free.clone();
    let mut term_norms = Vec::new();
    let mut converged = false;
    // the Picard corrections decay like (q_max t)^n / n!
    let q_max = prop.q.iter().copied().fold(0.0, f64::max);
    let budget = if q_max * h * steps as f64 > 0.5 * series.max_terms as f64 { 0 } else { series.max_terms };
    for _ in 0..budget {
        let next = prop.picard(&free, &u);
        let diff: Vec<f64> = next[steps].iter().zip(&u[steps]).map(|(a, b)| a - b).collect();
        let corr = lp_pow_with_tail(grid, alpha, &diff, p).powf(1.0 / p);
        let size = lp_pow_with_tail(grid, alpha, &next[steps], p).powf(1.0 / p);
        term_norms.push(corr);
        u = next;
        if corr <= series.rel_tol * size {
            converged = true;
            break;
        }
    }
    let n_terms = term_norms.len();
    if converged {
        return Ok(Trajectory { grid: grid.clone(), h, levels: u, n_terms, term_norms, direct: false });
    }
    if potential.m.is_infinite() {
        return Err(Error::SearchFailed(format!(
            "perturbation series did not converge in {n_terms} terms at M = inf; use a finite truncation level M"
        )));
    }
    let levels = prop.march(&free);
    Ok(Trajectory { grid: grid.clone(), h, levels, n_terms, term_norms, direct: true })
}

/// `P~_t f` for the truncated potential, as a radial function and the solver state.
pub fn apply_semigroup(
    f: &RadialFunction,
    t: f64,
    potential: &PotentialSpec,
    params: &Params,
    series: &SeriesSpec,
    spec: &QuadratureSpec,
) -> Result<(RadialFunction, SeriesState)> {
    if !(t > 0.0) {
        return domain("time must be positive");
    }
    let steps = series.time_steps.max(1);
    let tr = evolve(f, t / steps as f64, steps, potential, params, series, spec)?;
    let current = tr.levels[steps].clone();
    let out = nodal_function(&tr.grid, params.alpha, &current)?;
    let state = SeriesState {
        n_terms: tr.n_terms,
        time_steps: steps,
        t,
        grid: tr.grid,
        current,
        term_norms: tr.term_norms,
        direct: tr.direct,
    };
    Ok((out, state))
}

/// Relative `L^p` distance of two nodal vectors on the same grid.
fn rel_lp_distance(grid: &RadialGrid, alpha: f64, a: &[f64], b: &[f64], p: f64) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    (lp_pow_with_tail(grid, alpha, &diff, p) / lp_pow_with_tail(grid, alpha, b, p)).powf(1.0 / p)
}

/// Time step `t_max / time_steps` and the levels hit by `times`; every time must
/// be a multiple of the step.
fn time_levels(times: &[f64], time_steps: usize) -> Result<(f64, Vec<usize>)> {
    let t_max = times.iter().copied().fold(0.0, f64::max);
    if !(t_max > 0.0) || times.iter().any(|&t| !(t > 0.0)) {
        return domain("times must be positive");
    }
    let h = t_max / time_steps.max(1) as f64;
    let mut levels = Vec::with_capacity(times.len());
    for &t in times {
        let k = (t / h).round();
        if (k * h - t).abs() > 1e-9 * t {
            return domain(format!("time {t} is not a multiple of the step {h}"));
        }
        levels.push(k as usize);
    }
    Ok((h, levels))
}

/// Chapman-Kolmogorov residual `||P~_s P~_t f - P~_{s+t} f||_p / ||P~_{s+t} f||_p`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChkReport {
    pub s: f64,
    pub t: f64,
    pub residual: f64,
    pub refined_residual: f64,
    pub pass: bool,
}

fn chk_residual(
    f: &RadialFunction,
    s: f64,
    t: f64,
    potential: &PotentialSpec,
    params: &Params,
    series: &SeriesSpec,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let grid = series.grid_for(params.d, f)?;
    let n = series.time_steps.max(1);
    let first = evolve_on(f, t / n as f64, n, potential, params, series, &grid, spec)?;
    let mid = nodal_function(&grid, params.alpha, &first.levels[n])?;
    let second = evolve_on(&mid, s / n as f64, n, potential, params, series, &grid, spec)?;
    let direct = evolve_on(f, (s + t) / n as f64, n, potential, params, series, &grid, spec)?;
    Ok(rel_lp_distance(&grid, params.alpha, &second.levels[n], &direct.levels[n], series.p))
}

/// Checks `P~_s P~_t f = P~_{s+t} f`: the residual must be at most `1e-2`
/// and at least halve when the solver is refined.
pub fn semigroup_property_check(
    f: &RadialFunction,
    s: f64,
    t: f64,
    potential: &PotentialSpec,
    params: &Params,
    series: &SeriesSpec,
    spec: &QuadratureSpec,
) -> Result<ChkReport> {
    if !(s > 0.0 && t > 0.0) {
        return domain("times must be positive");
    }
    let residual = chk_residual(f, s, t, potential, params, series, spec)?;
    let refined_residual = chk_residual(f, s, t, potential, params, &series.refined(), spec)?;
    let pass = residual <= 1e-2 && (refined_residual <= 0.5 * residual || refined_residual <= 1e-6);
    Ok(ChkReport { s, t, residual, refined_residual, pass })
}

/// One row of [`scaling_check`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRow {
    pub t: f64,
    pub rel_error: f64,
}

/// Compares `P~_t f` with the time-1 evolution of `f(t^{1/alpha} .)` under the
/// potential truncated at `M t`, read at `r / t^{1/alpha}`.
pub fn scaling_check(
    f: &RadialFunction,
    potential: &PotentialSpec,
    params: &Params,
    times: &[f64],
    series: &SeriesSpec,
    spec: &QuadratureSpec,
) -> Result<Vec<ScalingRow>> {
    let grid = series.grid_for(params.d, f)?;
    let n = series.time_steps.max(1);
    times
        .iter()
        .map(|&t| {
            if !(t > 0.0) {
                return domain("times must be positive");
            }
            let lam = t.powf(1.0 / params.alpha);
            let direct = evolve_on(f, t / n as f64, n, potential, params, series, &grid, spec)?;
            let scaled_grid = RadialGrid::from_nodes(params.d, grid.nodes.iter().map(|r| r / lam).collect())?;
            let pot = potential.with_m(potential.m * t);
            let g = f.dilated(lam);
            let unit = evolve_on(&g, 1.0 / n as f64, n, &pot, params, series, &scaled_grid, spec)?;
            let rel_error = rel_lp_distance(&grid, params.alpha, &unit.levels[n], &direct.levels[n], series.p);
            Ok(ScalingRow { t, rel_error })
        })
        .collect()
}

/// `||P~_t f||_p / ||f||_p` for one input and time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioRow {
    pub name: String,
    pub t: f64,
    pub ratio: f64,
    /// Relative error of `f` itself on the grid, scaled to the ratio.
    pub err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractivityReport {
    pub p: f64,
    pub delta: f64,
    pub m: f64,
    /// `kappa_delta <= kappa_{(d-alpha)/p}`.
    pub predicted_contractive: bool,
    pub rows: Vec<RatioRow>,
    pub max_ratio: f64,
}

impl ContractivityReport {
    /// Verdict agreement with the predicate at tolerance `tol`.
    pub fn consistent(&self, tol: f64) -> bool {
        !self.predicted_contractive || self.max_ratio <= 1.0 + tol
    }
}

/// Largest `||P~_t f||_p / ||f||_p` over a corpus and a time grid, for the
/// potential truncated at `m`.
#[allow(clippy::too_many_arguments)]
pub fn contractivity_probe(
    p: f64,
    delta: f64,
    corpus: &[(String, RadialFunction)],
    times: &[f64],
    m: f64,
    params: &Params,
    series: &SeriesSpec,
    spec: &QuadratureSpec,
) -> Result<ContractivityReport> {
    let params = Params { p, ..*params };
    let potential = PotentialSpec::new(&params, delta, m)?;
    let series = series.with_p(p);
    let (h, levels) = time_levels(times, series.time_steps)?;
    let steps = levels.iter().copied().max().unwrap_or(0);
    let mut rows = Vec::new();
    for (name, f) in corpus {
        let norm = crate::forms::lp_norm_pow(f, params.d, p, spec)?.value.powf(1.0 / p);
        if !(norm > 0.0) {
            return domain(format!("corpus entry {name} has zero norm"));
        }
        let grid = series.grid_for(params.d, f)?;
        let tr = evolve_on(f, h, steps, &potential, &params, &series, &grid, spec)?;
        let rep = (lp_pow_with_tail(&grid, params.alpha, &tr.levels[0], p).powf(1.0 / p) / norm - 1.0).abs();
        for (&t, &k) in times.iter().zip(&levels) {
            let ratio = lp_pow_with_tail(&grid, params.alpha, &tr.levels[k], p).powf(1.0 / p) / norm;
            rows.push(RatioRow { name: name.clone(), t, ratio, err: rep * ratio });
        }
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let predicted_contractive = potential.kappa <= crate::specfun::kappa_optimal(&params) * (1.0 + 1e-12);
    Ok(ContractivityReport { p, delta, m, predicted_contractive, rows, max_ratio })
}

/// Forward difference `(||P~_t f||_p^p - ||f||_p^p) / t` at one time, on two resolutions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthRow {
    pub t: f64,
    pub coarse: f64,
    pub fine: f64,
    pub err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthReport {
    pub p: f64,
    pub delta: f64,
    pub kappa: f64,
    pub m: f64,
    /// The computation ran at the conjugate exponent.
    pub dual: bool,
    pub witness: crate::testfun::WitnessReport,
    /// `p (kappa int |f|^p |x|^{-alpha} - E_p[f])`.
    pub predicted_rate: f64,
    pub rows: Vec<GrowthRow>,
    /// Forward difference at the smallest time and its error.
    pub forward_difference: f64,
    pub err: f64,
    pub pass: bool,
}

fn growth_rows(
    f: &RadialFunction,
    h: f64,
    potential: &PotentialSpec,
    params: &Params,
    series: &SeriesSpec,
    spec: &QuadratureSpec,
) -> Result<Vec<f64>> {
    let p = params.p;
    let grid = series.grid_for(params.d, f)?;
    let refine = series.time_steps.max(1);
    let tr = evolve_on(f, h / refine as f64, 4 * refine, potential, params, series, &grid, spec)?;
    let base = lp_pow_with_tail(&grid, params.alpha, &tr.levels[0], p);
    Ok([1, 2, 4]
        .iter()
        .map(|&k| (lp_pow_with_tail(&grid, params.alpha, &tr.levels[k * refine], p) - base) / (k as f64 * h))
        .collect())
}

/// Initial growth of `||P~_t f||_p^p` for a witness `f` with
/// `E_p[f] < kappa_delta int |f|^p |x|^{-alpha}`, which exists when
/// `kappa_delta > kappa_{(d-alpha)/p}`.
pub fn growth_witness(p: f64, delta: f64, params: &Params, series: &SeriesSpec, spec: &QuadratureSpec) -> Result<GrowthReport> {
    let dual = p < 2.0;
    let q = if dual { p / (p - 1.0) } else { p };
    let params = Params { p: q, ..*params };
    let kappa = kappa_value(params.d, params.alpha, delta)?;
    let k_opt = crate::specfun::kappa_optimal(&params);
    if kappa <= k_opt {
        return domain(format!("kappa_delta = {kappa} does not exceed kappa_(d-alpha)/p = {k_opt}"));
    }
    let (f, witness) = crate::testfun::find_witness(&params, kappa, spec)?;
    let e = crate::forms::energy_p(&f, &params, spec)?;
    let w = crate::forms::weighted_lp_norm(&f, &params, spec)?;
    let margin = kappa * w.value - e.value;
    let predicted_rate = q * margin;
    // truncation: the lost part of int q |f|^p stays below 1e-3 of the margin
    let (df, a) = (params.d as f64, params.alpha);
    let f0 = f.eval(0.0).abs().powf(q);
    let mut m = 1e4;
    while m < 1e12 {
        let rm = (kappa / m).powf(1.0 / a);
        let lost = sphere_area(params.d) * f0 * (kappa * rm.powf(df - a) / (df - a) - m * rm.powf(df) / df);
        if lost <= 1e-3 * margin.abs() {
            break;
        }
        m *= 10.0;
    }
    let potential = PotentialSpec { delta, kappa, m };
    // times well below the mollification scale
    let h = 0.25 * witness.eta.powf(a);
    let r_min = series.r_min.min(0.01 * witness.eta);
    let coarse_spec = SeriesSpec { p: q, r_min, time_steps: 1, ..*series };
    let fine_spec = SeriesSpec { time_steps: 2, per_decade: 2 * series.per_decade, ..coarse_spec };
    let coarse = growth_rows(&f, h, &potential, &params, &coarse_spec, spec)?;
    let fine = growth_rows(&f, h, &potential, &params, &fine_spec, spec)?;
    let rows: Vec<GrowthRow> = [1.0, 2.0, 4.0]
        .iter()
        .zip(coarse.iter().zip(&fine))
        .map(|(k, (c, fi))| GrowthRow { t: k * h, coarse: *c, fine: *fi, err: (fi - c).abs() })
        .collect();
    let first = &rows[0];
    let (forward_difference, err) = (first.fine, first.err + q * (e.error + kappa * w.error));
    let pass = witness.success && rows.iter().all(|r| r.fine > r.err) && forward_difference > err;
    Ok(GrowthReport { p, delta, kappa, m, dual, witness, predicted_rate, rows, forward_difference, err, pass })
}

/// `delta < d / max(p, p')`.
pub fn bounded_predicate(d: u32, p: f64, delta: f64) -> bool {
    let star = p.max(p / (p - 1.0));
    delta < d as f64 / star
}

/// Slope of `P~_1 1_B` on the fitting window at one truncation level.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SlopeRow {
    pub m: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundednessReport {
    pub p: f64,
    pub delta: f64,
    pub predicted_bounded: bool,
    pub slope_window: (f64, f64),
    pub slopes: Vec<SlopeRow>,
    /// Slope extrapolated to `M = inf`, linear in `1 / ln(M r / kappa)`.
    pub slope: f64,
    pub slope_ok: bool,
    /// `(eps, int_{|x| > eps} |P~_1 1_B|^p)` at the largest `M`.
    pub truncated_norms: Vec<(f64, f64)>,
    /// Increments of the truncated norms never shrink.
    pub diverges: bool,
    /// `true` when the numerical evidence agrees with the predicate.
    pub consistent: bool,
}

/// Truncation levels of the boundedness probe.
pub const M_SCHEDULE: [f64; 3] = [1e6, 1e8, 1e10];

/// `int_{r > eps} |u|^p` from nodal values, interpolating the node below `eps`.
fn truncated_lp_pow(grid: &RadialGrid, alpha: f64, u: &[f64], p: f64, eps: f64) -> Result<f64> {
    let i = grid.nodes.partition_point(|&r| r < eps);
    let mut nodes = vec![eps];
    let mut vals = vec![nodal_function(grid, alpha, u)?.eval(eps)];
    for j in i..grid.len() {
        if grid.nodes[j] > eps * (1.0 + 1e-9) {
            nodes.push(grid.nodes[j]);
            vals.push(u[j]);
        }
    }
    let sub = RadialGrid::from_nodes(grid.d, nodes)?;
    let head = vals[0].abs().powf(p) * eps.powf(grid.d as f64) / grid.d as f64 * sphere_area(grid.d);
    Ok(lp_pow_with_tail(&sub, alpha, &vals, p) - head)
}

/// Analytic verdict for boundedness of `P~_1` on `L^p` together with the
/// numerical evidence: the slope of `P~_1 1_B` at the origin, and the growth of
/// `int_{|x|>eps} |P~_1 1_B|^p` as `eps` decreases.
pub fn boundedness_probe(p: f64, delta: f64, params: &Params, series: &SeriesSpec, spec: &QuadratureSpec) -> Result<BoundednessReport> {
    let params = Params { p, ..*params };
    let predicted_bounded = bounded_predicate(params.d, p, delta);
    let potential = PotentialSpec::new(&params, delta, M_SCHEDULE[0])?;
    let ball = RadialFunction::indicator(1.0, 1.0);
    let m_top = M_SCHEDULE[M_SCHEDULE.len() - 1];
    let r_knee = (potential.kappa.max(1e-300) / m_top).powf(1.0 / params.alpha);
    let series = SeriesSpec { r_min: series.r_min.min(0.1 * r_knee), p, ..*series };
    let grid = series.grid_for(params.d, &ball)?;
    let n = series.time_steps.max(1);
    let h = 1.0 / n as f64;
    let free = free_levels(&ball, h, n, &params, &grid, spec)?;
    let slope_window: (f64, f64) = (1e-4, 1e-3);
    let centre = (slope_window.0 * slope_window.1).sqrt();
    let mut slopes = Vec::new();
    let mut last = Vec::new();
    for &m in &M_SCHEDULE {
        let tr = solve_levels(free.clone(), h, &potential.with_m(m), &params, &series, &grid)?;
        let u = tr.levels[n].clone();
        let (xs, ys): (Vec<f64>, Vec<f64>) = grid
            .nodes
            .iter()
            .zip(&u)
            .filter(|(r, _)| **r >= slope_window.0 && **r <= slope_window.1)
            .map(|(r, v)| (*r, *v))
            .unzip();
        slopes.push(SlopeRow { m, slope: crate::kernels::log_log_slope(&xs, &ys) });
        last = u;
    }
    let slope = if potential.kappa == 0.0 {
        slopes[slopes.len() - 1].slope
    } else {
        // least squares s = s_inf + c x with x = 1 / ln(M centre^alpha / kappa)
        let xs: Vec<f64> = slopes.iter().map(|r| 1.0 / (r.m * centre.powf(params.alpha) / potential.kappa).ln()).collect();
        let k = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / k, slopes.iter().map(|r| r.slope).sum::<f64>() / k);
        let sxy: f64 = xs.iter().zip(&slopes).map(|(x, r)| (x - mx) * (r.slope - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        my - sxy / sxx * mx
    };
    let slope_ok = (slope + delta).abs() <= 0.05;
    let truncated_norms: Vec<(f64, f64)> = [1e-1, 1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&eps| Ok((eps, truncated_lp_pow(&grid, params.alpha, &last, p, eps)?)))
        .collect::<Result<_>>()?;
    let inc: Vec<f64> = truncated_norms.windows(2).map(|w| w[1].1 - w[0].1).collect();
    let diverges = inc.iter().all(|&x| x > 0.0) && inc.windows(2).all(|w| w[1] >= w[0]);
    let consistent = slope_ok && diverges != predicted_bounded;
    Ok(BoundednessReport { p, delta, predicted_bounded, slope_window, slopes, slope, slope_ok, truncated_norms, diverges, consistent })
}

/// `<P~_t f, g>` and `<f, P~_t g>`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualityReport {
    pub forward: f64,
    pub backward: f64,
    pub rel_diff: f64,
}

/// Symmetry of the pairing `<P~_t f, g> = <f, P~_t g>`.
pub fn duality_check(
    f: &RadialFunction,
    g: &RadialFunction,
    t: f64,
    potential: &PotentialSpec,
    params: &Params,
    series: &SeriesSpec,
    spec: &QuadratureSpec,
) -> Result<DualityReport> {
    let n = series.time_steps.max(1);
    let base = series.grid_for(params.d, f)?;
    let mut nodes = base.nodes.clone();
    nodes.extend(series.grid_for(params.d, g)?.nodes);
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nodes.dedup_by(|a, b| *a <= *b * (1.0 + 1e-9));
    let grid = RadialGrid::from_nodes(params.d, nodes)?;
    let pf = evolve_on(f, t / n as f64, n, potential, params, series, &grid, spec)?;
    let pg = evolve_on(g, t / n as f64, n, potential, params, series, &grid, spec)?;
    let pair = |u: &[f64], v: &RadialFunction| {
        let x: Vec<f64> = grid.nodes.iter().map(|r| r.ln()).collect();
        let d = grid.d as i32;
        let prod: Vec<f64> = u.iter().zip(&grid.nodes).map(|(a, &r)| a * v.eval(r) * r.powi(d)).collect();
        let head = u[0] * v.eval(grid.nodes[0]) * grid.nodes[0].powi(d) / d as f64;
        sphere_area(grid.d) * (quadratic_rule(&x, &prod) + head)
    };
    let forward = pair(&pf.levels[n], g);
    let backward = pair(&pg.levels[n], f);
    Ok(DualityReport { forward, backward, rel_diff: (forward - backward).abs() / forward.abs().max(backward.abs()) })
}

/// Terms of the perturbation series of `p~_t(x, y)` at one pair of points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelValue {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub value: f64,
    /// `p^{(n)}_t(x, y)` for `n = 0..=n_terms`.
    pub terms: Vec<f64>,
}

/// Largest number of perturbation terms [`kernel_at_points`] sums.
pub const MAX_KERNEL_TERMS: usize = 6;

/// `int p_{sn}(z - cn) q(z) p_{sw}(z - cw) dz` with the narrow kernel rescaled
/// to unit width.
fn kernel_product(
    table: &DensityTable,
    alpha: f64,
    potential: &PotentialSpec,
    (sn, cn): (f64, f64),
    (sw, cw): (f64, f64),
    spec: &QuadratureSpec,
) -> f64 {
    let lam = sn.powf(1.0 / alpha);
    if lam == 0.0 {
        return potential.q(alpha, cn.abs()) * table.eval_t(sw, (cn - cw).abs());
    }
    let g = |u: f64| {
        let z = cn + lam * u;
        table.eval(u.abs()) * potential.q(alpha, z.abs()) * table.eval_t(sw, (z - cw).abs())
    };
    let knee = potential.knee(alpha);
    let mut bps: Vec<f64> = [-cn, cw - cn, knee - cn, -knee - cn].iter().map(|v| (v / lam).abs()).filter(|v| v.is_finite() && *v > 0.0).collect();
    bps.push(1.0);
    let opts = IntegrateOptions { breakpoints: bps, ..Default::default() };
    integrate_lenient(|u| g(u) + g(-u), 0.0, f64::INFINITY, &opts, spec).value
}

/// First perturbation term `int_0^tau ds int p_{tau-s}(z - w) q(w) p_s(w - y) dw`.
fn first_term(table: &DensityTable, alpha: f64, potential: &PotentialSpec, tau: f64, z: f64, y: f64, spec: &QuadratureSpec) -> f64 {
    let inner = |s: f64| {
        if s <= 0.5 * tau {
            kernel_product(table, alpha, potential, (s, y), (tau - s, z), spec)
        } else {
            kernel_product(table, alpha, potential, (tau - s, z), (s, y), spec)
        }
    };
    let opts = IntegrateOptions { breakpoints: vec![0.5 * tau], ..Default::default() };
    integrate_lenient(inner, 0.0, tau, &opts, spec).value
}

/// Perturbation terms of `p~_t(x, y)` for every `x` in `xs` at a fixed `y > 0`
/// in dimension one. The first term comes from nested adaptive quadrature at
/// every grid node and time level, the later ones from product integration
/// of the even and odd parts.
fn kernel_column(
    xs: &[f64],
    y: f64,
    t: f64,
    potential: &PotentialSpec,
    alpha: f64,
    n_terms: usize,
    series: &SeriesSpec,
    spec: &QuadratureSpec,
) -> Result<Vec<Vec<f64>>> {
    let table = density_table(1, alpha)?;
    let zeroth: Vec<f64> = xs.iter().map(|&x| table.eval_t(t, (x - y).abs())).collect();
    if n_terms == 0 || potential.kappa == 0.0 {
        let mut out: Vec<Vec<f64>> = zeroth.iter().map(|&v| vec![v]).collect();
        for o in &mut out {
            o.resize(n_terms + 1, 0.0);
        }
        return Ok(out);
    }
    if !potential.m.is_finite() {
        return domain("pointwise kernels need a finite truncation level");
    }
    let inner_spec = QuadratureSpec { rel_tol: spec.rel_tol.max(1e-8), abs_tol: 0.0, ..*spec };
    let base = series.grid(1)?;
    let mut nodes: Vec<f64> = base.nodes.iter().copied().chain(xs.iter().map(|x| x.abs())).chain([y]).filter(|&r| r > 0.0).collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nodes.dedup_by(|a, b| *a <= *b * (1.0 + 1e-10));
    let grid = RadialGrid::from_nodes(1, nodes)?;
    let n = grid.len();
    let steps = series.time_steps;
    let h = t / steps as f64;

    // even and odd parts of the first term at levels 1..=steps
    let jobs: Vec<(usize, usize)> = (1..=steps).flat_map(|k| (0..n).map(move |i| (k, i))).collect();
    let vals: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(k, i)| {
            let (tau, r) = (k as f64 * h, grid.nodes[i]);
            let plus = first_term(&table, alpha, potential, tau, r, y, &inner_spec);
            let minus = first_term(&table, alpha, potential, tau, -r, y, &inner_spec);
            (0.5 * (plus + minus), 0.5 * (plus - minus))
        })
        .collect();
    let mut even = vec![vec![0.0; n]; steps + 1];
    let mut odd = vec![vec![0.0; n]; steps + 1];
    for (&(k, i), &(e, o)) in jobs.iter().zip(&vals) {
        even[k][i] = e;
        odd[k][i] = o;
    }

    let q = potential.cell_averages(alpha, &grid);
    let mats = |parity: Parity, weight: TimeWeight| -> Result<Vec<Arc<KernelMatrix>>> {
        (1..=steps)
            .map(|j| {
                let w = Window::new((j - 1) as f64 * h, j as f64 * h, weight)?;
                shared_kernel_matrix(1, alpha, MatrixKind::Integrated(w), parity, &grid)
            })
            .collect()
    };
    let parts = [
        (mats(Parity::Even, TimeWeight::Up)?, mats(Parity::Even, TimeWeight::Down)?),
        (mats(Parity::Odd, TimeWeight::Up)?, mats(Parity::Odd, TimeWeight::Down)?),
    ];
    let step = |levels: &[Vec<f64>], (up, down): &(Vec<Arc<KernelMatrix>>, Vec<Arc<KernelMatrix>>)| {
        let qu: Vec<Vec<f64>> = levels.iter().map(|v| v.iter().zip(&q).map(|(a, b)| a * b).collect()).collect();
        let mut out = vec![vec![0.0; n]];
        for k in 1..=steps {
            let mut acc = vec![0.0; n];
            for m in 0..k {
                let j = k - m;
                for (a, b) in acc.iter_mut().zip(up[j - 1].apply(&qu[m])) {
                    *a += b;
                }
                for (a, b) in acc.iter_mut().zip(down[j - 1].apply(&qu[m + 1])) {
                    *a += b;
                }
            }
            out.push(acc);
        }
        out
    };

    let index: Vec<usize> = xs
        .iter()
        .map(|x| grid.nodes.iter().position(|&r| (r - x.abs()).abs() <= 1e-9 * r).expect("x is a grid node"))
        .collect();
    let mut out: Vec<Vec<f64>> = zeroth.iter().map(|&v| vec![v]).collect();
    // the first term at x itself, straight from the quadrature
    for (o, &x) in out.iter_mut().zip(xs) {
        o.push(first_term(&table, alpha, potential, t, x, y, &inner_spec));
    }
    for _ in 2..=n_terms {
        even = step(&even, &parts[0]);
        odd = step(&odd, &parts[1]);
        for ((o, &x), &i) in out.iter_mut().zip(xs).zip(&index) {
            let sign = if x < 0.0 { -1.0 } else { 1.0 };
            o.push(even[steps][i] + sign * odd[steps][i]);
        }
    }
    Ok(out)
}

/// `p~_t(x, y)` for `|x| = x_r`, `|y| = y_r` and the angle between them, which in
/// dimension one is `0` or `pi`. Sums the perturbation series up to `n_terms`.
#[allow(clippy::too_many_arguments)]
pub fn kernel_at_points(
    x_r: f64,
    y_r: f64,
    angle: f64,
    t: f64,
    potential: &PotentialSpec,
    params: &Params,
    n_terms: usize,
    series: &SeriesSpec,
    spec: &QuadratureSpec,
) -> Result<KernelValue> {
    if params.d != 1 {
        return domain("pointwise kernels are implemented in dimension one only");
    }
    if !(x_r > 0.0 && y_r > 0.0 && t > 0.0) {
        return domain("need x_r, y_r, t > 0");
    }
    let sign = if angle.abs() < 1e-12 {
        1.0
    } else if (angle.abs() - std::f64::consts::PI).abs() < 1e-12 {
        -1.0
    } else {
        return domain(format!("angle must be 0 or pi in dimension one, got {angle}"));
    };
    if n_terms > MAX_KERNEL_TERMS {
        return domain(format!("at most {MAX_KERNEL_TERMS} perturbation terms"));
    }
    let x = sign * x_r;
    let terms = kernel_column(&[x], y_r, t, potential, params.alpha, n_terms, series, spec)?.remove(0);
    Ok(KernelValue { x, y: y_r, t, value: terms.iter().sum(), terms })
}

/// `(1 + t^{delta/alpha}|x|^{-delta})(1 + t^{delta/alpha}|y|^{-delta}) min(t^{-d/alpha}, t|x-y|^{-d-alpha})`.
pub fn comparison_kernel(d: u32, alpha: f64, delta: f64, t: f64, x: f64, y: f64, dist: f64) -> f64 {
    let df = d as f64;
    let hx = 1.0 + t.powf(delta / alpha) * x.powf(-delta);
    let hy = 1.0 + t.powf(delta / alpha) * y.powf(-delta);
    hx * hy * t.powf(-df / alpha).min(t * dist.powf(-df - alpha))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateRow {
    pub x: f64,
    pub y: f64,
    pub value: f64,
    pub comparison: f64,
    pub ratio: f64,
}

/// Ratios of `p~_t(x, y)` to the comparison kernel over a sample grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub delta: f64,
    pub t: f64,
    pub n_terms: usize,
    pub rows: Vec<EstimateRow>,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl EstimateReport {
    /// All ratios inside `[lo, hi]`.
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        self.min_ratio >= lo && self.max_ratio <= hi
    }
}

/// Two-sided estimate diagnostic in dimension one: `p~_t(x, y)` for all signed
/// `x` in `xs` against every `y > 0` in `ys`.
#[allow(clippy::too_many_arguments)]
pub fn kernel_estimate_scan(
    delta: f64,
    t: f64,
    m: f64,
    xs: &[f64],
    ys: &[f64],
    n_terms: usize,
    params: &Params,
    series: &SeriesSpec,
    spec: &QuadratureSpec,
) -> Result<EstimateReport> {
    if params.d != 1 {
        return domain("pointwise kernels are implemented in dimension one only");
    }
    if n_terms > MAX_KERNEL_TERMS || xs.iter().any(|&x| x == 0.0) || ys.iter().any(|&y| !(y > 0.0)) {
        return domain("need nonzero x, positive y and at most six terms");
    }
    let potential = PotentialSpec::new(params, delta, m)?;
    let mut rows = Vec::new();
    for &y in ys {
        let cols = kernel_column(xs, y, t, &potential, params.alpha, n_terms, series, spec)?;
        for (&x, terms) in xs.iter().zip(cols) {
            let value: f64 = terms.iter().sum();
            let comparison = comparison_kernel(1, params.alpha, delta, t, x.abs(), y, (x - y).abs());
            rows.push(EstimateRow { x, y, value, comparison, ratio: value / comparison });
        }
    }
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(EstimateReport { delta, t, n_terms, rows, min_ratio, max_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn free_case_is_the_stable_semigroup() {
        let params = Params::new(3, 1.0, 2.0).unwrap();
        let spec = QuadratureSpec::default();
        let f = RadialFunction::gaussian(1.0, 1.0);
        let (u, st) = apply_semigroup(&f, 0.5, &PotentialSpec::free(), &params, &SeriesSpec::default(), &spec).unwrap();
        assert_eq!(st.n_terms, 0);
        let want = apply_exact(3, 1.0, 0.5, &f, &[0.5, 2.0], &spec).unwrap();
        assert!(rel(u.eval(0.5), want[0]) < 1e-3);
        assert!(rel(u.eval(2.0), want[1]) < 1e-3);
    }

    #[test]
    fn potential_raises_and_picard_agrees_with_marching() {
        let params = Params::new(3, 1.0, 2.0).unwrap();
        let spec = QuadratureSpec::default();
        let f = RadialFunction::indicator(1.0, 1.0);
        // small enough for the Picard budget
        let pot = PotentialSpec::new(&params, 0.5, 30.0).unwrap();
        let series = SeriesSpec { time_steps: 10, ..Default::default() };
        let tr = evolve(&f, 0.05, 10, &pot, &params, &series, &spec).unwrap();
        assert!(!tr.direct, "{:?}", tr.term_norms);
        let free = evolve(&f, 0.05, 10, &PotentialSpec::free(), &params, &series, &spec).unwrap();
        for (a, b) in tr.levels[10].iter().zip(&free.levels[10]) {
            assert!(a >= b);
        }
        let prop = Propagator::new(3, 1.0, &pot, 0.05, 10, &tr.grid).unwrap();
        assert!(prop.q.iter().all(|v| v.is_finite()));
        let marched = prop.march(&free.levels);
        for (a, b) in tr.levels[10].iter().zip(&marched[10]) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-12), "{a} {b}");
        }
    }

    fn small_series() -> SeriesSpec {
        SeriesSpec { time_steps: 5, per_decade: 8, r_min: 1e-2, r_max: 1e2, ..Default::default() }
    }

    #[test]
    fn monotone_in_truncation_and_below_the_exponential_bound() {
        let params = Params::new(3, 1.0, 2.0).unwrap();
        let spec = QuadratureSpec::default();
        let f = RadialFunction::indicator(1.0, 1.0);
        let series = small_series();
        let (t, steps) = (0.5, 5);
        let free = evolve(&f, t / steps as f64, steps, &PotentialSpec::free(), &params, &series, &spec).unwrap();
        let base = PotentialSpec::new(&params, 0.5, 1.0).unwrap();
        let mut prev = free.levels[steps].clone();
        for m in [1.0, 10.0, 100.0] {
            let tr = evolve(&f, t / steps as f64, steps, &base.with_m(m), &params, &series, &spec).unwrap();
            let u = &tr.levels[steps];
            for ((a, b), c) in u.iter().zip(&prev).zip(&free.levels[steps]) {
                assert!(*a >= b - 1e-12 * b.abs(), "M={m}: {a} < {b}");
                assert!(*a <= (m * t).exp() * c * (1.0 + 1e-9) + 1e-15, "M={m}: {a} above e^(Mt) P_t f");
            }
            prev = u.clone();
        }
    }

    #[test]
    fn picard_corrections_obey_the_factorial_bound() {
        let params = Params::new(3, 1.0, 2.0).unwrap();
        let spec = QuadratureSpec::default();
        let f = RadialFunction::gaussian(1.0, 1.0);
        let series = small_series();
        let (m, t) = (10.0, 0.5);
        let pot = PotentialSpec::new(&params, 0.5, m).unwrap();
        let tr = evolve(&f, t / 5.0, 5, &pot, &params, &series, &spec).unwrap();
        assert!(!tr.direct);
        let free = evolve(&f, t / 5.0, 5, &PotentialSpec::free(), &params, &series, &spec).unwrap();
        let norm = lp_pow_with_tail(&tr.grid, 1.0, &free.levels[5], 2.0).sqrt();
        let mut bound = norm;
        for (n, c) in tr.term_norms.iter().enumerate() {
            bound *= m * t / (n + 1) as f64;
            assert!(*c <= bound * (1.0 + 1e-6), "term {}: {c} > {bound}", n + 1);
        }
    }

    #[test]
    fn scaling_at_unit_time_is_exact() {
        let params = Params::new(3, 1.0, 2.0).unwrap();
        let pot = PotentialSpec::new(&params, 0.5, 10.0).unwrap();
        let f = RadialFunction::gaussian(1.0, 1.0);
        let rows = scaling_check(&f, &pot, &params, &[1.0], &small_series(), &QuadratureSpec::default()).unwrap();
        assert!(rows[0].rel_error < 1e-12, "{:?}", rows);
    }

    #[test]
    fn free_pointwise_kernel_is_the_stable_density() {
        let params = Params::new(1, 0.5, 2.0).unwrap();
        let spec = QuadratureSpec::default();
        let k = kernel_at_points(0.4, 1.3, std::f64::consts::PI, 0.7, &PotentialSpec::free(), &params, 3, &small_series(), &spec).unwrap();
        let want = crate::kernels::stable_density(1, 0.5, 0.7, 1.7).unwrap();
        assert!(rel(k.value, want) < 1e-6, "{} {want}", k.value);
        assert_eq!(&k.terms[1..], &[0.0; 3]);
    }

    #[test]
    fn pointwise_kernel_is_nearly_symmetric() {
        let params = Params::new(1, 0.5, 2.0).unwrap();
        let spec = QuadratureSpec::default();
        let pot = PotentialSpec::new(&params, 0.2, 1e3).unwrap();
        let series = SeriesSpec { time_steps: 3, per_decade: 4, ..small_series() };
        let a = kernel_at_points(0.3, 1.0, 0.0, 1.0, &pot, &params, 4, &series, &spec).unwrap();
        let b = kernel_at_points(1.0, 0.3, 0.0, 1.0, &pot, &params, 4, &series, &spec).unwrap();
        assert!(rel(a.value, b.value) < 1e-2, "{a:?} {b:?}");
        assert!(a.terms.windows(2).all(|w| w[1] > 0.0 && w[1] < w[0]), "{:?}", a.terms);
        assert!(kernel_at_points(0.3, 1.0, 1.0, 1.0, &pot, &params, 4, &series, &spec).is_err());
        assert!(kernel_at_points(0.3, 1.0, 0.0, 1.0, &pot.with_m(f64::INFINITY), &params, 2, &series, &spec).is_err());
    }
}
