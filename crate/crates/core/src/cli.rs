//! Command-line front end: argument parsing, TOML run configuration and
//! CSV / JSON-lines report writing.
//!
//! Exit codes: 0 on success, 1 when a check fails under `--strict`, 2 on
//! usage, configuration or domain errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forms::{figure1_data, inverse_p_grid, sharpness_scan, verify_identity};
use crate::montecarlo::{compare_with_reference, feynman_kac_estimate, McConfig};
use crate::quadrature::QuadratureSpec;
use crate::schrodinger::{
    apply_semigroup, bounded_predicate, boundedness_probe, contractivity_probe, duality_check, growth_witness, kernel_estimate_scan,
    semigroup_property_check, PotentialSpec, SeriesSpec,
};
use crate::specfun::{kappa_max, kappa_optimal, kappa_value, lemma7_gap, Params};
use crate::testfun::{identity_corpus, semigroup_corpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "frac-hardy", version, about = "Fractional Hardy inequalities, stable kernels and Feynman-Kac semigroups")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// TOML run configuration; flags take precedence over its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Exit with status 1 when a check fails.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Relative tolerance of adaptive quadrature.
    #[arg(long, global = true)]
    pub rel_tol: Option<f64>,
}

/// Model parameters shared by most commands.
#[derive(Debug, Args, Clone, Default)]
pub struct Model {
    #[arg(short = 'd', long = "dim")]
    pub d: Option<u32>,
    #[arg(short = 'a', long = "alpha")]
    pub alpha: Option<f64>,
    #[arg(short = 'p', long = "p")]
    pub p: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hardy constant kappa_beta, its maximum, or the gap between the optimal
    /// and the elementary L^p constant.
    Kappa {
        #[arg(short = 'd', long = "dim")]
        d: u32,
        #[arg(short = 'a', long = "alpha")]
        alpha: f64,
        #[arg(short = 'b', long = "beta", conflicts_with_all = ["max", "gap"])]
        beta: Option<f64>,
        #[arg(long, conflicts_with = "gap")]
        max: bool,
        /// Exponent p of the gap kappa_{(d-alpha)/p} - 4(p-1)/p^2 kappa_{(d-alpha)/2}.
        #[arg(long)]
        gap: Option<f64>,
    },
    /// Figure data: 1 = optimal vs elementary constant, 2 = contractivity
    /// region, 3 = boundedness region.
    Figure {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
        which: u8,
        #[command(flatten)]
        model: Model,
        /// Points of 1/p (figure 1) or grid size per axis (figures 2, 3).
        #[arg(long)]
        n: Option<usize>,
        /// Overlay numerical probe verdicts on a 3x3 subgrid.
        #[arg(long)]
        numeric: bool,
    },
    /// Scan of the three-power witness family against kappa_beta.
    Sharpness {
        #[command(flatten)]
        model: Model,
        #[arg(long, value_delimiter = ',')]
        betas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        radii: Vec<f64>,
    },
    /// Hardy identity on the fixed corpus.
    Identity {
        #[command(flatten)]
        model: Model,
        #[arg(long, value_delimiter = ',')]
        betas: Vec<f64>,
    },
    /// Feynman-Kac semigroup experiments.
    Fk {
        #[command(subcommand)]
        which: FkCommand,
    },
    /// Monte Carlo estimate of the Feynman-Kac semigroup.
    Mc {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        m: Option<f64>,
        #[arg(short = 't', long = "time")]
        t: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        x0: Vec<f64>,
        #[arg(long)]
        n_paths: Option<usize>,
        #[arg(long)]
        time_step: Option<f64>,
        /// Initial function: gaussian, ball or truncated_power.
        #[arg(long)]
        function: Option<String>,
        /// Also solve the series and compare.
        #[arg(long)]
        compare: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum FkCommand {
    /// Largest corpus ratio ||P_t f||_p / ||f||_p against the predicate.
    Contractivity {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        m: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
    },
    /// Growth of ||P_t f||_p^p at t = 0 for a Hardy witness.
    Growth {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Boundary slope of P_1 1_B and truncated norms.
    Boundedness {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Semigroup property P_s P_t = P_{s+t}.
    Chk {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        m: Option<f64>,
        #[arg(short = 's', long = "s")]
        s: Option<f64>,
        #[arg(short = 't', long = "time")]
        t: Option<f64>,
    },
    /// Symmetry of the pairing <P_t f, g> = <f, P_t g>.
    Duality {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        m: Option<f64>,
        #[arg(short = 't', long = "time")]
        t: Option<f64>,
    },
    /// Two-sided estimate of the kernel in dimension one.
    Kernel {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        m: Option<f64>,
        #[arg(short = 't', long = "time")]
        t: Option<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        y: Vec<f64>,
        #[arg(long)]
        terms: Option<usize>,
    },
}

/// Quadrature overrides of a run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureOverrides {
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub max_depth: Option<u32>,
}

/// Series solver overrides of a run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesOverrides {
    pub time_steps: Option<usize>,
    pub per_decade: Option<usize>,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
}

/// Keys of a TOML run configuration. Every command reads the keys it needs;
/// command-line flags win.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub d: Option<u32>,
    pub alpha: Option<f64>,
    pub p: Option<f64>,
    pub delta: Option<f64>,
    pub m: Option<f64>,
    pub t: Option<f64>,
    pub s: Option<f64>,
    pub betas: Option<Vec<f64>>,
    pub radii: Option<Vec<f64>>,
    pub times: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    pub n_paths: Option<usize>,
    pub time_step: Option<f64>,
    pub function: Option<String>,
    pub seed: Option<u64>,
    pub output_path: Option<PathBuf>,
    pub output_format: Option<Format>,
    pub quadrature: Option<QuadratureOverrides>,
    pub series: Option<SeriesOverrides>,
}

/// 1-based line of the first assignment to `key` in `text`.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
            let msg = e.message().to_string();
            match line {
                Some(l) => Error::Config(format!("{origin}:{l}: {msg}")),
                None => Error::Config(format!("{origin}: {msg}")),
            }
        })?;
        cfg.validate(text, origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    fn validate(&self, text: &str, origin: &str) -> Result<()> {
        let fail = |key: &str, msg: String| -> Result<()> {
            let at = key_line(text, key).map(|l| format!("{origin}:{l}")).unwrap_or_else(|| origin.to_string());
            Err(Error::Config(format!("{at}: {key}: {msg}")))
        };
        if let Some(d) = self.d {
            if !(1..=3).contains(&d) {
                return fail("d", format!("dimension must be 1, 2 or 3, got {d}"));
            }
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a < 2.0) {
                return fail("alpha", format!("must lie in (0, 2), got {a}"));
            }
        }
        if let Some(p) = self.p {
            if !(p > 1.0 && p.is_finite()) {
                return fail("p", format!("must lie in (1, inf), got {p}"));
            }
        }
        for (key, v) in [("m", self.m), ("t", self.t), ("s", self.s), ("time_step", self.time_step)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return fail(key, format!("must be positive, got {v}"));
                }
            }
        }
        if let Some(n) = self.n_paths {
            if n < 2 {
                return fail("n_paths", format!("need at least two paths, got {n}"));
            }
        }
        if let Some(f) = &self.function {
            if !semigroup_corpus().iter().any(|(name, _)| name == f) {
                return fail("function", format!("unknown function {f:?}"));
            }
        }
        Ok(())
    }
}

/// Settings after merging flags and configuration.
struct Context {
    cfg: RunConfig,
    out: Option<PathBuf>,
    format: Format,
    seed: u64,
    strict: bool,
    spec: QuadratureSpec,
    series: SeriesSpec,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl Context {
    fn new(common: &Common) -> Result<Self> {
        let cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut spec = QuadratureSpec::default();
        if let Some(q) = &cfg.quadrature {
            spec.rel_tol = q.rel_tol.unwrap_or(spec.rel_tol);
            spec.abs_tol = q.abs_tol.unwrap_or(spec.abs_tol);
            spec.max_depth = q.max_depth.unwrap_or(spec.max_depth);
        }
        if let Some(r) = common.rel_tol {
            spec.rel_tol = r;
        }
        let mut series = SeriesSpec::default();
        if let Some(s) = &cfg.series {
            series.time_steps = s.time_steps.unwrap_or(series.time_steps);
            series.per_decade = s.per_decade.unwrap_or(series.per_decade);
            series.r_min = s.r_min.unwrap_or(series.r_min);
            series.r_max = s.r_max.unwrap_or(series.r_max);
        }
        Ok(Self {
            out: common.out.clone().or(cfg.output_path.clone()),
            format: common.format.or(cfg.output_format).unwrap_or(Format::Csv),
            seed: common.seed.or(cfg.seed).unwrap_or(1),
            strict: common.strict,
            spec,
            series,
            cfg,
        })
    }

    fn params(&self, model: &Model, default_p: Option<f64>) -> Result<Params> {
        let d = model.d.or(self.cfg.d).ok_or_else(|| usage("missing -d (or d in the configuration)"))?;
        let alpha = model.alpha.or(self.cfg.alpha).ok_or_else(|| usage("missing -a (or alpha in the configuration)"))?;
        let p = model.p.or(self.cfg.p).or(default_p).ok_or_else(|| usage("missing -p (or p in the configuration)"))?;
        Params::new(d, alpha, p)
    }

    fn get(&self, flag: Option<f64>, key: Option<f64>, name: &str, default: Option<f64>) -> Result<f64> {
        flag.or(key).or(default).ok_or_else(|| usage(format!("missing --{name}")))
    }

    fn list(&self, flag: &[f64], key: &Option<Vec<f64>>, default: &[f64]) -> Vec<f64> {
        if !flag.is_empty() {
            flag.to_vec()
        } else {
            key.clone().unwrap_or_else(|| default.to_vec())
        }
    }
}

/// Rows of one run plus the overall verdict of its checks, if any.
struct Report {
    command: String,
    settings: Value,
    rows: Vec<Value>,
    verdict: Option<bool>,
}

fn row(v: impl Serialize) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        other => {
            let s = other.to_string();
            format!("\"{}\"", s.replace('"', "\"\""))
        }
    }
}

/// Writes a report as CSV with `#` provenance lines or as JSON lines led by a
/// provenance record.
fn render(report: &Report, format: Format, seed: u64) -> Result<String> {
    let hash = {
        let payload = json!({ "command": report.command, "settings": report.settings, "seed": seed });
        let digest = Sha256::digest(serde_json::to_string(&payload)?.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect::<String>()
    };
    let mut out = String::new();
    match format {
        Format::Csv => {
            out += &format!("# tool: frac-hardy {}\n", env!("CARGO_PKG_VERSION"));
            out += &format!("# command: {}\n", report.command);
            out += &format!("# config_hash: {hash}\n");
            out += &format!("# seed: {seed}\n");
            if let Some(v) = report.verdict {
                out += &format!("# verdict: {}\n", if v { "pass" } else { "fail" });
            }
            let mut columns: Vec<String> = Vec::new();
            for r in &report.rows {
                if let Value::Object(m) = r {
                    for k in m.keys() {
                        if !columns.contains(k) {
                            columns.push(k.clone());
                        }
                    }
                }
            }
            out += &columns.join(",");
            out.push('\n');
            for r in &report.rows {
                let line: Vec<String> = columns.iter().map(|c| r.get(c).map(cell).unwrap_or_default()).collect();
                out += &line.join(",");
                out.push('\n');
            }
        }
        Format::Json => {
            let prov = json!({
                "provenance": {
                    "tool": "frac-hardy",
                    "version": env!("CARGO_PKG_VERSION"),
                    "command": report.command,
                    "config_hash": hash,
                    "seed": seed,
                    "settings": report.settings,
                    "verdict": report.verdict,
                }
            });
            out += &serde_json::to_string(&prov)?;
            out.push('\n');
            for r in &report.rows {
                out += &serde_json::to_string(r)?;
                out.push('\n');
            }
        }
    }
    Ok(out)
}

fn potential(params: &Params, delta: f64, m: f64) -> Result<PotentialSpec> {
    PotentialSpec::new(params, delta, m)
}

fn figure(ctx: &Context, which: u8, model: &Model, n: Option<usize>, numeric: bool) -> Result<Report> {
    let d = model.d.or(ctx.cfg.d).unwrap_or(3);
    let alpha = model.alpha.or(ctx.cfg.alpha).unwrap_or(1.0);
    let settings = json!({ "figure": which, "d": d, "alpha": alpha, "n": n, "numeric": numeric });
    let mut rows = Vec::new();
    if which == 1 {
        let ps = inverse_p_grid(n.unwrap_or(200));
        for r in figure1_data(d, alpha, &ps)? {
            let gap = r.kappa_opt - r.kappa_subgoal;
            // closed forms: rounding bound only
            let err = 8.0 * f64::EPSILON * r.kappa_opt.abs().max(r.kappa_subgoal.abs());
            rows.push(json!({
                "inv_p": r.inv_p, "kappa_opt": r.kappa_opt, "kappa_subgoal": r.kappa_subgoal, "gap": gap, "err": err,
            }));
        }
        return Ok(Report { command: "figure 1".into(), settings, rows, verdict: None });
    }
    let n = n.unwrap_or(20).max(2);
    let base = Params::new(d, alpha, 2.0)?;
    let half_gap = base.gap() / 2.0;
    let deltas: Vec<f64> = (0..n).map(|i| half_gap * i as f64 / (n - 1) as f64).collect();
    let inv_ps: Vec<f64> = (1..=n).map(|j| j as f64 / (n + 1) as f64).collect();
    let probe_idx = [n / 4, n / 2, (3 * n) / 4];
    let coarse = SeriesSpec { time_steps: 10, per_decade: 16, ..ctx.series };
    let mut agree = true;
    for (i, &delta) in deltas.iter().enumerate() {
        for (j, &inv_p) in inv_ps.iter().enumerate() {
            let p = 1.0 / inv_p;
            let params = Params::new(d, alpha, p)?;
            let probe = numeric && probe_idx.contains(&i) && probe_idx.contains(&j);
            let mut r = Map::new();
            r.insert("delta".into(), json!(delta));
            r.insert("inv_p".into(), json!(inv_p));
            if which == 2 {
                let k = kappa_value(d, alpha, delta)?;
                let k_opt = kappa_optimal(&params);
                let verdict = k <= k_opt * (1.0 + 1e-12);
                r.insert("kappa_delta".into(), json!(k));
                r.insert("kappa_opt".into(), json!(k_opt));
                r.insert("err".into(), json!(8.0 * f64::EPSILON * k.max(k_opt)));
                r.insert("verdict".into(), json!(verdict));
                if numeric {
                    if probe {
                        let rep = contractivity_probe(p, delta, &semigroup_corpus(), &[0.5, 1.0], 1e4, &params, &coarse, &ctx.spec)?;
                        let err = rep.rows.iter().map(|x| x.err).fold(0.0, f64::max);
                        agree &= rep.consistent(1e-2);
                        r.insert("numeric_max_ratio".into(), json!(rep.max_ratio));
                        r.insert("numeric_err".into(), json!(err));
                        r.insert("numeric_consistent".into(), json!(rep.consistent(1e-2)));
                    } else {
                        r.insert("numeric_max_ratio".into(), Value::Null);
                        r.insert("numeric_err".into(), Value::Null);
                        r.insert("numeric_consistent".into(), Value::Null);
                    }
                }
            } else {
                let pstar = p.max(p / (p - 1.0));
                let verdict = bounded_predicate(d, p, delta);
                r.insert("d_over_pstar".into(), json!(d as f64 / pstar));
                r.insert("verdict".into(), json!(verdict));
                if numeric {
                    if probe {
                        let rep = boundedness_probe(p, delta, &params, &coarse, &ctx.spec)?;
                        agree &= rep.consistent;
                        r.insert("numeric_slope".into(), json!(rep.slope));
                        r.insert("numeric_consistent".into(), json!(rep.consistent));
                    } else {
                        r.insert("numeric_slope".into(), Value::Null);
                        r.insert("numeric_consistent".into(), Value::Null);
                    }
                }
            }
            rows.push(Value::Object(r));
        }
    }
    let verdict = numeric.then_some(agree);
    Ok(Report { command: format!("figure {which}"), settings, rows, verdict })
}

fn default_betas(params: &Params) -> Vec<f64> {
    let gap = params.gap();
    let mut b = vec![gap / params.p, gap / 2.0];
    b.dedup_by(|a, c| (*a - *c).abs() < 1e-12);
    b
}

fn run_fk(ctx: &Context, which: &FkCommand) -> Result<Report> {
    let cfg = &ctx.cfg;
    match which {
        FkCommand::Contractivity { model, delta, m, times } => {
            let params = ctx.params(model, None)?;
            let delta = ctx.get(*delta, cfg.delta, "delta", None)?;
            let m = ctx.get(*m, cfg.m, "m", Some(1e4))?;
            let times = ctx.list(times, &cfg.times, &[0.25, 0.5, 1.0]);
            let rep = contractivity_probe(params.p, delta, &semigroup_corpus(), &times, m, &params, &ctx.series, &ctx.spec)?;
            let mut rows: Vec<Value> = rep.rows.iter().map(row).collect::<Result<_>>()?;
            let err = rep.rows.iter().map(|r| r.err).fold(0.0, f64::max);
            rows.push(json!({
                "name": "summary", "max_ratio": rep.max_ratio, "err": err,
                "predicted_contractive": rep.predicted_contractive, "consistent": rep.consistent(1e-2),
            }));
            let settings = json!({ "params": params, "delta": delta, "m": m, "times": times, "series": ctx.series, "spec": ctx.spec });
            Ok(Report { command: "fk contractivity".into(), settings, rows, verdict: Some(rep.consistent(1e-2)) })
        }
        FkCommand::Growth { model, delta } => {
            let params = ctx.params(model, None)?;
            let delta = ctx.get(*delta, cfg.delta, "delta", None)?;
            let rep = growth_witness(params.p, delta, &params, &ctx.series, &ctx.spec)?;
            let settings = json!({ "params": params, "delta": delta, "series": ctx.series, "spec": ctx.spec });
            Ok(Report { command: "fk growth".into(), settings, rows: vec![row(&rep)?], verdict: Some(rep.pass) })
        }
        FkCommand::Boundedness { model, delta } => {
            let params = ctx.params(model, None)?;
            let delta = ctx.get(*delta, cfg.delta, "delta", None)?;
            let rep = boundedness_probe(params.p, delta, &params, &ctx.series, &ctx.spec)?;
            let settings = json!({ "params": params, "delta": delta, "series": ctx.series, "spec": ctx.spec });
            Ok(Report { command: "fk boundedness".into(), settings, rows: vec![row(&rep)?], verdict: Some(rep.consistent) })
        }
        FkCommand::Chk { model, delta, m, s, t } => {
            let params = ctx.params(model, Some(2.0))?;
            let delta = ctx.get(*delta, cfg.delta, "delta", None)?;
            let m = ctx.get(*m, cfg.m, "m", Some(100.0))?;
            let s = ctx.get(*s, cfg.s, "s", Some(0.5))?;
            let t = ctx.get(*t, cfg.t, "time", Some(0.5))?;
            let f = crate::testfun::RadialFunction::gaussian(1.0, 1.0);
            let rep = semigroup_property_check(&f, s, t, &potential(&params, delta, m)?, &params, &ctx.series.with_p(params.p), &ctx.spec)?;
            let settings = json!({ "params": params, "delta": delta, "m": m, "s": s, "t": t, "series": ctx.series, "spec": ctx.spec });
            Ok(Report { command: "fk chk".into(), settings, rows: vec![row(&rep)?], verdict: Some(rep.pass) })
        }
        FkCommand::Duality { model, delta, m, t } => {
            let params = ctx.params(model, Some(2.0))?;
            let delta = ctx.get(*delta, cfg.delta, "delta", None)?;
            let m = ctx.get(*m, cfg.m, "m", Some(100.0))?;
            let t = ctx.get(*t, cfg.t, "time", Some(0.5))?;
            let f = crate::testfun::RadialFunction::gaussian(1.0, 1.0);
            let g = crate::testfun::RadialFunction::indicator(1.0, 1.0);
            let rep = duality_check(&f, &g, t, &potential(&params, delta, m)?, &params, &ctx.series, &ctx.spec)?;
            let pass = rep.rel_diff <= 1e-3;
            let settings = json!({ "params": params, "delta": delta, "m": m, "t": t, "series": ctx.series, "spec": ctx.spec });
            let mut r = row(&rep)?;
            r["pass"] = json!(pass);
            Ok(Report { command: "fk duality".into(), settings, rows: vec![r], verdict: Some(pass) })
        }
        FkCommand::Kernel { model, delta, m, t, x, y, terms } => {
            let params = ctx.params(model, Some(2.0))?;
            let delta = ctx.get(*delta, cfg.delta, "delta", None)?;
            let m = ctx.get(*m, cfg.m, "m", Some(1e3))?;
            let t = ctx.get(*t, cfg.t, "time", Some(1.0))?;
            let xs = if x.is_empty() { vec![-1.0, -0.3, 0.1, 0.3, 1.0, 3.0] } else { x.clone() };
            let ys = if y.is_empty() { vec![0.3, 1.0] } else { y.clone() };
            let terms = terms.unwrap_or(crate::schrodinger::MAX_KERNEL_TERMS);
            let series = SeriesSpec { time_steps: 4, per_decade: 6, r_min: 1e-2, r_max: 1e2, ..ctx.series };
            let rep = kernel_estimate_scan(delta, t, m, &xs, &ys, terms, &params, &series, &ctx.spec)?;
            let settings = json!({ "params": params, "delta": delta, "m": m, "t": t, "terms": terms, "series": series, "spec": ctx.spec });
            let mut rows: Vec<Value> = rep.rows.iter().map(row).collect::<Result<_>>()?;
            rows.push(json!({ "x": null, "y": null, "min_ratio": rep.min_ratio, "max_ratio": rep.max_ratio }));
            Ok(Report { command: "fk kernel".into(), settings, rows, verdict: None })
        }
    }
}

fn run(ctx: &Context, command: &Command) -> Result<Option<Report>> {
    let cfg = &ctx.cfg;
    let report = match command {
        Command::Kappa { d, alpha, beta, max, gap } => {
            // 15 significant digits hide the last-bit noise of the Gamma ratios
            let short = |x: f64| format!("{:.14e}", x).parse::<f64>().unwrap_or(x);
            let text = if let Some(b) = beta {
                format!("{}", short(kappa_value(*d, *alpha, *b)?))
            } else if *max {
                format!("{}", short(kappa_max(&Params::new(*d, *alpha, 2.0)?).value))
            } else if let Some(p) = gap {
                format!("{}", short(lemma7_gap(&Params::new(*d, *alpha, *p)?)))
            } else {
                return Err(usage("kappa needs one of -b, --max, --gap"));
            };
            println!("{text}");
            return Ok(None);
        }
        Command::Figure { which, model, n, numeric } => figure(ctx, *which, model, *n, *numeric)?,
        Command::Sharpness { model, betas, radii } => {
            let params = ctx.params(model, None)?;
            let gap = params.gap();
            let (lo, hi) = (gap / params.p, (params.p - 1.0) * gap / params.p);
            let default: Vec<f64> = (1..=3).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect();
            let betas = ctx.list(betas, &cfg.betas, &default);
            let radii = ctx.list(radii, &cfg.radii, &[10.0, 100.0, 1000.0]);
            let rows = sharpness_scan(&params, &betas, &radii, &ctx.spec)?;
            let verdict = rows.iter().any(|r| r.beats());
            let rows: Vec<Value> = rows
                .iter()
                .map(|r| {
                    let mut v = row(r)?;
                    v["beats"] = json!(r.beats());
                    Ok(v)
                })
                .collect::<Result<_>>()?;
            let settings = json!({ "params": params, "betas": betas, "radii": radii, "spec": ctx.spec });
            Report { command: "sharpness".into(), settings, rows, verdict: Some(verdict) }
        }
        Command::Identity { model, betas } => {
            let params = ctx.params(model, None)?;
            let betas = ctx.list(betas, &cfg.betas, &default_betas(&params));
            let mut rows = Vec::new();
            let mut all = true;
            for (name, f) in identity_corpus(&params)? {
                for &beta in &betas {
                    let rep = verify_identity(&f, beta, &params, &ctx.spec)?;
                    all &= rep.pass;
                    let mut v = json!({ "function": name, "beta": beta, "relative_residual": rep.relative_residual() });
                    if let (Value::Object(a), Value::Object(b)) = (&mut v, row(&rep)?) {
                        a.extend(b);
                    }
                    rows.push(v);
                }
            }
            let settings = json!({ "params": params, "betas": betas, "spec": ctx.spec });
            Report { command: "identity".into(), settings, rows, verdict: Some(all) }
        }
        Command::Fk { which } => run_fk(ctx, which)?,
        Command::Mc { model, delta, m, t, x0, n_paths, time_step, function, compare } => {
            let params = ctx.params(model, Some(2.0))?;
            let delta = ctx.get(*delta, cfg.delta, "delta", None)?;
            let m = ctx.get(*m, cfg.m, "m", Some(100.0))?;
            let t = ctx.get(*t, cfg.t, "time", Some(0.5))?;
            let x0 = ctx.list(x0, &cfg.x0, &[0.5, 2.0]);
            let mc = McConfig {
                n_paths: n_paths.or(cfg.n_paths).unwrap_or(100_000),
                time_step: time_step.or(cfg.time_step).unwrap_or(0.01),
                seed: ctx.seed,
                m,
            };
            let name = function.clone().or(cfg.function.clone()).unwrap_or_else(|| "ball".into());
            let f = semigroup_corpus()
                .into_iter()
                .find(|(n, _)| *n == name)
                .map(|(_, f)| f)
                .ok_or_else(|| usage(format!("unknown function {name:?}")))?;
            let pot = potential(&params, delta, m)?;
            let mut rows = Vec::new();
            let mut all = true;
            if *compare {
                let (u, _) = apply_semigroup(&f, t, &pot, &params, &ctx.series, &ctx.spec)?;
                for &x in &x0 {
                    let c = compare_with_reference(&f, x, t, &pot, &params, &mc, u.eval(x))?;
                    all &= c.pass;
                    rows.push(json!({
                        "x0": x, "mean": c.estimate.mean, "stderr": c.estimate.stderr, "n_paths": c.estimate.n_paths,
                        "seed": c.estimate.seed, "config_hash": c.estimate.config_hash, "series": c.reference,
                        "coarse_mean": c.coarse_mean, "allowance": c.allowance, "pass": c.pass,
                    }));
                }
            } else {
                for &x in &x0 {
                    let e = feynman_kac_estimate(&f, x, t, &pot, &params, &mc)?;
                    let mut v = json!({ "x0": x });
                    if let (Value::Object(a), Value::Object(b)) = (&mut v, row(&e)?) {
                        a.extend(b);
                    }
                    rows.push(v);
                }
            }
            let settings = json!({ "params": params, "delta": delta, "t": t, "function": name, "mc": mc, "compare": compare });
            Report { command: "mc".into(), settings, rows, verdict: compare.then_some(all) }
        }
    };
    Ok(Some(report))
}

fn emit(ctx: &Context, report: &Report) -> Result<()> {
    let format = match (&ctx.out, ctx.format) {
        (Some(p), f) if p.extension().is_some_and(|e| e == "jsonl" || e == "json") && ctx.cfg.output_format.is_none() => {
            if f == Format::Csv { Format::Json } else { f }
        }
        (_, f) => f,
    };
    let text = render(report, format, ctx.seed)?;
    match &ctx.out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = Context::new(&cli.common).and_then(|ctx| {
        let report = run(&ctx, &cli.command)?;
        if let Some(r) = &report {
            emit(&ctx, r)?;
        }
        Ok((ctx.strict, report.and_then(|r| r.verdict)))
    });
    match result {
        Ok((true, Some(false))) => {
            eprintln!("check failed");
            1
        }
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_point_at_lines() {
        let text = "d = 3\nalpha = 2.5\n";
        let err = RunConfig::parse(text, "run.toml").unwrap_err().to_string();
        assert!(err.contains("run.toml:2: alpha"), "{err}");
        let err = RunConfig::parse("d = 3\nbogus = 1\n", "run.toml").unwrap_err().to_string();
        assert!(err.contains("run.toml:2"), "{err}");
        let cfg = RunConfig::parse("d = 3\nalpha = 1.0\n[quadrature]\nrel_tol = 1e-6\n", "x").unwrap();
        assert_eq!(cfg.quadrature.unwrap().rel_tol, Some(1e-6));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(main_with_args(["frac-hardy", "kappa", "-d", "3", "-a", "1", "-b", "0.5"]), 0);
        assert_eq!(main_with_args(["frac-hardy", "kappa", "-d", "3", "-a", "2.5", "-b", "0.5"]), 2);
        assert_eq!(main_with_args(["frac-hardy", "nonsense"]), 2);
    }

    #[test]
    fn figure_reports_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        for out in [&a, &b] {
            let code = main_with_args(["frac-hardy", "figure", "3", "-d", "3", "-a", "1", "--out", out.to_str().unwrap()]);
            assert_eq!(code, 0);
        }
        let text = fs::read_to_string(&a).unwrap();
        assert_eq!(text, fs::read_to_string(&b).unwrap());
        assert!(text.starts_with("# tool: frac-hardy"));
        assert!(text.contains("# config_hash: "));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 401);
    }

    #[test]
    fn figure_one_json_lines() {
        let ctx = Context::new(&Common::default()).unwrap();
        let rep = figure(&ctx, 1, &Model { d: Some(3), alpha: Some(1.0), p: None }, Some(9), false).unwrap();
        let text = render(&rep, Format::Json, 1).unwrap();
        let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert!(lines[0].get("provenance").is_some());
        // 1/p = 1/2 is the fifth point of nine
        let mid = &lines[5];
        assert!((mid["inv_p"].as_f64().unwrap() - 0.5).abs() < 1e-15);
        assert!(mid["gap"].as_f64().unwrap().abs() < 1e-15);
    }

    #[test]
    fn subgoal_and_gap_agree() {
        use crate::specfun::subgoal_constant;
        let p = Params::new(3, 1.0, 4.0).unwrap();
        assert!((kappa_optimal(&p) - subgoal_constant(&p) - lemma7_gap(&p)).abs() < 1e-15);
    }
}
