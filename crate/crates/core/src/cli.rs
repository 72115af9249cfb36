//! Command-line experiments.
//!
//! Each `cmd_*` function runs one experiment from an [`ExperimentConfig`]
//! and returns an [`ExperimentReport`]; [`run`] parses arguments, writes
//! CSV files into `--out` and prints the report. Failures map to exit codes:
//! 2 for invalid input, 3 for an environment in the wrong regime, 4 when a
//! walk never reaches the requested visit, 1 otherwise.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::blp::{self, BlpError, BlpKind, RayKnightOptions};
use crate::diffusion::{self, DiffusionError};
use crate::env::{compute_params, theta_coupled, EnvError, EnvFile, EnvSpec, ModelParams, Regime};
use crate::seed::{self, Stream};
use crate::stats::{self, median, ExperimentReport, SampleSet, StatsError};
use crate::walk::{self, WalkError, WalkOptions, Walker};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self { code: 2, kind: "invalid-input", message: message.into() }
    }

    pub fn regime(message: impl Into<String>) -> Self {
        Self { code: 3, kind: "wrong-regime", message: message.into() }
    }

    pub fn unreached(message: impl Into<String>) -> Self {
        Self { code: 4, kind: "visit-unreached", message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: 1, kind: "runtime", message: message.into() }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        Self::invalid(e.to_string())
    }
}

impl From<WalkError> for CliError {
    fn from(e: WalkError) -> Self {
        match e {
            WalkError::Precondition(m) => Self::invalid(m),
            other => Self::runtime(other.to_string()),
        }
    }
}

impl From<BlpError> for CliError {
    fn from(e: BlpError) -> Self {
        match e {
            BlpError::Domain(m) => Self::invalid(m),
            e @ BlpError::Inconclusive { .. } => Self::unreached(e.to_string()),
            other => Self::runtime(other.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::Domain(m) => Self::invalid(m),
            other => Self::runtime(other.to_string()),
        }
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::Domain(m) => Self::invalid(m),
            other => Self::runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Pass/fail thresholds; overridable with `--thresholds <json file>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub ks: f64,
    pub tv: f64,
    pub tail: f64,
    /// Relative tolerance of the quadratic-variation check.
    pub qv_rel: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { ks: 0.05, tv: 0.05, tail: 0.15, qv_rel: 0.02 }
    }
}

/// A parsed environment argument.
#[derive(Debug, Clone)]
pub struct LoadedEnv {
    pub spec: EnvSpec,
    /// Shared realization seed from the file, if any.
    pub quenched: Option<u64>,
}

impl LoadedEnv {
    pub fn new(spec: EnvSpec) -> Self {
        Self { spec, quenched: None }
    }

    pub fn describe(&self) -> serde_json::Value {
        serde_json::to_value(EnvFile::from_spec(&self.spec, self.quenched)).expect("environment serializes")
    }
}

/// Accepts a path to a JSON environment file, inline JSON, or an inline
/// comma-separated list of periodic cookie probabilities.
pub fn load_env(arg: &str) -> Result<LoadedEnv> {
    let text = arg.trim();
    let file = if text.starts_with('{') {
        EnvFile::parse(text)?
    } else if Path::new(text).is_file() {
        EnvFile::parse(&std::fs::read_to_string(text)?)?
    } else {
        let probs = text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| CliError::invalid(format!("'{text}' is neither a file, JSON, nor a probability list")))?;
        EnvFile { kind: "periodic".into(), probs: Some(probs), ..EnvFile::default() }
    };
    Ok(LoadedEnv { spec: file.to_spec()?, quenched: file.seed })
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub env: LoadedEnv,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub n: Option<u64>,
    pub dt: Option<f64>,
    pub out: Option<PathBuf>,
    pub thresholds: Thresholds,
}

impl ExperimentConfig {
    pub fn new(env: LoadedEnv) -> Self {
        Self { env, seed: None, reps: None, n: None, dt: None, out: None, thresholds: Thresholds::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_n(mut self, n: u64) -> Self {
        self.n = Some(n);
        self
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = Some(reps);
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn with_out(mut self, out: impl Into<PathBuf>) -> Self {
        self.out = Some(out.into());
        self
    }

    /// Stochastic experiments refuse to run without an explicit seed.
    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| CliError::invalid("--seed is required for stochastic experiments"))
    }

    fn report(&self, experiment: &str) -> ExperimentReport {
        ExperimentReport::new(experiment, self.env.describe(), self.env.spec.params().ok())
    }

    fn params(&self) -> Result<ModelParams> {
        Ok(self.env.spec.params()?)
    }

    fn csv(&self, name: &str) -> Result<Option<BufWriter<File>>> {
        let Some(dir) = &self.out else { return Ok(None) };
        std::fs::create_dir_all(dir)?;
        Ok(Some(BufWriter::new(File::create(dir.join(name))?)))
    }
}

fn require_flt_regime(spec: &EnvSpec, allow_nonzero_mean: bool) -> Result<ModelParams> {
    if let Some(p) = spec.as_periodic() {
        if !p.mean_flag() && !allow_nonzero_mean {
            return Err(CliError::regime(format!("cookie mean {} is not 1/2; pass --allow-nonzero-mean to override", p.mean())));
        }
    }
    let params = spec.params()?;
    match params.regime() {
        Regime::RecurrentNonBoundary => Ok(params),
        other => Err(CliError::regime(format!("functional limit needs a recurrent non-boundary environment, got {other}"))),
    }
}

pub fn cmd_params(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut r = cfg.report("params");
    let mut warnings = Vec::new();
    match &cfg.env.spec {
        EnvSpec::Periodic(p) => {
            let params = compute_params(p);
            r.stat("regime", params.regime().to_string());
            r.stat("mean", p.mean()).stat("mean_flag", p.mean_flag());
            r.stat("identity_residuals", params.identity_residuals(p));
            if !p.mean_flag() {
                warnings.push(format!("cookie mean {} differs from 1/2; flt commands will refuse", p.mean()));
            }
        }
        EnvSpec::Markov(m) => {
            let params = cfg.params()?;
            r.stat("regime", params.regime().to_string());
            r.stat("stationary_mean", m.stationary_mean()?);
        }
        EnvSpec::Coupled(c) => {
            let base = compute_params(c.base());
            let theta = theta_coupled(base.theta, base.nu, c.h(), c.eps())?;
            r.params = Some(base);
            r.stat("theta_coupled", theta).stat("base_regime", base.regime().to_string());
        }
    }
    if !warnings.is_empty() {
        r.stat("warnings", &warnings);
    }
    Ok(r)
}

pub fn cmd_classify(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut r = cfg.report("classify");
    r.stat("regime", cfg.params()?.regime().to_string());
    Ok(r)
}

#[derive(Debug, Clone, Copy, Args)]
pub struct WalkArgs {
    /// Stop at the (m+1)-st visit to this site instead of after n steps.
    #[arg(long, requires = "m", allow_hyphen_values = true)]
    pub x: Option<i64>,
    #[arg(long, requires = "x")]
    pub m: Option<u32>,
    /// Exponent of the rare-site threshold n^γ.
    #[arg(long, default_value_t = 0.25)]
    pub gamma: f64,
    /// Step cap when walking to a visit.
    #[arg(long, default_value_t = 100_000_000)]
    pub step_cap: u64,
}

pub fn cmd_walk(cfg: &ExperimentConfig, args: WalkArgs) -> Result<ExperimentReport> {
    let seed = cfg.seed()?;
    let reps = cfg.reps.unwrap_or(1);
    let n = cfg.n.unwrap_or(10_000) as usize;
    let mut r = cfg.report("walk");
    let spec = &cfg.env.spec;

    if let (Some(x), Some(m)) = (args.x, args.m) {
        let lambda = {
            let mut env = walk::replica_environment(spec, seed, 0, cfg.env.quenched);
            let mut w = Walker::new(&mut env, walk::replica_seed(seed, 0), WalkOptions::default());
            if !w.run_to_visit(x, m, args.step_cap) {
                return Err(CliError::unreached(format!("visit {} to {x} not reached within {} steps", m + 1, args.step_cap)));
            }
            w.time() as usize
        };
        let mut env = walk::replica_environment(spec, seed, 0, cfg.env.quenched);
        let rec = walk::simulate_walk(&mut env, lambda.max(1), walk::replica_seed(seed, 0), WalkOptions { exact_drift: true })?;
        let elt = walk::edge_local_times(&rec, x, m)?;
        r.stat("lambda", lambda).stat("led_residual", walk::led_residual(&rec, &elt));
        if let Some(w) = cfg.csv("path.csv")? {
            walk::write_path_csv(&rec, w)?;
        }
        return Ok(r);
    }

    let records: Vec<_> = (0..reps as u64)
        .map(|i| {
            let mut env = walk::replica_environment(spec, seed, i, cfg.env.quenched);
            let rec = walk::simulate_walk(&mut env, n, walk::replica_seed(seed, i), WalkOptions { exact_drift: reps == 1 })?;
            let diag = walk::walk_diagnostics(&rec, args.gamma)?;
            Ok((rec, diag))
        })
        .collect::<Result<_>>()?;
    if reps == 1 {
        let (rec, diag) = &records[0];
        r.stat("final_position", rec.x(n)).stat("diagnostics", diag);
        if let Some(w) = cfg.csv("path.csv")? {
            walk::write_path_csv(rec, w)?;
        }
    } else {
        let med = |f: fn(&walk::DiagnosticsReport) -> f64| median(&records.iter().map(|(_, d)| f(d)).collect::<Vec<_>>());
        r.stat("median_range_scaled", med(|d| d.range_scaled));
        r.stat("median_max_local_time_scaled", med(|d| d.max_local_time_scaled));
        r.stat("median_rare_sites_scaled", med(|d| d.rare_sites_scaled));
        r.stat("median_boundary_gap", med(|d| d.boundary_gap));
    }
    if let Some(w) = cfg.csv("diagnostics.csv")? {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["replica", "seed", "n", "range_scaled", "max_local_time_scaled", "rare_sites_scaled", "crossing_times", "boundary_gap"])
            .map_err(csv_err)?;
        for (i, (rec, d)) in records.iter().enumerate() {
            let crossings: Vec<String> = d.crossing_times.iter().map(|(_, t)| t.map_or(String::new(), |t| t.to_string())).collect();
            w.write_record(&[
                i.to_string(),
                rec.seed.to_string(),
                d.n.to_string(),
                d.range_scaled.to_string(),
                d.max_local_time_scaled.to_string(),
                d.rare_sites_scaled.to_string(),
                crossings.join(";"),
                d.boundary_gap.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(r)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::runtime(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    U,
    Uhat,
    V,
    Vhat,
}

impl From<KindArg> for BlpKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::U => BlpKind::U,
            KindArg::Uhat => BlpKind::UHat,
            KindArg::V => BlpKind::V,
            KindArg::Vhat => BlpKind::VHat,
        }
    }
}

#[derive(Debug, Clone, Copy, Args)]
pub struct BlpArgs {
    #[arg(long, value_enum, default_value = "u")]
    pub kind: KindArg,
    /// Also estimate both sides of the ψ identity (kind U).
    #[arg(long)]
    pub psi: bool,
    /// Length of the trajectory written to blp_path.csv.
    #[arg(long, default_value_t = 1000)]
    pub cap: u64,
}

pub fn cmd_blp(cfg: &ExperimentConfig, args: BlpArgs) -> Result<ExperimentReport> {
    let seed = cfg.seed()?;
    let n = cfg.n.unwrap_or(400);
    let reps = cfg.reps.unwrap_or(10_000);
    let kind = BlpKind::from(args.kind);
    let spec = &cfg.env.spec;
    let mut r = cfg.report("blp");
    let drift = blp::estimate_drift(kind, spec, n, reps, seed::derive(seed, Stream::Blp, 1))?;
    let var = blp::estimate_variance(kind, spec, n, reps, seed::derive(seed, Stream::Blp, 2))?;
    r.stat("kind", kind.to_string()).stat("n", n).stat("drift", drift).stat("variance", var);
    if let Ok(p) = spec.params() {
        r.stat("drift_target", kind.drift_constant(&p)).stat("variance_target", p.nu);
    }
    if args.psi {
        r.stat("psi", blp::psi_check(spec, n, reps, seed::derive(seed, Stream::Blp, 3))?);
    }
    if let Some(w) = cfg.csv("blp_path.csv")? {
        let t = blp::simulate_blp(kind, spec, n, args.cap, seed)?;
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["step", "state"]).map_err(csv_err)?;
        for (i, s) in t.states.iter().enumerate() {
            w.write_record(&[i.to_string(), s.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, Args)]
pub struct RayKnightArgs {
    #[arg(long, default_value_t = 10, allow_hyphen_values = true)]
    pub x: i64,
    #[arg(long, default_value_t = 5)]
    pub m: u32,
    #[arg(long, default_value_t = 30)]
    pub state_cap: u64,
    /// Rows with fewer walk observations are reported but not judged.
    #[arg(long, default_value_t = 200)]
    pub min_obs: u64,
}

pub fn cmd_rayknight(cfg: &ExperimentConfig, args: RayKnightArgs) -> Result<ExperimentReport> {
    let seed = cfg.seed()?;
    let reps = cfg.reps.unwrap_or(10_000);
    let opts = RayKnightOptions { state_cap: args.state_cap, ..RayKnightOptions::default() };
    let rep = blp::rayknight_check(&cfg.env.spec, args.x, args.m, reps, seed, opts)?;
    let judged: Vec<_> = rep.rows.iter().filter(|row| row.n_walk_obs >= args.min_obs).collect();
    let max_tv = rep.max_tv(args.min_obs);
    let chi: f64 = judged.iter().map(|row| row.chi_square).sum();
    let dof: usize = judged.iter().map(|row| row.chi_square_dof).sum();
    let mut r = cfg.report("rayknight");
    r.stat("x", args.x).stat("m", args.m).stat("discarded", rep.discarded);
    r.stat("initial_condition_violations", rep.initial_condition_violations);
    r.stat("judged_states", judged.len()).stat("max_tv", max_tv);
    r.stat("pooled_chi_square", chi).stat("pooled_chi_square_dof", dof);
    r.threshold("tv", cfg.thresholds.tv).threshold("min_obs", args.min_obs as f64);
    r.pass = Some(max_tv < cfg.thresholds.tv && rep.initial_condition_violations == 0);
    if let Some(w) = cfg.csv("correspondence.csv")? {
        blp::write_correspondence_csv(&rep, w)?;
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, Args)]
pub struct TailArgs {
    #[arg(long, value_enum, default_value = "u")]
    pub kind: KindArg,
    #[arg(long, default_value_t = 1)]
    pub z0: u64,
    #[arg(long, default_value_t = 1 << 16)]
    pub cap: u64,
    #[arg(long, default_value_t = 0.2)]
    pub tail_fraction: f64,
}

pub fn cmd_tails(cfg: &ExperimentConfig, args: TailArgs) -> Result<ExperimentReport> {
    let seed = cfg.seed()?;
    let reps = cfg.reps.unwrap_or(100_000);
    let kind = BlpKind::from(args.kind);
    let survey = blp::tail_survey(kind, &cfg.env.spec, args.z0, reps, args.cap, seed)?;
    let sigma_fit = stats::tail_exponent(&survey.sigma, args.tail_fraction)?;
    let sum_fit = stats::tail_exponent(&survey.sums, args.tail_fraction)?;
    let mut r = cfg.report("tails");
    r.stat("kind", kind.to_string()).stat("censored_fraction", survey.censored_fraction);
    r.stat("sigma_fit", sigma_fit).stat("sum_fit", sum_fit);
    if let Some(a) = &survey.advisory {
        r.stat("advisory", a);
    }
    if let Ok(p) = cfg.params() {
        let s = kind.tail_exponent(&p);
        r.stat("sigma_target", s).stat("sum_target", s / 2.0);
        r.threshold("tail", cfg.thresholds.tail);
        let tol = cfg.thresholds.tail;
        r.pass = Some(
            sigma_fit.reliable
                && sum_fit.reliable
                && (sigma_fit.exponent - s).abs() <= tol
                && (sum_fit.exponent - s / 2.0).abs() <= tol,
        );
    }
    if let Some(w) = cfg.csv("tails.csv")? {
        blp::write_tail_csv(&survey, w)?;
    }
    Ok(r)
}

pub fn cmd_driftgap(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let seed = cfg.seed()?;
    let n = cfg.n.unwrap_or(100_000);
    let reps = cfg.reps.unwrap_or(200);
    let params = cfg.params()?;
    let gaps = walk::ensemble_gaps(&cfg.env.spec, &params, n, reps, seed, cfg.env.quenched)?;
    let mut r = cfg.report("driftgap");
    r.stat("n", n).stat("reps", reps);
    r.stat("median_drift_gap", median(&gaps.iter().map(|g| g.drift_gap).collect::<Vec<_>>()));
    r.stat("median_max_gap_scaled", median(&gaps.iter().map(|g| g.max_gap_scaled).collect::<Vec<_>>()));
    r.stat("median_boundary_gap", median(&gaps.iter().map(|g| g.boundary_gap).collect::<Vec<_>>()));
    if let Some(w) = cfg.csv("driftgap.csv")? {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["replica", "n", "drift_gap", "max_gap_scaled", "boundary_gap"]).map_err(csv_err)?;
        for (i, g) in gaps.iter().enumerate() {
            w.write_record(&[i.to_string(), n.to_string(), g.drift_gap.to_string(), g.max_gap_scaled.to_string(), g.boundary_gap.to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(r)
}

/// Long-run mean of `(2ω - 1)^2` over one stack.
pub fn qv_target(spec: &EnvSpec) -> Result<f64> {
    match spec {
        EnvSpec::Periodic(p) => Ok(p.probs().iter().map(|q| (2.0 * q - 1.0).powi(2)).sum::<f64>() / p.period() as f64),
        EnvSpec::Markov(m) => {
            let pi = m.stationary()?;
            Ok(pi.iter().zip(m.states()).map(|(w, q)| w * (2.0 * q - 1.0).powi(2)).sum())
        }
        EnvSpec::Coupled(_) => Err(CliError::invalid("the quadratic-variation target is not defined for coupled stacks")),
    }
}

pub fn cmd_qv(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let seed = cfg.seed()?;
    let n = cfg.n.unwrap_or(100_000) as usize;
    let spec = &cfg.env.spec;
    let target = qv_target(spec)?;
    let mut env = walk::replica_environment(spec, seed, 0, cfg.env.quenched);
    let rec = walk::simulate_walk(&mut env, n, walk::replica_seed(seed, 0), WalkOptions::default())?;
    let qv = walk::qv_statistic(&rec, &mut env);
    let mut r = cfg.report("qv");
    r.stat("n", n).stat("qv", qv).stat("consumed_qv", rec.consumed_qv / n as f64).stat("target", target);
    r.threshold("qv_rel", cfg.thresholds.qv_rel);
    r.pass = Some(if target == 0.0 { qv == 0.0 } else { ((qv - target) / target).abs() <= cfg.thresholds.qv_rel });
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Process {
    /// Squared-Bessel-type diffusion with the drift of `--kind`.
    Sqbessel,
    /// Perturbed Brownian motion.
    Pbm,
    /// Rescaled branching-like process against its diffusion limit.
    Bridge,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct DiffusionArgs {
    #[arg(long, value_enum, default_value = "pbm")]
    pub process: Process,
    #[arg(long, value_enum, default_value = "u")]
    pub kind: KindArg,
    /// Perturbation at the maximum; defaults to θ.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// Perturbation at the minimum; defaults to θ̃.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub y0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// Stopping level (fraction of the start for the bridge).
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
}

pub fn cmd_diffusion(cfg: &ExperimentConfig, args: DiffusionArgs) -> Result<ExperimentReport> {
    let seed = cfg.seed()?;
    let dt = cfg.dt.unwrap_or(1e-4);
    let reps = cfg.reps.unwrap_or(1);
    let mut r = cfg.report("diffusion");
    let kind = BlpKind::from(args.kind);
    match args.process {
        Process::Sqbessel => {
            let p = cfg.params()?;
            let b = kind.drift_constant(&p);
            r.stat("b", b).stat("nu", p.nu);
            if reps == 1 {
                let path = diffusion::simulate_sqbessel(b, p.nu, args.y0, dt, args.t, args.eps, seed)?;
                r.stat("final", path.last()).stat("stopped_at", path.stopped_at);
                if let Some(w) = cfg.csv("diffusion_path.csv")? {
                    diffusion::write_path_csv(&path, w)?;
                }
            } else {
                let s = diffusion::sqbessel_marginal_samples(b, p.nu, args.y0, args.t, dt, args.eps, reps, seed)?;
                r.stat("mean", stats::jackknife_mean(s.values()));
                if let Some(w) = cfg.csv("marginal.csv")? {
                    diffusion::write_marginal_csv(&s, w)?;
                }
            }
        }
        Process::Pbm => {
            let p = cfg.params().ok();
            let alpha = args.alpha.or(p.map(|p| p.theta)).ok_or_else(|| CliError::invalid("--alpha is required"))?;
            let beta = args.beta.or(p.map(|p| p.theta_tilde)).ok_or_else(|| CliError::invalid("--beta is required"))?;
            r.stat("alpha", alpha).stat("beta", beta);
            if reps == 1 {
                let path = diffusion::simulate_pbm(alpha, beta, dt, args.t, seed)?;
                r.stat("final", path.last()).stat("reconstruction_residual", diffusion::reconstruction_residual(&path));
                if let Some(w) = cfg.csv("diffusion_path.csv")? {
                    diffusion::write_path_csv(&path, w)?;
                }
            } else {
                let s = diffusion::pbm_marginal_samples(alpha, beta, args.t, dt, reps, seed)?;
                r.stat("median", s.median());
                if let Some(w) = cfg.csv("marginal.csv")? {
                    diffusion::write_marginal_csv(&s, w)?;
                }
            }
        }
        Process::Bridge => {
            let report = bridge_comparison(&cfg.env.spec, kind, cfg.n.unwrap_or(10_000), args.t, args.eps, dt, reps, seed)?;
            r.stat("ks", report.ks).threshold("ks", cfg.thresholds.ks);
            r.pass = Some(report.ks < cfg.thresholds.ks);
            if let Some(w) = cfg.csv("bridge_blp.csv")? {
                diffusion::write_marginal_csv(&report.blp, w)?;
            }
            if let Some(w) = cfg.csv("bridge_diffusion.csv")? {
                diffusion::write_marginal_csv(&report.diffusion, w)?;
            }
        }
    }
    Ok(r)
}

pub struct BridgeComparison {
    pub blp: SampleSet,
    pub diffusion: SampleSet,
    pub ks: f64,
}

/// `Z_{⌊nt⌋ ∧ σ}/n` against `Y(t ∧ σ_ε)` started from 1.
#[allow(clippy::too_many_arguments)]
pub fn bridge_comparison(spec: &EnvSpec, kind: BlpKind, n: u64, t: f64, eps: f64, dt: f64, reps: usize, seed: u64) -> Result<BridgeComparison> {
    let p = spec.params()?;
    let blp = blp::scaled_marginal(kind, spec, n, t, eps, reps, seed::derive(seed, Stream::Blp, 0))?;
    let diffusion =
        diffusion::sqbessel_marginal_samples(kind.drift_constant(&p), p.nu, 1.0, t, dt, eps, reps, seed::derive(seed, Stream::Diffusion, 0))?;
    let ks = stats::ks_distance(&blp, &diffusion)?;
    Ok(BridgeComparison { blp, diffusion, ks })
}

#[derive(Debug, Clone, Copy, Args)]
pub struct FltArgs {
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// Replaces the scale `a` (for sanity checks).
    #[arg(long)]
    pub scale: Option<f64>,
    /// Runs even if the periodic cookie mean differs from 1/2.
    #[arg(long)]
    pub allow_nonzero_mean: bool,
}

pub struct FltComparison {
    pub walk: SampleSet,
    pub limit: SampleSet,
    pub ks: f64,
}

/// `X_{⌊nt⌋}/(a√n)` from `reps` walks against `Z^{θ,θ̃}_t` from `reps` paths.
pub fn flt_comparison(cfg: &ExperimentConfig, args: FltArgs) -> Result<FltComparison> {
    let seed = cfg.seed()?;
    let params = require_flt_regime(&cfg.env.spec, args.allow_nonzero_mean)?;
    let n = cfg.n.unwrap_or(100_000);
    let reps = cfg.reps.unwrap_or(10_000);
    let dt = cfg.dt.unwrap_or(1e-4);
    if !(args.t > 0.0) {
        return Err(CliError::invalid("t must be positive"));
    }
    let a = args.scale.unwrap_or(params.a);
    let steps = (n as f64 * args.t).floor() as u64;
    let norm = a * (n as f64).sqrt();
    let ends = walk::ensemble_endpoints(&cfg.env.spec, steps, reps, seed, cfg.env.quenched);
    let walk = SampleSet::new("walk", ends.iter().map(|&x| x as f64 / norm).collect());
    let limit = diffusion::pbm_marginal_samples(params.theta, params.theta_tilde, args.t, dt, reps, seed::derive(seed, Stream::Diffusion, 0))?;
    let ks = stats::ks_distance(&walk, &limit)?;
    Ok(FltComparison { walk, limit, ks })
}

pub fn cmd_flt(cfg: &ExperimentConfig, args: FltArgs) -> Result<ExperimentReport> {
    let cmp = flt_comparison(cfg, args)?;
    let mut r = cfg.report("flt");
    r.stat("ks", cmp.ks).stat("t", args.t);
    if let Some(s) = args.scale {
        r.stat("scale_override", s);
    }
    r.threshold("ks", cfg.thresholds.ks);
    r.pass = Some(cmp.ks < cfg.thresholds.ks);
    if let Some(w) = cfg.csv("flt_walk.csv")? {
        diffusion::write_marginal_csv(&cmp.walk, w)?;
    }
    if let Some(w) = cfg.csv("flt_limit.csv")? {
        diffusion::write_marginal_csv(&cmp.limit, w)?;
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, Args)]
pub struct BoundaryArgs {
    #[arg(long, default_value_t = 4)]
    pub period: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

/// Finds a `θ = 1` stack; with `--reps`, also reports the ensemble median
/// of `sup (M - X)/(√n ln n)` at `--n`.
pub fn cmd_boundary(cfg: &ExperimentConfig, args: BoundaryArgs) -> Result<ExperimentReport> {
    let seed = cfg.seed()?;
    let stack = stats::find_boundary(args.period, args.tol, seed)?;
    let params = compute_params(&stack);
    let mut r = ExperimentReport::new("boundary", cfg.env.describe(), Some(params));
    r.stat("probs", stack.probs()).stat("regime", params.regime().to_string());
    if let Some(reps) = cfg.reps {
        let n = cfg.n.unwrap_or(100_000);
        let gaps = walk::ensemble_gaps(&EnvSpec::Periodic(stack), &params, n, reps, seed, None)?;
        r.stat("n", n).stat("median_boundary_gap", median(&gaps.iter().map(|g| g.boundary_gap).collect::<Vec<_>>()));
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, Args)]
pub struct FigureArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub which: u8,
    /// Keep every k-th row of the figure-3 series.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

const FIGURE1_SITE: i64 = 100;
const FIGURE1_VISITS: u32 = 50;
const FIGURE1_CAP: u64 = 100_000_000;

pub fn cmd_figure(cfg: &ExperimentConfig, args: FigureArgs) -> Result<ExperimentReport> {
    let seed = cfg.seed()?;
    let spec = &cfg.env.spec;
    let mut r = cfg.report(&format!("figure{}", args.which));
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let cfg = ExperimentConfig { out: Some(out), ..cfg.clone() };
    match args.which {
        1 => {
            let (x, m) = (FIGURE1_SITE, FIGURE1_VISITS);
            // locate λ without storing the path, then replay it
            let lambda = {
                let mut env = walk::replica_environment(spec, seed, 0, cfg.env.quenched);
                let mut w = Walker::new(&mut env, walk::replica_seed(seed, 0), WalkOptions::default());
                if !w.run_to_visit(x, m, FIGURE1_CAP) {
                    return Err(CliError::unreached(format!("visit {} to {x} not reached within {FIGURE1_CAP} steps", m + 1)));
                }
                w.time() as usize
            };
            let mut env = walk::replica_environment(spec, seed, 0, cfg.env.quenched);
            let rec = walk::simulate_walk(&mut env, lambda, walk::replica_seed(seed, 0), WalkOptions { exact_drift: true })?;
            let elt = walk::edge_local_times(&rec, x, m)?;
            let counted = |y: i64| rec.positions[..lambda].iter().filter(|&&p| p == y).count() as u64;
            walk::write_path_csv(&rec, cfg.csv("fig1_path.csv")?.expect("output directory set"))?;
            let profile = |name: &str, sites: Vec<i64>, edge: &dyn Fn(i64) -> u64| -> Result<u64> {
                let mut w = csv::Writer::from_writer(cfg.csv(name)?.expect("output directory set"));
                w.write_record(["site", "edge_local_time", "local_time", "led_residual"]).map_err(csv_err)?;
                let mut worst = 0;
                for y in sites {
                    let lt = counted(y);
                    let res = lt.abs_diff(elt.case_split_local_time(y)).max(lt.abs_diff(elt.d(y) + elt.e(y)));
                    worst = worst.max(res);
                    w.write_record(&[y.to_string(), edge(y).to_string(), lt.to_string(), res.to_string()]).map_err(csv_err)?;
                }
                w.flush()?;
                Ok(worst)
            };
            let d_res = profile("fig1_d_profile.csv", (elt.lo..=x).collect(), &|y| elt.d(y))?;
            let e_res = profile("fig1_e_profile.csv", (x..=elt.hi()).collect(), &|y| elt.e(y))?;
            r.stat("lambda", lambda).stat("led_residual", d_res.max(e_res));
        }
        3 => {
            let n = cfg.n.unwrap_or(100_000);
            let params = cfg.params()?;
            let mut env = walk::replica_environment(spec, seed, 0, cfg.env.quenched);
            let mut w = Walker::new(&mut env, walk::replica_seed(seed, 0), WalkOptions::default());
            let mut out = csv::Writer::from_writer(cfg.csv("fig3_drift.csv")?.expect("output directory set"));
            out.write_record(["step", "C", "approx"]).map_err(csv_err)?;
            let mut sup = 0.0f64;
            let stride = args.stride.max(1) as u64;
            for k in 0..=n {
                if k > 0 {
                    w.step();
                }
                let x = w.position();
                let approx = params.rho * (w.max() - x) as f64 + params.rho_tilde * (w.min() - x) as f64;
                sup = sup.max((w.drift() - approx).abs());
                if k % stride == 0 {
                    out.write_record(&[k.to_string(), w.drift().to_string(), approx.to_string()]).map_err(csv_err)?;
                }
            }
            out.flush()?;
            r.stat("n", n).stat("drift_gap", sup / (n as f64).sqrt());
        }
        other => return Err(CliError::invalid(format!("no figure {other}; choose 1 or 3"))),
    }
    Ok(r)
}

#[derive(Debug, Parser)]
#[command(name = "erw", version, about = "Excited random walk simulation and verification experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Environment: JSON file, inline JSON, or comma-separated periodic probabilities.
    #[arg(long, global = true, default_value = "0.7,0.3")]
    pub env: String,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    #[arg(long, global = true)]
    pub n: Option<u64>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Directory for CSV output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print the report as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    /// JSON file overriding the pass/fail thresholds.
    #[arg(long, global = true)]
    pub thresholds: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form parameters, regime and identity residuals.
    Params,
    /// Recurrence/transience class.
    Classify,
    /// Simulate walks and report pathwise diagnostics.
    Walk(WalkArgs),
    /// Drift and variance of a branching-like process.
    Blp(BlpArgs),
    /// Compare edge local times with direct branching-like draws.
    Rayknight(RayKnightArgs),
    /// Extinction-time and total-progeny tail exponents.
    Tails(TailArgs),
    /// Ensemble of drift-approximation gaps.
    Driftgap,
    /// Quadratic variation of consumed cookie drifts.
    Qv,
    /// Squared-Bessel diffusion, perturbed BM, or the rescaling bridge.
    Diffusion(DiffusionArgs),
    /// Rescaled walk endpoint against the perturbed-BM marginal.
    Flt(FltArgs),
    /// Search for a stack with θ = 1.
    Boundary(BoundaryArgs),
    /// CSV input for the figure scripts.
    Figure(FigureArgs),
}

fn config_from(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let thresholds = match &global.thresholds {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| CliError::invalid(format!("thresholds file: {e}")))?,
        None => Thresholds::default(),
    };
    Ok(ExperimentConfig {
        env: load_env(&global.env)?,
        seed: global.seed,
        reps: global.reps,
        n: global.n,
        dt: global.dt,
        out: global.out.clone(),
        thresholds,
    })
}

pub fn execute(cli: &Cli) -> Result<ExperimentReport> {
    if let Some(t) = cli.global.threads {
        // the pool can only be built once per process; later calls keep it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let cfg = config_from(&cli.global)?;
    match &cli.command {
        Command::Params => cmd_params(&cfg),
        Command::Classify => cmd_classify(&cfg),
        Command::Walk(a) => cmd_walk(&cfg, *a),
        Command::Blp(a) => cmd_blp(&cfg, *a),
        Command::Rayknight(a) => cmd_rayknight(&cfg, *a),
        Command::Tails(a) => cmd_tails(&cfg, *a),
        Command::Driftgap => cmd_driftgap(&cfg),
        Command::Qv => cmd_qv(&cfg),
        Command::Diffusion(a) => cmd_diffusion(&cfg, *a),
        Command::Flt(a) => cmd_flt(&cfg, *a),
        Command::Boundary(a) => cmd_boundary(&cfg, *a),
        Command::Figure(a) => cmd_figure(&cfg, *a),
    }
}

fn print_text<W: Write>(out: &mut W, report: &ExperimentReport) -> std::io::Result<()> {
    writeln!(out, "experiment: {}", report.experiment)?;
    if let Some(p) = &report.params {
        writeln!(
            out,
            "params: theta={} theta_tilde={} rho={} rho_tilde={} nu={} a={}",
            p.theta, p.theta_tilde, p.rho, p.rho_tilde, p.nu, p.a
        )?;
    }
    for (k, v) in &report.statistics {
        writeln!(out, "{k}: {v}")?;
    }
    if let Some(pass) = report.pass {
        writeln!(out, "pass: {pass}")?;
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return if code == 0 { 0 } else { 2 };
        }
    };
    match execute(&cli) {
        Ok(report) => {
            if let Some(warnings) = report.statistics.get("warnings") {
                eprintln!("warning: {warnings}");
            }
            let mut out = std::io::stdout().lock();
            // a closed pipe (e.g. `| head`) is not an error worth reporting
            let _ = if cli.global.json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serializes"))
            } else {
                print_text(&mut out, &report)
            };
            0
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind, "message": e.message, "exit_code": e.code }));
            e.code
        }
    }
}
