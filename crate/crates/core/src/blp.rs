//! Branching-like processes built from cookie-driven Bernoulli trials.
//!
//! Read one fresh cookie stack `ω(1), ω(2), …` with independent trials
//! `ξ(j) ~ Ber(ω(j))` (success = right step). From state `m`:
//!
//! | kind | next state                              |
//! |------|-----------------------------------------|
//! | `U`  | successes before the `m`-th failure     |
//! | `Û`  | successes before the `(m+1)`-st failure |
//! | `V`  | failures before the `m`-th success      |
//! | `V̂`  | failures before the `(m+1)`-st success  |
//!
//! These chains are the laws of the walk's directed-edge local time
//! profiles, which [`rayknight_check`] verifies by simulation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::env::{CoupledStack, EnvSpec, ModelParams, PeriodicStack};
use crate::seed::{self, Stream};
use crate::stats::{self, Estimate, SampleSet};
use crate::walk::{replica_environment, replica_seed, WalkOptions, Walker};

/// Trials allowed in a single transition before giving up.
pub const ITERATION_CAP: u64 = 1_000_000_000;

#[derive(Debug, Error)]
pub enum BlpError {
    #[error("transition from state {state} exceeded {ITERATION_CAP} trials")]
    IterationCap { state: u64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("inconclusive: {discarded} of {reps} walks never reached the target visit")]
    Inconclusive { discarded: usize, reps: usize },
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io failed: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BlpError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum BlpKind {
    U,
    UHat,
    V,
    VHat,
}

impl BlpKind {
    pub const ALL: [BlpKind; 4] = [BlpKind::U, BlpKind::UHat, BlpKind::V, BlpKind::VHat];

    /// `U`-type kinds count right steps and stop on left steps.
    pub fn counts_right_steps(self) -> bool {
        matches!(self, BlpKind::U | BlpKind::UHat)
    }

    /// Number of stopping trials needed from state `m`.
    pub fn target(self, m: u64) -> u64 {
        match self {
            BlpKind::U | BlpKind::V => m,
            BlpKind::UHat | BlpKind::VHat => m + 1,
        }
    }

    /// `U` and `V` are absorbed at 0; the hatted kinds are not.
    pub fn is_absorbing(self) -> bool {
        matches!(self, BlpKind::U | BlpKind::V)
    }

    /// Tail exponent `s_Z` of the extinction time.
    pub fn tail_exponent(self, p: &ModelParams) -> f64 {
        match self {
            BlpKind::U => 1.0 - p.theta,
            BlpKind::UHat => p.theta_tilde,
            BlpKind::V => 1.0 - p.theta_tilde,
            BlpKind::VHat => p.theta,
        }
    }

    /// Drift `b_Z` of the diffusion approximation.
    pub fn drift_constant(self, p: &ModelParams) -> f64 {
        match self {
            BlpKind::U => p.rho,
            BlpKind::UHat => 1.0 + p.rho,
            BlpKind::V => p.rho_tilde,
            BlpKind::VHat => 1.0 + p.rho_tilde,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "u" => Some(BlpKind::U),
            "uhat" | "û" => Some(BlpKind::UHat),
            "v" => Some(BlpKind::V),
            "vhat" | "v̂" => Some(BlpKind::VHat),
            _ => None,
        }
    }
}

impl fmt::Display for BlpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlpKind::U => "U",
            BlpKind::UHat => "Uhat",
            BlpKind::V => "V",
            BlpKind::VHat => "Vhat",
        })
    }
}

/// One transition: the next state, the trials it consumed, and the drift
/// `Σ (2ω(j) - 1)` of the consumed cookies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub value: u64,
    pub trials: u64,
    pub drift: f64,
}

/// Draws `Z_{k+1}` given `Z_k = m` from a fresh cookie stack.
pub fn blp_step<R: Rng>(kind: BlpKind, spec: &EnvSpec, m: u64, rng: &mut R) -> Result<u64> {
    step_outcome(kind, spec, m, rng).map(|o| o.value)
}

/// Like [`blp_step`], also reporting trials and consumed drift.
///
/// Periodic stacks use exact block sampling: a run of `K` whole periods with
/// `K·N` below the number of stops still needed cannot contain the final
/// stop, so its stop count per phase is `Binomial(K, ·)`. Other
/// environments go trial by trial.
pub fn step_outcome<R: Rng>(kind: BlpKind, spec: &EnvSpec, m: u64, rng: &mut R) -> Result<StepOutcome> {
    match spec {
        EnvSpec::Periodic(p) => periodic_blocks(kind, p, m, rng),
        _ => step_by_trials(kind, spec, m, rng),
    }
}

/// Reference sampler: one Bernoulli trial at a time.
pub fn step_by_trials<R: Rng>(kind: BlpKind, spec: &EnvSpec, m: u64, rng: &mut R) -> Result<StepOutcome> {
    let target = kind.target(m);
    let mut out = StepOutcome { value: 0, trials: 0, drift: 0.0 };
    if target == 0 {
        return Ok(out);
    }
    let mut stack = spec.fresh_stack(rng);
    let mut stops = 0;
    let right_counts = kind.counts_right_steps();
    while stops < target {
        if out.trials >= ITERATION_CAP {
            return Err(BlpError::IterationCap { state: m });
        }
        out.trials += 1;
        let omega = stack.next_cookie(spec, out.trials, rng);
        out.drift += 2.0 * omega - 1.0;
        let right = rng.gen::<f64>() < omega;
        if right == right_counts {
            out.value += 1;
        } else {
            stops += 1;
        }
    }
    Ok(out)
}

const MIN_BLOCK_TRIALS: u64 = 32;

fn periodic_blocks<R: Rng>(kind: BlpKind, stack: &PeriodicStack, m: u64, rng: &mut R) -> Result<StepOutcome> {
    let probs = stack.probs();
    let n = probs.len() as u64;
    let right_counts = kind.counts_right_steps();
    // probability that a trial at each phase is a stop
    let stop_prob: Vec<f64> = probs.iter().map(|&p| if right_counts { 1.0 - p } else { p }).collect();
    let period_drift: f64 = probs.iter().map(|p| 2.0 * p - 1.0).sum();

    let mut remaining = kind.target(m);
    let mut out = StepOutcome { value: 0, trials: 0, drift: 0.0 };
    let mut phase = 0usize;
    while remaining > 0 {
        if out.trials >= ITERATION_CAP {
            return Err(BlpError::IterationCap { state: m });
        }
        let periods = (remaining - 1) / n;
        if periods * n >= MIN_BLOCK_TRIALS {
            let mut stops = 0;
            for &q in &stop_prob {
                stops += Binomial::new(periods, q).expect("valid binomial").sample(rng);
            }
            out.value += periods * n - stops;
            out.trials += periods * n;
            out.drift += periods as f64 * period_drift;
            remaining -= stops;
        } else {
            let p = probs[phase];
            out.trials += 1;
            out.drift += 2.0 * p - 1.0;
            let right = rng.gen::<f64>() < p;
            if right == right_counts {
                out.value += 1;
            } else {
                remaining -= 1;
            }
            phase = (phase + 1) % probs.len();
        }
    }
    Ok(out)
}

/// A simulated trajectory `Z_0, Z_1, …` stopped at `σ_0` or at the cap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlpTrajectory {
    pub kind: BlpKind,
    /// Empty unless the path was requested.
    pub states: Vec<u64>,
    /// `σ_0 = inf{i > 0 : Z_i ≤ 0}`, `None` when censored.
    pub sigma0: Option<u64>,
    /// `Σ_{i < σ_0} Z_i`, or the partial sum through the cap when censored.
    pub running_sum: u128,
    /// Steps taken.
    pub steps: u64,
    pub censored: bool,
    pub seed: u64,
}

fn run_blp<R: Rng>(kind: BlpKind, spec: &EnvSpec, z0: u64, cap: u64, rng: &mut R, keep: bool) -> Result<BlpTrajectory> {
    let mut traj = BlpTrajectory {
        kind,
        states: if keep { vec![z0] } else { Vec::new() },
        sigma0: None,
        running_sum: z0 as u128,
        steps: 0,
        censored: false,
        seed: 0,
    };
    let mut z = z0;
    for i in 1..=cap {
        z = blp_step(kind, spec, z, rng)?;
        traj.steps = i;
        if keep {
            traj.states.push(z);
        }
        if z == 0 {
            traj.sigma0 = Some(i);
            return Ok(traj);
        }
        traj.running_sum += z as u128;
    }
    traj.censored = true;
    Ok(traj)
}

/// Runs the chain from `z0` until `σ_0` or for `cap` steps.
pub fn simulate_blp(kind: BlpKind, spec: &EnvSpec, z0: u64, cap: u64, seed: u64) -> Result<BlpTrajectory> {
    if cap == 0 {
        return Err(BlpError::Domain("cap must be at least 1".into()));
    }
    let mut rng = seed::child_rng(seed, Stream::Blp, 0);
    let mut t = run_blp(kind, spec, z0, cap, &mut rng, true)?;
    t.seed = seed;
    Ok(t)
}

fn replica_samples<F>(reps: usize, seed: u64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut seed::SimRng) -> Result<f64> + Sync,
{
    (0..reps as u64)
        .into_par_iter()
        .map(|r| f(&mut seed::child_rng(seed, Stream::Blp, r)))
        .collect()
}

/// `E[Z_1 | Z_0 = n] - n` with a jackknife standard error.
pub fn estimate_drift(kind: BlpKind, spec: &EnvSpec, n: u64, reps: usize, seed: u64) -> Result<Estimate> {
    if reps < 2 || n == 0 {
        return Err(BlpError::Domain(format!("need n >= 1 and reps >= 2 (n={n}, reps={reps})")));
    }
    let samples = replica_samples(reps, seed, |rng| Ok(blp_step(kind, spec, n, rng)? as f64 - n as f64))?;
    Ok(stats::jackknife_mean(&samples))
}

/// `Var(Z_1 | Z_0 = n) / n` with a jackknife standard error.
pub fn estimate_variance(kind: BlpKind, spec: &EnvSpec, n: u64, reps: usize, seed: u64) -> Result<Estimate> {
    if reps < 3 || n == 0 {
        return Err(BlpError::Domain(format!("need n >= 1 and reps >= 3 (n={n}, reps={reps})")));
    }
    let samples = replica_samples(reps, seed, |rng| Ok(blp_step(kind, spec, n, rng)? as f64 - n as f64))?;
    let v = stats::jackknife_variance(&samples);
    Ok(Estimate { value: v.value / n as f64, std_error: v.std_error / n as f64, n: v.n })
}

/// Extinction-time and total-progeny samples from many trajectories.
#[derive(Debug, Clone)]
pub struct TailSurvey {
    pub kind: BlpKind,
    pub sigma: SampleSet,
    pub sums: SampleSet,
    pub censored_fraction: f64,
    /// Set when `s_Z` is outside `(0, 1)` and the regression is uninformative.
    pub advisory: Option<String>,
}

pub fn tail_survey(
    kind: BlpKind,
    spec: &EnvSpec,
    z0: u64,
    reps: usize,
    cap: u64,
    seed: u64,
) -> Result<TailSurvey> {
    if reps == 0 || cap == 0 {
        return Err(BlpError::Domain("reps and cap must be positive".into()));
    }
    let runs: Vec<BlpTrajectory> = (0..reps as u64)
        .into_par_iter()
        .map(|r| run_blp(kind, spec, z0, cap, &mut seed::child_rng(seed, Stream::Blp, r), false))
        .collect::<Result<_>>()?;
    let censored: Vec<bool> = runs.iter().map(|t| t.censored).collect();
    let sigma: Vec<f64> = runs.iter().map(|t| t.sigma0.unwrap_or(t.steps) as f64).collect();
    let sums: Vec<f64> = runs.iter().map(|t| t.running_sum as f64).collect();
    let censored_fraction = censored.iter().filter(|c| **c).count() as f64 / reps as f64;
    let advisory = spec.params().ok().and_then(|p| {
        let s = kind.tail_exponent(&p);
        (!(s > 0.0 && s < 1.0)).then(|| format!("s_{kind} = {s:.4} is outside (0,1); tail regression is not informative"))
    });
    Ok(TailSurvey {
        kind,
        sigma: SampleSet::censored(format!("sigma0_{kind}"), sigma, censored.clone()),
        sums: SampleSet::censored(format!("sum_{kind}"), sums, censored),
        censored_fraction,
        advisory,
    })
}

/// Samples of `Z_{⌊nt⌋ ∧ σ} / n` from `Z_0 = n`, where `σ` is the first step
/// with `Z ≤ εn`. These approximate the diffusion limit `Y(t ∧ σ_ε)`.
#[allow(clippy::too_many_arguments)]
pub fn scaled_marginal(kind: BlpKind, spec: &EnvSpec, n: u64, t: f64, eps: f64, reps: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 || !(t > 0.0) || !(eps >= 0.0) {
        return Err(BlpError::Domain(format!("need n >= 1, t > 0, eps >= 0 (n={n}, t={t}, eps={eps})")));
    }
    let steps = (n as f64 * t).floor() as u64;
    let floor = eps * n as f64;
    let values = replica_samples(reps, seed, |rng| {
        let mut z = n;
        for _ in 0..steps {
            if (z as f64) <= floor {
                break;
            }
            z = blp_step(kind, spec, z, rng)?;
        }
        Ok(z as f64 / n as f64)
    })?;
    Ok(SampleSet::new(format!("{kind}_scaled"), values))
}

/// CSV with columns `replica, sigma0, sum, censored`.
pub fn write_tail_csv<W: Write>(survey: &TailSurvey, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replica", "sigma0", "sum", "censored"])?;
    let flags = survey.sigma.censoring().expect("tail surveys carry censoring flags");
    for (i, ((s, t), c)) in survey.sigma.values().iter().zip(survey.sums.values()).zip(flags).enumerate() {
        w.write_record(&[i.to_string(), format!("{s}"), format!("{t}"), u8::from(*c).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct RayKnightOptions {
    /// Walks not reaching `λ_{x,m}` within this many steps are discarded.
    pub step_cap: u64,
    /// Only states `≤ state_cap` are pooled.
    pub state_cap: u64,
    /// Direct draws per pooled state; defaults to `reps`.
    pub direct_draws: Option<usize>,
}

impl Default for RayKnightOptions {
    fn default() -> Self {
        Self { step_cap: 10_000_000, state_cap: 30, direct_draws: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrespondenceRow {
    pub kind: BlpKind,
    pub state: u64,
    pub tv_distance: f64,
    pub chi_square: f64,
    pub chi_square_dof: usize,
    pub n_walk_obs: u64,
    pub n_direct_obs: u64,
    /// Observed next states from the walk, value -> count.
    #[serde(skip)]
    pub walk_counts: BTreeMap<u64, u64>,
    /// Direct draws, value -> count.
    #[serde(skip)]
    pub direct_counts: BTreeMap<u64, u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrespondenceReport {
    pub x: i64,
    pub m: u32,
    pub reps: usize,
    pub discarded: usize,
    /// Replicas where `𝓔_x + 𝓓_x ≠ m`.
    pub initial_condition_violations: usize,
    pub rows: Vec<CorrespondenceRow>,
}

impl CorrespondenceReport {
    /// Largest TV distance over rows with at least `min_obs` walk observations.
    pub fn max_tv(&self, min_obs: u64) -> f64 {
        self.rows.iter().filter(|r| r.n_walk_obs >= min_obs).map(|r| r.tv_distance).fold(0.0, f64::max)
    }
}

type Histograms = BTreeMap<(BlpKind, u64), BTreeMap<u64, u64>>;

/// Transitions of the `𝓔` and `𝓓` profiles at `λ_{x,m}`, labelled by the
/// chain that should govern them.
pub fn profile_transitions(x: i64, e: impl Fn(i64) -> u64, d: impl Fn(i64) -> u64, lo: i64, hi: i64) -> Vec<(BlpKind, u64, u64)> {
    let mut out = Vec::new();
    // 𝓔 upward from x: Û while the next site is ≤ 0, then U.
    let mut y = x;
    loop {
        let kind = if y < 0 { BlpKind::UHat } else { BlpKind::U };
        let state = e(y);
        if kind == BlpKind::U && (state == 0 || y > hi) {
            break;
        }
        out.push((kind, state, e(y + 1)));
        y += 1;
    }
    // 𝓓 downward from x: V̂ while the next site is ≥ 0, then V.
    let mut y = x;
    loop {
        let kind = if y > 0 { BlpKind::VHat } else { BlpKind::V };
        let state = d(y);
        if kind == BlpKind::V && (state == 0 || y < lo) {
            break;
        }
        out.push((kind, state, d(y - 1)));
        y -= 1;
    }
    out
}

/// Compares edge-local-time transitions of simulated walks with direct
/// draws of the corresponding branching-like process, state by state.
pub fn rayknight_check(
    spec: &EnvSpec,
    x: i64,
    m: u32,
    reps: usize,
    seed: u64,
    opts: RayKnightOptions,
) -> Result<CorrespondenceReport> {
    if reps == 0 {
        return Err(BlpError::Domain("reps must be positive".into()));
    }
    struct Replica {
        reached: bool,
        initial_ok: bool,
        transitions: Vec<(BlpKind, u64, u64)>,
    }
    let replicas: Vec<Replica> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut env = replica_environment(spec, seed, r, None);
            let mut walker = Walker::new(&mut env, replica_seed(seed, r), WalkOptions::default()).track_edges();
            if !walker.run_to_visit(x, m, opts.step_cap) {
                return Replica { reached: false, initial_ok: true, transitions: Vec::new() };
            }
            let e = |y: i64| walker.right_departures(y).unwrap_or(0) as u64;
            let d = |y: i64| walker.local_time(y) as u64 - e(y);
            let initial_ok = e(x) + d(x) == m as u64;
            let transitions = profile_transitions(x, e, d, walker.min(), walker.max());
            Replica { reached: true, initial_ok, transitions }
        })
        .collect();

    let discarded = replicas.iter().filter(|r| !r.reached).count();
    if 2 * discarded > reps {
        return Err(BlpError::Inconclusive { discarded, reps });
    }
    let initial_condition_violations = replicas.iter().filter(|r| !r.initial_ok).count();

    let mut walk_hist: Histograms = BTreeMap::new();
    for (kind, s, next) in replicas.iter().flat_map(|r| r.transitions.iter().copied()) {
        if s <= opts.state_cap {
            *walk_hist.entry((kind, s)).or_default().entry(next).or_default() += 1;
        }
    }

    let draws = opts.direct_draws.unwrap_or(reps);
    let rows = walk_hist
        .into_iter()
        .map(|((kind, state), walk)| {
            let key = seed::derive(seed, Stream::Direct, ((kind as u64) << 32) | state);
            let mut rng = seed::rng(key);
            let mut direct: BTreeMap<u64, u64> = BTreeMap::new();
            for _ in 0..draws {
                *direct.entry(blp_step(kind, spec, state, &mut rng)?).or_default() += 1;
            }
            let n_walk = walk.values().sum();
            let (chi_square, chi_square_dof) = stats::chi_square_homogeneity(&walk, &direct);
            Ok(CorrespondenceRow {
                kind,
                state,
                tv_distance: stats::tv_distance(&walk, &direct),
                chi_square,
                chi_square_dof,
                n_walk_obs: n_walk,
                n_direct_obs: draws as u64,
                walk_counts: walk,
                direct_counts: direct,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CorrespondenceReport { x, m, reps, discarded, initial_condition_violations, rows })
}

/// CSV with columns `kind, state, tv_distance, n_walk_obs, n_direct_obs`.
pub fn write_correspondence_csv<W: Write>(report: &CorrespondenceReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "state", "tv_distance", "n_walk_obs", "n_direct_obs"])?;
    for r in &report.rows {
        w.write_record(&[
            r.kind.to_string(),
            r.state.to_string(),
            format!("{}", r.tv_distance),
            r.n_walk_obs.to_string(),
            r.n_direct_obs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PsiReport {
    /// `E[Σ_{j ≤ U_1 + U_0} (2ω(j) - 1) | U_0 = n]`
    pub psi: Estimate,
    /// `E[U_1 | U_0 = n] - n`
    pub mean_increment: Estimate,
    /// Per-draw difference of the two; zero in expectation.
    pub residual: Estimate,
}

/// Estimates both sides of `ψ(n) = E[U_1 | U_0 = n] - n` from the same draws.
pub fn psi_check(spec: &EnvSpec, n: u64, reps: usize, seed: u64) -> Result<PsiReport> {
    if n == 0 || reps < 2 {
        return Err(BlpError::Domain(format!("need n >= 1 and reps >= 2 (n={n}, reps={reps})")));
    }
    let draws: Vec<StepOutcome> = (0..reps as u64)
        .into_par_iter()
        .map(|r| step_outcome(BlpKind::U, spec, n, &mut seed::child_rng(seed, Stream::Blp, r)))
        .collect::<Result<_>>()?;
    let psi: Vec<f64> = draws.iter().map(|o| o.drift).collect();
    let inc: Vec<f64> = draws.iter().map(|o| o.value as f64 - n as f64).collect();
    let res: Vec<f64> = psi.iter().zip(&inc).map(|(a, b)| a - b).collect();
    Ok(PsiReport {
        psi: stats::jackknife_mean(&psi),
        mean_increment: stats::jackknife_mean(&inc),
        residual: stats::jackknife_mean(&res),
    })
}

/// Paired `V̂` steps in a periodic stack and its boosted version, driven by
/// the same uniforms: a trial succeeds in either stack when the shared
/// uniform falls below that stack's cookie.
pub fn coupled_vhat_step<R: Rng>(coupled: &CoupledStack, base_state: u64, boosted_state: u64, rng: &mut R) -> Result<(u64, u64)> {
    let cutoff = coupled.cutoff_from_uniform(rng.gen());
    let base = coupled.base();
    let (mut need_a, mut need_b) = (base_state + 1, boosted_state + 1);
    let (mut fail_a, mut fail_b) = (0u64, 0u64);
    let mut j = 0u64;
    while need_a > 0 || need_b > 0 {
        j += 1;
        if j > ITERATION_CAP {
            return Err(BlpError::IterationCap { state: base_state.max(boosted_state) });
        }
        let u = rng.gen::<f64>();
        if need_a > 0 {
            if u < base.cookie(j) {
                need_a -= 1;
            } else {
                fail_a += 1;
            }
        }
        if need_b > 0 {
            if u < coupled.cookie(j, cutoff) {
                need_b -= 1;
            } else {
                fail_b += 1;
            }
        }
    }
    Ok((fail_a, fail_b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominationReport {
    pub violations: u64,
    pub comparisons: u64,
}

/// Runs `reps` paired trajectories of `steps` steps and counts times where
/// the boosted `V̂` exceeds the plain one.
pub fn coupled_domination_check(
    base: &PeriodicStack,
    h: f64,
    eps: f64,
    z0: u64,
    steps: u64,
    reps: usize,
    seed: u64,
) -> Result<DominationReport> {
    let coupled = CoupledStack::new(base.clone(), h, eps).map_err(|e| BlpError::Domain(e.to_string()))?;
    let per_rep: Vec<(u64, u64)> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::child_rng(seed, Stream::Blp, r);
            let (mut a, mut b) = (z0, z0);
            let mut violations = 0;
            for _ in 0..steps {
                (a, b) = coupled_vhat_step(&coupled, a, b, &mut rng)?;
                violations += u64::from(b > a);
            }
            Ok((violations, steps))
        })
        .collect::<Result<_>>()?;
    Ok(DominationReport {
        violations: per_rep.iter().map(|p| p.0).sum(),
        comparisons: per_rep.iter().map(|p| p.1).sum(),
    })
}
