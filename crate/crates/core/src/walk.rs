//! Exact simulation of the excited random walk and pathwise diagnostics.
//!
//! On its `j`-th visit to `x` the walk steps right with probability
//! `ω_x(j)`. Besides the path, the simulation keeps the accumulated cookie
//! drift `C_k = Σ (2ω - 1)` over consumed cookies, so that `B_k = X_k - C_k`
//! is a martingale, and the running extrema `M_k`, `I_k`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::env::{common_denominator, EnvSpec, Environment, ModelParams, SiteTable};
use crate::seed::{self, SimRng, Stream};

#[derive(Debug, Error)]
pub enum WalkError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io failed: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, WalkError>;

#[derive(Debug, Clone, Copy, Default)]
pub struct WalkOptions {
    /// Accumulate `C_k` as an integer numerator over a common denominator of
    /// the cookies, so that `B_k + C_k = X_k` holds exactly. Falls back to
    /// floating point when the cookies have no denominator `≤ 10^6`.
    pub exact_drift: bool,
}

/// Accumulated drift `C_0..C_n`.
///
/// In floating point each step adds at most one rounding error, so
/// `|C_k - C_k^exact| ≤ k·ulp(max |C|)`.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftSeries {
    Float(Vec<f64>),
    Exact { numerators: Vec<i64>, denom: i64 },
}

impl DriftSeries {
    #[inline]
    pub fn get(&self, k: usize) -> f64 {
        match self {
            DriftSeries::Float(v) => v[k],
            DriftSeries::Exact { numerators, denom } => numerators[k] as f64 / *denom as f64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            DriftSeries::Float(v) => v.len(),
            DriftSeries::Exact { numerators, .. } => numerators.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A simulated path `X_0..X_n` with its bookkeeping.
#[derive(Debug, Clone)]
pub struct WalkRecord {
    pub positions: Vec<i64>,
    /// `𝓛(n;x)`: visits to `x` at times `0..n-1`.
    pub visits: SiteTable<u32>,
    pub running_max: Vec<i64>,
    pub running_min: Vec<i64>,
    pub drift: DriftSeries,
    /// `Σ (2ω - 1)^2` over consumed cookies, in consumption order.
    pub consumed_qv: f64,
    pub seed: u64,
    pub env_seed: u64,
}

impl WalkRecord {
    /// Number of steps `n`.
    pub fn len(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn x(&self, k: usize) -> i64 {
        self.positions[k]
    }

    #[inline]
    pub fn c(&self, k: usize) -> f64 {
        self.drift.get(k)
    }

    /// Martingale part `B_k = X_k - C_k`.
    #[inline]
    pub fn b(&self, k: usize) -> f64 {
        match &self.drift {
            DriftSeries::Float(v) => self.positions[k] as f64 - v[k],
            DriftSeries::Exact { numerators, denom } => {
                (self.positions[k] * denom - numerators[k]) as f64 / *denom as f64
            }
        }
    }

    /// `(B_k, C_k)` as numerators over the common denominator, when exact.
    pub fn exact_parts(&self, k: usize) -> Option<(i64, i64, i64)> {
        match &self.drift {
            DriftSeries::Exact { numerators, denom } => {
                Some((self.positions[k] * denom - numerators[k], numerators[k], *denom))
            }
            DriftSeries::Float(_) => None,
        }
    }

    pub fn local_time(&self, x: i64) -> u32 {
        self.visits.get(x).copied().unwrap_or(0)
    }
}

fn cookie_values(spec: &EnvSpec) -> Vec<f64> {
    match spec {
        EnvSpec::Periodic(p) => p.probs().to_vec(),
        EnvSpec::Markov(m) => m.states().to_vec(),
        EnvSpec::Coupled(c) => {
            c.base().probs().iter().flat_map(|p| [*p, p + c.h()]).collect()
        }
    }
}

/// Step-by-step walker; the building block of every walk experiment.
pub struct Walker<'e> {
    env: &'e mut Environment,
    rng: SimRng,
    pos: i64,
    time: u64,
    visits: SiteTable<u32>,
    rights: Option<SiteTable<u32>>,
    max: i64,
    min: i64,
    drift: f64,
    drift_num: i64,
    denom: Option<i64>,
    qv: f64,
}

impl<'e> Walker<'e> {
    pub fn new(env: &'e mut Environment, seed: u64, opts: WalkOptions) -> Self {
        let denom = if opts.exact_drift { common_denominator(&cookie_values(env.spec())) } else { None };
        Self {
            env,
            rng: seed::child_rng(seed, Stream::Walk, 0),
            pos: 0,
            time: 0,
            visits: SiteTable::new(),
            rights: None,
            max: 0,
            min: 0,
            drift: 0.0,
            drift_num: 0,
            denom,
            qv: 0.0,
        }
    }

    /// Also count right departures per site (needed for edge local times).
    pub fn track_edges(mut self) -> Self {
        self.rights = Some(SiteTable::new());
        self
    }

    #[inline]
    pub fn position(&self) -> i64 {
        self.pos
    }

    #[inline]
    pub fn time(&self) -> u64 {
        self.time
    }

    #[inline]
    pub fn max(&self) -> i64 {
        self.max
    }

    #[inline]
    pub fn min(&self) -> i64 {
        self.min
    }

    #[inline]
    pub fn drift(&self) -> f64 {
        match self.denom {
            Some(d) => self.drift_num as f64 / d as f64,
            None => self.drift,
        }
    }

    pub fn drift_numerator(&self) -> Option<(i64, i64)> {
        self.denom.map(|d| (self.drift_num, d))
    }

    /// Visits to `x` strictly before the current time.
    pub fn local_time(&self, x: i64) -> u32 {
        self.visits.get(x).copied().unwrap_or(0)
    }

    /// Right departures from `x` so far (requires [`Walker::track_edges`]).
    pub fn right_departures(&self, x: i64) -> Option<u32> {
        self.rights.as_ref().map(|r| r.get(x).copied().unwrap_or(0))
    }

    pub fn visits(&self) -> &SiteTable<u32> {
        &self.visits
    }

    pub fn consumed_qv(&self) -> f64 {
        self.qv
    }

    /// Performs one step; returns the new position.
    #[inline]
    pub fn step(&mut self) -> i64 {
        let count = self.visits.get_mut(self.pos);
        *count += 1;
        let j = *count as u64;
        let omega = self.env.cookie(self.pos, j);
        let centered = 2.0 * omega - 1.0;
        match self.denom {
            Some(d) => self.drift_num += 2 * (omega * d as f64).round() as i64 - d,
            None => self.drift += centered,
        }
        self.qv += centered * centered;
        let right = self.rng.gen::<f64>() < omega;
        if right {
            if let Some(r) = self.rights.as_mut() {
                *r.get_mut(self.pos) += 1;
            }
            self.pos += 1;
            self.max = self.max.max(self.pos);
        } else {
            self.pos -= 1;
            self.min = self.min.min(self.pos);
        }
        self.time += 1;
        self.pos
    }

    /// Steps until the `(m+1)`-st visit to `x` (time `λ_{x,m}`), or until
    /// `max_steps` steps have been taken. Returns whether `λ_{x,m}` was reached.
    pub fn run_to_visit(&mut self, x: i64, m: u32, max_steps: u64) -> bool {
        loop {
            if self.pos == x && self.local_time(x) == m {
                return true;
            }
            if self.time >= max_steps {
                return false;
            }
            self.step();
        }
    }
}

/// The environment realization used by replica `replica` of a run.
///
/// With `quenched = Some(s)` every replica shares the realization seeded by
/// `s`; otherwise each replica draws its own (averaged law).
pub fn replica_environment(spec: &EnvSpec, master: u64, replica: u64, quenched: Option<u64>) -> Environment {
    let env_seed = quenched.unwrap_or_else(|| seed::derive(master, Stream::Environment, replica));
    Environment::new(spec.clone(), env_seed)
}

/// Seed of the walk driven by replica `replica`.
pub fn replica_seed(master: u64, replica: u64) -> u64 {
    seed::derive(master, Stream::Replica, replica)
}

struct Recorder {
    positions: Vec<i64>,
    maxs: Vec<i64>,
    mins: Vec<i64>,
    drift_f: Vec<f64>,
    drift_n: Vec<i64>,
}

impl Recorder {
    fn new(cap: usize) -> Self {
        Self {
            positions: Vec::with_capacity(cap),
            maxs: Vec::with_capacity(cap),
            mins: Vec::with_capacity(cap),
            drift_f: Vec::new(),
            drift_n: Vec::new(),
        }
    }

    #[inline]
    fn push(&mut self, w: &Walker<'_>) {
        self.positions.push(w.pos);
        self.maxs.push(w.max);
        self.mins.push(w.min);
        match w.denom {
            Some(_) => self.drift_n.push(w.drift_num),
            None => self.drift_f.push(w.drift),
        }
    }

    fn finish(self, w: Walker<'_>, seed: u64) -> WalkRecord {
        let drift = match w.denom {
            Some(denom) => DriftSeries::Exact { numerators: self.drift_n, denom },
            None => DriftSeries::Float(self.drift_f),
        };
        WalkRecord {
            positions: self.positions,
            visits: w.visits,
            running_max: self.maxs,
            running_min: self.mins,
            drift,
            consumed_qv: w.qv,
            seed,
            env_seed: w.env.seed(),
        }
    }
}

/// Simulates `n_steps` steps of the walk in `env`.
pub fn simulate_walk(env: &mut Environment, n_steps: usize, seed: u64, opts: WalkOptions) -> Result<WalkRecord> {
    if n_steps == 0 {
        return Err(WalkError::Precondition("n_steps must be at least 1".into()));
    }
    let mut walker = Walker::new(env, seed, opts);
    let mut rec = Recorder::new(n_steps + 1);
    rec.push(&walker);
    for _ in 0..n_steps {
        walker.step();
        rec.push(&walker);
    }
    Ok(rec.finish(walker, seed))
}

/// Simulates until `λ_{x,m}`; `None` if it is not reached within `max_steps`.
pub fn simulate_to_visit(
    env: &mut Environment,
    x: i64,
    m: u32,
    max_steps: u64,
    seed: u64,
    opts: WalkOptions,
) -> Option<WalkRecord> {
    let mut walker = Walker::new(env, seed, opts);
    let mut rec = Recorder::new(1024);
    rec.push(&walker);
    loop {
        if walker.pos == x && walker.local_time(x) == m {
            return Some(rec.finish(walker, seed));
        }
        if walker.time >= max_steps {
            return None;
        }
        walker.step();
        rec.push(&walker);
    }
}

/// First time `k` is visited, or `None` if the record never reaches it.
pub fn hitting_time(record: &WalkRecord, k: i64) -> Option<usize> {
    record.positions.iter().position(|&x| x == k)
}

/// Directed-edge local times up to the `(m+1)`-st visit `λ_{x,m}` to `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLocalTimes {
    pub x: i64,
    pub m: u32,
    /// `λ_{x,m}`
    pub lambda: usize,
    /// Leftmost site held in the tables.
    pub lo: i64,
    /// `𝓔_y`: right steps from `y` before `λ_{x,m}`, indexed by `y - lo`.
    pub rights: Vec<u64>,
    /// `𝓓_y`: left steps from `y` before `λ_{x,m}`, indexed by `y - lo`.
    pub lefts: Vec<u64>,
}

impl EdgeLocalTimes {
    pub fn hi(&self) -> i64 {
        self.lo + self.rights.len() as i64 - 1
    }

    #[inline]
    fn idx(&self, y: i64) -> Option<usize> {
        (y >= self.lo && y <= self.hi()).then(|| (y - self.lo) as usize)
    }

    /// `𝓔_y`
    pub fn e(&self, y: i64) -> u64 {
        self.idx(y).map_or(0, |i| self.rights[i])
    }

    /// `𝓓_y`
    pub fn d(&self, y: i64) -> u64 {
        self.idx(y).map_or(0, |i| self.lefts[i])
    }

    /// `𝓛(λ;y)` in the case-split form: `m` at `x`, `𝓓_y + 𝓓_{y+1} +
    /// 1{0 ≤ y < x}` left of `x`, `𝓔_{y-1} + 𝓔_y + 1{x < y ≤ 0}` right of it.
    pub fn case_split_local_time(&self, y: i64) -> u64 {
        use std::cmp::Ordering::*;
        match y.cmp(&self.x) {
            Equal => self.m as u64,
            Less => self.d(y) + self.d(y + 1) + u64::from(0 <= y && y < self.x),
            Greater => self.e(y - 1) + self.e(y) + u64::from(self.x < y && y <= 0),
        }
    }
}

/// Time of the `(m+1)`-st visit to `x` within the record.
pub fn visit_time(record: &WalkRecord, x: i64, m: u32) -> Option<usize> {
    record.positions.iter().enumerate().filter(|(_, &p)| p == x).nth(m as usize).map(|(k, _)| k)
}

pub fn edge_local_times(record: &WalkRecord, x: i64, m: u32) -> Result<EdgeLocalTimes> {
    let lambda = visit_time(record, x, m).ok_or_else(|| {
        WalkError::Precondition(format!("visit {} to site {x} is not reached within the record", m + 1))
    })?;
    let path = &record.positions[..=lambda];
    let lo = *path.iter().min().unwrap();
    let hi = *path.iter().max().unwrap();
    let width = (hi - lo + 1) as usize;
    let mut rights = vec![0u64; width];
    let mut lefts = vec![0u64; width];
    for w in path.windows(2) {
        let i = (w[0] - lo) as usize;
        if w[1] > w[0] {
            rights[i] += 1;
        } else {
            lefts[i] += 1;
        }
    }
    Ok(EdgeLocalTimes { x, m, lambda, lo, rights, lefts })
}

/// Worst discrepancy over all sites between the local time recounted from
/// the path, `𝓓_y + 𝓔_y`, and the case-split form; also checks the pairing
/// identities. Zero means every identity holds exactly.
pub fn led_residual(record: &WalkRecord, elt: &EdgeLocalTimes) -> u64 {
    let path = &record.positions[..elt.lambda];
    let mut counted: std::collections::HashMap<i64, u64> = std::collections::HashMap::new();
    for &p in path {
        *counted.entry(p).or_default() += 1;
    }
    let mut worst = 0u64;
    for y in (elt.lo - 1)..=(elt.hi() + 1) {
        let l = counted.get(&y).copied().unwrap_or(0);
        let sum = elt.d(y) + elt.e(y);
        let split = elt.case_split_local_time(y);
        worst = worst.max(l.abs_diff(sum)).max(l.abs_diff(split));
        if y > elt.x {
            let paired = elt.e(y - 1) + u64::from(elt.x < y && y <= 0);
            worst = worst.max(elt.d(y).abs_diff(paired));
        }
        if y < elt.x {
            let paired = elt.d(y + 1) + u64::from(0 <= y && y < elt.x);
            worst = worst.max(elt.e(y).abs_diff(paired));
        }
    }
    worst
}

/// `sup_k |C_k - ρ(M_k - X_k) - ρ̃(I_k - X_k)| / √n`.
pub fn drift_gap(record: &WalkRecord, params: &ModelParams) -> f64 {
    let n = record.len();
    let mut sup = 0.0f64;
    for k in 0..=n {
        let x = record.x(k);
        let approx = params.rho * (record.running_max[k] - x) as f64 + params.rho_tilde * (record.running_min[k] - x) as f64;
        sup = sup.max((record.c(k) - approx).abs());
    }
    sup / (n as f64).sqrt()
}

/// Pathwise statistics of one walk, all normalized by `√n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub gamma: f64,
    /// Number of distinct sites visited over `√n`.
    pub range_scaled: f64,
    /// `max_x 𝓛(n;x) / √n`
    pub max_local_time_scaled: f64,
    /// `#{y : 1 ≤ 𝓛(n;y) < n^γ} / √n`
    pub rare_sites_scaled: f64,
    /// `(m, T_{m⌊√n⌋})` for `m = 1, 2, 4, …, 32`.
    pub crossing_times: Vec<(u64, Option<usize>)>,
    /// `sup_k (M_k - X_k) / (√n ln n)`
    pub boundary_gap: f64,
    /// `sup_k (M_k - X_k) / √n`
    pub max_gap_scaled: f64,
}

pub fn walk_diagnostics(record: &WalkRecord, gamma: f64) -> Result<DiagnosticsReport> {
    let n = record.len();
    if n < 2 {
        return Err(WalkError::Precondition("diagnostics need at least two steps".into()));
    }
    if !(gamma > 0.0 && gamma < 0.5) {
        return Err(WalkError::Precondition(format!("gamma={gamma} must lie in (0, 1/2)")));
    }
    let sqrt_n = (n as f64).sqrt();
    let range = (record.running_max[n] - record.running_min[n] + 1) as f64;
    let max_lt = record.visits.iter().map(|(_, v)| *v).max().unwrap_or(0) as f64;
    let threshold = (n as f64).powf(gamma);
    let rare = record.visits.iter().filter(|(_, &v)| v >= 1 && (v as f64) < threshold).count() as f64;

    let unit = sqrt_n.floor() as i64;
    let levels: Vec<u64> = (0..6).map(|e| 1u64 << e).collect();
    let mut found: Vec<Option<usize>> = vec![None; levels.len()];
    for (k, &x) in record.positions.iter().enumerate() {
        for (slot, &m) in found.iter_mut().zip(&levels) {
            if slot.is_none() && x == m as i64 * unit {
                *slot = Some(k);
            }
        }
        if found.iter().all(Option::is_some) {
            break;
        }
    }
    let crossing_times = levels.into_iter().zip(found).collect();

    let max_gap = (0..=n).map(|k| record.running_max[k] - record.x(k)).max().unwrap_or(0) as f64;
    Ok(DiagnosticsReport {
        n,
        gamma,
        range_scaled: range / sqrt_n,
        max_local_time_scaled: max_lt / sqrt_n,
        rare_sites_scaled: rare / sqrt_n,
        crossing_times,
        boundary_gap: max_gap / (sqrt_n * (n as f64).ln()),
        max_gap_scaled: max_gap / sqrt_n,
    })
}

/// Gap statistics of one walk of length `n`, computed without storing the path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapStats {
    /// Same as [`drift_gap`].
    pub drift_gap: f64,
    /// `sup_k (M_k - X_k) / √n`
    pub max_gap_scaled: f64,
    /// `sup_k (M_k - X_k) / (√n ln n)`
    pub boundary_gap: f64,
}

fn streaming_gaps(walker: &mut Walker<'_>, n: u64, params: &ModelParams) -> GapStats {
    let (mut sup_drift, mut sup_gap) = (0.0f64, 0i64);
    for _ in 0..n {
        walker.step();
        let x = walker.position();
        let approx = params.rho * (walker.max() - x) as f64 + params.rho_tilde * (walker.min() - x) as f64;
        sup_drift = sup_drift.max((walker.drift() - approx).abs());
        sup_gap = sup_gap.max(walker.max() - x);
    }
    let sqrt_n = (n as f64).sqrt();
    GapStats {
        drift_gap: sup_drift / sqrt_n,
        max_gap_scaled: sup_gap as f64 / sqrt_n,
        boundary_gap: sup_gap as f64 / (sqrt_n * (n as f64).ln()),
    }
}

/// [`GapStats`] for `reps` independent walks, in replica order.
pub fn ensemble_gaps(spec: &EnvSpec, params: &ModelParams, n: u64, reps: usize, seed: u64, quenched: Option<u64>) -> Result<Vec<GapStats>> {
    if n < 2 {
        return Err(WalkError::Precondition("gap statistics need n >= 2".into()));
    }
    Ok((0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut env = replica_environment(spec, seed, r, quenched);
            let mut walker = Walker::new(&mut env, replica_seed(seed, r), WalkOptions::default());
            streaming_gaps(&mut walker, n, params)
        })
        .collect())
}

/// `X_n` for `reps` independent walks, in replica order.
pub fn ensemble_endpoints(spec: &EnvSpec, n: u64, reps: usize, seed: u64, quenched: Option<u64>) -> Vec<i64> {
    (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut env = replica_environment(spec, seed, r, quenched);
            let mut walker = Walker::new(&mut env, replica_seed(seed, r), WalkOptions::default());
            for _ in 0..n {
                walker.step();
            }
            walker.position()
        })
        .collect()
}

/// `(1/n) Σ_y Σ_{j ≤ 𝓛(n;y)} (2ω_y(j) - 1)^2`, recomputed from the final
/// local times and the environment realization that drove the walk.
pub fn qv_statistic(record: &WalkRecord, env: &mut Environment) -> f64 {
    let mut total = 0.0;
    for (y, &count) in record.visits.iter() {
        for j in 1..=count as u64 {
            let c = 2.0 * env.cookie(y, j) - 1.0;
            total += c * c;
        }
    }
    total / record.len() as f64
}

/// CSV with columns `step, position, C, B, M, I`.
pub fn write_path_csv<W: Write>(record: &WalkRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "position", "C", "B", "M", "I"])?;
    for k in 0..=record.len() {
        w.write_record(&[
            k.to_string(),
            record.x(k).to_string(),
            record.c(k).to_string(),
            record.b(k).to_string(),
            record.running_max[k].to_string(),
            record.running_min[k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{compute_params, MarkovStack};
    use proptest::prelude::*;

    fn periodic(p: &[f64]) -> EnvSpec {
        EnvSpec::periodic(p).unwrap()
    }

    fn record(spec: &EnvSpec, n: usize, seed: u64, exact: bool) -> WalkRecord {
        let mut env = Environment::new(spec.clone(), seed);
        simulate_walk(&mut env, n, seed, WalkOptions { exact_drift: exact }).unwrap()
    }

    #[test]
    fn streaming_gaps_match_the_record() {
        let spec = EnvSpec::Markov(MarkovStack::sticky_two_state());
        let params = spec.params().unwrap();
        let n = 5000;
        let gaps = ensemble_gaps(&spec, &params, n, 3, 77, None).unwrap();
        let ends = ensemble_endpoints(&spec, n, 3, 77, None);
        for (r, g) in gaps.iter().enumerate() {
            let mut env = replica_environment(&spec, 77, r as u64, None);
            let rec = simulate_walk(&mut env, n as usize, replica_seed(77, r as u64), WalkOptions::default()).unwrap();
            let diag = walk_diagnostics(&rec, 0.25).unwrap();
            assert!((g.drift_gap - drift_gap(&rec, &params)).abs() < 1e-12);
            assert_eq!(g.max_gap_scaled, diag.max_gap_scaled);
            assert_eq!(g.boundary_gap, diag.boundary_gap);
            assert_eq!(ends[r], rec.x(n as usize));
        }
        assert!(ensemble_gaps(&spec, &params, 1, 3, 77, None).is_err());
    }

    #[test]
    fn fair_cookies_have_no_drift() {
        let r = record(&periodic(&[0.5]), 10, 4, false);
        for k in 0..=10 {
            assert_eq!(r.c(k), 0.0);
            assert_eq!(r.b(k), r.x(k) as f64);
        }
    }

    #[test]
    fn first_step_consumes_the_first_cookie() {
        for seed in 0..10 {
            let r = record(&periodic(&[0.7, 0.3]), 1, seed, false);
            assert!((r.c(1) - 0.4).abs() < 1e-15);
            let r = record(&periodic(&[0.7, 0.3]), 1, seed, true);
            assert_eq!(r.exact_parts(1), Some((r.x(1) * 10 - 4, 4, 10)));
        }
    }

    #[test]
    fn zero_steps_is_rejected() {
        let mut env = Environment::new(periodic(&[0.5]), 0);
        assert!(simulate_walk(&mut env, 0, 0, WalkOptions::default()).is_err());
    }

    #[test]
    fn record_invariants() {
        let specs = [periodic(&[0.7, 0.3]), EnvSpec::Markov(MarkovStack::sticky_two_state()), periodic(&[0.9, 0.6, 0.2, 0.3])];
        for (i, spec) in specs.iter().enumerate() {
            let r = record(spec, 5000, i as u64, true);
            assert_eq!(r.x(0), 0);
            assert!(r.positions.windows(2).all(|w| (w[1] - w[0]).abs() == 1));
            assert_eq!(r.visits.iter().map(|(_, v)| *v as usize).sum::<usize>(), r.len());
            for k in 0..=r.len() {
                assert!(r.running_min[k] <= r.x(k) && r.x(k) <= r.running_max[k]);
                let (b, c, d) = r.exact_parts(k).unwrap();
                assert_eq!(b + c, r.x(k) * d);
            }
            assert!(r.running_max.windows(2).all(|w| w[1] >= w[0]));
            assert!(r.running_min.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn float_drift_stays_within_rounding_bound() {
        let spec = periodic(&[0.7, 0.3]);
        let f = record(&spec, 20_000, 8, false);
        let e = record(&spec, 20_000, 8, true);
        assert_eq!(f.positions, e.positions);
        for k in (0..=f.len()).step_by(97) {
            let bound = k as f64 * f64::EPSILON * (1.0 + f.c(k).abs());
            assert!((f.c(k) - e.c(k)).abs() <= bound + 1e-15);
            assert!((f.b(k) + f.c(k) - f.x(k) as f64).abs() <= 2.0 * bound + 1e-12);
        }
    }

    #[test]
    fn identical_inputs_are_bit_identical() {
        let spec = EnvSpec::Markov(MarkovStack::sticky_two_state());
        let a = record(&spec, 3000, 11, false);
        let b = record(&spec, 3000, 11, false);
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.drift, b.drift);
    }

    #[test]
    fn hitting_times() {
        let r = WalkRecord {
            positions: vec![0, 1, 2, 1, 2, 3, 4],
            visits: SiteTable::new(),
            running_max: vec![],
            running_min: vec![],
            drift: DriftSeries::Float(vec![]),
            consumed_qv: 0.0,
            seed: 0,
            env_seed: 0,
        };
        assert_eq!(hitting_time(&r, 0), Some(0));
        assert_eq!(hitting_time(&r, 3), Some(5));
        assert_eq!(hitting_time(&r, 9), None);
        assert_eq!(hitting_time(&r, -1), None);
    }

    #[test]
    fn edge_local_times_at_the_start() {
        let r = record(&periodic(&[0.7, 0.3]), 100, 1, false);
        let elt = edge_local_times(&r, 0, 0).unwrap();
        assert_eq!(elt.lambda, 0);
        assert_eq!((elt.e(0), elt.d(0)), (0, 0));
        assert_eq!(elt.case_split_local_time(0), 0);
    }

    #[test]
    fn edge_local_times_unreached_is_an_error() {
        let r = record(&periodic(&[0.5]), 10, 1, false);
        assert!(edge_local_times(&r, 50, 0).is_err());
    }

    #[test]
    fn led_identity_on_many_records() {
        let spec = periodic(&[0.7, 0.3]);
        for seed in 0..20 {
            let r = record(&spec, 20_000, seed, false);
            for x in [-6, -1, 0, 1, 5] {
                for m in [0, 1, 3, 8] {
                    if let Ok(elt) = edge_local_times(&r, x, m) {
                        assert_eq!(led_residual(&r, &elt), 0, "seed {seed} x {x} m {m}");
                        assert_eq!(elt.e(x) + elt.d(x), m as u64);
                    }
                }
            }
        }
    }

    #[test]
    fn walker_tracks_edges_like_the_record() {
        let spec = periodic(&[0.7, 0.3]);
        let mut env = Environment::new(spec.clone(), 3);
        let rec = simulate_to_visit(&mut env, 10, 5, 10_000_000, 3, WalkOptions::default()).unwrap();
        let elt = edge_local_times(&rec, 10, 5).unwrap();
        assert_eq!(elt.lambda, rec.len());
        let mut env = Environment::new(spec, 3);
        let mut w = Walker::new(&mut env, 3, WalkOptions::default()).track_edges();
        assert!(w.run_to_visit(10, 5, 10_000_000));
        for y in elt.lo..=elt.hi() {
            assert_eq!(w.right_departures(y).unwrap() as u64, elt.e(y));
            assert_eq!(w.local_time(y) as u64, elt.e(y) + elt.d(y));
        }
    }

    #[test]
    fn drift_gap_vanishes_for_fair_cookies() {
        let spec = periodic(&[0.5]);
        let r = record(&spec, 1000, 2, false);
        assert_eq!(drift_gap(&r, &compute_params(spec.as_periodic().unwrap())), 0.0);
    }

    #[test]
    fn diagnostics_of_a_simple_walk() {
        let r = record(&periodic(&[0.5]), 10_000, 6, false);
        let d = walk_diagnostics(&r, 0.25).unwrap();
        assert!(d.range_scaled > 0.0 && d.range_scaled < 10.0);
        assert!(d.max_local_time_scaled > 0.0);
        assert_eq!(d.crossing_times.len(), 6);
        for (m, t) in &d.crossing_times {
            if let Some(t) = t {
                assert_eq!(r.x(*t), *m as i64 * 100);
            }
        }
        assert!(walk_diagnostics(&r, 0.7).is_err());
    }

    #[test]
    fn qv_single_cookie() {
        let spec = periodic(&[0.7, 0.3]);
        let mut env = Environment::new(spec.clone(), 0);
        let r = simulate_walk(&mut env, 1, 0, WalkOptions::default()).unwrap();
        assert_eq!(qv_statistic(&r, &mut env), (2.0f64 * 0.7 - 1.0).powi(2));
        let fair = periodic(&[0.5]);
        let mut env = Environment::new(fair, 0);
        let r = simulate_walk(&mut env, 500, 0, WalkOptions::default()).unwrap();
        assert_eq!(qv_statistic(&r, &mut env), 0.0);
    }

    #[test]
    fn qv_two_orderings_agree() {
        for spec in [periodic(&[0.7, 0.3]), EnvSpec::Markov(MarkovStack::sticky_two_state()), periodic(&[0.9, 0.2, 0.4])] {
            let mut env = Environment::new(spec, 17);
            let r = simulate_walk(&mut env, 50_000, 17, WalkOptions::default()).unwrap();
            let by_sites = qv_statistic(&r, &mut env);
            let by_time = r.consumed_qv / r.len() as f64;
            assert!((by_sites - by_time).abs() <= 1e-12 * by_time.max(1.0), "{by_sites} vs {by_time}");
        }
    }

    #[test]
    fn path_csv_has_the_documented_header() {
        let r = record(&periodic(&[0.7, 0.3]), 5, 0, false);
        let mut buf = Vec::new();
        write_path_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,position,C,B,M,I\n0,0,0,0,0,0\n"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn common_denominators() {
        assert_eq!(common_denominator(&[0.7, 0.3]), Some(10));
        assert_eq!(common_denominator(&[0.5]), Some(2));
        assert_eq!(common_denominator(&[0.75, 0.3]), Some(20));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn martingale_decomposition_is_exact(seed in any::<u64>(), n in 1usize..3000) {
            let r = record(&periodic(&[0.7, 0.3]), n, seed, true);
            for k in 0..=n {
                let (b, c, d) = r.exact_parts(k).unwrap();
                prop_assert_eq!(b + c, r.x(k) * d);
            }
        }

        #[test]
        fn led_identity_random_targets(seed in any::<u64>(), x in -8i64..8, m in 0u32..6) {
            let r = record(&periodic(&[0.8, 0.6, 0.1]), 4000, seed, false);
            if let Ok(elt) = edge_local_times(&r, x, m) {
                prop_assert_eq!(led_residual(&r, &elt), 0);
            }
        }
    }
}
