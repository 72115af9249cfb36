//! Cookie environments and the closed-form model parameters.
//!
//! A cookie environment assigns to every site `x` and visit number `j ≥ 1`
//! the probability `ω_x(j)` that the walk steps right on its `j`-th visit to
//! `x`. Three kinds are supported: deterministic periodic stacks, stacks that
//! are realizations of a finite Markov chain (i.i.d. over sites), and the
//! randomly boosted periodic stacks used to dominate a periodic environment.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{self, Stream};

/// Tolerance for the mean-1/2 flag of a periodic stack.
pub const MEAN_TOL: f64 = 1e-12;
/// Tolerance for deciding that `θ = 1` or `θ̃ = 1`.
pub const BOUNDARY_TOL: f64 = 1e-9;
const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, EnvError>;

/// A deterministic stack `ω_x(kN + j) = p_j`, identical at every site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodicStack {
    probs: Vec<f64>,
    mean_flag: bool,
}

impl PeriodicStack {
    pub fn new(probs: &[f64]) -> Result<Self> {
        if probs.is_empty() {
            return Err(EnvError::Invalid("periodic stack needs at least one cookie".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(EnvError::Invalid(format!("cookie {p} is not strictly inside (0,1)")));
        }
        let mean = probs.iter().sum::<f64>() / probs.len() as f64;
        Ok(Self { probs: probs.to_vec(), mean_flag: (mean - 0.5).abs() <= MEAN_TOL })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn period(&self) -> usize {
        self.probs.len()
    }

    /// Whether the cookies average to exactly one half (the critical case).
    pub fn mean_flag(&self) -> bool {
        self.mean_flag
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().sum::<f64>() / self.probs.len() as f64
    }

    /// Cookie for visit `j ≥ 1`.
    #[inline]
    pub fn cookie(&self, j: u64) -> f64 {
        debug_assert!(j >= 1);
        self.probs[((j - 1) % self.probs.len() as u64) as usize]
    }

    /// Equal-mass phase cycle viewed as a deterministic Markov chain.
    pub fn as_markov(&self) -> MarkovStack {
        let n = self.period();
        let transition = (0..n)
            .map(|i| (0..n).map(|k| if k == (i + 1) % n { 1.0 } else { 0.0 }).collect())
            .collect();
        MarkovStack { states: self.probs.clone(), transition, initial: 0 }
    }
}

/// Smallest `D ≤ 10^6` such that every value times `D` is an integer.
pub fn common_denominator(values: &[f64]) -> Option<i64> {
    (1..=1_000_000i64).find(|&d| {
        values.iter().all(|p| {
            let scaled = p * d as f64;
            (scaled - scaled.round()).abs() <= 1e-9
        })
    })
}

/// Per-site cookie sequences drawn from a finite Markov chain with a
/// deterministic first state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovStack {
    states: Vec<f64>,
    transition: Vec<Vec<f64>>,
    initial: usize,
}

impl MarkovStack {
    pub fn new(states: &[f64], transition: Vec<Vec<f64>>, initial: usize) -> Result<Self> {
        if states.is_empty() {
            return Err(EnvError::Invalid("markov stack needs at least one state".into()));
        }
        if let Some(p) = states.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(EnvError::Invalid(format!("state cookie {p} is not strictly inside (0,1)")));
        }
        if transition.len() != states.len() || transition.iter().any(|r| r.len() != states.len()) {
            return Err(EnvError::Invalid("transition matrix must be square over the states".into()));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(EnvError::Invalid(format!("row {i} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(EnvError::Invalid(format!("row {i} sums to {s}, not 1")));
            }
        }
        if initial >= states.len() {
            return Err(EnvError::Invalid(format!("initial state {initial} out of range")));
        }
        Ok(Self { states: states.to_vec(), transition, initial })
    }

    /// The two-state chain on `{0.7, 0.3}` with stay probability 0.75,
    /// started at 0.7.
    pub fn sticky_two_state() -> Self {
        Self::new(&[0.7, 0.3], vec![vec![0.75, 0.25], vec![0.25, 0.75]], 0).expect("valid chain")
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    /// Next state index given a uniform draw.
    #[inline]
    pub fn next_state(&self, from: usize, u: f64) -> usize {
        let row = &self.transition[from];
        let mut acc = 0.0;
        for (k, w) in row.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        row.iter().rposition(|w| *w > 0.0).unwrap_or(row.len() - 1)
    }

    /// Stationary distribution of the state chain.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let n = self.states.len();
        // (K^T - I) π = 0 with the last equation replaced by Σπ = 1.
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.transition[j][i] - if i == j { 1.0 } else { 0.0 };
            }
        }
        a[n - 1] = vec![1.0; n];
        let mut rhs = vec![0.0; n];
        rhs[n - 1] = 1.0;
        solve_linear(a, rhs).ok_or_else(|| EnvError::Domain("chain has no unique stationary law".into()))
    }

    /// Stationary mean of the cookies.
    pub fn stationary_mean(&self) -> Result<f64> {
        Ok(self.stationary()?.iter().zip(&self.states).map(|(w, p)| w * p).sum())
    }

    /// Limiting mean offsets `(ρ, ρ̃)` of the `U` and `V` processes.
    ///
    /// Solves the Poisson equation `g - Kg = 2ω - 1` and evaluates
    /// `g(ω(1)) - E[g(ω(T+1))]` with the state at the stopping trial
    /// distributed as the stationary law tilted by the failure (resp.
    /// success) probability, pushed one step through `K`.
    pub fn drift_rates(&self) -> Result<(f64, f64)> {
        let n = self.states.len();
        let pi = self.stationary()?;
        let f: Vec<f64> = self.states.iter().map(|p| 2.0 * p - 1.0).collect();
        let mean_f: f64 = pi.iter().zip(&f).map(|(w, v)| w * v).sum();
        if mean_f.abs() > 1e-9 {
            return Err(EnvError::Domain(format!(
                "stationary cookie mean {} differs from 1/2",
                0.5 + mean_f / 2.0
            )));
        }
        // (I - K + 1π) g = f - (πf) 1
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = if i == j { 1.0 } else { 0.0 } - self.transition[i][j] + pi[j];
            }
        }
        let rhs: Vec<f64> = f.iter().map(|v| v - mean_f).collect();
        let g = solve_linear(a, rhs).ok_or_else(|| EnvError::Domain("singular Poisson system".into()))?;

        let pushed_mean = |weights: Vec<f64>| -> f64 {
            let z: f64 = weights.iter().sum();
            let mut out = 0.0;
            for (i, w) in weights.iter().enumerate() {
                for k in 0..n {
                    out += w / z * self.transition[i][k] * g[k];
                }
            }
            out
        };
        let fail_w = pi.iter().zip(&self.states).map(|(w, p)| w * (1.0 - p)).collect();
        let succ_w = pi.iter().zip(&self.states).map(|(w, p)| w * p).collect();
        let g0 = g[self.initial];
        Ok((g0 - pushed_mean(fail_w), -(g0 - pushed_mean(succ_w))))
    }
}

/// Gaussian elimination with partial pivoting for the small systems above.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// A periodic stack whose first `G_x` cookies at each site are raised by `h`,
/// with `G_x` i.i.d. and `P(G = k) = (1-ε)^k ε` for `k ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledStack {
    base: PeriodicStack,
    h: f64,
    eps: f64,
}

impl CoupledStack {
    pub fn new(base: PeriodicStack, h: f64, eps: f64) -> Result<Self> {
        let room = base.probs().iter().map(|p| 1.0 - p).fold(f64::INFINITY, f64::min);
        if !(h >= 0.0 && h < room) {
            return Err(EnvError::Invalid(format!("boost h={h} must lie in [0, {room})")));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(EnvError::Domain(format!("eps={eps} must lie in (0,1)")));
        }
        Ok(Self { base, h, eps })
    }

    pub fn base(&self) -> &PeriodicStack {
        &self.base
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Geometric cutoff from a uniform in `[0,1)`.
    #[inline]
    pub fn cutoff_from_uniform(&self, u: f64) -> u64 {
        // P(G >= k) = (1-ε)^k
        ((1.0 - u).ln() / (1.0 - self.eps).ln()).floor() as u64
    }

    #[inline]
    pub fn cookie(&self, j: u64, cutoff: u64) -> f64 {
        let base = self.base.cookie(j);
        if j <= cutoff {
            base + self.h
        } else {
            base
        }
    }
}

/// The law of a cookie environment.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvSpec {
    Periodic(PeriodicStack),
    Markov(MarkovStack),
    Coupled(CoupledStack),
}

impl EnvSpec {
    pub fn periodic(probs: &[f64]) -> Result<Self> {
        PeriodicStack::new(probs).map(EnvSpec::Periodic)
    }

    pub fn as_periodic(&self) -> Option<&PeriodicStack> {
        match self {
            EnvSpec::Periodic(p) => Some(p),
            _ => None,
        }
    }

    /// True when every site carries the same deterministic stack.
    pub fn is_deterministic(&self) -> bool {
        matches!(self, EnvSpec::Periodic(_))
    }

    /// Parameters of the model, closed form where available.
    pub fn params(&self) -> Result<ModelParams> {
        match self {
            EnvSpec::Periodic(p) => Ok(compute_params(p)),
            EnvSpec::Markov(m) => {
                let (rho, rho_tilde) = m.drift_rates()?;
                Ok(ModelParams::from_rates(rho, rho_tilde, 2.0 * (1.0 + rho + rho_tilde)))
            }
            EnvSpec::Coupled(c) => Err(EnvError::Domain(format!(
                "no closed-form parameters for a coupled environment (h={}, eps={})",
                c.h, c.eps
            ))),
        }
    }

    /// Starts a fresh, independent cookie stack (one new site).
    pub fn fresh_stack<R: Rng>(&self, rng: &mut R) -> FreshStack {
        match self {
            EnvSpec::Periodic(_) => FreshStack::Periodic,
            EnvSpec::Markov(m) => FreshStack::Markov { state: m.initial, started: false },
            EnvSpec::Coupled(c) => FreshStack::Coupled { cutoff: c.cutoff_from_uniform(rng.gen()) },
        }
    }
}

/// Sequential reader of one freshly drawn cookie stack.
#[derive(Debug, Clone, Copy)]
pub enum FreshStack {
    Periodic,
    Markov { state: usize, started: bool },
    Coupled { cutoff: u64 },
}

impl FreshStack {
    /// Cookie for visit `j`; calls must come with `j = 1, 2, 3, …` in order.
    #[inline]
    pub fn next_cookie<R: Rng>(&mut self, spec: &EnvSpec, j: u64, rng: &mut R) -> f64 {
        match (self, spec) {
            (FreshStack::Periodic, EnvSpec::Periodic(p)) => p.cookie(j),
            (FreshStack::Markov { state, started }, EnvSpec::Markov(m)) => {
                if *started {
                    *state = m.next_state(*state, rng.gen());
                } else {
                    *started = true;
                }
                m.states[*state]
            }
            (FreshStack::Coupled { cutoff }, EnvSpec::Coupled(c)) => c.cookie(j, *cutoff),
            _ => unreachable!("fresh stack used with a different environment"),
        }
    }
}

/// Two-sided growable table indexed by lattice site.
#[derive(Debug, Clone, Default)]
pub struct SiteTable<T> {
    origin: i64,
    data: Vec<T>,
}

impl<T: Default + Clone> SiteTable<T> {
    pub fn new() -> Self {
        Self { origin: 0, data: Vec::new() }
    }

    pub fn get(&self, site: i64) -> Option<&T> {
        let idx = site - self.origin;
        if idx < 0 {
            None
        } else {
            self.data.get(idx as usize)
        }
    }

    pub fn get_mut(&mut self, site: i64) -> &mut T {
        if self.data.is_empty() {
            self.origin = site;
            self.data.push(T::default());
        }
        let idx = site - self.origin;
        if idx < 0 {
            let grow = (-idx as usize).max(self.data.len());
            let mut fresh = vec![T::default(); grow];
            fresh.append(&mut self.data);
            self.data = fresh;
            self.origin -= grow as i64;
        } else if idx as usize >= self.data.len() {
            let need = idx as usize + 1;
            let target = need.max(2 * self.data.len());
            self.data.resize(target, T::default());
        }
        &mut self.data[(site - self.origin) as usize]
    }

    /// `(site, value)` pairs over the allocated range.
    pub fn iter(&self) -> impl Iterator<Item = (i64, &T)> {
        self.data.iter().enumerate().map(move |(i, v)| (self.origin + i as i64, v))
    }
}

#[derive(Debug, Clone, Default)]
struct MarkovSite {
    states: Vec<u8>,
}

/// A realization of an environment: cookies for every `(site, j)`, sampled
/// lazily and memoized. Identical `(spec, seed, site, j)` always gives the
/// same cookie, whatever the order of queries.
#[derive(Debug, Clone)]
pub struct Environment {
    spec: EnvSpec,
    seed: u64,
    markov: SiteTable<MarkovSite>,
    cutoffs: SiteTable<Option<u64>>,
}

impl Environment {
    pub fn new(spec: EnvSpec, seed: u64) -> Self {
        if let EnvSpec::Markov(m) = &spec {
            assert!(m.states.len() <= u8::MAX as usize, "at most 255 markov states");
        }
        Self { spec, seed, markov: SiteTable::new(), cutoffs: SiteTable::new() }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Cookie `ω_site(j)`, `j ≥ 1`.
    #[inline]
    pub fn cookie(&mut self, site: i64, j: u64) -> f64 {
        debug_assert!(j >= 1);
        match &self.spec {
            EnvSpec::Periodic(p) => p.cookie(j),
            EnvSpec::Markov(m) => {
                let key = seed::derive_signed(self.seed, Stream::Site, site);
                let slot = self.markov.get_mut(site);
                while (slot.states.len() as u64) < j {
                    let next = match slot.states.last() {
                        None => m.initial,
                        Some(&prev) => {
                            let step = slot.states.len() as u64;
                            m.next_state(prev as usize, seed::counter_uniform(key, step))
                        }
                    };
                    slot.states.push(next as u8);
                }
                m.states[slot.states[(j - 1) as usize] as usize]
            }
            EnvSpec::Coupled(c) => {
                let key = seed::derive_signed(self.seed, Stream::Site, site);
                let cutoff =
                    *self.cutoffs.get_mut(site).get_or_insert_with(|| c.cutoff_from_uniform(seed::counter_uniform(key, 0)));
                c.cookie(j, cutoff)
            }
        }
    }

    /// The geometric cutoff `G_site` of a coupled environment.
    pub fn cutoff(&mut self, site: i64) -> u64 {
        let EnvSpec::Coupled(c) = &self.spec else {
            return 0;
        };
        let key = seed::derive_signed(self.seed, Stream::Site, site);
        *self.cutoffs.get_mut(site).get_or_insert_with(|| c.cutoff_from_uniform(seed::counter_uniform(key, 0)))
    }

    /// Cookie of the underlying periodic stack (coupled environments only).
    pub fn base_cookie(&self, j: u64) -> Option<f64> {
        match &self.spec {
            EnvSpec::Coupled(c) => Some(c.base.cookie(j)),
            EnvSpec::Periodic(p) => Some(p.cookie(j)),
            EnvSpec::Markov(_) => None,
        }
    }
}

/// The constants `(θ, θ̃, ρ, ρ̃, ν, a)` of a recurrent environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub theta: f64,
    pub theta_tilde: f64,
    pub rho: f64,
    pub rho_tilde: f64,
    pub nu: f64,
    pub a: f64,
}

impl ModelParams {
    /// Parameters from the limiting drifts and the variance rate.
    pub fn from_rates(rho: f64, rho_tilde: f64, nu: f64) -> Self {
        Self {
            theta: 2.0 * rho / nu,
            theta_tilde: 2.0 * rho_tilde / nu,
            rho,
            rho_tilde,
            nu,
            a: (2.0 / nu).sqrt(),
        }
    }

    pub fn regime(&self) -> Regime {
        classify(self)
    }

    /// Residuals of the four exact identities for a periodic stack.
    pub fn identity_residuals(&self, stack: &PeriodicStack) -> IdentityResiduals {
        let n = stack.period() as f64;
        let var_sum: f64 = stack.probs().iter().map(|p| p * (1.0 - p)).sum();
        IdentityResiduals {
            theta_sum: (self.theta + self.theta_tilde - (1.0 - n / (4.0 * var_sum))).abs(),
            rho_sum: (self.rho + self.rho_tilde - (self.nu / 2.0 - 1.0)).abs(),
            theta_ratio: (self.theta - 2.0 * self.rho / self.nu)
                .abs()
                .max((self.theta_tilde - 2.0 * self.rho_tilde / self.nu).abs()),
            scale: (self.a - (2.0 / self.nu).sqrt()).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResiduals {
    /// `θ + θ̃ - (1 - N / (4 Σ p(1-p)))`
    pub theta_sum: f64,
    /// `ρ + ρ̃ - (ν/2 - 1)`
    pub rho_sum: f64,
    /// `θ - 2ρ/ν` (worst of the two sides)
    pub theta_ratio: f64,
    /// `a - sqrt(2/ν)`
    pub scale: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        self.theta_sum.max(self.rho_sum).max(self.theta_ratio).max(self.scale)
    }
}

/// Closed-form parameters of a periodic stack.
pub fn compute_params(stack: &PeriodicStack) -> ModelParams {
    let p = stack.probs();
    let n = p.len() as f64;
    let var_sum: f64 = p.iter().map(|q| q * (1.0 - q)).sum();

    let mut theta_num = 0.0;
    let mut theta_tilde_num = 0.0;
    let mut rho = 0.0;
    let mut rho_tilde = 0.0;
    let mut partial = 0.0; // Σ_{i≤j} (2p_i - 1)
    for &pj in p {
        partial += 2.0 * pj - 1.0;
        theta_num += (1.0 - pj) * partial;
        theta_tilde_num += pj * -partial;
        rho += (1.0 - pj) * partial;
        rho_tilde += pj * -partial;
    }
    ModelParams {
        theta: theta_num / (2.0 * var_sum),
        theta_tilde: theta_tilde_num / (2.0 * var_sum),
        rho: 2.0 / n * rho,
        rho_tilde: 2.0 / n * rho_tilde,
        nu: 8.0 / n * var_sum,
        a: 0.5 * (var_sum / n).powf(-0.5),
    }
}

/// Recurrence/transience class of the walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    TransientRight,
    TransientLeft,
    RecurrentBoundaryRight,
    RecurrentBoundaryLeft,
    RecurrentNonBoundary,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::TransientRight => "transient-right",
            Regime::TransientLeft => "transient-left",
            Regime::RecurrentBoundaryRight => "recurrent-boundary-right",
            Regime::RecurrentBoundaryLeft => "recurrent-boundary-left",
            Regime::RecurrentNonBoundary => "recurrent-nonboundary",
        };
        f.write_str(s)
    }
}

pub fn classify(params: &ModelParams) -> Regime {
    classify_thetas(params.theta, params.theta_tilde)
}

pub fn classify_thetas(theta: f64, theta_tilde: f64) -> Regime {
    if (theta - 1.0).abs() <= BOUNDARY_TOL {
        Regime::RecurrentBoundaryRight
    } else if (theta_tilde - 1.0).abs() <= BOUNDARY_TOL {
        Regime::RecurrentBoundaryLeft
    } else if theta > 1.0 {
        Regime::TransientRight
    } else if theta_tilde > 1.0 {
        Regime::TransientLeft
    } else {
        Regime::RecurrentNonBoundary
    }
}

/// `θ` of the boosted environment: `θ + 4h(1-ε)/(νε)`.
pub fn theta_coupled(theta: f64, nu: f64, h: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(EnvError::Domain(format!("eps={eps} must lie in (0,1)")));
    }
    if !(nu > 0.0) || h < 0.0 {
        return Err(EnvError::Domain(format!("need nu > 0 and h >= 0 (nu={nu}, h={h})")));
    }
    Ok(theta + 4.0 * h * (1.0 - eps) / (nu * eps))
}

/// On-disk environment description (JSON).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvFile {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Fixes one environment realization for every replica (quenched runs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl EnvFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| EnvError::Invalid(format!("environment spec: {e}")))
    }

    pub fn to_spec(&self) -> Result<EnvSpec> {
        let need_probs = || {
            self.probs.as_deref().ok_or_else(|| EnvError::Invalid(format!("kind '{}' needs 'probs'", self.kind)))
        };
        match self.kind.as_str() {
            "periodic" => EnvSpec::periodic(need_probs()?),
            "markov" => {
                let states = self.states.as_deref().ok_or_else(|| EnvError::Invalid("markov needs 'states'".into()))?;
                let transition =
                    self.transition.clone().ok_or_else(|| EnvError::Invalid("markov needs 'transition'".into()))?;
                Ok(EnvSpec::Markov(MarkovStack::new(states, transition, self.initial.unwrap_or(0))?))
            }
            "coupled" => {
                let base = PeriodicStack::new(need_probs()?)?;
                let h = self.h.ok_or_else(|| EnvError::Invalid("coupled needs 'h'".into()))?;
                let eps = self.eps.ok_or_else(|| EnvError::Invalid("coupled needs 'eps'".into()))?;
                Ok(EnvSpec::Coupled(CoupledStack::new(base, h, eps)?))
            }
            other => Err(EnvError::Invalid(format!("unknown environment kind '{other}'"))),
        }
    }

    pub fn from_spec(spec: &EnvSpec, seed: Option<u64>) -> Self {
        match spec {
            EnvSpec::Periodic(p) => Self { kind: "periodic".into(), probs: Some(p.probs.clone()), seed, ..Self::default() },
            EnvSpec::Markov(m) => Self {
                kind: "markov".into(),
                states: Some(m.states.clone()),
                transition: Some(m.transition.clone()),
                initial: Some(m.initial),
                seed,
                ..Self::default()
            },
            EnvSpec::Coupled(c) => Self {
                kind: "coupled".into(),
                probs: Some(c.base.probs.clone()),
                h: Some(c.h),
                eps: Some(c.eps),
                seed,
                ..Self::default()
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn periodic_construction() {
        let s = PeriodicStack::new(&[0.7, 0.3]).unwrap();
        assert_eq!(s.period(), 2);
        assert!(s.mean_flag());
        assert_eq!((s.cookie(1), s.cookie(2), s.cookie(3)), (0.7, 0.3, 0.7));

        let fair = PeriodicStack::new(&[0.5]).unwrap();
        assert!(fair.mean_flag());
        assert_eq!(fair.cookie(17), 0.5);

        let off = PeriodicStack::new(&[0.7, 0.4]).unwrap();
        assert!(!off.mean_flag());
        assert_abs_diff_eq!(off.mean(), 0.55, epsilon = 1e-15);
    }

    #[test]
    fn periodic_rejects_bad_input() {
        assert!(PeriodicStack::new(&[]).is_err());
        assert!(PeriodicStack::new(&[0.5, 1.0]).is_err());
        assert!(PeriodicStack::new(&[0.0]).is_err());
        assert!(PeriodicStack::new(&[f64::NAN]).is_err());
    }

    #[test]
    fn params_of_the_two_cookie_stack() {
        let p = compute_params(&PeriodicStack::new(&[0.7, 0.3]).unwrap());
        assert_abs_diff_eq!(p.theta, 1.0 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.theta_tilde, -1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.rho, 0.12, epsilon = 1e-12);
        assert_abs_diff_eq!(p.rho_tilde, -0.28, epsilon = 1e-12);
        assert_abs_diff_eq!(p.nu, 1.68, epsilon = 1e-12);
        assert_abs_diff_eq!(p.a, (2.0f64 / 1.68).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(p.a, 1.091089451, epsilon = 1e-9);
        assert_eq!(classify(&p), Regime::RecurrentNonBoundary);
    }

    #[test]
    fn params_of_fair_coins() {
        let p = compute_params(&PeriodicStack::new(&[0.5, 0.5]).unwrap());
        assert_eq!((p.theta, p.theta_tilde, p.rho, p.rho_tilde), (0.0, 0.0, 0.0, 0.0));
        assert_abs_diff_eq!(p.nu, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.a, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn classification_rule() {
        assert_eq!(classify_thetas(1.0 / 7.0, -1.0 / 3.0), Regime::RecurrentNonBoundary);
        assert_eq!(classify_thetas(0.0, 0.0), Regime::RecurrentNonBoundary);
        assert_eq!(classify_thetas(1.2, -0.7), Regime::TransientRight);
        assert_eq!(classify_thetas(-0.7, 1.2), Regime::TransientLeft);
        assert_eq!(classify_thetas(1.0 + 1e-10, 0.0), Regime::RecurrentBoundaryRight);
        assert_eq!(classify_thetas(0.2, 1.0 - 1e-10), Regime::RecurrentBoundaryLeft);
        assert_eq!(classify_thetas(1.0 + 1e-8, 0.0), Regime::TransientRight);
    }

    #[test]
    fn coupled_theta_formula() {
        let v = theta_coupled(-0.5, 1.68, 0.05, 0.5).unwrap();
        assert_abs_diff_eq!(v, -0.5 + 4.0 * 0.05 * 0.5 / (1.68 * 0.5), epsilon = 1e-12);
        assert_abs_diff_eq!(v, -0.380952380952381, epsilon = 1e-12);
        assert_eq!(theta_coupled(0.3, 1.2, 0.0, 0.4).unwrap(), 0.3);
        assert_abs_diff_eq!(theta_coupled(0.0, 2.0, 0.25, 0.5).unwrap(), 0.5, epsilon = 1e-15);
        assert!(theta_coupled(0.0, 2.0, 0.25, 1.0).is_err());
        assert!(theta_coupled(0.0, 2.0, 0.25, 0.0).is_err());
    }

    #[test]
    fn markov_first_cookie_is_the_initial_state() {
        let spec = EnvSpec::Markov(MarkovStack::sticky_two_state());
        for seed in 0..20 {
            let mut env = Environment::new(spec.clone(), seed);
            for site in -5..5 {
                assert_eq!(env.cookie(site, 1), 0.7);
            }
        }
    }

    #[test]
    fn markov_memoization_is_order_independent() {
        let spec = EnvSpec::Markov(MarkovStack::sticky_two_state());
        let mut forward = Environment::new(spec.clone(), 99);
        let mut backward = Environment::new(spec, 99);
        let a: Vec<f64> = (-10..10).flat_map(|x| (1..40).map(move |j| (x, j))).map(|(x, j)| forward.cookie(x, j)).collect();
        let mut b: Vec<f64> =
            (-10..10).rev().flat_map(|x| (1..40).rev().map(move |j| (x, j))).map(|(x, j)| backward.cookie(x, j)).collect();
        b.reverse();
        assert_eq!(a, b);
        assert_eq!(forward.cookie(3, 7).to_bits(), forward.cookie(3, 7).to_bits());
    }

    #[test]
    fn coupled_env_dominates_and_matches_definition() {
        let base = PeriodicStack::new(&[0.7, 0.3]).unwrap();
        let spec = EnvSpec::Coupled(CoupledStack::new(base.clone(), 0.05, 0.5).unwrap());
        let mut env = Environment::new(spec, 5);
        for site in -50..50 {
            let g = env.cutoff(site);
            for j in 1..20 {
                let c = env.cookie(site, j);
                assert!(c >= base.cookie(j));
                if j <= g {
                    assert_eq!(c, base.cookie(j) + 0.05);
                } else {
                    assert_eq!(c, base.cookie(j));
                }
            }
        }
    }

    #[test]
    fn coupled_rejects_large_boost() {
        let base = PeriodicStack::new(&[0.7, 0.3]).unwrap();
        assert!(CoupledStack::new(base.clone(), 0.35, 0.5).is_err());
        assert!(CoupledStack::new(base, 0.1, 1.5).is_err());
    }

    #[test]
    fn geometric_cutoff_law() {
        let c = CoupledStack::new(PeriodicStack::new(&[0.5]).unwrap(), 0.1, 0.25).unwrap();
        let n = 200_000u64;
        let mean = (0..n).map(|i| c.cutoff_from_uniform(seed::counter_uniform(1, i)) as f64).sum::<f64>() / n as f64;
        // E[G] = (1-ε)/ε = 3
        assert!((mean - 3.0).abs() < 0.05, "mean cutoff {mean}");
        let zeros = (0..n).filter(|&i| c.cutoff_from_uniform(seed::counter_uniform(2, i)) == 0).count() as f64 / n as f64;
        assert!((zeros - 0.25).abs() < 0.005);
    }

    #[test]
    fn markov_validation() {
        assert!(MarkovStack::new(&[0.7, 0.3], vec![vec![0.5, 0.6], vec![0.5, 0.5]], 0).is_err());
        assert!(MarkovStack::new(&[0.7, 0.3], vec![vec![1.2, -0.2], vec![0.5, 0.5]], 0).is_err());
        assert!(MarkovStack::new(&[0.7, 0.3], vec![vec![0.5, 0.5], vec![0.5, 0.5]], 2).is_err());
        assert!(MarkovStack::new(&[0.7], vec![vec![0.5, 0.5]], 0).is_err());
    }

    #[test]
    fn markov_drift_rates_reproduce_periodic_closed_form() {
        for probs in [vec![0.7, 0.3], vec![0.9, 0.6, 0.2, 0.3], vec![0.5], vec![0.8, 0.8, 0.2, 0.2]] {
            let stack = PeriodicStack::new(&probs).unwrap();
            let p = compute_params(&stack);
            let (rho, rho_tilde) = stack.as_markov().drift_rates().unwrap();
            assert_abs_diff_eq!(rho, p.rho, epsilon = 1e-10);
            assert_abs_diff_eq!(rho_tilde, p.rho_tilde, epsilon = 1e-10);
        }
    }

    #[test]
    fn sticky_chain_drift_rates() {
        // g = (1.6, 0); failure-tilted law (0.3, 0.7) pushes to mass 0.4 on
        // state 0.7, success-tilted law (0.7, 0.3) to 0.6.
        let (rho, rho_tilde) = MarkovStack::sticky_two_state().drift_rates().unwrap();
        assert_abs_diff_eq!(rho, 1.6 - 0.4 * 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(rho_tilde, -(1.6 - 0.6 * 1.6), epsilon = 1e-12);
    }

    #[test]
    fn env_file_round_trip() {
        let f = EnvFile::parse(r#"{"kind":"periodic","probs":[0.7,0.3]}"#).unwrap();
        assert_eq!(f.to_spec().unwrap(), EnvSpec::periodic(&[0.7, 0.3]).unwrap());
        let m = EnvFile::parse(
            r#"{"kind":"markov","states":[0.7,0.3],"transition":[[0.75,0.25],[0.25,0.75]],"initial":0,"seed":3}"#,
        )
        .unwrap();
        assert_eq!(m.seed, Some(3));
        assert_eq!(m.to_spec().unwrap(), EnvSpec::Markov(MarkovStack::sticky_two_state()));
        let c = EnvFile::parse(r#"{"kind":"coupled","probs":[0.7,0.3],"h":0.05,"eps":0.5}"#).unwrap();
        assert!(matches!(c.to_spec().unwrap(), EnvSpec::Coupled(_)));
        let spec = c.to_spec().unwrap();
        assert_eq!(EnvFile::from_spec(&spec, None).to_spec().unwrap(), spec);
        assert!(EnvFile::parse(r#"{"kind":"periodic","probs":[]}"#).unwrap().to_spec().is_err());
        assert!(EnvFile::parse(r#"{"kind":"bounded","probs":[0.5]}"#).unwrap().to_spec().is_err());
        assert!(EnvFile::parse(r#"{"kind":"periodic","prob":[0.5]}"#).is_err());
    }

    #[test]
    fn site_table_grows_both_ways() {
        let mut t: SiteTable<u32> = SiteTable::new();
        *t.get_mut(3) += 1;
        *t.get_mut(-7) += 2;
        *t.get_mut(40) += 3;
        assert_eq!(t.get(3), Some(&1));
        assert_eq!(t.get(-7), Some(&2));
        assert_eq!(t.get(40), Some(&3));
        assert_eq!(t.iter().map(|(_, v)| *v).sum::<u32>(), 6);
    }

    fn mean_half_stack() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.05f64..0.95, 1..=12).prop_filter_map("projectable", |raw| {
            let shift = 0.5 - raw.iter().sum::<f64>() / raw.len() as f64;
            let p: Vec<f64> = raw.iter().map(|v| v + shift).collect();
            p.iter().all(|v| *v > 0.0 && *v < 1.0).then_some(p)
        })
    }

    proptest! {
        #[test]
        fn identities_hold(probs in mean_half_stack()) {
            let stack = PeriodicStack::new(&probs).unwrap();
            prop_assume!(stack.mean_flag());
            let r = compute_params(&stack).identity_residuals(&stack);
            prop_assert!(r.max() <= 1e-10, "{:?}", r);
        }

        #[test]
        fn theta_matches_rate_ratio(probs in prop::collection::vec(0.02f64..0.98, 1..=12)) {
            let p = compute_params(&PeriodicStack::new(&probs).unwrap());
            prop_assert!((p.theta - 2.0 * p.rho / p.nu).abs() <= 1e-12);
            prop_assert!((p.theta_tilde - 2.0 * p.rho_tilde / p.nu).abs() <= 1e-12);
        }

        #[test]
        fn classify_depends_only_on_thetas(probs in mean_half_stack(), rho_scale in 0.1f64..10.0) {
            let p = compute_params(&PeriodicStack::new(&probs).unwrap());
            let relabeled = ModelParams { rho: p.rho * rho_scale, rho_tilde: p.rho_tilde * rho_scale, nu: p.nu * rho_scale, ..p };
            prop_assert_eq!(classify(&p), classify(&relabeled));
        }

        #[test]
        fn coupled_cookie_dominates(seed in any::<u64>(), site in -1000i64..1000, j in 1u64..200) {
            let base = PeriodicStack::new(&[0.7, 0.3]).unwrap();
            let mut env = Environment::new(EnvSpec::Coupled(CoupledStack::new(base.clone(), 0.05, 0.3).unwrap()), seed);
            prop_assert!(env.cookie(site, j) >= base.cookie(j));
        }
    }
}
