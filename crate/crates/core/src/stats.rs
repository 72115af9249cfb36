//! Estimators and comparators shared by the experiments.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::env::{compute_params, PeriodicStack};
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no stack found within budget")]
    NotFound,
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Point estimate with a standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Labelled scalar Monte Carlo outcomes, optionally right-censored.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    label: String,
    values: Vec<f64>,
    censored: Option<Vec<bool>>,
}

impl SampleSet {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        Self { label: label.into(), values, censored: None }
    }

    /// `flags[i]` marks `values[i]` as a lower bound only.
    pub fn censored(label: impl Into<String>, values: Vec<f64>, flags: Vec<bool>) -> Self {
        assert_eq!(values.len(), flags.len(), "one censoring flag per value");
        Self { label: label.into(), values, censored: Some(flags) }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn censoring(&self) -> Option<&[bool]> {
        self.censored.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn is_censored(&self, i: usize) -> bool {
        self.censored.as_ref().is_some_and(|c| c[i])
    }

    pub fn uncensored_count(&self) -> usize {
        (0..self.len()).filter(|&i| !self.is_censored(i)).count()
    }

    /// Smallest censored value, if any.
    pub fn censoring_floor(&self) -> Option<f64> {
        (0..self.len()).filter(|&i| self.is_censored(i)).map(|i| self.values[i]).reduce(f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn median(&self) -> f64 {
        median(&self.values)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample mean with its jackknife standard error.
pub fn jackknife_mean(values: &[f64]) -> Estimate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    // the jackknife SE of the mean is the usual s/sqrt(n)
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let se = if n > 1 { (ss / ((n - 1) * n) as f64).sqrt() } else { f64::NAN };
    Estimate { value: mean, std_error: se, n }
}

/// Unbiased sample variance with a delete-one jackknife standard error.
pub fn jackknife_variance(values: &[f64]) -> Estimate {
    let n = values.len();
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let dev: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let s2: f64 = dev.iter().map(|d| d * d).sum();
    let var = s2 / (nf - 1.0);
    if n < 3 {
        return Estimate { value: var, std_error: f64::NAN, n };
    }
    // leave-one-out variances in O(n)
    let loo: Vec<f64> = dev
        .iter()
        .map(|d| (s2 - d * d * nf / (nf - 1.0)) / (nf - 2.0))
        .collect();
    let loo_mean = loo.iter().sum::<f64>() / nf;
    let jk: f64 = loo.iter().map(|l| (l - loo_mean).powi(2)).sum::<f64>() * (nf - 1.0) / nf;
    Estimate { value: var, std_error: jk.sqrt(), n }
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Domain("ks_distance needs two nonempty samples".into()));
    }
    let mut x = a.values.clone();
    let mut y = b.values.clone();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / nx - j as f64 / ny).abs());
    }
    Ok(d)
}

/// Total-variation distance between two empirical laws given as histograms.
pub fn tv_distance(a: &BTreeMap<u64, u64>, b: &BTreeMap<u64, u64>) -> f64 {
    let na = a.values().sum::<u64>() as f64;
    let nb = b.values().sum::<u64>() as f64;
    let mut keys: Vec<u64> = a.keys().chain(b.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    0.5 * keys
        .iter()
        .map(|k| {
            let pa = a.get(k).copied().unwrap_or(0) as f64 / na;
            let pb = b.get(k).copied().unwrap_or(0) as f64 / nb;
            (pa - pb).abs()
        })
        .sum::<f64>()
}

/// Quantile `q` of the plug-in TV distance between two independent samples
/// of sizes `n_a` and `n_b` drawn from the same law `law` (a histogram),
/// estimated from `boots` resamples. This is the TV a perfect match would
/// show at those sample sizes.
pub fn tv_null_quantile<R: Rng>(law: &BTreeMap<u64, u64>, n_a: u64, n_b: u64, boots: usize, q: f64, rng: &mut R) -> f64 {
    let values: Vec<u64> = law.keys().copied().collect();
    let mut cum = Vec::with_capacity(values.len());
    let mut total = 0u64;
    for c in law.values() {
        total += c;
        cum.push(total);
    }
    let mut draw = |n: u64| {
        let mut h: BTreeMap<u64, u64> = BTreeMap::new();
        for _ in 0..n {
            let u = rng.gen_range(0..total);
            *h.entry(values[cum.partition_point(|&c| c <= u)]).or_default() += 1;
        }
        h
    };
    let mut tvs: Vec<f64> = (0..boots).map(|_| tv_distance(&draw(n_a), &draw(n_b))).collect();
    tvs.sort_by(f64::total_cmp);
    tvs[((boots as f64 * q) as usize).min(boots - 1)]
}

/// Chi-square homogeneity statistic and degrees of freedom. Adjacent values
/// are merged until every bin has expected count at least 5 in both samples.
pub fn chi_square_homogeneity(a: &BTreeMap<u64, u64>, b: &BTreeMap<u64, u64>) -> (f64, usize) {
    let na = a.values().sum::<u64>() as f64;
    let nb = b.values().sum::<u64>() as f64;
    if na == 0.0 || nb == 0.0 {
        return (f64::NAN, 0);
    }
    let mut keys: Vec<u64> = a.keys().chain(b.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    let small = na.min(nb) / (na + nb);

    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut ca, mut cb) = (0.0, 0.0);
    for k in keys {
        ca += a.get(&k).copied().unwrap_or(0) as f64;
        cb += b.get(&k).copied().unwrap_or(0) as f64;
        if (ca + cb) * small >= 5.0 {
            bins.push((ca, cb));
            ca = 0.0;
            cb = 0.0;
        }
    }
    if ca + cb > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += ca;
                last.1 += cb;
            }
            None => bins.push((ca, cb)),
        }
    }
    let total = na + nb;
    let stat = bins
        .iter()
        .map(|&(oa, ob)| {
            let col = oa + ob;
            let ea = col * na / total;
            let eb = col * nb / total;
            (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb
        })
        .sum();
    (stat, bins.len().saturating_sub(1))
}

/// Log-log survival regression result; `exponent = -slope`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_tail: usize,
    pub reliable: bool,
}

pub const MIN_TAIL_POINTS: usize = 8;
pub const MIN_R_SQUARED: f64 = 0.98;
/// Grid points need this many exceedances to enter the fit.
const MIN_EXCEEDANCES: usize = 10;

/// Fits `P(X > t) ≈ C t^{-s}` on the dyadic grid `t = 2^k`.
///
/// Grid points are kept while the empirical survival is at most
/// `tail_fraction`, at least `MIN_EXCEEDANCES` values exceed them, and they
/// lie below the smallest censored value. The fit is reliable when it uses
/// at least [`MIN_TAIL_POINTS`] points with `r² ≥` [`MIN_R_SQUARED`].
pub fn tail_exponent(samples: &SampleSet, tail_fraction: f64) -> Result<TailFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 0.5) {
        return Err(StatsError::Domain(format!("tail_fraction={tail_fraction} must lie in (0, 0.5]")));
    }
    if samples.uncensored_count() < 100 {
        return Err(StatsError::Domain("tail fit needs at least 100 uncensored values".into()));
    }
    let floor = samples.censoring_floor().unwrap_or(f64::INFINITY);
    let mut sorted = samples.values.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(StatsError::Domain("constant sample has no tail".into()));
    }
    let n = sorted.len() as f64;
    let top = sorted[sorted.len() - 1];

    let mut pts = Vec::new();
    let mut t = 1.0f64;
    while t < floor && t < top {
        let exceed = sorted.len() - sorted.partition_point(|&v| v <= t);
        let surv = exceed as f64 / n;
        if exceed < MIN_EXCEEDANCES {
            break;
        }
        if surv <= tail_fraction {
            pts.push((t.ln(), surv.ln()));
        }
        t *= 2.0;
    }
    if pts.len() < 2 {
        return Ok(TailFit { exponent: f64::NAN, intercept: f64::NAN, r_squared: 0.0, n_tail: pts.len(), reliable: false });
    }
    let (slope, intercept, r_squared) = least_squares(&pts);
    let n_tail = pts.len();
    Ok(TailFit {
        exponent: -slope,
        intercept,
        r_squared,
        n_tail,
        reliable: n_tail >= MIN_TAIL_POINTS && r_squared >= MIN_R_SQUARED,
    })
}

/// Ordinary least squares `y = a x + b`; returns `(a, b, r²)`.
pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

const BOX: (f64, f64) = (0.02, 0.98);

fn theta_of(p: &[f64]) -> f64 {
    PeriodicStack::new(p).map(|s| compute_params(&s).theta).unwrap_or(f64::NEG_INFINITY)
}

/// Searches for a mean-1/2 stack of period `n` with `|θ - 1| ≤ tol`.
///
/// Randomized multi-start coordinate ascent on `θ` using paired moves that
/// keep the mean fixed, inside `p_i ∈ (0.02, 0.98)`. Once `θ > 1`, the
/// segment towards the fair stack (where `θ = 0`) is bisected.
pub fn find_boundary(n: usize, tol: f64, seed: u64) -> Result<PeriodicStack> {
    if n < 4 {
        return Err(StatsError::Domain(format!("period {n} < 4 cannot reach theta = 1")));
    }
    if !(tol > 0.0) {
        return Err(StatsError::Domain("tol must be positive".into()));
    }
    const RESTARTS: u64 = 64;
    for start in 0..RESTARTS {
        let mut rng = seed::child_rng(seed, seed::Stream::Search, start);
        let mut p = random_fair_start(n, &mut rng);
        if let Some(top) = ascend(&mut p, &mut rng) {
            if let Some(stack) = bisect_to_one(&top, tol) {
                return Ok(stack);
            }
        }
    }
    Err(StatsError::NotFound)
}

fn random_fair_start<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut d: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.45..0.45)).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    d.iter_mut().for_each(|x| *x -= mean);
    let widest = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = if widest > 0.47 { 0.47 / widest } else { 1.0 };
    d.iter().map(|x| 0.5 + x * scale).collect()
}

/// Climbs until `θ > 1`; returns the stack or `None` at a local maximum below 1.
fn ascend<R: Rng>(p: &mut [f64], rng: &mut R) -> Option<Vec<f64>> {
    let n = p.len();
    let mut best = theta_of(p);
    let mut step = 0.2;
    while step > 1e-6 {
        if best > 1.0 {
            return Some(p.to_vec());
        }
        let mut improved = false;
        let offset = rng.gen_range(0..n);
        for a in 0..n {
            for b in 0..n {
                let (i, j) = ((a + offset) % n, b);
                if i == j {
                    continue;
                }
                let (pi, pj) = (p[i] + step, p[j] - step);
                if pi >= BOX.1 || pj <= BOX.0 {
                    continue;
                }
                let (oi, oj) = (p[i], p[j]);
                p[i] = pi;
                p[j] = pj;
                let t = theta_of(p);
                if t > best {
                    best = t;
                    improved = true;
                } else {
                    p[i] = oi;
                    p[j] = oj;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    (best > 1.0).then(|| p.to_vec())
}

fn bisect_to_one(top: &[f64], tol: f64) -> Option<PeriodicStack> {
    let at = |s: f64| -> Vec<f64> { top.iter().map(|p| 0.5 + s * (p - 0.5)).collect() };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let t = theta_of(&at(mid));
        if (t - 1.0).abs() <= tol * 1e-3 {
            lo = mid;
            hi = mid;
            break;
        }
        if t > 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let stack = PeriodicStack::new(&at(0.5 * (lo + hi))).ok()?;
    ((compute_params(&stack).theta - 1.0).abs() <= tol).then_some(stack)
}

/// One experiment's machine-readable result.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub env: serde_json::Value,
    pub params: Option<crate::env::ModelParams>,
    pub statistics: serde_json::Map<String, serde_json::Value>,
    pub thresholds: serde_json::Map<String, serde_json::Value>,
    pub pass: Option<bool>,
}

impl ExperimentReport {
    pub fn new(experiment: impl Into<String>, env: serde_json::Value, params: Option<crate::env::ModelParams>) -> Self {
        Self {
            experiment: experiment.into(),
            env,
            params,
            statistics: Default::default(),
            thresholds: Default::default(),
            pass: None,
        }
    }

    pub fn stat(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.statistics.insert(key.into(), serde_json::to_value(value).expect("serializable statistic"));
        self
    }

    pub fn threshold(&mut self, key: &str, value: f64) -> &mut Self {
        self.thresholds.insert(key.into(), value.into());
        self
    }
}
