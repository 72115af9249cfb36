//! Continuum limits: the squared-Bessel-type diffusion
//! `dY = b dt + sqrt(ν Y) dB` and the perturbed Brownian motion
//! `Z_t = B_t + α sup_{s≤t} Z_s + β inf_{s≤t} Z_s`.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::seed::{self, SimRng, Stream};
use crate::stats::SampleSet;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io failed: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DiffusionError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DiffusionKind {
    SqBessel { b: f64, nu: f64, y0: f64 },
    PerturbedBm { alpha: f64, beta: f64 },
}

/// A path on the grid `0, dt, 2dt, …`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPath {
    pub dt: f64,
    pub values: Vec<f64>,
    pub kind: DiffusionKind,
    pub driving_seed: u64,
    /// Driving Brownian path (perturbed BM only).
    pub brownian: Vec<f64>,
    /// Grid index where a stopped path froze, if it did.
    pub stopped_at: Option<usize>,
}

impl DiffusionPath {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |k| k as f64 * self.dt)
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("paths contain the starting point")
    }
}

fn grid_steps(dt: f64, t: f64) -> Result<usize> {
    if !(dt > 0.0 && t > 0.0 && dt <= t) {
        return Err(DiffusionError::Domain(format!("need 0 < dt <= T (dt={dt}, T={t})")));
    }
    Ok((t / dt).round() as usize)
}

fn check_sqbessel(nu: f64, y0: f64, eps_stop: f64) -> Result<()> {
    if !(nu > 0.0) || !(y0 >= 0.0) || !(eps_stop >= 0.0) {
        return Err(DiffusionError::Domain(format!("need nu > 0, y0 >= 0, eps_stop >= 0 (nu={nu}, y0={y0}, eps={eps_stop})")));
    }
    Ok(())
}

/// Full-truncation Euler scheme. With `eps_stop > 0` the path freezes at
/// the first grid time where `Y ≤ eps_stop`.
#[allow(clippy::too_many_arguments)]
fn sqbessel_run<F: FnMut(f64)>(b: f64, nu: f64, y0: f64, dt: f64, steps: usize, eps_stop: f64, rng: &mut SimRng, mut emit: F) -> Option<usize> {
    let sdt = dt.sqrt();
    let mut y = y0;
    emit(y);
    if eps_stop > 0.0 && y <= eps_stop {
        return Some(0);
    }
    for k in 1..=steps {
        let dw: f64 = rng.sample(StandardNormal);
        y += b * dt + (nu * y.max(0.0)).sqrt() * sdt * dw;
        emit(y.max(0.0));
        if eps_stop > 0.0 && y <= eps_stop {
            return Some(k);
        }
    }
    None
}

pub fn simulate_sqbessel(b: f64, nu: f64, y0: f64, dt: f64, t: f64, eps_stop: f64, seed: u64) -> Result<DiffusionPath> {
    check_sqbessel(nu, y0, eps_stop)?;
    let steps = grid_steps(dt, t)?;
    let mut rng = seed::child_rng(seed, Stream::Diffusion, 0);
    let mut values = Vec::with_capacity(steps + 1);
    let stopped_at = sqbessel_run(b, nu, y0, dt, steps, eps_stop, &mut rng, |v| values.push(v));
    Ok(DiffusionPath { dt, values, kind: DiffusionKind::SqBessel { b, nu, y0 }, driving_seed: seed, brownian: Vec::new(), stopped_at })
}

/// `Y(t ∧ σ_ε)` over `reps` independent paths.
#[allow(clippy::too_many_arguments)]
pub fn sqbessel_marginal_samples(b: f64, nu: f64, y0: f64, t: f64, dt: f64, eps_stop: f64, reps: usize, seed: u64) -> Result<SampleSet> {
    check_sqbessel(nu, y0, eps_stop)?;
    let steps = grid_steps(dt, t)?;
    let values = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut last = y0;
            sqbessel_run(b, nu, y0, dt, steps, eps_stop, &mut seed::child_rng(seed, Stream::Diffusion, r), |v| last = v);
            last
        })
        .collect();
    Ok(SampleSet::new("sqbessel", values))
}

fn check_pbm(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha < 1.0 && beta < 1.0) {
        return Err(DiffusionError::Domain(format!("perturbed BM needs alpha < 1 and beta < 1 (alpha={alpha}, beta={beta})")));
    }
    Ok(())
}

/// State of the discrete perturbed-BM recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbmState {
    pub z: f64,
    pub max: f64,
    pub min: f64,
}

impl PbmState {
    pub const ORIGIN: PbmState = PbmState { z: 0.0, max: 0.0, min: 0.0 };

    /// Advances by one Brownian increment, solving the functional equation
    /// exactly for whichever extremum the step moves.
    pub fn step(self, alpha: f64, beta: f64, db: f64) -> PbmState {
        let PbmState { z, max, min } = self;
        let proposal = z + db;
        if proposal > max || (max == min && db > 0.0) {
            let next = (z + db - alpha * max) / (1.0 - alpha);
            PbmState { z: next, max: next, min }
        } else if proposal < min || (max == min && db < 0.0) {
            let next = (z + db - beta * min) / (1.0 - beta);
            PbmState { z: next, max, min: next }
        } else {
            PbmState { z: proposal, max, min }
        }
    }
}

/// Pathwise solution driven by the given Brownian increments.
pub fn solve_pbm(alpha: f64, beta: f64, dt: f64, increments: &[f64]) -> Result<DiffusionPath> {
    check_pbm(alpha, beta)?;
    let mut state = PbmState::ORIGIN;
    let mut b = 0.0;
    let mut values = Vec::with_capacity(increments.len() + 1);
    let mut brownian = Vec::with_capacity(increments.len() + 1);
    values.push(0.0);
    brownian.push(0.0);
    for &db in increments {
        state = state.step(alpha, beta, db);
        b += db;
        values.push(state.z);
        brownian.push(b);
    }
    Ok(DiffusionPath { dt, values, kind: DiffusionKind::PerturbedBm { alpha, beta }, driving_seed: 0, brownian, stopped_at: None })
}

/// Simulates increments from `seed` and solves on `[0, T]`.
pub fn simulate_pbm(alpha: f64, beta: f64, dt: f64, t: f64, seed: u64) -> Result<DiffusionPath> {
    check_pbm(alpha, beta)?;
    let steps = grid_steps(dt, t)?;
    let mut rng = seed::child_rng(seed, Stream::Diffusion, 0);
    let sdt = dt.sqrt();
    let inc: Vec<f64> = (0..steps).map(|_| sdt * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut path = solve_pbm(alpha, beta, dt, &inc)?;
    path.driving_seed = seed;
    Ok(path)
}

/// Largest `|Z_k - (B_k + α M_k + β I_k)|` along the path.
pub fn reconstruction_residual(path: &DiffusionPath) -> f64 {
    let DiffusionKind::PerturbedBm { alpha, beta } = path.kind else {
        return 0.0;
    };
    let (mut max, mut min) = (f64::NEG_INFINITY, f64::INFINITY);
    path.values
        .iter()
        .zip(&path.brownian)
        .map(|(&z, &b)| {
            max = max.max(z);
            min = min.min(z);
            (z - (b + alpha * max + beta * min)).abs()
        })
        .fold(0.0, f64::max)
}

/// `Z_t` over `reps` independent paths.
pub fn pbm_marginal_samples(alpha: f64, beta: f64, t: f64, dt: f64, reps: usize, seed: u64) -> Result<SampleSet> {
    check_pbm(alpha, beta)?;
    let steps = grid_steps(dt, t)?;
    let sdt = dt.sqrt();
    let values = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::child_rng(seed, Stream::Diffusion, r);
            let mut s = PbmState::ORIGIN;
            for _ in 0..steps {
                s = s.step(alpha, beta, sdt * rng.sample::<f64, _>(StandardNormal));
            }
            s.z
        })
        .collect();
    Ok(SampleSet::new("pbm", values))
}

/// CSV with columns `time, value`.
pub fn write_path_csv<W: Write>(path: &DiffusionPath, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "value"])?;
    for (t, v) in path.times().zip(&path.values) {
        w.write_record(&[format!("{t}"), format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV with columns `replica, value`.
pub fn write_marginal_csv<W: Write>(samples: &SampleSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replica", "value"])?;
    for (i, v) in samples.values().iter().enumerate() {
        w.write_record(&[i.to_string(), format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{jackknife_mean, ks_distance};
    use proptest::prelude::*;

    fn normal_cdf(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26 erf, |error| < 1.5e-7
        let z = x.abs() / std::f64::consts::SQRT_2;
        let t = 1.0 / (1.0 + 0.327_591_1 * z);
        let poly = t * (0.254_829_592 + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
        let erf = 1.0 - poly * (-z * z).exp();
        0.5 * (1.0 + erf.copysign(x))
    }

    #[test]
    fn nearly_deterministic_sqbessel_is_a_line() {
        let p = simulate_sqbessel(1.0, 1e-12, 0.0, 1e-4, 1.0, 0.0, 1).unwrap();
        assert_eq!(p.values.len(), 10_001);
        assert!((p.last() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn sqbessel_mean_follows_drift() {
        let s = sqbessel_marginal_samples(0.12, 1.68, 1.0, 1.0, 1e-3, 0.0, 10_000, 2).unwrap();
        let e = jackknife_mean(s.values());
        assert!((e.value - 1.12).abs() < 3.0 * e.std_error, "{e:?}");
        assert!(s.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn sqbessel_stopping() {
        let p = simulate_sqbessel(-1.0, 1.0, 0.5, 1e-3, 5.0, 0.1, 3).unwrap();
        let k = p.stopped_at.expect("negative drift reaches the level");
        assert_eq!(p.values.len(), k + 1);
        assert!(p.last() <= 0.1);
        assert!(p.values[..k].iter().all(|v| *v > 0.1));
        assert!(simulate_sqbessel(0.1, 1.0, 1.0, 2.0, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn pbm_identity_case_is_brownian() {
        let p = simulate_pbm(0.0, 0.0, 1e-3, 1.0, 4).unwrap();
        assert_eq!(p.values, p.brownian);
        assert_eq!(reconstruction_residual(&p), 0.0);
    }

    #[test]
    fn pbm_rejects_out_of_range() {
        assert!(solve_pbm(1.0, 0.0, 1e-3, &[0.1]).is_err());
        assert!(solve_pbm(0.0, 1.5, 1e-3, &[0.1]).is_err());
        assert!(pbm_marginal_samples(0.0, 1.0, 1.0, 1e-3, 10, 1).is_err());
    }

    #[test]
    fn step_at_running_max_scales_increment() {
        let s = PbmState { z: 0.7, max: 0.7, min: -0.2 };
        let n = s.step(0.4, -1.0, 0.3);
        assert!((n.z - (0.7 + 0.3 / 0.6)).abs() < 1e-15);
        assert_eq!(n.max, n.z);
        let d = PbmState::ORIGIN.step(0.5, 0.5, -0.1);
        assert!((d.z + 0.2).abs() < 1e-15);
        assert_eq!(PbmState::ORIGIN.step(0.3, 0.3, 0.0), PbmState::ORIGIN);
    }

    #[test]
    fn larger_alpha_gives_larger_first_value() {
        let z = |a: f64| PbmState::ORIGIN.step(a, 0.0, 0.01).z;
        assert!(z(0.5) > z(0.1) && z(0.1) > z(-1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn reconstruction_holds_for_random_parameters(alpha in -2.0f64..0.9, beta in -2.0f64..0.9, seed in any::<u64>()) {
            let p = simulate_pbm(alpha, beta, 1e-3, 1.0, seed).unwrap();
            prop_assert!(reconstruction_residual(&p) < 1e-9);
        }
    }

    #[test]
    fn pbm_zero_is_normal() {
        let s = pbm_marginal_samples(0.0, 0.0, 1.0, 1e-3, 10_000, 5).unwrap();
        let mut v = s.values().to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let d = v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = normal_cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 0.02, "{d}");
    }

    #[test]
    fn pbm_median_positive_for_two_cookie_thetas() {
        let s = pbm_marginal_samples(1.0 / 7.0, -1.0 / 3.0, 1.0, 1e-3, 10_000, 6).unwrap();
        assert!(s.median() > 0.0);
    }

    #[test]
    fn pbm_refinement_is_stable() {
        let a = pbm_marginal_samples(1.0 / 7.0, -1.0 / 3.0, 1.0, 1e-3, 10_000, 7).unwrap();
        let b = pbm_marginal_samples(1.0 / 7.0, -1.0 / 3.0, 1.0, 1e-4, 10_000, 8).unwrap();
        assert!(ks_distance(&a, &b).unwrap() < 0.03);
    }

    #[test]
    fn csv_headers() {
        let p = simulate_pbm(0.2, 0.1, 0.5, 1.0, 1).unwrap();
        let mut buf = Vec::new();
        write_path_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time,value\n0,0\n"));
        assert_eq!(text.lines().count(), 4);
        let mut buf = Vec::new();
        write_marginal_csv(&SampleSet::new("x", vec![1.5]), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "replica,value\n0,1.5\n");
    }
}
