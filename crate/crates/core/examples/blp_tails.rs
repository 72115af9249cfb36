//! Survival tails of the extinction time and of the total progeny of `U`.
//!
//! ```bash
//! cargo run --release --example blp_tails
//! ```

use erw_core::blp::{tail_survey, BlpKind};
use erw_core::stats::tail_exponent;
use erw_core::EnvSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = EnvSpec::periodic(&[0.7, 0.7, 0.3, 0.3])?;
    let s = BlpKind::U.tail_exponent(&spec.params()?);
    let survey = tail_survey(BlpKind::U, &spec, 1, 20_000, 1 << 14, 5)?;
    let sigma = tail_exponent(&survey.sigma, 0.2)?;
    let sum = tail_exponent(&survey.sums, 0.2)?;
    println!("censored fraction {:.4}", survey.censored_fraction);
    println!("sigma_0: fitted {:.3} (expected {s:.3}), r2 {:.4}, {} points", sigma.exponent, sigma.r_squared, sigma.n_tail);
    println!("sum:     fitted {:.3} (expected {:.3}), r2 {:.4}, {} points", sum.exponent, s / 2.0, sum.r_squared, sum.n_tail);
    Ok(())
}
