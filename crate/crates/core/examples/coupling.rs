//! Boosted cookies `ω + h` up to a geometric cutoff: the boosted `V̂` never
//! exceeds the plain one under shared uniforms, and `θ` shifts by
//! `4h(1-ε)/(νε)`.
//!
//! ```bash
//! cargo run --release --example coupling
//! ```

use erw_core::blp::coupled_domination_check;
use erw_core::env::{compute_params, PeriodicStack};
use erw_core::theta_coupled;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = PeriodicStack::new(&[0.7, 0.3])?;
    let p = compute_params(&base);
    for (h, eps) in [(0.05, 0.5), (0.1, 0.2), (0.2, 0.9)] {
        let report = coupled_domination_check(&base, h, eps, 10, 500, 200, 1)?;
        let theta = theta_coupled(p.theta, p.nu, h, eps)?;
        println!("h={h} eps={eps}: theta_h,eps={theta:.4}, violations {}/{}", report.violations, report.comparisons);
    }
    Ok(())
}
