//! Compares transitions of the walk's edge local times with direct draws of
//! the matching branching-like processes.
//!
//! ```bash
//! cargo run --release --example rayknight
//! ```

use erw_core::blp::{rayknight_check, RayKnightOptions};
use erw_core::EnvSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = EnvSpec::periodic(&[0.7, 0.3])?;
    let report = rayknight_check(&spec, 10, 5, 2000, 3, RayKnightOptions { state_cap: 10, ..Default::default() })?;
    println!("discarded walks: {}", report.discarded);
    println!("{:>5} {:>5} {:>8} {:>10} {:>7}", "kind", "state", "tv", "chi2/dof", "n_walk");
    for row in &report.rows {
        println!(
            "{:>5} {:>5} {:>8.4} {:>10} {:>7}",
            row.kind.to_string(),
            row.state,
            row.tv_distance,
            format!("{:.1}/{}", row.chi_square, row.chi_square_dof),
            row.n_walk_obs
        );
    }
    Ok(())
}
