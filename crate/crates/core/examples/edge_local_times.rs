//! Walks to the 6th visit of site 10 and checks the local-time identities
//! for the directed-edge local times.
//!
//! ```bash
//! cargo run --example edge_local_times
//! ```

use erw_core::walk::{edge_local_times, led_residual, simulate_to_visit, WalkOptions};
use erw_core::{EnvSpec, Environment};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = EnvSpec::periodic(&[0.7, 0.3])?;
    for seed in 0..5 {
        let mut env = Environment::new(spec.clone(), seed);
        let Some(record) = simulate_to_visit(&mut env, 10, 5, 10_000_000, seed, WalkOptions::default()) else {
            println!("seed {seed}: visit not reached");
            continue;
        };
        let elt = edge_local_times(&record, 10, 5)?;
        let right: Vec<u64> = (10..=elt.hi()).map(|y| elt.e(y)).collect();
        println!("seed {seed}: lambda={} residual={} E profile {right:?}", elt.lambda, led_residual(&record, &elt));
    }
    Ok(())
}
