//! Median of `sup_k |C_k - ρ(M_k - X_k) - ρ̃(I_k - X_k)| / √n` for a
//! periodic and a Markovian stack at growing `n`.
//!
//! ```bash
//! cargo run --release --example drift_gap
//! ```

use erw_core::env::MarkovStack;
use erw_core::stats::median;
use erw_core::walk::ensemble_gaps;
use erw_core::EnvSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let envs = [("periodic", EnvSpec::periodic(&[0.7, 0.3])?), ("markov", EnvSpec::Markov(MarkovStack::sticky_two_state()))];
    for (name, spec) in &envs {
        let params = spec.params()?;
        for n in [1_000u64, 10_000, 100_000] {
            let gaps = ensemble_gaps(spec, &params, n, 50, 9, None)?;
            let med = median(&gaps.iter().map(|g| g.drift_gap).collect::<Vec<_>>());
            println!("{name:>8} n={n:>7}: median drift gap {med:.4}");
        }
    }
    Ok(())
}
