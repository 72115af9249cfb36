//! Mean and variance of one step of each branching-like process from a
//! large state, next to their limiting values.
//!
//! ```bash
//! cargo run --release --example blp_drift
//! ```

use erw_core::blp::{estimate_drift, estimate_variance, psi_check, BlpKind};
use erw_core::EnvSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = EnvSpec::periodic(&[0.7, 0.3])?;
    let params = spec.params()?;
    for kind in BlpKind::ALL {
        let d = estimate_drift(kind, &spec, 400, 20_000, 1)?;
        let v = estimate_variance(kind, &spec, 400, 20_000, 2)?;
        println!(
            "{kind:>4}: drift {:+.3} ± {:.3} (limit {:+.3}), variance/n {:.3} ± {:.3} (limit {:.3})",
            d.value,
            d.std_error,
            kind.drift_constant(&params),
            v.value,
            v.std_error,
            params.nu
        );
    }
    let psi = psi_check(&spec, 5, 100_000, 3)?;
    println!("psi(5) = {:.4}, E[U_1] - 5 = {:.4}", psi.psi.value, psi.mean_increment.value);
    Ok(())
}
