//! Rescaled `U` process from `n = 10^4` against its diffusion limit at
//! `t = 1/2`, both stopped below `εn`.
//!
//! ```bash
//! cargo run --release --example diffusion_bridge
//! ```

use erw_core::blp::BlpKind;
use erw_core::cli::bridge_comparison;
use erw_core::EnvSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = EnvSpec::periodic(&[0.7, 0.3])?;
    let cmp = bridge_comparison(&spec, BlpKind::U, 10_000, 0.5, 0.1, 1e-4, 500, 2).map_err(|e| e.message)?;
    println!("mean Z/n {:.4}, mean Y {:.4}, KS {:.4}", cmp.blp.mean(), cmp.diffusion.mean(), cmp.ks);
    Ok(())
}
