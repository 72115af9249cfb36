//! Solves the perturbed-Brownian-motion equation pathwise and checks the
//! reconstruction `Z = B + α max Z + β min Z`.
//!
//! ```bash
//! cargo run --example perturbed_bm
//! ```

use erw_core::diffusion::{pbm_marginal_samples, reconstruction_residual, simulate_pbm, simulate_sqbessel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (alpha, beta) = (1.0 / 7.0, -1.0 / 3.0);
    let path = simulate_pbm(alpha, beta, 1e-4, 1.0, 3)?;
    println!("Z_1 = {:.4}, B_1 = {:.4}", path.last(), path.brownian.last().unwrap());
    println!("reconstruction residual {:.2e}", reconstruction_residual(&path));
    let samples = pbm_marginal_samples(alpha, beta, 1.0, 1e-3, 5000, 4)?;
    println!("median of Z_1 over {} paths: {:.4}", samples.len(), samples.median());

    let y = simulate_sqbessel(0.12, 1.68, 1.0, 1e-4, 1.0, 0.0, 5)?;
    println!("squared-Bessel path: Y(1) = {:.4}", y.last());
    Ok(())
}
