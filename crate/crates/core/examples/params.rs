//! Closed-form parameters and regimes for a few cookie stacks.
//!
//! ```bash
//! cargo run --example params
//! ```

use erw_core::env::{compute_params, MarkovStack, PeriodicStack};
use erw_core::EnvSpec;

fn main() {
    for probs in [vec![0.7, 0.3], vec![0.5], vec![0.7, 0.7, 0.3, 0.3], vec![0.9, 0.9, 0.1, 0.1]] {
        let stack = PeriodicStack::new(&probs).expect("valid stack");
        let p = compute_params(&stack);
        println!(
            "{probs:?}: theta={:.6} theta~={:.6} rho={:.4} rho~={:.4} nu={:.4} a={:.6} -> {}",
            p.theta,
            p.theta_tilde,
            p.rho,
            p.rho_tilde,
            p.nu,
            p.a,
            p.regime()
        );
        println!("  largest identity residual {:.2e}", p.identity_residuals(&stack).max());
    }

    let markov = EnvSpec::Markov(MarkovStack::sticky_two_state());
    let p = markov.params().expect("recurrent chain");
    println!("sticky Markov stack: rho={:.4} rho~={:.4} nu={:.4} -> {}", p.rho, p.rho_tilde, p.nu, p.regime());
}
