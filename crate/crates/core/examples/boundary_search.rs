//! Finds stacks on the boundary `θ = 1` for a few period lengths.
//!
//! ```bash
//! cargo run --example boundary_search
//! ```

use erw_core::compute_params;
use erw_core::stats::find_boundary;

fn main() {
    for n in [2, 4, 6, 8] {
        match find_boundary(n, 1e-9, 1) {
            Ok(stack) => {
                let p = compute_params(&stack);
                let probs: Vec<String> = stack.probs().iter().map(|q| format!("{q:.4}")).collect();
                println!("N={n}: [{}] theta-1={:.1e} {}", probs.join(", "), p.theta - 1.0, p.regime());
            }
            Err(e) => println!("N={n}: {e}"),
        }
    }
}
