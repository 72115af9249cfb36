//! Rescaled walk endpoint `X_n / (a√n)` against the perturbed-BM marginal.
//!
//! ```bash
//! cargo run --release --example flt_marginal
//! ```

use erw_core::cli::{flt_comparison, load_env, ExperimentConfig, FltArgs};

fn main() {
    let args = FltArgs { t: 1.0, scale: None, allow_nonzero_mean: false };
    for env in ["0.5", "0.7,0.3"] {
        let cfg = ExperimentConfig::new(load_env(env).unwrap()).with_seed(1).with_n(20_000).with_reps(2000).with_dt(1e-3);
        match flt_comparison(&cfg, args) {
            Ok(cmp) => println!("{env}: KS {:.4} (walk median {:.3}, limit median {:.3})", cmp.ks, cmp.walk.median(), cmp.limit.median()),
            Err(e) => println!("{env}: {}", e.message),
        }
    }
}
