//! Simulates one walk and prints its pathwise diagnostics; writes the
//! path as CSV when given a file name.
//!
//! ```bash
//! cargo run --example walk_path -- path.csv
//! ```

use erw_core::walk::{simulate_walk, walk_diagnostics, WalkOptions};
use erw_core::{EnvSpec, Environment};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = EnvSpec::periodic(&[0.7, 0.3])?;
    let mut env = Environment::new(spec, 11);
    let record = simulate_walk(&mut env, 100_000, 7, WalkOptions { exact_drift: true })?;
    let n = record.len();
    println!("X_n = {}, C_n = {:.1}, B_n = {:.1}", record.x(n), record.c(n), record.b(n));
    println!("{:#?}", walk_diagnostics(&record, 0.25)?);
    if let Some(path) = std::env::args().nth(1) {
        erw_core::walk::write_path_csv(&record, std::fs::File::create(&path)?)?;
        println!("wrote {path}");
    }
    Ok(())
}
