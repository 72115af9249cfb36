//! Writes the CSV series behind both figures into a directory.
//!
//! ```bash
//! cargo run --release --example figure_csv -- target/figures
//! ```

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/figures".into());
    let markov = r#"{"kind":"markov","states":[0.7,0.3],"transition":[[0.75,0.25],[0.25,0.75]],"initial":0}"#;
    let runs: [&[&str]; 3] = [
        &["figure", "--which", "1", "--env", "0.7,0.3"],
        &["figure", "--which", "3", "--env", "0.7,0.3", "--n", "100000", "--stride", "10"],
        &["figure", "--which", "3", "--env", markov, "--n", "100000", "--stride", "10"],
    ];
    for (i, args) in runs.iter().enumerate() {
        let dir = format!("{out}/run{i}");
        let mut argv = vec!["erw"];
        argv.extend_from_slice(args);
        argv.extend_from_slice(&["--seed", "2024", "--out", &dir]);
        let code = erw_core::cli::run(argv);
        println!("-> {dir} (exit {code})");
    }
}
