//! Phase portrait of the harmonic oscillator: every energy level is a
//! circle of radius sqrt(2E). Writes CSV, SVG and a manifest through the
//! same path as `ergolab portrait`.

use ergolab::cli::{self, Experiment, ExperimentConfig, Parameters, SystemKey};

fn main() {
    let stem = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("harmonic_portrait").to_string_lossy().into_owned());
    let config = ExperimentConfig {
        experiment: Experiment::Portrait,
        system: SystemKey::Harmonic,
        parameters: Parameters {
            m: Some(1.0),
            omega: Some(1.0),
            energy_levels: Some(vec![0.5, 1.0, 2.0]),
            ..Default::default()
        },
        output: stem,
    };
    match cli::run(&config, true) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            println!("max |H - E| = {}", outcome.manifest.summary["max_level_residual"]);
        }
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            std::process::exit(e.exit_code);
        }
    }
}
