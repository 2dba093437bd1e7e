//! Monopole above a rigid plate, checked against the image-source solution
//! on the bundled validation probe line.
//!
//! cargo run --release --example ground_reflection -- 50

use gbt::harness::{CaseConfig, ValidateOptions, cmd_validate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let freq: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(50.0);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/validation.cfg");
    let mut cfg = CaseConfig::load(path)?;
    if freq < 100.0 {
        cfg.n_theta = 128;
        cfg.n_phi = 128;
    }
    let report = cmd_validate(&cfg, &ValidateOptions { speed_factor: 1.0, freq_hz: Some(freq) })?;
    print!("{}", report.summary());
    for line in report.csv.lines().step_by(20) {
        println!("{line}");
    }
    Ok(())
}
