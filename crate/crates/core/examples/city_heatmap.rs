//! Sound level map over the bundled block city, written as a PNG heatmap.
//!
//! cargo run --release --example city_heatmap -- out_dir

use std::path::{Path, PathBuf};

use gbt::harness::{CaseConfig, cmd_run};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "city_out".into()));
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let cfg = CaseConfig::load(data.join("city.cfg"))?;
    let report = cmd_run(&cfg, &data.join("city.scene"), &out)?;
    print!("{}", report.summary());
    let spl: Vec<f64> = report.field.spl.iter().copied().filter(|v| v.is_finite()).collect();
    let max = spl.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = spl.iter().copied().fold(f64::INFINITY, f64::min);
    println!("SPL range {min:.1} .. {max:.1} dB");
    println!("rt {:.2} s, gbs {:.2} s", report.timings.rt_seconds, report.timings.gbs_seconds);
    println!("wrote {}", out.display());
    Ok(())
}
