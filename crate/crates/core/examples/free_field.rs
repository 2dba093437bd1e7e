//! Monopole in open space: traced beams summed along a radial line and
//! compared with e^{ikr}/(4πr).
//!
//! cargo run --release --example free_field -- 250

use std::f64::consts::PI;

use gbt::beamtrace::{Atmosphere, LaunchGrid, SourceSpec, TraceConfig};
use gbt::gbs::{calibrate_phi, spl, sum_at_observer, BeamWidth, GbsParams};
use gbt::oracle::monopole_free;
use gbt::parallel::{trace_all, ExecPlan};
use gbt::scene::{Scene, Vec3};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let freq: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(250.0);
    let atm = Atmosphere::new(20.0, 70.0, 1.0)?;
    let source = SourceSpec {
        position: Vec3::new(0.0, 0.0, 5.0),
        frequencies: vec![freq],
        amplitude_phi: 1.0,
        beam_param_im: -45874.0,
    };
    let cfg = TraceConfig { n_steps: 8000, dt: 1e-4, r_max: 1 };
    let paths = trace_all(&Scene::empty(), &source, &LaunchGrid::full_sphere(128, 128), &cfg, &atm, &ExecPlan::sequential())?;
    let omega = source.omegas()[0];
    let scale = calibrate_phi(&paths, &source.position, omega, 1.0, BeamWidth::default())?;
    let params = GbsParams {
        omegas: vec![omega],
        amplitude_phi: 1.0,
        calibration: scale,
        width: BeamWidth::default(),
        cutoff: true,
    };
    println!("{} beams, calibrated scale {scale:.4e}", paths.len());
    println!("{:>8} {:>10} {:>10} {:>8}", "r [m]", "beams dB", "exact dB", "diff");
    let k = omega / atm.sound_speed;
    let dir = Vec3::new(1.0, 2.0, 0.5).normalize();
    for r in [2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0] {
        let obs = source.position + dir * r;
        let p = sum_at_observer(&obs, &paths, &params)?[0];
        let exact = monopole_free(r, k)?;
        println!("{r:>8.1} {:>10.2} {:>10.2} {:>8.3}", spl(p), spl(exact), spl(p) - spl(exact));
    }
    println!("1/(4πr) at 1 m = {:.5}", 1.0 / (4.0 * PI));
    Ok(())
}
