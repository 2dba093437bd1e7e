//! Static blocks against recursive splitting on a workload whose heavy tasks
//! all sit at the front, and a bitwise check that both give the sequential
//! field.
//!
//! cargo run --release --example schedulers -- 4

use std::time::Instant;

use gbt::beamtrace::{Atmosphere, LaunchGrid, SourceSpec, TraceConfig};
use gbt::gbs::{analytic_scale, BeamWidth, GbsParams};
use gbt::parallel::{build_pool, run_dynamic, run_flat, run_sequential, sum_paths, trace_all, ExecPlan, Mode, SkewedWork};
use gbt::scene::generate::ground_plate;
use gbt::scene::Vec3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let workers: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(4);
    let mut costs = vec![20usize; 1000];
    for c in costs.iter_mut().take(10) {
        *c *= 100;
    }
    let work = SkewedWork { costs, unit_iterations: 2000 };
    let pool = build_pool(workers)?;
    let time = |f: &dyn Fn() -> Vec<u64>| {
        let t = Instant::now();
        let r = f();
        (r, t.elapsed().as_secs_f64())
    };
    let (a, t_seq) = time(&|| run_sequential(&work));
    let (b, t_flat) = time(&|| run_flat(&work, workers, &pool));
    let (c, t_dyn) = time(&|| run_dynamic(&work, 200, &pool));
    assert!(a == b && b == c);
    println!("skew {:.0}, {workers} workers, {} core(s)", work.skew(), std::thread::available_parallelism()?.get());
    println!("sequential {t_seq:.3} s  flat {t_flat:.3} s  dynamic {t_dyn:.3} s");

    let atm = Atmosphere::new(20.0, 70.0, 1.0)?;
    let scene = ground_plate(500.0, 0.0).into_scene()?;
    let source = SourceSpec {
        position: Vec3::new(0.0, 0.0, 5.0),
        frequencies: vec![125.0, 500.0],
        amplitude_phi: 1.0,
        beam_param_im: -45874.0,
    };
    let cfg = TraceConfig { n_steps: 4000, dt: 1e-4, r_max: 3 };
    let grid = LaunchGrid::full_sphere(48, 48);
    let observers: Vec<Vec3> = (0..400).map(|i| Vec3::new(i as f64 * 0.25 - 50.0, 3.0, 2.0)).collect();
    let params = GbsParams {
        omegas: source.omegas(),
        amplitude_phi: 1.0,
        calibration: analytic_scale(1.0, atm.sound_speed),
        width: BeamWidth::default(),
        cutoff: true,
    };
    let mut reference = None;
    for mode in Mode::ALL {
        let plan = ExecPlan { split_threshold: 64, ..ExecPlan::new(mode, workers) };
        let paths = trace_all(&scene, &source, &grid, &cfg, &atm, &plan)?;
        let (field, _) = sum_paths(&observers, &paths, &params, &plan)?;
        let bits: Vec<(u64, u64)> = field.iter().map(|p| (p.re.to_bits(), p.im.to_bits())).collect();
        match &reference {
            None => reference = Some(bits),
            Some(r) => println!("{mode}: bitwise equal to sequential: {}", r == &bits),
        }
    }
    Ok(())
}
