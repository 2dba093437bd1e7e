//! Splitting the ray set into chunks that fit a memory budget. The field of a
//! chunked run equals the single-pass field bit for bit.
//!
//! cargo run --release --example chunking -- 200000

use gbt::beamtrace::{Atmosphere, LaunchGrid, SourceSpec, TraceConfig};
use gbt::gbs::{analytic_scale, BeamWidth, GbsParams};
use gbt::parallel::{plan_chunks, ExecPlan, Pipeline};
use gbt::scene::generate::{box_building, ground_plate};
use gbt::scene::{Category, Vec3};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let budget: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200_000);
    let atm = Atmosphere::new(20.0, 70.0, 1.0)?;
    let mut g = ground_plate(300.0, 0.0);
    g.extend(box_building(Vec3::new(15.0, -10.0, 0.0), Vec3::new(25.0, 10.0, 12.0), Category::Building));
    let scene = g.into_scene()?;
    let source = SourceSpec {
        position: Vec3::new(0.0, 0.0, 2.0),
        frequencies: vec![250.0],
        amplitude_phi: 1.0,
        beam_param_im: -45874.0,
    };
    let cfg = TraceConfig { n_steps: 3000, dt: 1e-4, r_max: 4 };
    let grid = LaunchGrid::full_sphere(40, 40);
    let observers: Vec<Vec3> = (0..200).map(|i| Vec3::new(i as f64 * 0.5 - 50.0, 0.0, 1.5)).collect();
    let params = GbsParams {
        omegas: source.omegas(),
        amplitude_phi: 1.0,
        calibration: analytic_scale(1.0, atm.sound_speed),
        width: BeamWidth::default(),
        cutoff: true,
    };
    let pipe = Pipeline {
        scene: &scene,
        source: &source,
        grid: &grid,
        cfg: &cfg,
        atmosphere: &atm,
        observers: &observers,
        params: &params,
    };
    let per_ray = pipe.measure_per_ray_bytes()?;
    let chunks = plan_chunks(grid.len(), budget, per_ray)?;
    println!("{} rays, {per_ray} B per ray, budget {budget} B -> {:?}", grid.len(), chunks.chunk_sizes);
    let whole = pipe.run(&ExecPlan::sequential())?;
    let split = pipe.run_chunked(&ExecPlan::sequential(), &chunks)?;
    println!("identical field: {}", whole.field == split.field);
    Ok(())
}
