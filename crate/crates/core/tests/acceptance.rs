//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). The process fails when any
//! criterion fails on a machine able to evaluate it; a criterion that needs
//! more cores than are available is reported as FAIL with the reason but
//! does not fail the process.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use gbt::beamtrace::{Atmosphere, LaunchGrid, SourceSpec, TraceConfig};
use gbt::gbs::{calibrate_phi, probe_directions, sum_at_observer, BeamWidth, GbsParams};
use gbt::harness::{cmd_validate, run_case, CaseConfig, ObserverSpec, ValidateOptions};
use gbt::parallel::{
    build_pool, per_ray_bytes, plan_chunks, run_dynamic, run_flat, trace_all, ChunkPlan, ExecPlan, Mode,
    Pipeline, SkewedWork,
};
use gbt::scene::generate::{city, random_soup, CityLayout};
use gbt::scene::{load_scene, MaterialTable, Scene, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VALIDATION_MEDIAN_DB: f64 = 1.0;
const VALIDATION_MAX_DB: f64 = 3.0;
const VALIDATION_50_SECONDS: f64 = 60.0;
const VALIDATION_500_SECONDS: f64 = 300.0;
const FREE_FIELD_DB: f64 = 0.5;
const DOUBLING_DB: f64 = -6.02;
const DOUBLING_TOL_DB: f64 = 0.1;
const CHUNK_CAP: usize = 11364;
const GBS_SHARE_MIN: f64 = 0.90;
const SPEEDUP_MIN: f64 = 2.0;
const SCALING_WORKERS: usize = 4;
const REPETITIONS: usize = 5;
const SKEW_MIN: f64 = 10.0;
const BVH_RAYS: usize = 10_000;
const BVH_TRIANGLES: usize = 1000;
const BVH_T_REL: f64 = 1e-9;

struct Verdict {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
    /// Set when the machine cannot evaluate the criterion.
    unsupported: Option<String>,
}

impl Verdict {
    fn new(id: u32, name: &'static str, passed: bool, detail: String) -> Self {
        Verdict {
            id,
            name,
            passed,
            detail,
            unsupported: None,
        }
    }

    fn print(&self) {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        let note = self.unsupported.as_deref().map(|n| format!(" [{n}]")).unwrap_or_default();
        println!("criterion {:>2} {tag}: {}: {}{note}", self.id, self.name, self.detail);
    }
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn validation_config(freq: f64, rays: usize) -> CaseConfig {
    let cfg = CaseConfig::load(data("validation.cfg")).expect("bundled validation config");
    CaseConfig {
        n_theta: rays,
        n_phi: rays,
        ..cfg.with_frequency(freq)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Criteria 1, 2 and 10 share the validate workflow; criterion 8 reads the
/// regularity counts of the same runs.
fn verification(id: u32, freq: f64, rays: usize, limit_s: f64, violations: &mut usize) -> Verdict {
    let cfg = validation_config(freq, rays);
    let start = Instant::now();
    let report = cmd_validate(&cfg, &ValidateOptions::default()).expect("validation run");
    let elapsed = start.elapsed().as_secs_f64();
    let c = &report.checks[0];
    *violations += c.regularity_violations;
    let passed = c.median_db <= VALIDATION_MEDIAN_DB && c.max_db <= VALIDATION_MAX_DB && elapsed <= limit_s;
    Verdict::new(
        id,
        if freq < 100.0 { "verification 50 Hz" } else { "verification 500 Hz" },
        passed,
        format!(
            "{rays}x{rays} rays, median {:.3} dB (<= {VALIDATION_MEDIAN_DB}), max {:.3} dB (<= {VALIDATION_MAX_DB}), {} points, {} excluded near nulls, {elapsed:.1} s (<= {limit_s})",
            c.median_db, c.max_db, c.compared, c.excluded
        ),
    )
}

fn free_field_calibration() -> Verdict {
    let atm = Atmosphere::new(20.0, 70.0, 1.0).unwrap();
    let source = SourceSpec {
        position: Vec3::new(0.0, 0.0, 5.0),
        frequencies: vec![500.0],
        amplitude_phi: 1.0,
        beam_param_im: -45874.0,
    };
    let grid = LaunchGrid::full_sphere(256, 256);
    let cfg = TraceConfig { n_steps: 8000, dt: 1e-4, r_max: 10 };
    let paths = trace_all(&Scene::empty(), &source, &grid, &cfg, &atm, &ExecPlan::sequential()).unwrap();
    let omega = 2.0 * PI * 500.0;
    let width = BeamWidth::default();
    let scale = calibrate_phi(&paths, &source.position, omega, 1.0, width).expect("calibration");
    let params = GbsParams {
        omegas: vec![omega],
        amplitude_phi: 1.0,
        calibration: scale,
        width,
        cutoff: true,
    };
    let radii = [5.0, 10.0, 20.0, 50.0, 100.0];
    let mut worst = 0.0f64;
    let mut worst_doubling = 0.0f64;
    for dir in probe_directions() {
        let levels: Vec<f64> = radii
            .iter()
            .map(|&r| {
                let p = sum_at_observer(&(source.position + dir * r), &paths, &params).unwrap()[0];
                20.0 * (p.norm() * 4.0 * PI * r).log10()
            })
            .collect();
        worst = levels.iter().fold(worst, |w, l| w.max(l.abs()));
        for (a, b) in [(0, 1), (1, 2), (3, 4)] {
            let doubling = levels[b] - levels[a] - 20.0 * (radii[b] / radii[a]).log10();
            worst_doubling = worst_doubling.max((doubling - DOUBLING_DB).abs());
        }
    }
    Verdict::new(
        3,
        "free-field calibration",
        worst <= FREE_FIELD_DB && worst_doubling <= DOUBLING_TOL_DB,
        format!(
            "500 Hz, 26 directions x r in {radii:?}: max |error| {worst:.3} dB (<= {FREE_FIELD_DB}), doubling within {worst_doubling:.3} dB of {DOUBLING_DB} (<= {DOUBLING_TOL_DB})"
        ),
    )
}

struct CityCase {
    scene: Scene,
    source: SourceSpec,
    cfg: TraceConfig,
    atm: Atmosphere,
}

fn city_case() -> CityCase {
    CityCase {
        scene: city(&CityLayout::default()).into_scene().unwrap(),
        source: SourceSpec {
            position: Vec3::new(0.0, 0.0, 2.0),
            frequencies: vec![250.0],
            amplitude_phi: 1.0,
            beam_param_im: -45874.0,
        },
        cfg: TraceConfig { n_steps: 5000, dt: 1e-4, r_max: 20 },
        atm: Atmosphere::new(20.0, 70.0, 1.0).unwrap(),
    }
}

fn observer_grid(nu: usize, nv: usize, half: f64) -> Vec<Vec3> {
    ObserverSpec::Grid {
        origin: Vec3::new(-half, -half, 1.5),
        u: Vec3::new(2.0 * half / (nu - 1) as f64, 0.0, 0.0),
        v: Vec3::new(0.0, 2.0 * half / (nv - 1) as f64, 0.0),
        nu,
        nv,
    }
    .points()
}

fn schedule_equivalence() -> Verdict {
    let case = city_case();
    let grid = LaunchGrid::full_sphere(32, 32);
    let observers = observer_grid(40, 25, 90.0);
    let params = GbsParams {
        omegas: case.source.omegas(),
        amplitude_phi: 1.0,
        calibration: gbt::gbs::analytic_scale(1.0, case.atm.sound_speed),
        width: BeamWidth::default(),
        cutoff: true,
    };
    let pipe = Pipeline {
        scene: &case.scene,
        source: &case.source,
        grid: &grid,
        cfg: &case.cfg,
        atmosphere: &case.atm,
        observers: &observers,
        params: &params,
    };
    let n = grid.len();
    let reference = pipe.run_chunked(&ExecPlan::sequential(), &ChunkPlan::single(n)).unwrap();
    let bits = reference.field.pressure_bits();
    let mut runs = 0;
    let mut mismatches = Vec::new();
    for mode in Mode::ALL {
        for workers in [1, 2, 4, 8] {
            for chunks in [ChunkPlan::single(n), ChunkPlan::even(n, 2), ChunkPlan::even(n, 7)] {
                let mut plan = ExecPlan::new(mode, workers);
                // small enough that dynamic tasks really split
                plan.split_threshold = 100;
                let out = pipe.run_chunked(&plan, &chunks).unwrap();
                runs += 1;
                if out.field.pressure_bits() != bits || out.work != reference.work {
                    mismatches.push(format!("{mode}/w{workers}/c{}", chunks.n_chunks()));
                }
            }
        }
    }
    Verdict::new(
        4,
        "schedule equivalence",
        mismatches.is_empty(),
        format!(
            "{runs} runs ({} rays, {} observers, {} evaluations), {} bit mismatches {mismatches:?}",
            n,
            observers.len(),
            reference.work.evaluations,
            mismatches.len()
        ),
    )
}

fn chunk_planner() -> Verdict {
    let case = city_case();
    let launch = LaunchGrid::full_sphere(128, 128).launch(5000);
    let path = gbt::beamtrace::trace(&case.scene, &case.source, &launch, &case.cfg, &case.atm).unwrap();
    let per_ray = per_ray_bytes(&path);
    let budget = CHUNK_CAP * per_ray + per_ray - 1;
    let plan = plan_chunks(16384, budget, per_ray).unwrap();
    Verdict::new(
        5,
        "chunk planner",
        plan.chunk_sizes == vec![11364, 5020],
        format!("per-ray {per_ray} B, budget {budget} B -> {:?}", plan.chunk_sizes),
    )
}

fn phase_dominance() -> Verdict {
    let cfg = CaseConfig::load(data("city.cfg")).unwrap();
    let cfg = CaseConfig {
        mode: Mode::Sequential,
        workers: 1,
        chunk_budget_bytes: None,
        ..cfg
    };
    let scene = load_scene(data("city.scene"), &cfg.category_filter(), &MaterialTable::default()).unwrap();
    let report = run_case(&cfg, &scene).unwrap();
    let t = report.timings;
    Verdict::new(
        6,
        "phase dominance",
        t.gbs_share >= GBS_SHARE_MIN && cfg.launch_grid().len() >= 4096 && report.field.n_obs >= 10_000,
        format!(
            "{} rays, {} observers: rt {:.3} s, gbs {:.3} s, gbs share {:.4} (>= {GBS_SHARE_MIN})",
            cfg.launch_grid().len(),
            report.field.n_obs,
            t.rt_seconds,
            t.gbs_seconds,
            t.gbs_share
        ),
    )
}

fn parallel_scaling() -> Verdict {
    let case = city_case();
    let grid = LaunchGrid::full_sphere(64, 64);
    let observers = observer_grid(50, 50, 90.0);
    let params = GbsParams {
        omegas: case.source.omegas(),
        amplitude_phi: 1.0,
        calibration: gbt::gbs::analytic_scale(1.0, case.atm.sound_speed),
        width: BeamWidth::default(),
        cutoff: true,
    };
    let pipe = Pipeline {
        scene: &case.scene,
        source: &case.source,
        grid: &grid,
        cfg: &case.cfg,
        atmosphere: &case.atm,
        observers: &observers,
        params: &params,
    };
    let time = |plan: &ExecPlan| {
        median(
            (0..REPETITIONS)
                .map(|_| pipe.run(plan).unwrap().timings.total_seconds)
                .collect(),
        )
    };
    let seq = time(&ExecPlan::sequential());
    let flat = time(&ExecPlan::new(Mode::Flat, SCALING_WORKERS));
    let speedup = seq / flat;

    // a contiguous run of heavy tasks lands in one static block
    let mut costs = vec![20usize; 1000];
    for c in costs.iter_mut().take(10) {
        *c *= 100;
    }
    let work = SkewedWork {
        costs,
        unit_iterations: 2000,
    };
    let pool = build_pool(SCALING_WORKERS).unwrap();
    let wall = |f: &dyn Fn() -> Vec<u64>| {
        median(
            (0..REPETITIONS)
                .map(|_| {
                    let t = Instant::now();
                    std::hint::black_box(f());
                    t.elapsed().as_secs_f64()
                })
                .collect(),
        )
    };
    let flat_skew = wall(&|| run_flat(&work, SCALING_WORKERS, &pool));
    let dyn_skew = wall(&|| run_dynamic(&work, 200, &pool));
    let passed = speedup >= SPEEDUP_MIN && work.skew() >= SKEW_MIN && dyn_skew <= flat_skew;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut v = Verdict::new(
        7,
        "parallel scaling",
        passed,
        format!(
            "4096 rays: flat x{SCALING_WORKERS} speedup {speedup:.2} (>= {SPEEDUP_MIN}); skewed workload (max/median {:.0} >= {SKEW_MIN}): dynamic {:.3} s vs flat {:.3} s, medians of {REPETITIONS}",
            work.skew(),
            dyn_skew,
            flat_skew
        ),
    );
    if cores < SCALING_WORKERS && !passed {
        v.unsupported = Some(format!("{cores} core(s) available, {SCALING_WORKERS} needed"));
    }
    v
}

fn bvh_oracle() -> Verdict {
    let tris = random_soup(BVH_TRIANGLES, 50.0, 11);
    let scene = Scene::from_triangles(tris, MaterialTable::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut agree = 0;
    let mut hits = 0;
    for _ in 0..BVH_RAYS {
        let origin = Vec3::new(
            rng.random_range(-60.0..60.0),
            rng.random_range(-60.0..60.0),
            rng.random_range(-60.0..60.0),
        );
        let target = Vec3::new(
            rng.random_range(-40.0..40.0),
            rng.random_range(-40.0..40.0),
            rng.random_range(-40.0..40.0),
        );
        let dir = (target - origin).normalize();
        let fast = scene.intersect(&origin, &dir, f64::INFINITY);
        let slow = scene.intersect_brute_force(&origin, &dir, f64::INFINITY);
        let same = match (fast, slow) {
            (None, None) => true,
            (Some(a), Some(b)) => {
                hits += 1;
                a.triangle_index == b.triangle_index && (a.t - b.t).abs() <= BVH_T_REL * b.t.abs()
            }
            _ => false,
        };
        agree += usize::from(same);
    }
    Verdict::new(
        9,
        "BVH oracle equivalence",
        agree == BVH_RAYS,
        format!("{agree}/{BVH_RAYS} rays agree ({hits} hits) on {BVH_TRIANGLES} triangles"),
    )
}

fn negative_control() -> Verdict {
    let cfg = validation_config(50.0, 128);
    let opts = ValidateOptions {
        speed_factor: 1.1,
        freq_hz: None,
    };
    let report = cmd_validate(&cfg, &opts).unwrap();
    let c = &report.checks[0];
    Verdict::new(
        10,
        "negative control",
        !report.passed(),
        format!(
            "sound speed x1.1: median {:.3} dB, max {:.3} dB -> verification {}",
            c.median_db,
            c.max_db,
            if report.passed() { "passes (control broken)" } else { "fails as required" }
        ),
    )
}

fn main() {
    let mut violations = 0;
    let mut verdicts = Vec::new();
    let mut run = |v: Verdict| {
        v.print();
        verdicts.push(v);
    };
    run(verification(1, 50.0, 128, VALIDATION_50_SECONDS, &mut violations));
    run(verification(2, 500.0, 256, VALIDATION_500_SECONDS, &mut violations));
    run(free_field_calibration());
    run(schedule_equivalence());
    run(chunk_planner());
    run(phase_dominance());
    run(parallel_scaling());
    run(Verdict::new(
        8,
        "beam regularity",
        violations == 0,
        format!("{violations} violations over all beams of criteria 1-2 at 1 m sampling"),
    ));
    run(bvh_oracle());
    run(negative_control());

    let failed: Vec<u32> = verdicts
        .iter()
        .filter(|v| !v.passed && v.unsupported.is_none())
        .map(|v| v.id)
        .collect();
    let passed = verdicts.iter().filter(|v| v.passed).count();
    println!("acceptance: {passed}/{} criteria pass", verdicts.len());
    if !failed.is_empty() {
        eprintln!("failing criteria: {failed:?}");
        std::process::exit(1);
    }
}
