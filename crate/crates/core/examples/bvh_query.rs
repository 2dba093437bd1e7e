//! Nearest-hit queries on a random triangle soup, BVH against a linear scan.
//!
//! cargo run --release --example bvh_query -- 5000

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gbt::scene::generate::random_soup;
use gbt::scene::{MaterialTable, Scene, Vec3};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5000);
    let scene = Scene::from_triangles(random_soup(n, 50.0, 7), MaterialTable::default())?;
    println!("{} triangles, {} BVH nodes", scene.len(), scene.bvh().nodes().len());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rays: Vec<(Vec3, Vec3)> = (0..20_000)
        .map(|_| {
            let o = Vec3::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
            let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            (o, d.normalize())
        })
        .collect();
    let t = Instant::now();
    let fast: Vec<_> = rays.iter().map(|(o, d)| scene.intersect(o, d, f64::INFINITY)).collect();
    let t_fast = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let slow: Vec<_> = rays.iter().map(|(o, d)| scene.intersect_brute_force(o, d, f64::INFINITY)).collect();
    let t_slow = t.elapsed().as_secs_f64();
    let agree = fast
        .iter()
        .zip(&slow)
        .filter(|(a, b)| match (a, b) {
            (None, None) => true,
            (Some(a), Some(b)) => a.triangle_index == b.triangle_index && (a.t - b.t).abs() <= 1e-9 * b.t.max(1.0),
            _ => false,
        })
        .count();
    let hits = fast.iter().filter(|h| h.is_some()).count();
    println!("{agree}/{} rays agree, {hits} hits", rays.len());
    println!("bvh {t_fast:.3} s, linear {t_slow:.3} s ({:.0}x)", t_slow / t_fast);
    Ok(())
}
