use gbt::scene::generate::random_soup;
use gbt::scene::{MaterialTable, Scene, Vec3};
use proptest::prelude::*;

fn soup_scene(n: usize, seed: u64) -> Scene {
    Scene::from_triangles(random_soup(n, 30.0, seed), MaterialTable::default()).unwrap()
}

fn unit(x: f64, y: f64, z: f64) -> Option<Vec3> {
    let v = Vec3::new(x, y, z);
    (v.norm() > 1e-3).then(|| v.normalize())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn bvh_matches_brute_force(
        seed in 0u64..8,
        ox in -40.0..40.0f64, oy in -40.0..40.0f64, oz in -40.0..40.0f64,
        dx in -1.0..1.0f64, dy in -1.0..1.0f64, dz in -1.0..1.0f64,
        t_max in prop_oneof![Just(f64::INFINITY), 1.0..80.0f64],
    ) {
        let Some(dir) = unit(dx, dy, dz) else { return Ok(()) };
        let scene = soup_scene(200, seed);
        let origin = Vec3::new(ox, oy, oz);
        let fast = scene.intersect(&origin, &dir, t_max);
        let slow = scene.intersect_brute_force(&origin, &dir, t_max);
        match (fast, slow) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                prop_assert_eq!(a.triangle_index, b.triangle_index);
                prop_assert!((a.t - b.t).abs() <= 1e-9 * b.t);
                prop_assert!(a.t <= t_max);
                prop_assert!(a.normal.dot(&dir) <= 0.0);
            }
            (a, b) => prop_assert!(false, "bvh {:?} vs brute force {:?}", a.map(|h| h.t), b.map(|h| h.t)),
        }
    }

    #[test]
    fn bvh_leaves_cover_every_triangle_once(seed in 0u64..50, n in 1usize..300) {
        let scene = soup_scene(n, seed);
        let mut idx = scene.bvh().indices().to_vec();
        idx.sort_unstable();
        prop_assert_eq!(idx, (0..n).collect::<Vec<_>>());
        let root = scene.bvh().root_bounds().unwrap();
        for t in scene.triangles() {
            prop_assert!(root.contains(&t.bounds()));
        }
    }
}
