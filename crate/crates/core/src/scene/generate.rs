//! Procedural geometry: ground plates, box buildings, city-like blocks and
//! random triangle soups. All generators are deterministic for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Category, MaterialTable, Scene, SceneError, Triangle, Vec3};

/// Tagged triangle list, ready for [`Scene::from_tagged`] or
/// [`super::write_scene`].
#[derive(Debug, Clone, Default)]
pub struct Geometry {
    pub triangles: Vec<Triangle>,
    pub categories: Vec<Category>,
}

impl Geometry {
    pub fn new() -> Self {
        Geometry::default()
    }

    pub fn push(&mut self, tri: Triangle, category: Category) {
        self.triangles.push(tri);
        self.categories.push(category);
    }

    pub fn extend(&mut self, other: Geometry) {
        self.triangles.extend(other.triangles);
        self.categories.extend(other.categories);
    }

    pub fn into_scene(self) -> Result<Scene, SceneError> {
        Scene::from_tagged(self.triangles, self.categories, MaterialTable::default())
    }
}

/// Square rigid plate centred on the origin in the plane `z`.
pub fn ground_plate(half_size: f64, z: f64) -> Geometry {
    let a = Vec3::new(-half_size, -half_size, z);
    let b = Vec3::new(half_size, -half_size, z);
    let c = Vec3::new(half_size, half_size, z);
    let d = Vec3::new(-half_size, half_size, z);
    let mut g = Geometry::new();
    g.push(Triangle::new(a, b, c, 0), Category::Terrain);
    g.push(Triangle::new(a, c, d, 0), Category::Terrain);
    g
}

/// Axis-aligned box standing on `min.z`: four walls and a roof (no floor).
pub fn box_building(min: Vec3, max: Vec3, category: Category) -> Geometry {
    let p = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
    let (x0, y0, z0) = (min.x, min.y, min.z);
    let (x1, y1, z1) = (max.x, max.y, max.z);
    let quads = [
        [p(x0, y0, z0), p(x1, y0, z0), p(x1, y0, z1), p(x0, y0, z1)],
        [p(x1, y0, z0), p(x1, y1, z0), p(x1, y1, z1), p(x1, y0, z1)],
        [p(x1, y1, z0), p(x0, y1, z0), p(x0, y1, z1), p(x1, y1, z1)],
        [p(x0, y1, z0), p(x0, y0, z0), p(x0, y0, z1), p(x0, y1, z1)],
        [p(x0, y0, z1), p(x1, y0, z1), p(x1, y1, z1), p(x0, y1, z1)],
    ];
    let mut g = Geometry::new();
    for [a, b, c, d] in quads {
        g.push(Triangle::new(a, b, c, 0), category);
        g.push(Triangle::new(a, c, d, 0), category);
    }
    g
}

/// Layout of a block city: a ground plate with `blocks × blocks` buildings on
/// a regular street grid, leaving the central block empty as an open square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CityLayout {
    pub blocks: usize,
    pub pitch: f64,
    pub footprint: f64,
    pub min_height: f64,
    pub max_height: f64,
    pub ground_half_size: f64,
    pub seed: u64,
}

impl Default for CityLayout {
    fn default() -> Self {
        CityLayout {
            blocks: 5,
            pitch: 30.0,
            footprint: 18.0,
            min_height: 8.0,
            max_height: 30.0,
            ground_half_size: 400.0,
            seed: 7,
        }
    }
}

pub fn city(layout: &CityLayout) -> Geometry {
    let mut rng = ChaCha8Rng::seed_from_u64(layout.seed);
    let mut g = ground_plate(layout.ground_half_size, 0.0);
    let n = layout.blocks as i64;
    let half = (n - 1) as f64 / 2.0;
    let centre = if n % 2 == 1 { Some((n / 2, n / 2)) } else { None };
    for i in 0..n {
        for j in 0..n {
            let h = rng.random_range(layout.min_height..=layout.max_height);
            if Some((i, j)) == centre {
                continue;
            }
            let cx = (i as f64 - half) * layout.pitch;
            let cy = (j as f64 - half) * layout.pitch;
            let w = layout.footprint / 2.0;
            g.extend(box_building(
                Vec3::new(cx - w, cy - w, 0.0),
                Vec3::new(cx + w, cy + w, h),
                Category::Building,
            ));
        }
    }
    g
}

/// `n` random non-degenerate triangles inside the cube `[-extent, extent]³`.
pub fn random_soup(n: usize, extent: f64, seed: u64) -> Vec<Triangle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let c = Vec3::new(
            rng.random_range(-extent..extent),
            rng.random_range(-extent..extent),
            rng.random_range(-extent..extent),
        );
        let mut corner = || {
            c + Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            )
        };
        let tri = Triangle::new(corner(), corner(), corner(), 0);
        if tri.area() > 1e-3 {
            out.push(tri);
        }
    }
    out
}
