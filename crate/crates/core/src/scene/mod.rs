//! Scene geometry: a triangle soup tagged with materials and categories,
//! indexed by a bounding-volume hierarchy for nearest-hit ray queries.
//!
//! Scenes are immutable after construction and may be shared freely between
//! worker threads.

mod bvh;
pub mod generate;
mod parse;

pub use bvh::{Aabb, Bvh, BvhNode};
pub use parse::{load_scene, parse_scene, write_scene};

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::Vector3;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Self-intersection guard applied after every reflection (meters).
pub const HIT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("triangle {index} is degenerate (zero area)")]
    DegenerateTriangle { index: usize },
    #[error("triangle {index} references unknown material id {material_id}")]
    UnknownMaterial { index: usize, material_id: u32 },
    #[error("i/o error reading scene: {0}")]
    Io(#[from] std::io::Error),
}

/// Geometry categories recognised by the scene format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Building,
    Terrain,
    Road,
    Water,
    Tree,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Building,
        Category::Terrain,
        Category::Road,
        Category::Water,
        Category::Tree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Building => "building",
            Category::Terrain => "terrain",
            Category::Road => "road",
            Category::Water => "water",
            Category::Tree => "tree",
        }
    }

    pub fn from_name(name: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which categories are ingested. A negative count in a case configuration
/// excludes the category entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CategoryFilter {
    pub building: bool,
    pub terrain: bool,
    pub road: bool,
    pub water: bool,
    pub tree: bool,
}

impl CategoryFilter {
    pub const ALL: CategoryFilter = CategoryFilter {
        building: true,
        terrain: true,
        road: true,
        water: true,
        tree: true,
    };

    /// Builds a filter from signed category counts (negative means excluded).
    pub fn from_counts(n_b: i64, n_t: i64, n_r: i64, n_w: i64, n_tree: i64) -> Self {
        CategoryFilter {
            building: n_b >= 0,
            terrain: n_t >= 0,
            road: n_r >= 0,
            water: n_w >= 0,
            tree: n_tree >= 0,
        }
    }

    pub fn includes(&self, category: Category) -> bool {
        match category {
            Category::Building => self.building,
            Category::Terrain => self.terrain,
            Category::Road => self.road,
            Category::Water => self.water,
            Category::Tree => self.tree,
        }
    }
}

impl Default for CategoryFilter {
    fn default() -> Self {
        CategoryFilter::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaterialKind {
    Hard,
    Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub kind: MaterialKind,
    pub reflection_coefficient: f64,
}

impl Material {
    /// Perfectly rigid surface (flow impedance sentinel −10).
    pub const HARD: Material = Material {
        kind: MaterialKind::Hard,
        reflection_coefficient: 1.0,
    };

    pub const EXCLUDED: Material = Material {
        kind: MaterialKind::Excluded,
        reflection_coefficient: 0.0,
    };
}

/// Material id → material. The default table maps id 0 to a rigid surface.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialTable {
    entries: BTreeMap<u32, Material>,
}

impl MaterialTable {
    pub fn new() -> Self {
        MaterialTable {
            entries: BTreeMap::new(),
        }
    }

    pub fn with(mut self, id: u32, material: Material) -> Self {
        self.insert(id, material);
        self
    }

    pub fn insert(&mut self, id: u32, material: Material) {
        assert!(
            (-1.0..=1.0).contains(&material.reflection_coefficient),
            "reflection coefficient must lie in [-1, 1]"
        );
        self.entries.insert(id, material);
    }

    pub fn get(&self, id: u32) -> Option<&Material> {
        self.entries.get(&id)
    }
}

impl Default for MaterialTable {
    fn default() -> Self {
        MaterialTable::new().with(0, Material::HARD)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub v0: Vec3,
    pub v1: Vec3,
    pub v2: Vec3,
    pub material_id: u32,
}

impl Triangle {
    pub fn new(v0: Vec3, v1: Vec3, v2: Vec3, material_id: u32) -> Self {
        Triangle {
            v0,
            v1,
            v2,
            material_id,
        }
    }

    pub fn area(&self) -> f64 {
        0.5 * (self.v1 - self.v0).cross(&(self.v2 - self.v0)).norm()
    }

    /// Unit geometric normal following the vertex winding, `None` when degenerate.
    pub fn normal(&self) -> Option<Vec3> {
        let n = (self.v1 - self.v0).cross(&(self.v2 - self.v0));
        let len = n.norm();
        if len > 0.0 && len.is_finite() {
            Some(n / len)
        } else {
            None
        }
    }

    pub fn centroid(&self) -> Vec3 {
        (self.v0 + self.v1 + self.v2) / 3.0
    }

    pub fn bounds(&self) -> Aabb {
        let mut b = Aabb::empty();
        b.grow(&self.v0);
        b.grow(&self.v1);
        b.grow(&self.v2);
        b
    }

    /// Möller–Trumbore with inclusive edges. Returns the ray parameter of the
    /// hit when it lies in `(t_min, t_max]`.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<f64> {
        let e1 = self.v1 - self.v0;
        let e2 = self.v2 - self.v0;
        let p = dir.cross(&e2);
        let det = e1.dot(&p);
        // scale-aware parallel test
        if det.abs() <= 1e-14 * e1.norm() * e2.norm() {
            return None;
        }
        let inv = 1.0 / det;
        let s = origin - self.v0;
        let u = s.dot(&p) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(&e1);
        let v = dir.dot(&q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = e2.dot(&q) * inv;
        if t > t_min && t <= t_max {
            Some(t)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub triangle_index: usize,
    /// Unit normal oriented against the incident ray.
    pub normal: Vec3,
    pub point: Vec3,
}

#[derive(Debug, Clone)]
pub struct Scene {
    triangles: Vec<Triangle>,
    normals: Vec<Vec3>,
    categories: Vec<Category>,
    materials: MaterialTable,
    bvh: Bvh,
}

impl Scene {
    /// An empty scene (free field).
    pub fn empty() -> Self {
        Scene {
            triangles: Vec::new(),
            normals: Vec::new(),
            categories: Vec::new(),
            materials: MaterialTable::default(),
            bvh: Bvh::build(&[]),
        }
    }

    /// Builds a scene from triangles, all tagged with one category.
    pub fn from_triangles(
        triangles: Vec<Triangle>,
        materials: MaterialTable,
    ) -> Result<Self, SceneError> {
        let categories = vec![Category::Building; triangles.len()];
        Scene::from_tagged(triangles, categories, materials)
    }

    /// Builds a scene from triangles with per-triangle categories. Every
    /// triangle must be non-degenerate and reference a known, non-excluded
    /// material.
    pub fn from_tagged(
        triangles: Vec<Triangle>,
        categories: Vec<Category>,
        materials: MaterialTable,
    ) -> Result<Self, SceneError> {
        assert_eq!(triangles.len(), categories.len());
        let mut normals = Vec::with_capacity(triangles.len());
        for (index, tri) in triangles.iter().enumerate() {
            match materials.get(tri.material_id) {
                None | Some(Material { kind: MaterialKind::Excluded, .. }) => {
                    return Err(SceneError::UnknownMaterial {
                        index,
                        material_id: tri.material_id,
                    })
                }
                Some(_) => {}
            }
            normals.push(tri.normal().ok_or(SceneError::DegenerateTriangle { index })?);
        }
        let bvh = Bvh::build(&triangles);
        Ok(Scene {
            triangles,
            normals,
            categories,
            materials,
            bvh,
        })
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    pub fn materials(&self) -> &MaterialTable {
        &self.materials
    }

    /// World bounds, `None` for an empty scene.
    pub fn bounds(&self) -> Option<Aabb> {
        self.bvh.root_bounds()
    }

    pub fn reflection_coefficient(&self, triangle_index: usize) -> f64 {
        let id = self.triangles[triangle_index].material_id;
        self.materials
            .get(id)
            .map(|m| m.reflection_coefficient)
            .unwrap_or(1.0)
    }

    /// Nearest hit with `t` in `(HIT_EPSILON, t_max]`. Ties between coincident
    /// facets go to the lower triangle index.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<RayHit> {
        debug_assert!((dir.norm() - 1.0).abs() < 1e-9, "direction must be unit length");
        let (t, index) = self
            .bvh
            .nearest(&self.triangles, origin, dir, HIT_EPSILON, t_max)?;
        Some(self.make_hit(origin, dir, t, index))
    }

    /// Reference nearest-hit query over every triangle, bypassing the BVH.
    pub fn intersect_brute_force(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<RayHit> {
        let mut best: Option<(f64, usize)> = None;
        for (index, tri) in self.triangles.iter().enumerate() {
            if let Some(t) = tri.intersect(origin, dir, HIT_EPSILON, t_max) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, index));
                }
            }
        }
        best.map(|(t, index)| self.make_hit(origin, dir, t, index))
    }

    fn make_hit(&self, origin: &Vec3, dir: &Vec3, t: f64, index: usize) -> RayHit {
        let mut normal = self.normals[index];
        if normal.dot(dir) > 0.0 {
            normal = -normal;
        }
        RayHit {
            t,
            triangle_index: index,
            normal,
            point: origin + dir * t,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(z: f64, half: f64) -> Vec<Triangle> {
        let a = Vec3::new(-half, -half, z);
        let b = Vec3::new(half, -half, z);
        let c = Vec3::new(half, half, z);
        let d = Vec3::new(-half, half, z);
        vec![Triangle::new(a, b, c, 0), Triangle::new(a, c, d, 0)]
    }

    #[test]
    fn ray_hits_unit_square_ten_meters_away() {
        let scene = Scene::from_triangles(square(10.0, 0.5), MaterialTable::default()).unwrap();
        let hit = scene
            .intersect(&Vec3::zeros(), &Vec3::new(0.0, 0.0, 1.0), 100.0)
            .unwrap();
        assert_eq!(hit.t, 10.0);
        assert!(hit.normal.dot(&Vec3::new(0.0, 0.0, 1.0)) < 0.0);
    }

    #[test]
    fn parallel_ray_misses() {
        let scene = Scene::from_triangles(square(0.0, 5.0), MaterialTable::default()).unwrap();
        let hit = scene.intersect(
            &Vec3::new(-10.0, 0.0, 0.0),
            &Vec3::new(1.0, 0.0, 0.0),
            100.0,
        );
        assert!(hit.is_none());
        let above = scene.intersect(
            &Vec3::new(-10.0, 0.0, 1.0),
            &Vec3::new(1.0, 0.0, 0.0),
            100.0,
        );
        assert!(above.is_none());
    }

    #[test]
    fn stacked_facets_return_nearer() {
        let mut tris = square(5.0, 1.0);
        tris.extend(square(3.0, 1.0));
        let scene = Scene::from_triangles(tris, MaterialTable::default()).unwrap();
        let o = Vec3::new(0.1, 0.2, 0.0);
        let d = Vec3::new(0.0, 0.0, 1.0);
        let hit = scene.intersect(&o, &d, 100.0).unwrap();
        let brute = scene.intersect_brute_force(&o, &d, 100.0).unwrap();
        assert_eq!(hit.t, 3.0);
        assert_eq!(hit.triangle_index, brute.triangle_index);
        assert!(hit.triangle_index >= 2);
    }

    #[test]
    fn coincident_facets_break_ties_by_index() {
        let mut tris = square(2.0, 1.0);
        tris.extend(square(2.0, 1.0));
        let scene = Scene::from_triangles(tris, MaterialTable::default()).unwrap();
        let o = Vec3::new(0.3, -0.2, 0.0);
        let d = Vec3::new(0.0, 0.0, 1.0);
        let hit = scene.intersect(&o, &d, 10.0).unwrap();
        let brute = scene.intersect_brute_force(&o, &d, 10.0).unwrap();
        assert_eq!(hit.triangle_index, brute.triangle_index);
        assert!(hit.triangle_index < 2);
    }

    #[test]
    fn hit_respects_t_max_and_epsilon() {
        let scene = Scene::from_triangles(square(10.0, 1.0), MaterialTable::default()).unwrap();
        let d = Vec3::new(0.0, 0.0, 1.0);
        assert!(scene.intersect(&Vec3::zeros(), &d, 9.999).is_none());
        assert!(scene.intersect(&Vec3::zeros(), &d, 10.0).is_some());
        // origin on the facet itself: guarded
        assert!(scene.intersect(&Vec3::new(0.0, 0.0, 10.0), &d, 10.0).is_none());
    }

    #[test]
    fn degenerate_triangle_is_rejected() {
        let tri = Triangle::new(
            Vec3::zeros(),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            0,
        );
        let err = Scene::from_triangles(vec![tri], MaterialTable::default()).unwrap_err();
        assert!(matches!(err, SceneError::DegenerateTriangle { index: 0 }));
    }

    #[test]
    fn unknown_material_is_rejected() {
        let mut tris = square(0.0, 1.0);
        tris[1].material_id = 7;
        let err = Scene::from_triangles(tris, MaterialTable::default()).unwrap_err();
        assert!(matches!(
            err,
            SceneError::UnknownMaterial { index: 1, material_id: 7 }
        ));
    }

    #[test]
    fn filter_from_counts() {
        let f = CategoryFilter::from_counts(1000, 4000, 5000, -10, -10);
        assert!(f.includes(Category::Building));
        assert!(!f.includes(Category::Water));
        assert!(!f.includes(Category::Tree));
    }
}
