use super::{Triangle, Vec3};

/// Maximum number of triangles stored in a leaf.
pub const MAX_LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        Aabb {
            min: self.min - Vec3::repeat(margin),
            max: self.max + Vec3::repeat(margin),
        }
    }

    pub fn contains_point(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|a| other.min[a] >= self.min[a] && other.max[a] <= self.max[a])
    }

    pub fn longest_axis(&self) -> usize {
        let e = self.max - self.min;
        if e.x >= e.y && e.x >= e.z {
            0
        } else if e.y >= e.z {
            1
        } else {
            2
        }
    }

    /// Slab test. Returns the parametric interval `[t_enter, t_exit]` of the
    /// ray inside the box, clipped to `[0, t_max]`.
    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<(f64, f64)> {
        let mut t0 = 0.0_f64;
        let mut t1 = t_max;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let mut near = (self.min[a] - origin[a]) * inv;
            let mut far = (self.max[a] - origin[a]) * inv;
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BvhNode {
    Leaf {
        bounds: Aabb,
        /// Range into [`Bvh::indices`].
        start: usize,
        count: usize,
    },
    Inner {
        bounds: Aabb,
        left: usize,
        right: usize,
    },
}

impl BvhNode {
    pub fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { bounds, .. } | BvhNode::Inner { bounds, .. } => bounds,
        }
    }
}

/// Median-split bounding volume hierarchy over triangle indices. Node 0 is the
/// root when the hierarchy is non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    indices: Vec<usize>,
}

impl Bvh {
    pub fn build(triangles: &[Triangle]) -> Bvh {
        let mut bvh = Bvh {
            nodes: Vec::new(),
            indices: (0..triangles.len()).collect(),
        };
        if triangles.is_empty() {
            return bvh;
        }
        let centroids: Vec<Vec3> = triangles.iter().map(Triangle::centroid).collect();
        let bounds: Vec<Aabb> = triangles.iter().map(Triangle::bounds).collect();
        let n = triangles.len();
        bvh.build_range(&centroids, &bounds, 0, n);
        bvh
    }

    fn build_range(&mut self, centroids: &[Vec3], bounds: &[Aabb], start: usize, end: usize) -> usize {
        let node_bounds = self.indices[start..end]
            .iter()
            .fold(Aabb::empty(), |acc, &i| acc.union(&bounds[i]));
        let node = self.nodes.len();
        let count = end - start;
        if count <= MAX_LEAF_SIZE {
            self.nodes.push(BvhNode::Leaf {
                bounds: node_bounds,
                start,
                count,
            });
            return node;
        }
        let mut cbox = Aabb::empty();
        for &i in &self.indices[start..end] {
            cbox.grow(&centroids[i]);
        }
        let axis = cbox.longest_axis();
        // total order: centroid coordinate, then index, so builds are reproducible
        self.indices[start..end].sort_by(|&a, &b| {
            centroids[a][axis]
                .total_cmp(&centroids[b][axis])
                .then(a.cmp(&b))
        });
        let mid = start + count / 2;
        // placeholder, patched once the children exist
        self.nodes.push(BvhNode::Leaf {
            bounds: node_bounds,
            start,
            count,
        });
        let left = self.build_range(centroids, bounds, start, mid);
        let right = self.build_range(centroids, bounds, mid, end);
        self.nodes[node] = BvhNode::Inner {
            bounds: node_bounds,
            left,
            right,
        };
        node
    }

    pub fn nodes(&self) -> &[BvhNode] {
        &self.nodes
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root_bounds(&self) -> Option<Aabb> {
        self.nodes.first().map(|n| *n.bounds())
    }

    /// Triangle indices stored under `node`, in leaf order.
    pub fn leaf_indices(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            match &self.nodes[n] {
                BvhNode::Leaf { start, count, .. } => {
                    out.extend_from_slice(&self.indices[*start..*start + *count])
                }
                BvhNode::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        out
    }

    /// Nearest triangle hit with `t` in `(t_min, t_max]`; ties go to the lower
    /// triangle index.
    pub fn nearest(
        &self,
        triangles: &[Triangle],
        origin: &Vec3,
        dir: &Vec3,
        t_min: f64,
        t_max: f64,
    ) -> Option<(f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(f64, usize)> = None;
        let mut limit = t_max;
        let mut stack: Vec<usize> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let Some((enter, _)) = node.bounds().ray_interval(origin, dir, limit) else {
                continue;
            };
            if enter > limit {
                continue;
            }
            match node {
                BvhNode::Leaf { start, count, .. } => {
                    for &i in &self.indices[*start..*start + *count] {
                        if let Some(t) = triangles[i].intersect(origin, dir, t_min, limit) {
                            let better = match best {
                                None => true,
                                Some((bt, bi)) => t < bt || (t == bt && i < bi),
                            };
                            if better {
                                best = Some((t, i));
                                limit = t;
                            }
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    let enter = |c: usize| {
                        self.nodes[c]
                            .bounds()
                            .ray_interval(origin, dir, limit)
                            .map(|(t0, _)| t0)
                    };
                    // farther child goes on the stack first
                    match (enter(*left), enter(*right)) {
                        (Some(l), Some(r)) if r < l => {
                            stack.push(*left);
                            stack.push(*right);
                        }
                        (Some(_), Some(_)) => {
                            stack.push(*right);
                            stack.push(*left);
                        }
                        (Some(_), None) => stack.push(*left),
                        (None, Some(_)) => stack.push(*right),
                        (None, None) => {}
                    }
                }
            }
        }
        best
    }
}
