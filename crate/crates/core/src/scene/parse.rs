//! Plain-text triangle-soup scene format.
//!
//! ```text
//! # comment
//! category building
//! v 0 0 0
//! v 1 0 0
//! v 0 1 0
//! f 0 1 2 0
//! ```
//!
//! Vertex indices are 0-based and global across the file. Faces in an
//! excluded category, or on an excluded material, are dropped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{
    Category, CategoryFilter, MaterialKind, MaterialTable, Scene, SceneError, Triangle, Vec3,
};

pub fn load_scene(
    path: impl AsRef<Path>,
    filter: &CategoryFilter,
    materials: &MaterialTable,
) -> Result<Scene, SceneError> {
    let text = fs::read_to_string(path)?;
    parse_scene(&text, filter, materials)
}

fn parse_err(line: usize, message: impl Into<String>) -> SceneError {
    SceneError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: Option<&str>, line: usize, what: &str) -> Result<f64, SceneError> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("invalid {what} '{tok}'")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite {what}")));
    }
    Ok(v)
}

fn parse_usize(tok: Option<&str>, line: usize, what: &str) -> Result<usize, SceneError> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} '{tok}'")))
}

pub fn parse_scene(
    text: &str,
    filter: &CategoryFilter,
    materials: &MaterialTable,
) -> Result<Scene, SceneError> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut category: Option<Category> = None;
    let mut triangles = Vec::new();
    let mut categories = Vec::new();
    let mut face_index = 0usize;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let mut toks = content.split_whitespace();
        let tag = toks.next().unwrap_or_default();
        match tag {
            "category" => {
                let name = toks
                    .next()
                    .ok_or_else(|| parse_err(line, "missing category name"))?;
                category = Some(
                    Category::from_name(name)
                        .ok_or_else(|| parse_err(line, format!("unknown category '{name}'")))?,
                );
            }
            "v" => {
                let x = parse_f64(toks.next(), line, "x")?;
                let y = parse_f64(toks.next(), line, "y")?;
                let z = parse_f64(toks.next(), line, "z")?;
                vertices.push(Vec3::new(x, y, z));
            }
            "f" => {
                let cat = category
                    .ok_or_else(|| parse_err(line, "face outside of a category block"))?;
                let mut idx = [0usize; 3];
                for (k, slot) in idx.iter_mut().enumerate() {
                    let v = parse_usize(toks.next(), line, "vertex index")?;
                    if v >= vertices.len() {
                        return Err(parse_err(
                            line,
                            format!("vertex index {v} out of range (face vertex {k})"),
                        ));
                    }
                    *slot = v;
                }
                let material_id: u32 = {
                    let tok = toks
                        .next()
                        .ok_or_else(|| parse_err(line, "missing material id"))?;
                    tok.parse()
                        .map_err(|_| parse_err(line, format!("invalid material id '{tok}'")))?
                };
                if toks.next().is_some() {
                    return Err(parse_err(line, "trailing tokens"));
                }
                let index = face_index;
                face_index += 1;
                let material = materials.get(material_id).ok_or(SceneError::UnknownMaterial {
                    index,
                    material_id,
                })?;
                let tri = Triangle::new(vertices[idx[0]], vertices[idx[1]], vertices[idx[2]], material_id);
                if tri.normal().is_none() {
                    return Err(SceneError::DegenerateTriangle { index });
                }
                if !filter.includes(cat) || material.kind == MaterialKind::Excluded {
                    continue;
                }
                triangles.push(tri);
                categories.push(cat);
                continue;
            }
            other => return Err(parse_err(line, format!("unknown record '{other}'"))),
        }
        if toks.next().is_some() {
            return Err(parse_err(line, "trailing tokens"));
        }
    }
    Scene::from_tagged(triangles, categories, materials.clone())
}

/// Serialises tagged triangles in the scene format. Vertices are written per
/// face (no sharing), which keeps the output deterministic.
pub fn write_scene(triangles: &[Triangle], categories: &[Category]) -> String {
    let mut out = String::new();
    let mut current: Option<Category> = None;
    let mut next_vertex = 0usize;
    for (tri, &cat) in triangles.iter().zip(categories) {
        if current != Some(cat) {
            let _ = writeln!(out, "category {cat}");
            current = Some(cat);
        }
        for v in [tri.v0, tri.v1, tri.v2] {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        let _ = writeln!(
            out,
            "f {} {} {} {}",
            next_vertex,
            next_vertex + 1,
            next_vertex + 2,
            tri.material_id
        );
        next_vertex += 3;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = "\
# two facets
category building
v 0 0 0
v 1 0 0
v 0 1 0
v 1 1 0
f 0 1 2 0
f 1 3 2 0
";

    #[test]
    fn parses_two_triangles() {
        let s = parse_scene(TWO, &CategoryFilter::ALL, &MaterialTable::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.bounds().is_some());
    }

    #[test]
    fn excluded_category_is_dropped() {
        let text = format!("{TWO}category water\nv 5 5 0\nv 6 5 0\nv 5 6 0\nf 4 5 6 0\n");
        let all = parse_scene(&text, &CategoryFilter::ALL, &MaterialTable::default()).unwrap();
        assert_eq!(all.len(), 3);
        let filter = CategoryFilter::from_counts(1000, 4000, 5000, -10, -10);
        let dry = parse_scene(&text, &filter, &MaterialTable::default()).unwrap();
        assert_eq!(dry.len(), 2);
        assert!(dry.categories().iter().all(|&c| c != Category::Water));
    }

    #[test]
    fn empty_scene_with_header_only() {
        let s = parse_scene(
            "# nothing\ncategory terrain\n",
            &CategoryFilter::ALL,
            &MaterialTable::default(),
        )
        .unwrap();
        assert!(s.is_empty());
        assert!(s.bvh().is_empty());
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let err = parse_scene(
            "category building\nv 0 0\n",
            &CategoryFilter::ALL,
            &MaterialTable::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SceneError::Parse { line: 2, .. }), "{err}");

        let err = parse_scene("bogus 1 2 3\n", &CategoryFilter::ALL, &MaterialTable::default())
            .unwrap_err();
        assert!(matches!(err, SceneError::Parse { line: 1, .. }));

        let err = parse_scene(
            "category building\nv 0 0 0\nf 0 1 2 0\n",
            &CategoryFilter::ALL,
            &MaterialTable::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SceneError::Parse { line: 3, .. }));

        let err = parse_scene(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2 0\n",
            &CategoryFilter::ALL,
            &MaterialTable::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SceneError::Parse { line: 4, .. }));
    }

    #[test]
    fn degenerate_and_unknown_material_errors() {
        let err = parse_scene(
            "category road\nv 0 0 0\nv 1 0 0\nv 2 0 0\nf 0 1 2 0\n",
            &CategoryFilter::ALL,
            &MaterialTable::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SceneError::DegenerateTriangle { index: 0 }));

        let err = parse_scene(
            "category road\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2 3\n",
            &CategoryFilter::ALL,
            &MaterialTable::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SceneError::UnknownMaterial { index: 0, material_id: 3 }));
    }

    #[test]
    fn write_then_parse_preserves_triangles() {
        let s = parse_scene(TWO, &CategoryFilter::ALL, &MaterialTable::default()).unwrap();
        let text = write_scene(s.triangles(), s.categories());
        let back = parse_scene(&text, &CategoryFilter::ALL, &MaterialTable::default()).unwrap();
        assert_eq!(back.triangles(), s.triangles());
    }
}
