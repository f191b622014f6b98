//! Triangle meshes, point clouds and landmark sets.
//!
//! Meshes are stored in image space (see the crate-level coordinate notes).
//! The text format is a small subset of Wavefront OBJ:
//!
//! ```text
//! # comment
//! v x y z
//! vt u v
//! f i j k        (1-based vertex indices)
//! ```
//!
//! `vt` records are per vertex: when present there must be exactly one per
//! `v` record. Landmark tables live in a sidecar file holding 68 zero-based
//! vertex indices, one per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Vec2, Vec3};

/// Number of landmarks in the 68-point (iBUG) scheme.
pub const NUM_LANDMARKS: usize = 68;

/// One-based landmark numbers of the outer eye corners in the 68-point scheme.
pub const OUTER_EYE_CORNERS: (usize, usize) = (37, 46);

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    uv: Option<Vec<Vec2>>,
    landmark_indices: Option<Vec<usize>>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for tri in &triangles {
            for &i in tri {
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, limit: n });
                }
            }
        }
        Ok(Mesh {
            vertices,
            triangles,
            uv: None,
            landmark_indices: None,
        })
    }

    pub fn with_uv(mut self, uv: Vec<Vec2>) -> Result<Self> {
        if uv.len() != self.vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "{} uv entries for {} vertices",
                uv.len(),
                self.vertices.len()
            )));
        }
        if let Some(bad) = uv
            .iter()
            .position(|t| !(0.0..=1.0).contains(&t[0]) || !(0.0..=1.0).contains(&t[1]))
        {
            return Err(Error::InvalidMesh(format!(
                "uv of vertex {bad} outside the unit square: {:?}",
                uv[bad]
            )));
        }
        self.uv = Some(uv);
        Ok(self)
    }

    pub fn with_landmarks(mut self, indices: Vec<usize>) -> Result<Self> {
        if indices.len() != NUM_LANDMARKS {
            return Err(Error::InvalidMesh(format!(
                "expected {NUM_LANDMARKS} landmark indices, got {}",
                indices.len()
            )));
        }
        let n = self.vertices.len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, limit: n });
        }
        self.landmark_indices = Some(indices);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn uv(&self) -> Option<&[Vec2]> {
        self.uv.as_deref()
    }

    pub fn landmark_indices(&self) -> Option<&[usize]> {
        self.landmark_indices.as_deref()
    }

    /// Replaces vertex positions while keeping topology, uv and landmarks.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} vertices, mesh has {}",
                vertices.len(),
                self.vertices.len()
            )));
        }
        Ok(Mesh {
            vertices,
            ..self.clone()
        })
    }

    /// Landmark vertex positions, if the mesh carries a landmark table.
    pub fn landmarks(&self) -> Option<LandmarkSet> {
        self.landmark_indices.as_ref().map(|idx| LandmarkSet {
            points: idx.iter().map(|&i| self.vertices[i]).collect(),
        })
    }

    pub fn translated(&self, t: Vec3) -> Self {
        Mesh {
            vertices: self.vertices.iter().map(|v| crate::geom::add(*v, t)).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid("point cloud contains non-finite coordinates"));
        }
        Ok(PointCloud { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }
}

/// Exactly 68 landmark positions in iBUG order.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Vec3>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::InvalidArgument(format!(
                "landmark set needs {NUM_LANDMARKS} points, got {}",
                points.len()
            )));
        }
        Ok(LandmarkSet { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Landmark by its one-based iBUG number.
    pub fn number(&self, n: usize) -> Vec3 {
        self.points[n - 1]
    }

    /// Axis-aligned `x, y` bounds of the set.
    pub fn bbox(&self) -> BBox {
        BBox::around(self.points.iter().map(|p| [p[0], p[1]]))
            .expect("landmark set is never empty")
    }
}

/// Axis-aligned 2D box.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub min: Vec2,
    pub max: Vec2,
}

impl BBox {
    pub fn around(points: impl IntoIterator<Item = Vec2>) -> Option<BBox> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = BBox {
            min: first,
            max: first,
        };
        for p in it {
            b.min[0] = b.min[0].min(p[0]);
            b.min[1] = b.min[1].min(p[1]);
            b.max[0] = b.max[0].max(p[0]);
            b.max[1] = b.max[1].max(p[1]);
        }
        Some(b)
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }
}

/// Bounds of the vertex `x, y` coordinates.
pub fn mesh_bbox(mesh: &Mesh) -> Result<BBox> {
    BBox::around(mesh.vertices().iter().map(|v| [v[0], v[1]])).ok_or(Error::Empty("mesh has no vertices"))
}

/// Length of the 3D bounding-box diagonal.
pub fn bbox_diagonal(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    crate::geom::dist(lo, hi)
}

pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut uv = Vec::new();
    let mut faces: Vec<([usize; 3], usize)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap_or_default();
        let fields: Vec<&str> = parts.collect();
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let floats = |n: usize| -> Result<Vec<f64>> {
            if fields.len() != n {
                return Err(parse_err(format!(
                    "`{tag}` expects {n} values, found {}",
                    fields.len()
                )));
            }
            fields
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| parse_err(format!("bad number `{f}`")))
                })
                .collect()
        };
        match tag {
            "v" => {
                let c = floats(3)?;
                vertices.push([c[0], c[1], c[2]]);
            }
            "vt" => {
                let c = floats(2)?;
                uv.push([c[0], c[1]]);
            }
            "f" => {
                if fields.len() != 3 {
                    return Err(parse_err(format!(
                        "only triangles are supported, face has {} corners",
                        fields.len()
                    )));
                }
                let mut tri = [0usize; 3];
                for (k, f) in fields.iter().enumerate() {
                    // Accept `i/t/n` forms; only the vertex index matters.
                    let head = f.split('/').next().unwrap_or("");
                    let idx: usize = head
                        .parse()
                        .map_err(|_| parse_err(format!("bad face index `{f}`")))?;
                    if idx == 0 {
                        return Err(parse_err("face indices are 1-based".into()));
                    }
                    tri[k] = idx - 1;
                }
                faces.push((tri, line_no));
            }
            other => return Err(parse_err(format!("unknown record `{other}`"))),
        }
    }

    let n = vertices.len();
    for (tri, line) in &faces {
        if let Some(&bad) = tri.iter().find(|&&i| i >= n) {
            return Err(Error::Parse {
                line: *line,
                message: format!("vertex index {} out of range ({} vertices)", bad + 1, n),
            });
        }
    }
    let mesh = Mesh::new(vertices, faces.into_iter().map(|(t, _)| t).collect())?;
    if uv.is_empty() {
        Ok(mesh)
    } else {
        mesh.with_uv(uv)
    }
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&text)
}

pub fn format_mesh(mesh: &Mesh) -> String {
    let mut out = String::new();
    // `{}` on f64 prints the shortest representation that round-trips exactly.
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
    }
    if let Some(uv) = mesh.uv() {
        for t in uv {
            let _ = writeln!(out, "vt {} {}", t[0], t[1]);
        }
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_mesh(mesh)).map_err(|e| Error::io(path, e))
}

pub fn load_landmark_indices(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(NUM_LANDMARKS);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(line.parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("bad landmark index `{line}`"),
        })?);
    }
    if out.len() != NUM_LANDMARKS {
        return Err(Error::InvalidArgument(format!(
            "landmark file has {} entries, expected {NUM_LANDMARKS}",
            out.len()
        )));
    }
    Ok(out)
}

pub fn save_landmark_indices(indices: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for i in indices {
        let _ = writeln!(text, "{i}");
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_triangle() {
        let m = parse_mesh("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.vertices().len(), 3);
        assert_eq!(m.triangles(), &[[0, 1, 2]]);
        assert!(m.uv().is_none());
    }

    #[test]
    fn index_out_of_range() {
        let err = parse_mesh("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 5\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 4);
                assert!(message.contains("out of range"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quad_face_rejected() {
        let err = parse_mesh("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, .. }));
    }

    #[test]
    fn bad_number_reports_line() {
        let err = parse_mesh("# header\nv 0 0 0\nv 1 x 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn uv_count_must_match() {
        assert!(parse_mesh("v 0 0 0\nv 1 0 0\nvt 0 0\n").is_err());
        assert!(parse_mesh("v 0 0 0\nvt 1.5 0\n").is_err());
    }

    #[test]
    fn empty_triangle_list_writes_vertices_only() {
        let m = Mesh::new(vec![[1.0, 2.0, 3.0]], vec![]).unwrap();
        let text = format_mesh(&m);
        assert_eq!(text, "v 1 2 3\n");
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let m = Mesh::new(vec![[1.0, 2.0, 3.0]], vec![]).unwrap();
        let err = save_mesh(&m, "/nonexistent-dir/x/y.obj").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn bbox_examples() {
        let m = Mesh::new(vec![[0.0, 0.0, 0.0], [2.0, 4.0, 1.0]], vec![]).unwrap();
        let b = mesh_bbox(&m).unwrap();
        assert_eq!((b.min, b.max), ([0.0, 0.0], [2.0, 4.0]));

        let m = Mesh::new(vec![[1.0, 1.0, 1.0]], vec![]).unwrap();
        let b = mesh_bbox(&m).unwrap();
        assert_eq!((b.min, b.max), ([1.0, 1.0], [1.0, 1.0]));

        let m = Mesh::new(vec![], vec![]).unwrap();
        assert!(matches!(mesh_bbox(&m), Err(Error::Empty(_))));
    }

    #[test]
    fn landmark_table_validated() {
        let m = Mesh::new(vec![[0.0; 3]; 10], vec![]).unwrap();
        assert!(m.clone().with_landmarks(vec![0; 67]).is_err());
        assert!(m.clone().with_landmarks(vec![10; 68]).is_err());
        assert!(m.with_landmarks(vec![9; 68]).is_ok());
    }
}
