//! Tutte embedding of a disk-topology mesh into the unit square.
//!
//! The boundary loop is laid out on the perimeter of `[0,1]^2` by arc length,
//! with the four loop vertices closest to quarter fractions of the perimeter
//! pinned to the corners. Every interior vertex then satisfies the weighted
//! Laplace equation `sum_j w_ij (uv_i - uv_j) = 0`.
//!
//! With the template orientation used in [`crate::datastore`], `u` follows the
//! image `x` direction, `v` follows image `y`, and the nose tip sits near
//! `(0.5, 0.5)`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geom::{self, Vec2, Vec3};
use crate::mesh::Mesh;
use crate::sparse::{self, CsrMatrix, SolveInfo, SolverSettings};

/// Edge weights of the Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LaplacianWeights {
    /// Cotangent weights, clamped below at [`MIN_COTAN_WEIGHT`].
    Conformal,
    Uniform,
    MeanValue,
}

impl std::str::FromStr for LaplacianWeights {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conformal" => Ok(Self::Conformal),
            "uniform" => Ok(Self::Uniform),
            "mean_value" | "mean-value" => Ok(Self::MeanValue),
            other => Err(Error::invalid(format!("unknown weight scheme `{other}`"))),
        }
    }
}

pub const MIN_COTAN_WEIGHT: f64 = 1e-6;
/// Triangles with a smaller 3D area are rejected under conformal weights.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;
/// Maximum accepted relative residual of the interior system.
pub const RESIDUAL_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLoop {
    vertices: Vec<usize>,
    /// Arc length from `vertices[0]` to each vertex along the loop.
    arc: Vec<f64>,
    total: f64,
}

impl BoundaryLoop {
    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn arc_lengths(&self) -> &[f64] {
        &self.arc
    }

    pub fn total_length(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Builds a loop from an ordered vertex list and its positions.
    pub fn from_positions(vertices: Vec<usize>, positions: &[Vec3]) -> Self {
        let mut arc = Vec::with_capacity(vertices.len());
        let mut acc = 0.0;
        for (k, &v) in vertices.iter().enumerate() {
            if k > 0 {
                acc += geom::dist(positions[vertices[k - 1]], positions[v]);
            }
            arc.push(acc);
        }
        if let (Some(&first), Some(&last)) = (vertices.first(), vertices.last()) {
            if vertices.len() > 1 {
                acc += geom::dist(positions[last], positions[first]);
            }
        }
        BoundaryLoop {
            vertices,
            arc,
            total: acc,
        }
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Extracts the single boundary loop, starting at the smallest boundary
/// vertex index and following the triangles' winding (interior on the left
/// for counter-clockwise triangles).
pub fn boundary_loop(mesh: &Mesh) -> Result<BoundaryLoop> {
    let mut counts: HashMap<(usize, usize), u32> = HashMap::new();
    for t in mesh.triangles() {
        for k in 0..3 {
            *counts.entry(edge_key(t[k], t[(k + 1) % 3])).or_default() += 1;
        }
    }
    let mut next: HashMap<usize, usize> = HashMap::new();
    for t in mesh.triangles() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            match counts[&edge_key(a, b)] {
                1 => {
                    if next.insert(a, b).is_some() {
                        return Err(Error::NonManifold(a, b));
                    }
                }
                2 => {}
                _ => return Err(Error::NonManifold(a.min(b), a.max(b))),
            }
        }
    }
    if next.is_empty() {
        return Err(Error::NoBoundary);
    }

    let mut starts: Vec<usize> = next.keys().copied().collect();
    starts.sort_unstable();
    let mut visited = std::collections::HashSet::new();
    let mut loops: Vec<Vec<usize>> = Vec::new();
    for &s in &starts {
        if visited.contains(&s) {
            continue;
        }
        let mut lp = vec![s];
        visited.insert(s);
        let mut cur = s;
        loop {
            let nxt = *next.get(&cur).ok_or(Error::NonManifold(cur, cur))?;
            if nxt == s {
                break;
            }
            if !visited.insert(nxt) {
                return Err(Error::NonManifold(cur, nxt));
            }
            lp.push(nxt);
            cur = nxt;
        }
        loops.push(lp);
    }
    if loops.len() > 1 {
        return Err(Error::MultipleBoundaries(loops.len()));
    }
    Ok(BoundaryLoop::from_positions(loops.pop().unwrap(), mesh.vertices()))
}

const SQUARE_CORNERS: [Vec2; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];

/// Indices (into the loop) of the four vertices pinned to square corners.
pub fn corner_positions(lp: &BoundaryLoop) -> Result<[usize; 4]> {
    let n = lp.len();
    if n < 4 {
        return Err(Error::InvalidMesh(format!(
            "boundary loop has {n} vertices, need at least 4"
        )));
    }
    let total = lp.total_length();
    let frac = |i: usize| -> f64 {
        if total > 0.0 {
            lp.arc[i] / total
        } else {
            i as f64 / n as f64
        }
    };
    let mut corners = [0usize; 4];
    // Corner k is searched in a window that leaves room for the remaining corners.
    for k in 1..4 {
        let target = k as f64 / 4.0;
        let lo = corners[k - 1] + 1;
        let hi = n - (4 - k);
        corners[k] = (lo..=hi)
            .min_by(|&a, &b| {
                (frac(a) - target)
                    .abs()
                    .total_cmp(&(frac(b) - target).abs())
                    .then(a.cmp(&b))
            })
            .unwrap();
    }
    Ok(corners)
}

/// Places the loop on the perimeter of the unit square proportionally to arc
/// length. Output is ordered like `lp.vertices()`.
pub fn map_boundary_to_square(lp: &BoundaryLoop) -> Result<Vec<Vec2>> {
    let corners = corner_positions(lp)?;
    let n = lp.len();
    let mut out = vec![[0.0; 2]; n];
    for side in 0..4 {
        let start = corners[side];
        let end = if side == 3 { n } else { corners[side + 1] };
        let a0 = lp.arc[start];
        let a1 = if side == 3 { lp.total } else { lp.arc[end] };
        let (p0, p1) = (SQUARE_CORNERS[side], SQUARE_CORNERS[(side + 1) % 4]);
        for i in start..end {
            let t = if a1 > a0 {
                (lp.arc[i] - a0) / (a1 - a0)
            } else {
                (i - start) as f64 / (end - start) as f64
            };
            out[i] = if i == start {
                p0
            } else {
                [p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])]
            };
        }
    }
    Ok(out)
}

/// Interior Laplacian system `L_II uv_I = b`.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    /// Right-hand sides for the `u` and `v` columns.
    pub rhs: [Vec<f64>; 2],
    /// Mesh vertex index of each system row.
    pub interior: Vec<usize>,
    /// Sum of weights coupling each interior row to boundary vertices.
    pub boundary_coupling: Vec<f64>,
    pub symmetric: bool,
}

impl SparseSystem {
    /// Row sums of the full Laplacian (interior plus boundary couplings).
    pub fn full_row_sums(&self) -> Vec<f64> {
        (0..self.matrix.dim())
            .map(|r| self.matrix.row(r).map(|(_, v)| v).sum::<f64>() - self.boundary_coupling[r])
            .collect()
    }
}

fn cot(a: Vec3, b: Vec3) -> f64 {
    geom::dot(a, b) / geom::norm(geom::cross(a, b))
}

fn angle(a: Vec3, b: Vec3) -> f64 {
    geom::norm(geom::cross(a, b)).atan2(geom::dot(a, b))
}

/// Directed edge weights `w_ij` as an `n x n` sparse matrix.
pub fn edge_weights(mesh: &Mesh, scheme: LaplacianWeights) -> Result<CsrMatrix> {
    let x = mesh.vertices();
    let mut trip = Vec::with_capacity(mesh.triangles().len() * 6);
    for (ti, t) in mesh.triangles().iter().enumerate() {
        let area = geom::triangle_area(x[t[0]], x[t[1]], x[t[2]]);
        match scheme {
            LaplacianWeights::Uniform => {
                // Interior edges are seen from two triangles.
                for k in 0..3 {
                    let (i, j) = (t[k], t[(k + 1) % 3]);
                    trip.push((i, j, 0.5));
                    trip.push((j, i, 0.5));
                }
            }
            LaplacianWeights::Conformal => {
                if area <= MIN_TRIANGLE_AREA {
                    return Err(Error::DegenerateTriangle(ti));
                }
                for k in 0..3 {
                    let (i, j, o) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
                    let w = 0.5 * cot(geom::sub(x[i], x[o]), geom::sub(x[j], x[o]));
                    trip.push((i, j, w));
                    trip.push((j, i, w));
                }
            }
            LaplacianWeights::MeanValue => {
                if area <= MIN_TRIANGLE_AREA {
                    return Err(Error::DegenerateTriangle(ti));
                }
                for k in 0..3 {
                    let (i, j, l) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
                    let (eij, eil) = (geom::sub(x[j], x[i]), geom::sub(x[l], x[i]));
                    let half_tan = (0.5 * angle(eij, eil)).tan();
                    trip.push((i, j, half_tan / geom::norm(eij)));
                    trip.push((i, l, half_tan / geom::norm(eil)));
                }
            }
        }
    }
    let mut w = CsrMatrix::from_triplets(x.len(), trip);
    if scheme == LaplacianWeights::Conformal {
        w = clamp_weights(&w, MIN_COTAN_WEIGHT);
    }
    Ok(w)
}

fn clamp_weights(w: &CsrMatrix, floor: f64) -> CsrMatrix {
    let mut trip = Vec::with_capacity(w.nnz());
    for r in 0..w.dim() {
        trip.extend(w.row(r).map(|(c, v)| (r, c, v.max(floor))));
    }
    CsrMatrix::from_triplets(w.dim(), trip)
}

/// Assembles the interior system for a fixed boundary placement.
pub fn assemble(
    mesh: &Mesh,
    boundary: &[usize],
    boundary_uv: &[Vec2],
    scheme: LaplacianWeights,
) -> Result<SparseSystem> {
    let n = mesh.vertices().len();
    let mut referenced = vec![false; n];
    for t in mesh.triangles() {
        for &i in t {
            referenced[i] = true;
        }
    }
    if let Some(i) = referenced.iter().position(|r| !r) {
        return Err(Error::InvalidMesh(format!("vertex {i} is not used by any triangle")));
    }

    let mut fixed: Vec<Option<Vec2>> = vec![None; n];
    for (&v, &p) in boundary.iter().zip(boundary_uv) {
        fixed[v] = Some(p);
    }
    let mut row_of = vec![usize::MAX; n];
    let interior: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    for (r, &v) in interior.iter().enumerate() {
        row_of[v] = r;
    }

    let w = edge_weights(mesh, scheme)?;
    let m = interior.len();
    let mut trip = Vec::with_capacity(w.nnz());
    let mut rhs = [vec![0.0; m], vec![0.0; m]];
    let mut coupling = vec![0.0; m];
    for (r, &i) in interior.iter().enumerate() {
        let mut diag = 0.0;
        for (j, wij) in w.row(i) {
            if j == i {
                continue;
            }
            diag += wij;
            match fixed[j] {
                Some(p) => {
                    rhs[0][r] += wij * p[0];
                    rhs[1][r] += wij * p[1];
                    coupling[r] += wij;
                }
                None => trip.push((r, row_of[j], -wij)),
            }
        }
        trip.push((r, r, diag));
    }
    Ok(SparseSystem {
        matrix: CsrMatrix::from_triplets(m, trip),
        rhs,
        interior,
        boundary_coupling: coupling,
        symmetric: scheme != LaplacianWeights::MeanValue,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedReport {
    /// Largest relative residual over the `u` and `v` columns.
    pub residual: f64,
    pub solve: SolveInfo,
}

/// Computes uv coordinates and returns the mesh with them attached.
pub fn tutte_embed(mesh: &Mesh, scheme: LaplacianWeights) -> Result<Mesh> {
    tutte_embed_with(mesh, scheme, &SolverSettings::default()).map(|(m, _)| m)
}

pub fn tutte_embed_with(
    mesh: &Mesh,
    scheme: LaplacianWeights,
    settings: &SolverSettings,
) -> Result<(Mesh, EmbedReport)> {
    let lp = boundary_loop(mesh)?;
    let boundary_uv = map_boundary_to_square(&lp)?;
    let system = assemble(mesh, lp.vertices(), &boundary_uv, scheme)?;

    let (cols, info) = if system.interior.is_empty() {
        (
            vec![Vec::new(), Vec::new()],
            SolveInfo {
                method: sparse::SolveMethod::DenseLu,
                iterations: 0,
            },
        )
    } else {
        sparse::solve_columns(&system.matrix, &system.rhs, system.symmetric, settings)?
    };
    let residual = (0..2)
        .map(|c| {
            if system.interior.is_empty() {
                0.0
            } else {
                sparse::relative_residual(&system.matrix, &cols[c], &system.rhs[c])
            }
        })
        .fold(0.0, f64::max);
    if !(residual <= RESIDUAL_LIMIT) {
        return Err(Error::SolverNonConvergence(format!(
            "relative residual {residual:e} above {RESIDUAL_LIMIT:e}"
        )));
    }

    let mut uv = vec![[0.0; 2]; mesh.vertices().len()];
    for (&v, &p) in lp.vertices().iter().zip(&boundary_uv) {
        uv[v] = p;
    }
    for (r, &v) in system.interior.iter().enumerate() {
        // Convex combinations stay inside the square up to rounding.
        uv[v] = [cols[0][r].clamp(0.0, 1.0), cols[1][r].clamp(0.0, 1.0)];
    }
    Ok((mesh.clone().with_uv(uv)?, EmbedReport { residual, solve: info }))
}

/// Signed uv area (times two) of every triangle.
pub fn signed_uv_areas(mesh: &Mesh) -> Result<Vec<f64>> {
    let uv = mesh.uv().ok_or(Error::MissingUv)?;
    Ok(mesh
        .triangles()
        .iter()
        .map(|t| geom::orient2d(uv[t[0]], uv[t[1]], uv[t[2]]))
        .collect())
}

/// Number of triangles whose uv orientation is opposite to the majority.
/// Zero-area triangles count as neither orientation.
pub fn flipped_triangles(mesh: &Mesh) -> Result<usize> {
    let areas = signed_uv_areas(mesh)?;
    let pos = areas.iter().filter(|&&a| a > 0.0).count();
    let neg = areas.iter().filter(|&&a| a < 0.0).count();
    Ok(pos.min(neg))
}
