//! UV position maps: square images whose pixels store 3D surface positions.
//!
//! Pixel `(row, col)` of an `S x S` map samples uv `((col + 0.5) / S, (row + 0.5) / S)`.
//! Pixels outside every uv triangle are invalid and hold `(0, 0, 0)`.
//!
//! # UVPM file format
//!
//! ```text
//! "UVPM"                      4 bytes
//! version = 1                 u32 LE
//! height, width               u32 LE each
//! H*W*3 float32 LE            row-major (x, y, z)
//! H*W validity bytes          0 or 1
//! ```

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::mesh::{LandmarkSet, Mesh, PointCloud, NUM_LANDMARKS};

pub const DEFAULT_MAP_SIZE: usize = 256;
const MAGIC: &[u8; 4] = b"UVPM";
const VERSION: u32 = 1;
const MAX_PIXELS: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq)]
pub struct PositionMap {
    size: usize,
    data: Vec<Vec3>,
    valid: Vec<bool>,
}

impl PositionMap {
    /// All-invalid map of zeros.
    pub fn empty(size: usize) -> Self {
        PositionMap {
            size,
            data: vec![[0.0; 3]; size * size],
            valid: vec![false; size * size],
        }
    }

    /// Builds a map from row-major data and validity. Invalid pixels are zeroed.
    pub fn from_parts(size: usize, mut data: Vec<Vec3>, valid: Vec<bool>) -> Result<Self> {
        if data.len() != size * size || valid.len() != size * size {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} map needs {} pixels, got {} values and {} flags",
                size,
                size,
                size * size,
                data.len(),
                valid.len()
            )));
        }
        for (p, &ok) in data.iter_mut().zip(&valid) {
            if !ok {
                *p = [0.0; 3];
            } else if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid("non-finite value on a valid pixel"));
            }
        }
        Ok(PositionMap { size, data, valid })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn width(&self) -> usize {
        self.size
    }

    pub fn height(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[Vec3] {
        &self.data
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, row: usize, col: usize) -> Vec3 {
        self.data[row * self.size + col]
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.size + col]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Applies `f` to every valid pixel value.
    pub fn map_valid(&self, mut f: impl FnMut(Vec3) -> Vec3) -> Self {
        let data = self
            .data
            .iter()
            .zip(&self.valid)
            .map(|(&p, &ok)| if ok { f(p) } else { p })
            .collect();
        PositionMap {
            size: self.size,
            data,
            valid: self.valid.clone(),
        }
    }

    /// Interleaved `x, y, z` values, row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        self.data.iter().flatten().copied().collect()
    }

    pub fn write_uvpm(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.size as u32)?;
        w.write_u32::<LittleEndian>(self.size as u32)?;
        for p in &self.data {
            for &c in p {
                w.write_f32::<LittleEndian>(c as f32)?;
            }
        }
        let flags: Vec<u8> = self.valid.iter().map(|&v| v as u8).collect();
        w.write_all(&flags)
    }

    pub fn read_uvpm(r: impl Read) -> Result<Self> {
        let mut r = CountingReader { inner: r, offset: 0 };
        let mut magic = [0u8; 4];
        r.fill(&mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::Corrupt {
                offset: 0,
                message: format!("bad magic {magic:?}"),
            });
        }
        let version = r.u32_le("version")?;
        if version != VERSION {
            return Err(Error::Corrupt {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let height = r.u32_le("height")? as usize;
        let width = r.u32_le("width")? as usize;
        if height != width {
            return Err(Error::Corrupt {
                offset: 8,
                message: format!("non-square map {height}x{width}"),
            });
        }
        let n = height * width;
        if n > MAX_PIXELS {
            return Err(Error::Corrupt {
                offset: 8,
                message: format!("implausible map size {height}x{width}"),
            });
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut p = [0.0; 3];
            for c in &mut p {
                *c = r.f32_le("position data")? as f64;
            }
            data.push(p);
        }
        let mut flags = vec![0u8; n];
        r.fill(&mut flags, "validity mask")?;
        let data_end = r.offset - n as u64;
        let mut valid = Vec::with_capacity(n);
        for (i, f) in flags.into_iter().enumerate() {
            match f {
                0 => valid.push(false),
                1 => valid.push(true),
                other => {
                    return Err(Error::Corrupt {
                        offset: data_end + i as u64,
                        message: format!("validity byte {other}"),
                    })
                }
            }
        }
        PositionMap::from_parts(height, data, valid)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_uvpm(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_uvpm(bytes.as_slice())
    }
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.offset += n as u64;
        Ok(n)
    }
}

impl<R: Read> CountingReader<R> {
    /// Reads exactly `buf.len()` bytes; errors report where the read began.
    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let start = self.offset;
        self.read_exact(buf).map_err(|e| Error::Corrupt {
            offset: start,
            message: format!("truncated while reading {what}: {e}"),
        })
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32_le(&mut self, what: &str) -> Result<f32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(f32::from_le_bytes(b))
    }
}

/// Rasterizes the mesh's 3D positions into uv space.
///
/// A pixel is covered when its center lies inside a uv triangle, edges
/// included. The lowest-index covering triangle wins.
pub fn bake(mesh: &Mesh, size: usize) -> Result<PositionMap> {
    let values = mesh.vertices();
    bake_attribute(mesh, values, size)
}

/// Like [`bake`], interpolating an arbitrary per-vertex 3-vector.
pub fn bake_attribute(mesh: &Mesh, values: &[Vec3], size: usize) -> Result<PositionMap> {
    let uv = mesh.uv().ok_or(Error::MissingUv)?;
    if size == 0 {
        return Err(Error::invalid("map size must be positive"));
    }
    if values.len() != uv.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} attribute values for {} vertices",
            values.len(),
            uv.len()
        )));
    }
    let s = size as f64;
    let mut map = PositionMap::empty(size);
    // Tolerance on barycentrics so shared edges do not open cracks.
    const EDGE_EPS: f64 = 1e-12;
    for tri in mesh.triangles() {
        let p = tri.map(|i| [uv[i][0] * s, uv[i][1] * s]);
        let area = geom::orient2d(p[0], p[1], p[2]);
        if area == 0.0 {
            continue;
        }
        let lo_x = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
        let hi_x = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
        let lo_y = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
        let hi_y = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
        // Pixel centers c + 0.5 within [lo, hi].
        let c0 = ((lo_x - 0.5).ceil().max(0.0)) as usize;
        let c1 = (hi_x - 0.5).floor().min(s - 1.0);
        let r0 = ((lo_y - 0.5).ceil().max(0.0)) as usize;
        let r1 = (hi_y - 0.5).floor().min(s - 1.0);
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        let (c1, r1) = (c1 as usize, r1 as usize);
        let vals = tri.map(|i| values[i]);
        for row in r0..=r1 {
            for col in c0..=c1 {
                let idx = row * size + col;
                if map.valid[idx] {
                    continue;
                }
                let q = [col as f64 + 0.5, row as f64 + 0.5];
                let l0 = geom::orient2d(p[1], p[2], q) / area;
                let l1 = geom::orient2d(p[2], p[0], q) / area;
                let l2 = geom::orient2d(p[0], p[1], q) / area;
                if l0 < -EDGE_EPS || l1 < -EDGE_EPS || l2 < -EDGE_EPS {
                    continue;
                }
                map.data[idx] = [
                    l0 * vals[0][0] + l1 * vals[1][0] + l2 * vals[2][0],
                    l0 * vals[0][1] + l1 * vals[1][1] + l2 * vals[2][1],
                    l0 * vals[0][2] + l1 * vals[1][2] + l2 * vals[2][2],
                ];
                map.valid[idx] = true;
            }
        }
    }
    Ok(map)
}

/// One point per valid pixel, in row-major order.
pub fn unbake(map: &PositionMap) -> PointCloud {
    let pts = map
        .data
        .iter()
        .zip(&map.valid)
        .filter(|(_, &ok)| ok)
        .map(|(p, _)| *p)
        .collect();
    PointCloud::new(pts).expect("valid pixels are finite")
}

/// Pixel containing a uv coordinate.
pub fn uv_to_pixel(uv: [f64; 2], size: usize) -> (usize, usize) {
    let s = size as f64;
    let col = (uv[0] * s).floor().clamp(0.0, s - 1.0) as usize;
    let row = (uv[1] * s).floor().clamp(0.0, s - 1.0) as usize;
    (row, col)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleError {
    pub mean: f64,
    pub max: f64,
    /// Vertices whose uv pixel was valid and therefore measured.
    pub measured: usize,
}

/// Bakes at `size` and compares every vertex with the map value at its uv pixel.
pub fn resample_error(mesh: &Mesh, size: usize) -> Result<ResampleError> {
    let map = bake(mesh, size)?;
    let uv = mesh.uv().ok_or(Error::MissingUv)?;
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    let mut measured = 0;
    for (v, t) in mesh.vertices().iter().zip(uv) {
        let (row, col) = uv_to_pixel(*t, size);
        if !map.is_valid(row, col) {
            continue;
        }
        let d = geom::dist(*v, map.get(row, col));
        sum += d;
        max = max.max(d);
        measured += 1;
    }
    if measured == 0 {
        return Err(Error::Empty("no vertex falls on a valid pixel"));
    }
    Ok(ResampleError {
        mean: sum / measured as f64,
        max,
        measured,
    })
}

/// Fixed map pixels holding the 68 landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct UvIndexTable {
    entries: Vec<[i64; 2]>,
}

impl UvIndexTable {
    /// Entries are `(row, col)`; bounds are checked against the map at lookup.
    pub fn new(entries: Vec<[i64; 2]>) -> Result<Self> {
        if entries.len() != NUM_LANDMARKS {
            return Err(Error::InvalidArgument(format!(
                "uv index table needs {NUM_LANDMARKS} entries, got {}",
                entries.len()
            )));
        }
        Ok(UvIndexTable { entries })
    }

    /// Table from the uv coordinates of a mesh's landmark vertices.
    pub fn from_mesh(mesh: &Mesh, size: usize) -> Result<Self> {
        let uv = mesh.uv().ok_or(Error::MissingUv)?;
        let idx = mesh
            .landmark_indices()
            .ok_or_else(|| Error::invalid("mesh has no landmark table"))?;
        Self::new(
            idx.iter()
                .map(|&i| {
                    let (r, c) = uv_to_pixel(uv[i], size);
                    [r as i64, c as i64]
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[[i64; 2]] {
        &self.entries
    }

    /// In-bounds `(row, col)` pixels for a map of `size`.
    pub fn pixels(&self, size: usize) -> Result<Vec<(usize, usize)>> {
        self.entries
            .iter()
            .map(|&[r, c]| {
                if r < 0 || c < 0 || r >= size as i64 || c >= size as i64 {
                    Err(Error::OutOfBounds { row: r, col: c, size })
                } else {
                    Ok((r as usize, c as usize))
                }
            })
            .collect()
    }
}

pub fn landmarks_from_map(map: &PositionMap, table: &UvIndexTable) -> Result<LandmarkSet> {
    let pts = table
        .pixels(map.size())?
        .into_iter()
        .map(|(r, c)| map.get(r, c))
        .collect();
    LandmarkSet::new(pts)
}
