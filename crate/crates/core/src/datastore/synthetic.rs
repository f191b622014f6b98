//! Parametric face-like surfaces with exact ground truth.
//!
//! A face is a height field over a square `(s, t)` grid in `[-1, 1]^2`
//! (`t` grows toward the chin): an ellipsoidal dome plus Gaussian bumps for
//! the nose, eye sockets, brows and mouth, all tapered to zero at the grid
//! border. The grid topology, its uv layout and the landmark vertices are
//! shared by every sample, so all position maps are semantically aligned.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::store::Dataset;
use crate::augment::{ColorImage, Sample, SampleMeta};
use crate::error::{Error, Result};
use crate::geom::{self, Vec2, Vec3};
use crate::maskloss::{Region, RegionSegmentation};
use crate::mesh::{Mesh, NUM_LANDMARKS};
use crate::posmap::{self, UvIndexTable};
use crate::uv::{self, LaplacianWeights};

/// Template-space `(s, t)` of the 68 landmarks in iBUG order.
pub fn landmark_st() -> [Vec2; NUM_LANDMARKS] {
    let mut out = [[0.0; 2]; NUM_LANDMARKS];
    // Jaw line, image-left ear to image-right ear through the chin.
    for k in 0..17 {
        let phi = -0.25 + k as f64 * (PI + 0.5) / 16.0;
        out[k] = [-0.78 * phi.cos(), -0.05 + 0.82 * phi.sin()];
    }
    for j in 0..5 {
        let lift = 0.06 * (PI * j as f64 / 4.0).sin();
        out[17 + j] = [-0.62 + 0.11 * j as f64, -0.42 - lift];
        out[22 + j] = [0.18 + 0.11 * j as f64, -0.42 - (PI * (4 - j) as f64 / 4.0).sin() * 0.06];
    }
    for j in 0..4 {
        out[27 + j] = [0.0, -0.24 + 0.12 * j as f64];
    }
    for j in 0..5 {
        let dj = (j as f64 - 2.0).abs();
        out[31 + j] = [-0.14 + 0.07 * j as f64, 0.2 + 0.04 * (1.0 - dj / 2.0)];
    }
    let eyes = [
        [-0.56, -0.2],
        [-0.45, -0.25],
        [-0.31, -0.25],
        [-0.2, -0.2],
        [-0.31, -0.15],
        [-0.45, -0.15],
        [0.2, -0.2],
        [0.31, -0.25],
        [0.45, -0.25],
        [0.56, -0.2],
        [0.45, -0.15],
        [0.31, -0.15],
    ];
    out[36..48].copy_from_slice(&eyes);
    let mouth = [
        [-0.3, 0.5],
        [-0.2, 0.45],
        [-0.08, 0.43],
        [0.0, 0.44],
        [0.08, 0.43],
        [0.2, 0.45],
        [0.3, 0.5],
        [0.2, 0.56],
        [0.08, 0.6],
        [0.0, 0.61],
        [-0.08, 0.6],
        [-0.2, 0.56],
        [-0.24, 0.5],
        [-0.08, 0.48],
        [0.0, 0.48],
        [0.08, 0.48],
        [0.24, 0.5],
        [0.08, 0.53],
        [0.0, 0.53],
        [-0.08, 0.53],
    ];
    out[48..68].copy_from_slice(&mouth);
    out
}

/// Region label of a template point.
pub fn region_at(s: f64, t: f64) -> Region {
    let inside = |cs: f64, ct: f64, rs: f64, rt: f64| ((s - cs) / rs).powi(2) + ((t - ct) / rt).powi(2) <= 1.0;
    if inside(0.0, -0.02, 0.86, 0.9) {
        let eye = inside(-0.38, -0.2, 0.22, 0.12) || inside(0.38, -0.2, 0.22, 0.12);
        let nose = s.abs() <= 0.16 && (-0.25..=0.28).contains(&t);
        let mouth = inside(0.0, 0.52, 0.36, 0.13);
        if eye || nose || mouth {
            Region::EyeNoseMouth
        } else {
            Region::Face
        }
    } else if t > 0.55 && s.abs() < 0.5 {
        Region::Neck
    } else {
        Region::Background
    }
}

fn gauss(s: f64, t: f64, cs: f64, ct: f64, ss: f64, st: f64) -> f64 {
    (-0.5 * (((s - cs) / ss).powi(2) + ((t - ct) / st).powi(2))).exp()
}

/// Shape parameters of one synthetic face, in template units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceShape {
    pub width: f64,
    pub height: f64,
    pub depth: f64,
    pub nose: f64,
    pub eyes: f64,
    pub mouth: f64,
    pub brow: f64,
}

impl FaceShape {
    pub const NEUTRAL: FaceShape = FaceShape {
        width: 0.92,
        height: 1.0,
        depth: 0.55,
        nose: 0.35,
        eyes: 0.12,
        mouth: 0.07,
        brow: 0.05,
    };

    pub fn height_at(&self, s: f64, t: f64) -> f64 {
        let taper = (1.0 - s * s) * (1.0 - t * t);
        let bumps = self.nose * gauss(s, t, 0.0, 0.05, 0.09, 0.2)
            - self.eyes * (gauss(s, t, -0.38, -0.2, 0.14, 0.09) + gauss(s, t, 0.38, -0.2, 0.14, 0.09))
            + self.brow * (gauss(s, t, -0.38, -0.42, 0.2, 0.05) + gauss(s, t, 0.38, -0.42, 0.2, 0.05))
            + self.mouth * gauss(s, t, 0.0, 0.52, 0.22, 0.06);
        taper * (self.depth + bumps)
    }

    /// Unposed position of template point `(s, t)`.
    pub fn point(&self, s: f64, t: f64) -> Vec3 {
        [s * self.width, t * self.height, self.height_at(s, t)]
    }
}

/// Closed ranges the synthetic shape parameters are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeRanges {
    pub width: (f64, f64),
    pub height: (f64, f64),
    pub depth: (f64, f64),
    pub nose: (f64, f64),
    pub eyes: (f64, f64),
    pub mouth: (f64, f64),
    pub brow: (f64, f64),
}

impl Default for ShapeRanges {
    fn default() -> Self {
        ShapeRanges {
            width: (0.85, 1.0),
            height: (0.94, 1.06),
            depth: (0.45, 0.65),
            nose: (0.25, 0.45),
            eyes: (0.08, 0.16),
            mouth: (0.04, 0.1),
            brow: (0.03, 0.08),
        }
    }
}

impl ShapeRanges {
    fn draw(&self, rng: &mut impl Rng) -> FaceShape {
        let mut u = |(lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        FaceShape {
            width: u(self.width),
            height: u(self.height),
            depth: u(self.depth),
            nose: u(self.nose),
            eyes: u(self.eyes),
            mouth: u(self.mouth),
            brow: u(self.brow),
        }
    }
}

/// Shared topology, uv layout and landmark table of all synthetic faces.
#[derive(Debug, Clone)]
pub struct FaceTemplate {
    grid: usize,
    st: Vec<Vec2>,
    mesh: Mesh,
}

impl FaceTemplate {
    /// `grid x grid` vertices; `grid` must be odd so the midline is a grid line.
    /// The uv layout is the conformal Tutte embedding of the neutral face.
    pub fn new(grid: usize) -> Result<Self> {
        if grid < 5 || grid % 2 == 0 {
            return Err(Error::invalid(format!("template grid must be odd and >= 5, got {grid}")));
        }
        let step = 2.0 / (grid - 1) as f64;
        let st: Vec<Vec2> = (0..grid * grid)
            .map(|i| [-1.0 + (i % grid) as f64 * step, -1.0 + (i / grid) as f64 * step])
            .collect();
        let mut tris = Vec::with_capacity(2 * (grid - 1) * (grid - 1));
        for r in 0..grid - 1 {
            for c in 0..grid - 1 {
                let i = r * grid + c;
                // Alternate diagonals so the layout is mirror-symmetric.
                if (r + c) % 2 == 0 {
                    tris.push([i, i + 1, i + grid + 1]);
                    tris.push([i, i + grid + 1, i + grid]);
                } else {
                    tris.push([i, i + 1, i + grid]);
                    tris.push([i + 1, i + grid + 1, i + grid]);
                }
            }
        }
        let neutral: Vec<Vec3> = st.iter().map(|p| FaceShape::NEUTRAL.point(p[0], p[1])).collect();
        let landmarks = landmark_st()
            .iter()
            .map(|p| {
                let c = ((p[0] + 1.0) / step).round() as usize;
                let r = ((p[1] + 1.0) / step).round() as usize;
                r.min(grid - 1) * grid + c.min(grid - 1)
            })
            .collect();
        let mesh = Mesh::new(neutral, tris)?.with_landmarks(landmarks)?;
        let mesh = uv::tutte_embed(&mesh, LaplacianWeights::Conformal)?;
        Ok(FaceTemplate { grid, st, mesh })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    /// Neutral face with uv and landmark table.
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn st(&self) -> &[Vec2] {
        &self.st
    }

    /// Face geometry for `shape`, posed by `yaw_deg` about the vertical axis
    /// and placed in image space: `x, y` in pixels around `center`, `z`
    /// shifted so the farthest point has depth 0.
    pub fn pose(&self, shape: &FaceShape, yaw_deg: f64, pixels_per_unit: f64, center: Vec2) -> Result<Mesh> {
        let (sin, cos) = yaw_deg.to_radians().sin_cos();
        let rotated: Vec<Vec3> = self
            .st
            .iter()
            .map(|p| {
                let [x, y, z] = shape.point(p[0], p[1]);
                [x * cos + z * sin, y, -x * sin + z * cos]
            })
            .collect();
        let z_min = rotated.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
        let placed = rotated
            .into_iter()
            .map(|p| {
                [
                    center[0] + p[0] * pixels_per_unit,
                    center[1] + p[1] * pixels_per_unit,
                    (p[2] - z_min) * pixels_per_unit,
                ]
            })
            .collect();
        self.mesh.with_vertices(placed)
    }

    pub fn uv_table(&self, size: usize) -> Result<UvIndexTable> {
        UvIndexTable::from_mesh(&self.mesh, size)
    }

    /// uv-space region labels at map resolution, landmark pixels included.
    pub fn segmentation(&self, size: usize) -> Result<RegionSegmentation> {
        let attr: Vec<Vec3> = self.st.iter().map(|p| [p[0], p[1], 0.0]).collect();
        let st_map = posmap::bake_attribute(&self.mesh, &attr, size)?;
        let labels = st_map
            .data()
            .iter()
            .zip(st_map.valid())
            .map(|(p, &ok)| if ok { region_at(p[0], p[1]) } else { Region::Background })
            .collect();
        RegionSegmentation::new(size, labels)?.with_landmarks(&self.uv_table(size)?)
    }

    fn triangle_albedo(&self, skin: [f64; 3], hair: [f64; 3]) -> Vec<[f64; 3]> {
        self.mesh
            .triangles()
            .iter()
            .map(|t| {
                let s = (self.st[t[0]][0] + self.st[t[1]][0] + self.st[t[2]][0]) / 3.0;
                let u = (self.st[t[0]][1] + self.st[t[1]][1] + self.st[t[2]][1]) / 3.0;
                let brow = (u + 0.42).abs() < 0.045 && (0.16..0.66).contains(&s.abs());
                let eye = ((s.abs() - 0.38) / 0.18).powi(2) + ((u + 0.2) / 0.06).powi(2) <= 1.0;
                let lips = (s / 0.3).powi(2) + ((u - 0.52) / 0.09).powi(2) <= 1.0;
                match region_at(s, u) {
                    _ if eye => [0.12, 0.1, 0.1],
                    _ if brow => hair,
                    _ if lips => [skin[0] * 0.85, skin[1] * 0.45, skin[2] * 0.45],
                    Region::Background => hair,
                    Region::Neck => skin.map(|c| c * 0.85),
                    _ => skin,
                }
            })
            .collect()
    }
}

/// Z-buffered Lambert rendering of a posed mesh.
fn render(mesh: &Mesh, albedo: &[[f64; 3]], size: usize, background: [f64; 3]) -> ColorImage {
    let light = {
        let l = [0.3, -0.5, 1.0];
        geom::scale(l, 1.0 / geom::norm(l))
    };
    let mut img = ColorImage::black(size, size);
    for r in 0..size {
        for c in 0..size {
            img.set_pixel(r, c, background);
        }
    }
    let mut depth = vec![f64::NEG_INFINITY; size * size];
    let v = mesh.vertices();
    for (tri, color) in mesh.triangles().iter().zip(albedo) {
        let p = tri.map(|i| v[i]);
        let q = p.map(|a| [a[0], a[1]]);
        let area = geom::orient2d(q[0], q[1], q[2]);
        if area == 0.0 {
            continue;
        }
        let mut n = geom::cross(geom::sub(p[1], p[0]), geom::sub(p[2], p[0]));
        if n[2] < 0.0 {
            n = geom::scale(n, -1.0);
        }
        let shade = 0.3 + 0.7 * geom::dot(n, light).max(0.0) / geom::norm(n);
        let rgb = color.map(|c| (c * shade).clamp(0.0, 1.0));
        let lo_x = q.iter().map(|a| a[0]).fold(f64::INFINITY, f64::min);
        let hi_x = q.iter().map(|a| a[0]).fold(f64::NEG_INFINITY, f64::max);
        let lo_y = q.iter().map(|a| a[1]).fold(f64::INFINITY, f64::min);
        let hi_y = q.iter().map(|a| a[1]).fold(f64::NEG_INFINITY, f64::max);
        let c0 = (lo_x - 0.5).ceil().max(0.0) as usize;
        let r0 = (lo_y - 0.5).ceil().max(0.0) as usize;
        let c1 = (hi_x - 0.5).floor().min(size as f64 - 1.0);
        let r1 = (hi_y - 0.5).floor().min(size as f64 - 1.0);
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        for row in r0..=r1 as usize {
            for col in c0..=c1 as usize {
                let s = [col as f64 + 0.5, row as f64 + 0.5];
                let l0 = geom::orient2d(q[1], q[2], s) / area;
                let l1 = geom::orient2d(q[2], q[0], s) / area;
                let l2 = geom::orient2d(q[0], q[1], s) / area;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let z = l0 * p[0][2] + l1 * p[1][2] + l2 * p[2][2];
                let idx = row * size + col;
                if z > depth[idx] {
                    depth[idx] = z;
                    img.set_pixel(row, col, rgb);
                }
            }
        }
    }
    img
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub count: usize,
    /// Image and position-map size in pixels.
    pub resolution: usize,
    /// Template grid size (vertices per side, odd).
    pub grid: usize,
    /// Yaw is drawn uniformly from `[-yaw_max, yaw_max]` degrees.
    pub yaw_max: f64,
    pub shape: ShapeRanges,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            count: 100,
            resolution: 32,
            grid: 65,
            yaw_max: 60.0,
            shape: ShapeRanges::default(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("synthetic dataset needs at least one sample"));
        }
        if self.resolution == 0 || self.resolution % 32 != 0 {
            return Err(Error::invalid(format!(
                "resolution must be a positive multiple of 32, got {}",
                self.resolution
            )));
        }
        if !(0.0..=90.0).contains(&self.yaw_max) {
            return Err(Error::invalid(format!("yaw_max must lie in [0, 90], got {}", self.yaw_max)));
        }
        Ok(())
    }
}

/// In-memory synthetic dataset.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub template: FaceTemplate,
    pub segmentation: RegionSegmentation,
    pub table: UvIndexTable,
    pub samples: Vec<Sample>,
    /// Posed ground-truth mesh of every sample.
    pub meshes: Vec<Mesh>,
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Generates one sample; `index` selects an independent random stream.
fn make_sample(template: &FaceTemplate, spec: &SyntheticSpec, index: usize) -> Result<(Sample, Mesh)> {
    let mut rng = sample_rng(spec.seed, index);
    let size = spec.resolution as f64;
    let shape = spec.shape.draw(&mut rng);
    let yaw = if spec.yaw_max > 0.0 {
        rng.gen_range(-spec.yaw_max..=spec.yaw_max)
    } else {
        0.0
    };
    let ppu = 0.4 * size * rng.gen_range(0.95..=1.05);
    let center = [
        size / 2.0 + rng.gen_range(-0.02..=0.02) * size,
        size / 2.0 + rng.gen_range(-0.02..=0.02) * size,
    ];
    let tone = rng.gen_range(0.6..=1.0);
    let skin = [0.9 * tone, 0.7 * tone, 0.58 * tone];
    let hair_level = rng.gen_range(0.1..=0.35);
    let hair = [hair_level, hair_level * 0.8, hair_level * 0.6];
    let bg_level = rng.gen_range(0.0..=0.25);
    let background = [bg_level, bg_level, bg_level * 1.1];

    let mesh = template.pose(&shape, yaw, ppu, center)?;
    let image = render(&mesh, &template.triangle_albedo(skin, hair), spec.resolution, background);
    let posmap = posmap::bake(&mesh, spec.resolution)?;
    let bbox = mesh.landmarks().expect("template has landmarks").bbox();
    let sample = Sample::new(image, posmap, SampleMeta { yaw, bbox })?;
    Ok((sample, mesh))
}

pub fn synthesize(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let template = FaceTemplate::new(spec.grid)?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(spec.count);
    let mut slots: Vec<Option<Result<(Sample, Mesh)>>> = (0..spec.count).map(|_| None).collect();
    let chunk = spec.count.div_ceil(workers);
    std::thread::scope(|scope| {
        for (c, part) in slots.chunks_mut(chunk).enumerate() {
            let template = &template;
            scope.spawn(move || {
                for (k, slot) in part.iter_mut().enumerate() {
                    *slot = Some(make_sample(template, spec, c * chunk + k));
                }
            });
        }
    });
    let mut samples = Vec::with_capacity(spec.count);
    let mut meshes = Vec::with_capacity(spec.count);
    for slot in slots {
        let (s, m) = slot.expect("every slot is filled")?;
        samples.push(s);
        meshes.push(m);
    }
    Ok(SyntheticData {
        segmentation: template.segmentation(spec.resolution)?,
        table: template.uv_table(spec.resolution)?,
        template,
        samples,
        meshes,
    })
}

/// Synthesizes a dataset and writes it under `root`.
pub fn generate_synthetic(spec: &SyntheticSpec, root: impl AsRef<Path>) -> Result<Dataset> {
    let data = synthesize(spec)?;
    Dataset::create(root, data.template.mesh(), &data.segmentation, &data.samples)
}
