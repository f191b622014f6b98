//! Training-time perturbation of image / position-map pairs.
//!
//! Geometric parameters define one similarity transform `S` of the image
//! plane (rotation and scale about the image center, then translation). The
//! image is resampled through `S^-1`; valid position-map pixels get their
//! `x, y` mapped by `S` and `z` multiplied by the scale, so the 3D labels
//! keep projecting onto the warped face. Color scaling and occlusion touch
//! the image only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::BBox;
use crate::posmap::PositionMap;

pub const ROTATION_RANGE: (f64, f64) = (-45.0, 45.0);
pub const TRANSLATION_RANGE: (f64, f64) = (-0.1, 0.1);
pub const SCALE_RANGE: (f64, f64) = (0.9, 1.2);
pub const CHANNEL_SCALE_RANGE: (f64, f64) = (0.6, 1.4);
/// Occluder side length as a fraction of the image size.
pub const OCCLUSION_SIDE_RANGE: (f64, f64) = (0.1, 0.4);

/// RGB image with interleaved `f64` channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} RGB image needs {} values, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(ColorImage { width, height, data })
    }

    pub fn black(width: usize, height: usize) -> Self {
        ColorImage {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = 3 * (row * self.width + col);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        ColorImage {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("size checked")
    }

    /// Bilinear sample at continuous image coordinates (pixel centers at
    /// `+0.5`). Points outside the frame read as black.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(x >= 0.0 && y >= 0.0 && x <= w && y <= h) {
            return [0.0; 3];
        }
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let clamp_x = |v: f64| v.clamp(0.0, w - 1.0) as usize;
        let clamp_y = |v: f64| v.clamp(0.0, h - 1.0) as usize;
        let (c0, c1) = (clamp_x(x0), clamp_x(x0 + 1.0));
        let (r0, r1) = (clamp_y(y0), clamp_y(y0 + 1.0));
        let (a, b, c, d) = (self.pixel(r0, c0), self.pixel(r0, c1), self.pixel(r1, c0), self.pixel(r1, c1));
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] * (1.0 - tx) + b[k] * tx;
            let bottom = c[k] * (1.0 - tx) + d[k] * tx;
            out[k] = top * (1.0 - ty) + bottom * ty;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SampleMeta {
    /// Head yaw in degrees.
    pub yaw: f64,
    /// Face box in image coordinates.
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ColorImage,
    pub posmap: PositionMap,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn new(image: ColorImage, posmap: PositionMap, meta: SampleMeta) -> Result<Self> {
        if image.width() != image.height() || image.width() != posmap.size() {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} with {}x{} position map",
                image.width(),
                image.height(),
                posmap.size(),
                posmap.size()
            )));
        }
        Ok(Sample { image, posmap, meta })
    }

    pub fn size(&self) -> usize {
        self.posmap.size()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occlusion {
    /// Top-left corner and extent in pixels.
    pub col: usize,
    pub row: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    /// Translation as a fraction of the image size, per axis.
    pub translation: [f64; 2],
    pub scale: f64,
    pub channel_scales: [f64; 3],
    pub occlusion: Option<Occlusion>,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        rotation_deg: 0.0,
        translation: [0.0, 0.0],
        scale: 1.0,
        channel_scales: [1.0, 1.0, 1.0],
        occlusion: None,
    };

    pub fn validate(&self) -> Result<()> {
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if !within(self.rotation_deg, ROTATION_RANGE)
            || !self.translation.iter().all(|&t| within(t, TRANSLATION_RANGE))
            || !within(self.scale, SCALE_RANGE)
            || !self.channel_scales.iter().all(|&c| within(c, CHANNEL_SCALE_RANGE))
        {
            return Err(Error::invalid(format!("augmentation parameters out of range: {self:?}")));
        }
        Ok(())
    }

    pub fn is_geometric_identity(&self) -> bool {
        self.rotation_deg == 0.0 && self.scale == 1.0 && self.translation == [0.0, 0.0]
    }

    pub fn similarity(&self, image_size: usize) -> Similarity {
        let s = image_size as f64;
        Similarity {
            angle: self.rotation_deg.to_radians(),
            scale: self.scale,
            center: [s / 2.0, s / 2.0],
            translation: [self.translation[0] * s, self.translation[1] * s],
        }
    }
}

/// `p -> scale * R(angle) (p - center) + center + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub angle: f64,
    pub scale: f64,
    pub center: [f64; 2],
    pub translation: [f64; 2],
}

impl Similarity {
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (sin, cos) = self.angle.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [
            self.scale * (cos * dx - sin * dy) + self.center[0] + self.translation[0],
            self.scale * (sin * dx + cos * dy) + self.center[1] + self.translation[1],
        ]
    }

    pub fn invert(&self, q: [f64; 2]) -> [f64; 2] {
        let (sin, cos) = self.angle.sin_cos();
        let dx = (q[0] - self.center[0] - self.translation[0]) / self.scale;
        let dy = (q[1] - self.center[1] - self.translation[1]) / self.scale;
        [
            cos * dx + sin * dy + self.center[0],
            -sin * dx + cos * dy + self.center[1],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub occlusion: bool,
    /// Needed to place the occluder.
    pub image_size: usize,
}

/// Uniform draws within the augmentation ranges, deterministic in `seed`.
pub fn sample_params(seed: u64, opts: &SampleOptions) -> AugmentParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |(lo, hi): (f64, f64)| rng.gen_range(lo..=hi);
    let rotation_deg = uniform(ROTATION_RANGE);
    let translation = [uniform(TRANSLATION_RANGE), uniform(TRANSLATION_RANGE)];
    let scale = uniform(SCALE_RANGE);
    let channel_scales = [
        uniform(CHANNEL_SCALE_RANGE),
        uniform(CHANNEL_SCALE_RANGE),
        uniform(CHANNEL_SCALE_RANGE),
    ];
    let occlusion = if opts.occlusion && opts.image_size > 0 {
        let s = opts.image_size as f64;
        let side = |u: f64| ((u * s).round() as usize).clamp(1, opts.image_size);
        let width = side(uniform(OCCLUSION_SIDE_RANGE));
        let height = side(uniform(OCCLUSION_SIDE_RANGE));
        let col = rng.gen_range(0..=opts.image_size - width);
        let row = rng.gen_range(0..=opts.image_size - height);
        Some(Occlusion {
            col,
            row,
            width,
            height,
            seed: rng.gen(),
        })
    } else {
        None
    };
    AugmentParams {
        rotation_deg,
        translation,
        scale,
        channel_scales,
        occlusion,
    }
}

pub fn apply(sample: &Sample, p: &AugmentParams) -> Result<Sample> {
    p.validate()?;
    let size = sample.image.width();
    if sample.image.height() != size || sample.posmap.size() != size {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} with {}x{} position map",
            sample.image.width(),
            sample.image.height(),
            sample.posmap.size(),
            sample.posmap.size()
        )));
    }

    let mut out = sample.clone();
    if !p.is_geometric_identity() {
        let sim = p.similarity(size);
        let mut warped = ColorImage::black(size, size);
        for row in 0..size {
            for col in 0..size {
                let src = sim.invert([col as f64 + 0.5, row as f64 + 0.5]);
                warped.set_pixel(row, col, sample.image.sample_bilinear(src[0], src[1]));
            }
        }
        out.image = warped;
        out.posmap = sample.posmap.map_valid(|v| {
            let q = sim.apply([v[0], v[1]]);
            [q[0], q[1], v[2] * sim.scale]
        });
        let b = sample.meta.bbox;
        let corners = [b.min, [b.max[0], b.min[1]], b.max, [b.min[0], b.max[1]]];
        out.meta.bbox = BBox::around(corners.map(|c| sim.apply(c))).expect("four corners");
    }

    if p.channel_scales != [1.0; 3] {
        for px in out.image.data.chunks_exact_mut(3) {
            for k in 0..3 {
                px[k] = (px[k] * p.channel_scales[k]).clamp(0.0, 1.0);
            }
        }
    }

    if let Some(occ) = p.occlusion {
        let mut rng = ChaCha8Rng::seed_from_u64(occ.seed);
        for row in occ.row..(occ.row + occ.height).min(size) {
            for col in occ.col..(occ.col + occ.width).min(size) {
                let noise = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
                out.image.set_pixel(row, col, noise);
            }
        }
    }
    Ok(out)
}
