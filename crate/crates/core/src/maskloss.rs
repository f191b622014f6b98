//! Region segmentation in uv space, per-pixel loss weights and the weighted
//! position-map loss `sum_xy ||P(x,y) - P~(x,y)|| * W(x,y)`.
//!
//! Segmentation images are 8-bit single-channel with the label codes of
//! [`Region`]. Landmark pixels always override the painted label.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::posmap::{PositionMap, UvIndexTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Region {
    Background = 0,
    Face = 1,
    EyeNoseMouth = 2,
    Neck = 3,
    Landmark = 4,
}

impl Region {
    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Region::Background,
            1 => Region::Face,
            2 => Region::EyeNoseMouth,
            3 => Region::Neck,
            4 => Region::Landmark,
            other => return Err(Error::UnknownLabel(other)),
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSegmentation {
    size: usize,
    labels: Vec<Region>,
}

impl RegionSegmentation {
    pub fn new(size: usize, labels: Vec<Region>) -> Result<Self> {
        if labels.len() != size * size {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a {size}x{size} segmentation",
                labels.len()
            )));
        }
        Ok(RegionSegmentation { size, labels })
    }

    pub fn from_codes(size: usize, codes: &[u8]) -> Result<Self> {
        let labels = codes.iter().map(|&c| Region::from_code(c)).collect::<Result<_>>()?;
        Self::new(size, labels)
    }

    /// Marks exactly the table's pixels as landmarks. Previously painted
    /// landmark pixels that are not in the table fall back to `Face`.
    pub fn with_landmarks(mut self, table: &UvIndexTable) -> Result<Self> {
        for l in &mut self.labels {
            if *l == Region::Landmark {
                *l = Region::Face;
            }
        }
        for (r, c) in table.pixels(self.size)? {
            self.labels[r * self.size + c] = Region::Landmark;
        }
        Ok(self)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn labels(&self) -> &[Region] {
        &self.labels
    }

    pub fn codes(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.code()).collect()
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.into_luma8();
        if img.width() != img.height() {
            return Err(Error::ShapeMismatch(format!(
                "segmentation must be square, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        Self::from_codes(img.width() as usize, img.as_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.size as u32;
        let img = image::GrayImage::from_raw(n, n, self.codes()).expect("size checked on construction");
        img.save(path.as_ref())?;
        Ok(())
    }
}

/// Region weights `landmark : eye/nose/mouth : other face : neck`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightRatio(pub [f64; 4]);

impl WeightRatio {
    /// 16:4:3:0, the weighting used for training by default.
    pub const DEFAULT: WeightRatio = WeightRatio([16.0, 4.0, 3.0, 0.0]);
    /// 1:1:1:1, equivalent to training without a weight mask.
    pub const UNIFORM: WeightRatio = WeightRatio([1.0, 1.0, 1.0, 1.0]);

    pub fn new(w: [f64; 4]) -> Result<Self> {
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid(format!("weights must be finite and >= 0, got {w:?}")));
        }
        Ok(WeightRatio(w))
    }

    pub fn weight(&self, region: Region) -> f64 {
        match region {
            Region::Landmark => self.0[0],
            Region::EyeNoseMouth => self.0[1],
            Region::Face => self.0[2],
            Region::Neck => self.0[3],
            Region::Background => 0.0,
        }
    }
}

impl std::str::FromStr for WeightRatio {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::invalid(format!("bad ratio `{s}`")))?;
        let arr: [f64; 4] = parts
            .try_into()
            .map_err(|_| Error::invalid(format!("ratio `{s}` needs four parts")))?;
        Self::new(arr)
    }
}

impl std::fmt::Display for WeightRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let w = self.0;
        write!(f, "{}:{}:{}:{}", w[0], w[1], w[2], w[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormKind {
    /// `||d||^2`, i.e. a weighted squared error.
    #[default]
    SquaredL2,
    /// Plain Euclidean norm `||d||`.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Sum,
    /// Divide the sum by the number of positive-weight pixels.
    MeanPositive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub ratio: WeightRatio,
    pub norm: NormKind,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            ratio: WeightRatio::DEFAULT,
            norm: NormKind::SquaredL2,
            reduction: Reduction::Sum,
        }
    }
}

impl LossConfig {
    pub fn with_ratio(ratio: WeightRatio) -> Self {
        LossConfig {
            ratio,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMask {
    size: usize,
    weights: Vec<f64>,
}

impl WeightMask {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != size * size {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for a {size}x{size} mask",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("mask weights must be finite and non-negative"));
        }
        Ok(WeightMask { size, weights })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.size, self.weights.iter().map(|w| w * c).collect())
    }

    /// 8-bit rendering with the largest weight mapped to 255.
    pub fn to_gray(&self) -> Vec<u8> {
        let max = self.weights.iter().copied().fold(0.0, f64::max);
        self.weights
            .iter()
            .map(|w| if max > 0.0 { (w / max * 255.0).round() as u8 } else { 0 })
            .collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.size as u32;
        let img = image::GrayImage::from_raw(n, n, self.to_gray()).expect("size checked on construction");
        img.save(path.as_ref())?;
        Ok(())
    }
}

pub fn build_mask(seg: &RegionSegmentation, cfg: &LossConfig) -> WeightMask {
    WeightMask {
        size: seg.size,
        weights: seg.labels.iter().map(|&l| cfg.ratio.weight(l)).collect(),
    }
}

fn check_shapes(p: &PositionMap, q: &PositionMap, w: &WeightMask) -> Result<()> {
    if p.size() != q.size() || p.size() != w.size() {
        return Err(Error::ShapeMismatch(format!(
            "maps {} and {} with mask {}",
            p.size(),
            q.size(),
            w.size()
        )));
    }
    Ok(())
}

/// Loss and (optionally) its gradient with respect to `pred`, over
/// interleaved `x, y, z` buffers of `weights.len()` pixels.
pub fn loss_and_grad_flat(
    pred: &[f64],
    target: &[f64],
    weights: &[f64],
    cfg: &LossConfig,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let n = weights.len();
    assert_eq!(pred.len(), 3 * n);
    assert_eq!(target.len(), 3 * n);
    let norm = match cfg.reduction {
        Reduction::Sum => 1.0,
        Reduction::MeanPositive => {
            let k = weights.iter().filter(|&&w| w > 0.0).count();
            if k == 0 {
                1.0
            } else {
                1.0 / k as f64
            }
        }
    };
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let mut total = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let d = [
            pred[3 * i] - target[3 * i],
            pred[3 * i + 1] - target[3 * i + 1],
            pred[3 * i + 2] - target[3 * i + 2],
        ];
        let sq = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        match cfg.norm {
            NormKind::SquaredL2 => {
                total += w * sq;
                if let Some(g) = grad.as_deref_mut() {
                    for k in 0..3 {
                        g[3 * i + k] = 2.0 * w * d[k] * norm;
                    }
                }
            }
            NormKind::L2 => {
                let len = sq.sqrt();
                total += w * len;
                if let Some(g) = grad.as_deref_mut() {
                    if len > 0.0 {
                        for k in 0..3 {
                            g[3 * i + k] = w * d[k] / len * norm;
                        }
                    }
                }
            }
        }
    }
    total * norm
}

pub fn weighted_loss(p: &PositionMap, q: &PositionMap, w: &WeightMask, cfg: &LossConfig) -> Result<f64> {
    check_shapes(p, q, w)?;
    Ok(loss_and_grad_flat(&p.to_flat(), &q.to_flat(), &w.weights, cfg, None))
}

/// Gradient of [`weighted_loss`] with respect to `p`, one 3-vector per pixel.
pub fn weighted_loss_grad(
    p: &PositionMap,
    q: &PositionMap,
    w: &WeightMask,
    cfg: &LossConfig,
) -> Result<Vec<Vec3>> {
    check_shapes(p, q, w)?;
    let mut g = vec![0.0; 3 * w.weights.len()];
    loss_and_grad_flat(&p.to_flat(), &q.to_flat(), &w.weights, cfg, Some(&mut g));
    Ok(g.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}
