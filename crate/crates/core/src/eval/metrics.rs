use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{BBox, LandmarkSet, PointCloud};

/// Which coordinates enter the point distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dims {
    Xy,
    Xyz,
}

/// Normalization factor derived from the face box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoxNorm {
    /// `sqrt(width * height)`.
    #[default]
    GeometricMean,
    /// `max(width, height)`.
    MaxSide,
}

impl BoxNorm {
    pub fn factor(self, bbox: &BBox) -> f64 {
        match self {
            BoxNorm::GeometricMean => (bbox.width() * bbox.height()).sqrt(),
            BoxNorm::MaxSide => bbox.width().max(bbox.height()),
        }
    }
}

/// NME in percent over index-corresponding point lists.
pub fn nme_points(pred: &[Vec3], gt: &[Vec3], bbox: &BBox, dims: Dims, norm: BoxNorm) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} predicted vs {} ground-truth points", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("no points to compare"));
    }
    if !(bbox.width() > 0.0 && bbox.height() > 0.0) {
        return Err(Error::Degenerate(format!("bounding box {bbox:?} has no area")));
    }
    let factor = norm.factor(bbox);
    let k = match dims {
        Dims::Xy => 2,
        Dims::Xyz => 3,
    };
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (0..k).map(|i| (p[i] - g[i]).powi(2)).sum::<f64>().sqrt())
        .sum();
    Ok(100.0 * total / pred.len() as f64 / factor)
}

pub fn nme_landmarks(pred: &LandmarkSet, gt: &LandmarkSet, bbox: &BBox, dims: Dims) -> Result<f64> {
    nme_points(pred.points(), gt.points(), bbox, dims, BoxNorm::default())
}

pub fn nme_dense(pred: &PointCloud, gt: &PointCloud, bbox: &BBox, dims: Dims) -> Result<f64> {
    nme_points(pred.points(), gt.points(), bbox, dims, BoxNorm::default())
}

pub const CED_GRID_POINTS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct CedCurve {
    pub sorted_errors: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Fraction of errors `<=` each threshold.
    pub fractions: Vec<f64>,
    pub mean: f64,
    pub cutoff: f64,
    /// Trapezoid area under the curve on `[0, cutoff]`, divided by `cutoff`.
    pub auc: f64,
}

impl CedCurve {
    /// Fraction of errors at or below `t`.
    pub fn fraction_at(&self, t: f64) -> f64 {
        let k = self.sorted_errors.partition_point(|&e| e <= t);
        k as f64 / self.sorted_errors.len() as f64
    }
}

pub fn ced(errors: &[f64], cutoff: f64) -> Result<CedCurve> {
    if errors.is_empty() {
        return Err(Error::Empty("no errors for a CED curve"));
    }
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(Error::invalid(format!("CED cutoff must be positive, got {cutoff}")));
    }
    if errors.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::invalid("errors must be finite and non-negative"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let step = cutoff / (CED_GRID_POINTS - 1) as f64;
    let thresholds: Vec<f64> = (0..CED_GRID_POINTS)
        .map(|i| if i + 1 == CED_GRID_POINTS { cutoff } else { i as f64 * step })
        .collect();
    let fractions: Vec<f64> = thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e <= t) as f64 / n)
        .collect();
    let area: f64 = thresholds
        .windows(2)
        .zip(fractions.windows(2))
        .map(|(t, f)| (t[1] - t[0]) * (f[0] + f[1]) / 2.0)
        .sum();
    Ok(CedCurve {
        mean: sorted.iter().sum::<f64>() / n,
        sorted_errors: sorted,
        thresholds,
        fractions,
        cutoff,
        auc: area / cutoff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(points: Vec<Vec3>) -> LandmarkSet {
        LandmarkSet::new(points).unwrap()
    }

    #[test]
    fn identical_is_zero() {
        let p = lm((0..68).map(|i| [i as f64, 2.0 * i as f64, 1.0]).collect());
        let b = BBox { min: [0.0, 0.0], max: [100.0, 100.0] };
        assert_eq!(nme_landmarks(&p, &p, &b, Dims::Xy).unwrap(), 0.0);
        assert_eq!(nme_landmarks(&p, &p, &b, Dims::Xyz).unwrap(), 0.0);
    }

    #[test]
    fn one_point_offset() {
        let gt = lm(vec![[10.0, 10.0, 0.0]; 68]);
        let mut pts = gt.points().to_vec();
        let d = 6.8;
        pts[5][0] += d;
        let b = BBox { min: [0.0, 0.0], max: [100.0, 100.0] };
        let nme = nme_landmarks(&lm(pts), &gt, &b, Dims::Xy).unwrap();
        assert!((nme - 100.0 * d / (68.0 * 100.0)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_box() {
        let p = lm(vec![[0.0; 3]; 68]);
        let b = BBox { min: [0.0, 0.0], max: [0.0, 5.0] };
        assert!(matches!(nme_landmarks(&p, &p, &b, Dims::Xy), Err(Error::Degenerate(_))));
    }

    #[test]
    fn dense_count_mismatch() {
        let a = PointCloud::new(vec![[0.0; 3]; 3]).unwrap();
        let b = PointCloud::new(vec![[0.0; 3]; 4]).unwrap();
        let bb = BBox { min: [0.0, 0.0], max: [1.0, 1.0] };
        assert!(matches!(nme_dense(&a, &b, &bb, Dims::Xy), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn max_side_norm() {
        let b = BBox { min: [0.0, 0.0], max: [4.0, 9.0] };
        assert_eq!(BoxNorm::GeometricMean.factor(&b), 6.0);
        assert_eq!(BoxNorm::MaxSide.factor(&b), 9.0);
    }

    #[test]
    fn ced_all_zero() {
        let c = ced(&[0.0; 5], 3.0).unwrap();
        assert!(c.fractions.iter().all(|&f| f == 1.0));
        assert!((c.auc - 1.0).abs() < 1e-15);
        assert_eq!(c.mean, 0.0);
    }

    #[test]
    fn ced_two_points() {
        let c = ced(&[3.0, 1.0], 4.0).unwrap();
        assert_eq!(c.thresholds.len(), CED_GRID_POINTS);
        for (t, f) in c.thresholds.iter().zip(&c.fractions) {
            let expect = if *t < 1.0 {
                0.0
            } else if *t < 3.0 {
                0.5
            } else {
                1.0
            };
            assert_eq!(*f, expect, "t = {t}");
        }
        assert_eq!(c.fraction_at(1.0), 0.5);
        assert_eq!(c.mean, 2.0);
        // Area of the step function is (3-1)*0.5 + (4-3)*1 = 2, up to the
        // two grid cells straddling the steps.
        assert!((c.auc - 0.5).abs() < 2.0 / CED_GRID_POINTS as f64);
    }

    #[test]
    fn ced_rejects_bad_input() {
        assert!(matches!(ced(&[], 1.0), Err(Error::Empty(_))));
        assert!(ced(&[1.0], 0.0).is_err());
        assert!(ced(&[f64::NAN], 1.0).is_err());
    }
}
