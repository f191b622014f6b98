use nalgebra::{Matrix3, Vector3};

use super::kdtree::KdTree;
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::mesh::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let q = self.rotation * Vector3::from(p) + self.translation;
        [q.x, q.y, q.z]
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `max |R^T R - I|` and `|det R - 1|`.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        (e, (self.rotation.determinant() - 1.0).abs())
    }
}

/// Least-squares `dst ~ scale * R src + t` over paired points. The scale is
/// fixed to 1 unless `with_scale` is set.
pub fn fit_rigid(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<(RigidTransform, f64)> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 paired points, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len() as f64;
    let cs: Vector3<f64> = src.iter().map(|p| Vector3::from(*p)).sum::<Vector3<f64>>() / n;
    let cd: Vector3<f64> = dst.iter().map(|p| Vector3::from(*p)).sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut var_src = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let a = Vector3::from(*s) - cs;
        let b = Vector3::from(*d) - cd;
        h += a * b.transpose();
        var_src += a.norm_squared();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    let rotation = v * d * u.transpose();
    let scale = if with_scale {
        if var_src <= 0.0 {
            return Err(Error::Degenerate("source points coincide".into()));
        }
        let sv = svd.singular_values;
        (sv[0] + sv[1] + sign * sv[2]) / var_src
    } else {
        1.0
    };
    let translation = cd - scale * rotation * cs;
    Ok((RigidTransform { rotation, translation }, scale))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpConfig {
    pub max_iters: usize,
    /// Stop once the relative drop in mean squared distance falls below this.
    pub rel_tol: f64,
    /// Also estimate a uniform scale.
    pub with_scale: bool,
    /// Start from the translation aligning the centroids.
    pub align_centroids: bool,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iters: 100,
            rel_tol: 1e-6,
            with_scale: false,
            align_centroids: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Maps `pred` onto `gt` (after multiplying by `scale`).
    pub transform: RigidTransform,
    pub scale: f64,
    /// Nearest `gt` index for every transformed `pred` point.
    pub correspondences: Vec<usize>,
    /// Squared distance of every correspondence.
    pub squared_distances: Vec<f64>,
    /// Mean squared correspondence distance after each accepted iteration.
    pub errors: Vec<f64>,
}

impl IcpResult {
    pub fn iterations(&self) -> usize {
        self.errors.len()
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let q = self.transform.rotation * Vector3::from(p) * self.scale + self.transform.translation;
        [q.x, q.y, q.z]
    }
}

fn check_spread(points: &[Vec3], what: &str) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("{what} has {} points, need 3", points.len())));
    }
    let n = points.len() as f64;
    let c: Vector3<f64> = points.iter().map(|p| Vector3::from(*p)).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let a = Vector3::from(*p) - c;
        cov += a * a.transpose();
    }
    let sv = cov.singular_values();
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[0] > 0.0) || s[1] <= 1e-12 * s[0] {
        return Err(Error::Degenerate(format!("{what} is collinear or coincident")));
    }
    Ok(())
}

struct Matching {
    corr: Vec<usize>,
    sq: Vec<f64>,
    mean: f64,
}

fn match_points(tree: &KdTree, moved: &[Vec3]) -> Matching {
    let mut corr = Vec::with_capacity(moved.len());
    let mut sq = Vec::with_capacity(moved.len());
    for &p in moved {
        let (i, d) = tree.nearest(p).expect("tree is non-empty");
        corr.push(i);
        sq.push(d);
    }
    let mean = sq.iter().sum::<f64>() / sq.len() as f64;
    Matching { corr, sq, mean }
}

/// Iterative closest point aligning `pred` to `gt`.
///
/// The recorded error sequence never increases: a fit that would raise the
/// mean squared distance (possible only through rounding) ends the run.
pub fn icp(pred: &PointCloud, gt: &PointCloud, cfg: &IcpConfig) -> Result<IcpResult> {
    check_spread(pred.points(), "predicted cloud")?;
    check_spread(gt.points(), "ground-truth cloud")?;
    let tree = KdTree::new(gt.points());

    let mut transform = RigidTransform::identity();
    if cfg.align_centroids {
        let mean = |pts: &[Vec3]| -> Vector3<f64> {
            pts.iter().map(|p| Vector3::from(*p)).sum::<Vector3<f64>>() / pts.len() as f64
        };
        transform.translation = mean(gt.points()) - mean(pred.points());
    }
    let mut scale = 1.0;
    let move_all = |t: &RigidTransform, s: f64| -> Vec<Vec3> {
        pred.points()
            .iter()
            .map(|p| {
                let q = t.rotation * Vector3::from(*p) * s + t.translation;
                [q.x, q.y, q.z]
            })
            .collect()
    };

    let mut current = match_points(&tree, &move_all(&transform, scale));
    let mut errors = vec![current.mean];
    while errors.len() < cfg.max_iters.max(1) && current.mean > 0.0 {
        let targets: Vec<Vec3> = current.corr.iter().map(|&i| gt.points()[i]).collect();
        let (t, s) = fit_rigid(pred.points(), &targets, cfg.with_scale)?;
        let next = match_points(&tree, &move_all(&t, s));
        if next.mean > current.mean {
            break;
        }
        let improvement = (current.mean - next.mean) / current.mean;
        transform = t;
        scale = s;
        current = next;
        errors.push(current.mean);
        if improvement <= cfg.rel_tol {
            break;
        }
    }
    Ok(IcpResult {
        transform,
        scale,
        correspondences: current.corr,
        squared_distances: current.sq,
        errors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReconErrorKind {
    /// Mean Euclidean correspondence distance over the interocular distance.
    #[default]
    MeanDistance,
    /// Mean squared distance over the squared interocular distance.
    MeanSquared,
}

/// Reconstruction error in percent: align `pred` to `gt` with ICP, then
/// normalize the final correspondence distances by the 3D outer
/// interocular distance of the ground truth.
pub fn recon_error(
    pred: &PointCloud,
    gt: &PointCloud,
    eye_left: Vec3,
    eye_right: Vec3,
    cfg: &IcpConfig,
    kind: ReconErrorKind,
) -> Result<f64> {
    let iod = geom::dist(eye_left, eye_right);
    if !(iod > 0.0) {
        return Err(Error::Degenerate("outer eye corners coincide".into()));
    }
    let res = icp(pred, gt, cfg)?;
    let n = res.squared_distances.len() as f64;
    Ok(match kind {
        ReconErrorKind::MeanDistance => 100.0 * res.squared_distances.iter().map(|d| d.sqrt()).sum::<f64>() / n / iod,
        ReconErrorKind::MeanSquared => 100.0 * res.squared_distances.iter().sum::<f64>() / n / (iod * iod),
    })
}
