//! UV position maps for joint 3D face reconstruction and dense alignment.
//!
//! A face surface is parameterized once into the unit square, after which
//! every posed 3D face becomes a square image whose pixels store `(x, y, z)`.
//! The modules here cover the full pipeline around that representation:
//!
//! - [`mesh`]: triangle meshes, point clouds, landmark sets and the text format.
//! - [`uv`]: Tutte embedding into the unit square (cotangent, uniform or
//!   mean-value weights) backed by [`sparse`].
//! - [`posmap`]: baking meshes into position maps and reading them back.
//! - [`maskloss`]: region segmentation, weight masks and the weighted loss.
//! - [`augment`]: similarity-transform augmentation that keeps labels consistent.
//! - [`eval`]: NME, CED/AUC, ICP registration and reconstruction error.
//! - [`datastore`]: synthetic face datasets and on-disk layout.
//!
//! # Coordinates
//!
//! All geometry uses a left-handed frame anchored to the image: the origin is
//! the upper-left image corner, `+x` points right, `+y` points down and `+z`
//! points toward the viewer. Pixel `(row, col)` covers `[col, col+1) x [row, row+1)`.

pub mod augment;
pub mod datastore;
pub mod error;
pub mod eval;
pub mod geom;
pub mod maskloss;
pub mod mesh;
pub mod posmap;
pub mod sparse;
pub mod uv;

pub use error::{Error, Result};
pub use mesh::{LandmarkSet, Mesh, PointCloud, NUM_LANDMARKS};
pub use posmap::{PositionMap, UvIndexTable};
