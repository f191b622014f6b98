//! Datasets of image / position-map pairs.
//!
//! On disk a dataset is a directory:
//!
//! ```text
//! images/NNNN.png        8-bit RGB
//! posmaps/NNNN.uvpm      see `posmap`
//! meta/NNNN.json         {"yaw": .., "bbox": {"min": [x, y], "max": [x, y]}}
//! index.csv              id,image,posmap,meta (paths relative to the root)
//! template/mesh.obj      face template with uv
//! template/landmarks.txt 68 zero-based vertex indices
//! template/segmentation.png  uv-space region labels
//! ```

mod store;
mod synthetic;

pub use store::{ingest_pair, split, Dataset, DatasetEntry, Template, INDEX_FILE};
pub use synthetic::{
    generate_synthetic, landmark_st, region_at, synthesize, FaceShape, FaceTemplate, ShapeRanges, SyntheticData,
    SyntheticSpec,
};
