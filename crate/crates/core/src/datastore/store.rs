use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{ColorImage, Sample, SampleMeta};
use crate::error::{Error, Result};
use crate::maskloss::RegionSegmentation;
use crate::mesh::{self, Mesh};
use crate::posmap::{PositionMap, UvIndexTable};

pub const INDEX_FILE: &str = "index.csv";

/// One row of `index.csv`; paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub image: PathBuf,
    pub posmap: PathBuf,
    pub meta: PathBuf,
}

/// Ordered sample references under a root directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
    /// `"all"`, `"train"` or `"val"`.
    pub tag: String,
}

fn read_index(path: &Path) -> Result<Vec<DatasetEntry>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(file).deserialize() {
        out.push(row?);
    }
    Ok(out)
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

impl Dataset {
    /// Opens `root/index.csv`, checking that every referenced file exists.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        Self::open_index(root, INDEX_FILE)
    }

    /// Opens an alternative index file (e.g. a saved split) under `root`.
    pub fn open_index(root: impl AsRef<Path>, index: &str) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let entries = read_index(&root.join(index))?;
        if entries.is_empty() {
            return Err(Error::Empty("dataset index"));
        }
        for e in &entries {
            for p in [&e.image, &e.posmap, &e.meta] {
                let full = root.join(p);
                if !full.is_file() {
                    return Err(Error::io(
                        full,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file is missing"),
                    ));
                }
            }
        }
        let tag = Path::new(index)
            .file_stem()
            .and_then(|s| s.to_str())
            .filter(|s| *s != "index")
            .unwrap_or("all")
            .to_string();
        Ok(Dataset { root, entries, tag })
    }

    /// Writes template, samples and index under `root`.
    pub fn create(
        root: impl AsRef<Path>,
        template: &Mesh,
        segmentation: &RegionSegmentation,
        samples: &[Sample],
    ) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        if let Some(first) = samples.first() {
            if let Some(bad) = samples.iter().find(|s| s.size() != first.size()) {
                return Err(Error::ShapeMismatch(format!(
                    "samples of size {} and {}",
                    first.size(),
                    bad.size()
                )));
            }
        }
        for sub in ["images", "posmaps", "meta", "template"] {
            ensure_dir(&root.join(sub))?;
        }
        Template::save(&root, template, segmentation)?;
        let mut ds = Dataset {
            root,
            entries: Vec::with_capacity(samples.len()),
            tag: "all".into(),
        };
        for (i, s) in samples.iter().enumerate() {
            ds.push_sample(&format!("{i:04}"), s)?;
        }
        ds.save_index()?;
        Ok(ds)
    }

    /// Writes one sample's files and appends its entry (the index is not saved).
    pub fn push_sample(&mut self, id: &str, sample: &Sample) -> Result<()> {
        let entry = DatasetEntry {
            id: id.to_string(),
            image: Path::new("images").join(format!("{id}.png")),
            posmap: Path::new("posmaps").join(format!("{id}.uvpm")),
            meta: Path::new("meta").join(format!("{id}.json")),
        };
        let img = self.root.join(&entry.image);
        sample.image.to_rgb8().save(&img)?;
        sample.posmap.save(self.root.join(&entry.posmap))?;
        let meta = self.root.join(&entry.meta);
        fs::write(&meta, serde_json::to_string_pretty(&sample.meta)?).map_err(|e| Error::io(&meta, e))?;
        self.entries.push(entry);
        Ok(())
    }

    pub fn save_index(&self) -> Result<()> {
        self.save_index_as(INDEX_FILE)
    }

    pub fn save_index_as(&self, name: &str) -> Result<()> {
        let path = self.root.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_sample(&self, i: usize) -> Result<Sample> {
        let e = self.entries.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            limit: self.entries.len(),
        })?;
        let meta_path = self.root.join(&e.meta);
        let text = fs::read_to_string(&meta_path).map_err(|err| Error::io(&meta_path, err))?;
        let meta: SampleMeta = serde_json::from_str(&text)?;
        ingest_pair(self.root.join(&e.image), self.root.join(&e.posmap), meta)
    }

    /// Loads every sample, checking that all share one resolution.
    pub fn load_all(&self) -> Result<Vec<Sample>> {
        let out: Vec<Sample> = (0..self.len()).map(|i| self.load_sample(i)).collect::<Result<_>>()?;
        if let Some(first) = out.first() {
            if let Some(bad) = out.iter().find(|s| s.size() != first.size()) {
                return Err(Error::ShapeMismatch(format!(
                    "dataset mixes resolutions {} and {}",
                    first.size(),
                    bad.size()
                )));
            }
        }
        Ok(out)
    }

    pub fn template(&self) -> Result<Template> {
        Template::load(&self.root)
    }
}

/// Template mesh, uv-space segmentation and landmark table of a dataset.
#[derive(Debug, Clone)]
pub struct Template {
    pub mesh: Mesh,
    pub segmentation: RegionSegmentation,
    pub table: UvIndexTable,
}

impl Template {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let dir = root.as_ref().join("template");
        let indices = mesh::load_landmark_indices(dir.join("landmarks.txt"))?;
        let mesh = mesh::load_mesh(dir.join("mesh.obj"))?.with_landmarks(indices)?;
        let segmentation = RegionSegmentation::load_png(dir.join("segmentation.png"))?;
        let table = UvIndexTable::from_mesh(&mesh, segmentation.size())?;
        Ok(Template {
            mesh,
            segmentation,
            table,
        })
    }

    fn save(root: &Path, mesh: &Mesh, segmentation: &RegionSegmentation) -> Result<()> {
        let dir = root.join("template");
        ensure_dir(&dir)?;
        mesh::save_mesh(mesh, dir.join("mesh.obj"))?;
        let indices = mesh.landmark_indices().ok_or(Error::Empty("template landmarks"))?;
        mesh::save_landmark_indices(indices, dir.join("landmarks.txt"))?;
        segmentation.save_png(dir.join("segmentation.png"))
    }
}

/// Seeded shuffle into two disjoint parts; the first gets `round(n * f0)` entries.
pub fn split(dataset: &Dataset, fractions: (f64, f64), seed: u64) -> Result<(Dataset, Dataset)> {
    let (f0, f1) = fractions;
    if !(f0 >= 0.0 && f1 >= 0.0 && (f0 + f1 - 1.0).abs() <= 1e-9) {
        return Err(Error::invalid(format!("split fractions {f0} and {f1} must be non-negative and sum to 1")));
    }
    let mut entries = dataset.entries.clone();
    entries.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n0 = ((entries.len() as f64) * f0).round() as usize;
    let rest = entries.split_off(n0.min(entries.len()));
    let part = |entries, tag: &str| Dataset {
        root: dataset.root.clone(),
        entries,
        tag: tag.into(),
    };
    Ok((part(entries, "train"), part(rest, "val")))
}

/// Loads an externally produced image / position-map pair.
pub fn ingest_pair(image: impl AsRef<Path>, posmap: impl AsRef<Path>, meta: SampleMeta) -> Result<Sample> {
    let img = image::open(image.as_ref())?.to_rgb8();
    let map = PositionMap::load(posmap)?;
    Sample::new(ColorImage::from_rgb8(&img), map, meta)
}
