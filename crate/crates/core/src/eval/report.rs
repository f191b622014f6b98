use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::metrics::{ced, CedCurve};
use crate::error::{Error, Result};

/// Absolute-yaw ranges in degrees; the last bucket includes 90.
pub const YAW_BUCKETS: [(f64, f64); 3] = [(0.0, 30.0), (30.0, 60.0), (60.0, 90.0)];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YawBucket {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` when no sample falls in the bucket.
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub yaws: Vec<f64>,
    pub errors: Vec<f64>,
    pub mean: f64,
    pub buckets: Vec<YawBucket>,
    pub ced: CedCurve,
}

#[derive(Serialize)]
struct Aggregates<'a> {
    count: usize,
    mean: f64,
    buckets: &'a [YawBucket],
    ced_cutoff: f64,
    auc: f64,
}

fn bucket_index(yaw_abs: f64) -> usize {
    if yaw_abs < 30.0 {
        0
    } else if yaw_abs < 60.0 {
        1
    } else {
        2
    }
}

/// Groups per-sample errors by `|yaw|` and aggregates them. `ced_cutoff` sets
/// the range of the cumulative error curve.
pub fn bucket_by_yaw(yaws: &[f64], errors: &[f64], ced_cutoff: f64) -> Result<EvalReport> {
    if yaws.len() != errors.len() {
        return Err(Error::ShapeMismatch(format!("{} yaws for {} errors", yaws.len(), errors.len())));
    }
    if let Some(bad) = yaws.iter().find(|y| !(y.abs() <= 90.0)) {
        return Err(Error::invalid(format!("yaw {bad} outside [-90, 90]")));
    }
    let curve = ced(errors, ced_cutoff)?;
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for (y, e) in yaws.iter().zip(errors) {
        let b = bucket_index(y.abs());
        sums[b] += e;
        counts[b] += 1;
    }
    let buckets = YAW_BUCKETS
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| YawBucket {
            lo,
            hi,
            count: counts[i],
            mean: (counts[i] > 0).then(|| sums[i] / counts[i] as f64),
        })
        .collect();
    Ok(EvalReport {
        yaws: yaws.to_vec(),
        errors: errors.to_vec(),
        mean: errors.iter().sum::<f64>() / errors.len() as f64,
        buckets,
        ced: curve,
    })
}

impl EvalReport {
    pub fn auc(&self) -> f64 {
        self.ced.auc
    }

    /// Per-sample CSV with header `index,yaw,error`.
    pub fn write_samples_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "yaw", "error"])?;
        for (i, (y, e)) in self.yaws.iter().zip(&self.errors).enumerate() {
            out.write_record([i.to_string(), y.to_string(), e.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }

    /// Aggregates as JSON: `count, mean, buckets[{lo,hi,count,mean}], ced_cutoff, auc`.
    pub fn aggregates_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Aggregates {
            count: self.errors.len(),
            mean: self.mean,
            buckets: &self.buckets,
            ced_cutoff: self.ced.cutoff,
            auc: self.ced.auc,
        })?)
    }

    pub fn save(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        let file = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_samples_csv(file)?;
        let json_path = json_path.as_ref();
        std::fs::write(json_path, self.aggregates_json()? + "\n").map_err(|e| Error::io(json_path, e))
    }
}

/// CED as `threshold,fraction` CSV rows.
pub fn write_ced_csv(curve: &CedCurve, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["threshold", "fraction"])?;
    for (t, f) in curve.thresholds.iter().zip(&curve.fractions) {
        out.write_record([t.to_string(), f.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}
