use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use facemap_core::augment::{self, Sample, SampleOptions};
use facemap_core::datastore::{generate_synthetic, split, Dataset, SyntheticSpec, Template};
use facemap_core::eval::{self, bucket_by_yaw, BoxNorm, Dims, IcpConfig, ReconErrorKind};
use facemap_core::maskloss::{build_mask, LossConfig, NormKind, Reduction, Region, RegionSegmentation};
use facemap_core::mesh::{load_mesh, save_mesh, PointCloud};
use facemap_core::posmap::{self, landmarks_from_map};
use facemap_core::sparse::SolverSettings;
use facemap_core::uv::{flipped_triangles, tutte_embed_with, LaplacianWeights};
use facemap_core::{Error, PositionMap, Result, UvIndexTable};
use facemap_nn::optim::LrSchedule;
use facemap_nn::{load_checkpoint, save_checkpoint, train, PrnArchitecture, PrnNet, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::*;
use crate::plot;

/// One-based iBUG numbers of the outer eye corners.
pub const OUTER_EYE_CORNERS: (usize, usize) = (37, 46);

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Param(a) => param(&a),
        Command::Bake(a) => bake(&a),
        Command::Unbake(a) => unbake(&a),
        Command::Mask(a) => mask(&a),
        Command::Gen(a) => gen(&a),
        Command::Augment(a) => augment(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Predict(a) => predict(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::CedPlot(a) => ced_plot(&a),
    }
}

pub fn param(a: &ParamArgs) -> Result<String> {
    let mesh = load_mesh(&a.mesh)?;
    let scheme = match a.weights {
        WeightScheme::Conformal => LaplacianWeights::Conformal,
        WeightScheme::Uniform => LaplacianWeights::Uniform,
        WeightScheme::MeanValue => LaplacianWeights::MeanValue,
    };
    let (out, report) = tutte_embed_with(&mesh, scheme, &SolverSettings::default())?;
    let flipped = flipped_triangles(&out)?;
    save_mesh(&out, &a.output)?;
    Ok(format!(
        "vertices={} residual={:.3e} solver={:?} iterations={} flipped={flipped}",
        out.vertices().len(),
        report.residual,
        report.solve.method,
        report.solve.iterations
    ))
}

pub fn bake(a: &BakeArgs) -> Result<String> {
    let mesh = load_mesh(&a.mesh)?;
    if mesh.uv().is_none() {
        return Err(invalid(format!("{} has no vt coordinates; run `facemap param` first", a.mesh.display())));
    }
    let map = posmap::bake(&mesh, a.size)?;
    map.save(&a.output)?;
    Ok(format!("size={} valid={}", a.size, map.valid_count()))
}

pub fn format_point_cloud(cloud: &PointCloud) -> String {
    let mut out = String::new();
    for p in cloud.points() {
        let _ = writeln!(out, "v {} {} {}", p[0], p[1], p[2]);
    }
    out
}

pub fn unbake(a: &UnbakeArgs) -> Result<String> {
    let cloud = posmap::unbake(&PositionMap::load(&a.posmap)?);
    write_file(&a.output, format_point_cloud(&cloud))?;
    Ok(format!("points={}", cloud.len()))
}

pub fn mask(a: &MaskArgs) -> Result<String> {
    let seg = RegionSegmentation::load_png(&a.segmentation)?;
    let m = build_mask(&seg, &LossConfig::with_ratio(a.ratio));
    m.save_png(&a.output)?;
    let positive = m.weights().iter().filter(|&&w| w > 0.0).count();
    Ok(format!("size={} ratio={} positive={positive}", m.size(), a.ratio))
}

pub fn gen(a: &GenArgs) -> Result<String> {
    let spec = SyntheticSpec {
        count: a.count,
        resolution: a.resolution,
        grid: a.grid,
        yaw_max: a.yaw_max,
        seed: a.seed,
        ..Default::default()
    };
    let ds = generate_synthetic(&spec, &a.out)?;
    let mut msg = format!("samples={} resolution={}", ds.len(), a.resolution);
    if let Some(f) = a.val_fraction {
        let (tr, va) = split(&ds, (1.0 - f, f), a.seed)?;
        tr.save_index_as("train.csv")?;
        va.save_index_as("val.csv")?;
        let _ = write!(msg, " train={} val={}", tr.len(), va.len());
    }
    Ok(msg)
}

pub fn augment(a: &AugmentArgs) -> Result<String> {
    if a.copies == 0 {
        return Err(invalid("--copies must be at least 1"));
    }
    let ds = Dataset::open_index(&a.data, &a.index)?;
    let template = ds.template()?;
    let samples = ds.load_all()?;
    let opts = SampleOptions {
        occlusion: a.occlusion,
        image_size: samples[0].size(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut out = Vec::with_capacity(samples.len() * a.copies);
    for _ in 0..a.copies {
        for s in &samples {
            out.push(augment::apply(s, &augment::sample_params(rng.gen(), &opts))?);
        }
    }
    let res = Dataset::create(&a.out, &template.mesh, &template.segmentation, &out)?;
    Ok(format!("samples={}", res.len()))
}

fn loss_config(a: &TrainArgs) -> LossConfig {
    LossConfig {
        ratio: a.ratio,
        norm: match a.norm {
            NormArg::Squared => NormKind::SquaredL2,
            NormArg::L2 => NormKind::L2,
        },
        reduction: match a.reduction {
            ReductionArg::Sum => Reduction::Sum,
            ReductionArg::Mean => Reduction::MeanPositive,
        },
    }
}

pub fn train_cmd(a: &TrainArgs) -> Result<String> {
    let ds = Dataset::open_index(&a.data, &a.index)?;
    let template = ds.template()?;
    let samples = ds.load_all()?;
    let size = samples[0].size();
    let mut net = match &a.init {
        Some(path) => load_checkpoint(path)?,
        None => PrnNet::new(
            PrnArchitecture {
                input_size: size,
                base: a.base,
                bottleneck: a.bottleneck,
            },
            a.seed,
        )?,
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: LrSchedule {
            initial: a.lr,
            factor: 0.5,
            period: a.halving_period,
        },
        loss: loss_config(a),
        seed: a.seed,
        augment: a.augment,
        occlusion: a.occlusion,
        max_steps: a.max_steps,
    };
    let report = train(&mut net, &samples, &template.segmentation, &cfg, |s| {
        if s.step % 50 == 0 {
            eprintln!("step {} epoch {} lr {:e} loss {:.6e}", s.step, s.epoch, s.lr, s.loss);
        }
    })?;
    save_checkpoint(&net, &a.out)?;
    let curve = a.loss_csv.clone().unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
    write_file(&curve, report.to_csv())?;
    let losses = report.losses();
    Ok(format!(
        "params={} steps={} initial_loss={:.6e} final_loss={:.6e}",
        net.num_params(),
        losses.len(),
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN)
    ))
}

pub fn predict(a: &PredictArgs) -> Result<String> {
    if a.batch_size == 0 {
        return Err(invalid("--batch-size must be at least 1"));
    }
    let net = load_checkpoint(&a.model)?;
    let ds = Dataset::open_index(&a.data, &a.index)?;
    let dir = a.out.join("posmaps");
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut written = 0;
    for start in (0..ds.len()).step_by(a.batch_size) {
        let end = (start + a.batch_size).min(ds.len());
        let samples: Vec<Sample> = (start..end).map(|i| ds.load_sample(i)).collect::<Result<_>>()?;
        let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
        for (entry, map) in ds.entries[start..end].iter().zip(net.predict(&images)?) {
            map.save(a.out.join(&entry.posmap))?;
            written += 1;
        }
    }
    Ok(format!("predictions={written}"))
}

/// Index-corresponding NME of the 68 landmarks read from both maps at the
/// template's landmark pixels.
pub fn landmark_nme(
    pred: &PositionMap,
    gt: &Sample,
    table: &UvIndexTable,
    dims: Dims,
    norm: BoxNorm,
) -> Result<f64> {
    let p = landmarks_from_map(pred, table)?;
    let g = landmarks_from_map(&gt.posmap, table)?;
    eval::nme_points(p.points(), g.points(), &gt.meta.bbox, dims, norm)
}

fn check_sizes(pred: &PositionMap, gt: &PositionMap) -> Result<()> {
    if pred.size() != gt.size() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {0}x{0} for ground truth {1}x{1}",
            pred.size(),
            gt.size()
        )));
    }
    Ok(())
}

/// NME over every valid ground-truth pixel.
pub fn dense_nme(pred: &PositionMap, gt: &Sample, dims: Dims, norm: BoxNorm) -> Result<f64> {
    check_sizes(pred, &gt.posmap)?;
    let idx: Vec<usize> = (0..gt.posmap.valid().len()).filter(|&i| gt.posmap.valid()[i]).collect();
    let p: Vec<_> = idx.iter().map(|&i| pred.data()[i]).collect();
    let g: Vec<_> = idx.iter().map(|&i| gt.posmap.data()[i]).collect();
    eval::nme_points(&p, &g, &gt.meta.bbox, dims, norm)
}

/// Reconstruction error over the face pixels (neck and background excluded).
pub fn recon_nme(
    pred: &PositionMap,
    gt: &Sample,
    template: &Template,
    icp: &IcpConfig,
    kind: ReconErrorKind,
) -> Result<f64> {
    check_sizes(pred, &gt.posmap)?;
    if template.segmentation.size() != gt.posmap.size() {
        return Err(Error::ShapeMismatch("template segmentation and position map sizes differ".into()));
    }
    let face: Vec<usize> = template
        .segmentation
        .labels()
        .iter()
        .enumerate()
        .filter(|&(i, l)| gt.posmap.valid()[i] && !matches!(l, Region::Background | Region::Neck))
        .map(|(i, _)| i)
        .collect();
    let p = PointCloud::new(face.iter().map(|&i| pred.data()[i]).collect())?;
    let g = PointCloud::new(face.iter().map(|&i| gt.posmap.data()[i]).collect())?;
    let lm = landmarks_from_map(&gt.posmap, &template.table)?;
    let (l, r) = OUTER_EYE_CORNERS;
    eval::recon_error(&p, &g, lm.number(l), lm.number(r), icp, kind)
}

pub fn eval_cmd(a: &EvalArgs) -> Result<String> {
    let ds = Dataset::open_index(&a.gt, &a.index)?;
    let template = ds.template()?;
    let dims = match a.dims {
        DimsArg::Xy => Dims::Xy,
        DimsArg::Xyz => Dims::Xyz,
    };
    let norm = match a.box_norm {
        BoxNormArg::GeometricMean => BoxNorm::GeometricMean,
        BoxNormArg::MaxSide => BoxNorm::MaxSide,
    };
    let icp = IcpConfig {
        max_iters: a.icp_iters,
        with_scale: a.icp_scale,
        ..Default::default()
    };
    let kind = match a.recon {
        ReconArg::MeanDistance => ReconErrorKind::MeanDistance,
        ReconArg::MeanSquared => ReconErrorKind::MeanSquared,
    };
    let mut yaws = Vec::with_capacity(ds.len());
    let mut errors = Vec::with_capacity(ds.len());
    for (i, entry) in ds.entries.iter().enumerate() {
        let gt = ds.load_sample(i)?;
        let pred = PositionMap::load(a.pred.join(&entry.posmap))?;
        let e = match a.mode {
            EvalMode::Landmarks => {
                check_sizes(&pred, &gt.posmap)?;
                landmark_nme(&pred, &gt, &template.table, dims, norm)?
            }
            EvalMode::Dense => dense_nme(&pred, &gt, dims, norm)?,
            EvalMode::Recon => recon_nme(&pred, &gt, &template, &icp, kind)?,
        };
        yaws.push(gt.meta.yaw);
        errors.push(e);
    }
    let report = bucket_by_yaw(&yaws, &errors, a.cutoff)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    report.save(with_suffix(&a.out, ".csv"), with_suffix(&a.out, ".json"))?;
    Ok(format!("samples={} mean={:.6} auc={:.6}", errors.len(), report.mean, report.auc()))
}

/// The `error` column of a per-sample report.
pub fn read_report_errors(path: &Path) -> Result<Vec<f64>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "error")
        .ok_or_else(|| invalid(format!("{} has no `error` column", path.display())))?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = rec.get(col).unwrap_or("");
        out.push(field.parse().map_err(|_| Error::Parse {
            line: line + 2,
            message: format!("bad error value `{field}` in {}", path.display()),
        })?);
    }
    Ok(out)
}

pub fn ced_plot(a: &CedPlotArgs) -> Result<String> {
    if !a.labels.is_empty() && a.labels.len() != a.reports.len() {
        return Err(invalid(format!("{} labels for {} reports", a.labels.len(), a.reports.len())));
    }
    let mut series = Vec::with_capacity(a.reports.len());
    for (i, path) in a.reports.iter().enumerate() {
        let label = a.labels.get(i).cloned().unwrap_or_else(|| {
            path.file_stem().map_or_else(|| format!("report{i}"), |s| s.to_string_lossy().into_owned())
        });
        series.push((label, eval::ced(&read_report_errors(path)?, a.cutoff)?));
    }
    write_file(&a.out, plot::ced_svg(&series))?;
    let csv_path = a.out.with_extension("csv");
    write_file(&csv_path, plot::ced_csv(&series))?;
    let summary: Vec<String> = series
        .iter()
        .map(|(l, c)| format!("{l}: mean={:.4} auc={:.4}", c.mean, c.auc))
        .collect();
    Ok(summary.join("\n"))
}
