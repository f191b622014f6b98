//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p facemap-cli --test acceptance`; pass criterion
//! numbers (`-- 1 4 9`) to run a subset. Exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use facemap_cli::commands::landmark_nme;
use facemap_core::augment::{apply, sample_params, Sample, SampleOptions};
use facemap_core::datastore::{synthesize, FaceShape, FaceTemplate, SyntheticData, SyntheticSpec};
use facemap_core::eval::{bucket_by_yaw, ced, icp, nme_points, BoxNorm, Dims, IcpConfig, KdTree, YAW_BUCKETS};
use facemap_core::maskloss::{
    build_mask, weighted_loss, weighted_loss_grad, LossConfig, NormKind, Reduction, Region, RegionSegmentation,
    WeightRatio,
};
use facemap_core::mesh::{bbox_diagonal, BBox, Mesh, PointCloud};
use facemap_core::posmap::{landmarks_from_map, resample_error};
use facemap_core::sparse::SolverSettings;
use facemap_core::uv::{flipped_triangles, tutte_embed_with, LaplacianWeights, RESIDUAL_LIMIT};
use facemap_core::PositionMap;
use facemap_nn::optim::LrSchedule;
use facemap_nn::prn::images_to_tensor;
use facemap_nn::train::{evaluate_loss, loss_and_grads};
use facemap_nn::{train, Conv2dSpec, Graph, PrnArchitecture, PrnNet, Tensor, TrainConfig, Var, DECODER_LAYERS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Vec3 = [f64; 3];
type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- 1 and 2

const BIG_GRID: usize = 213;

fn big_face_mesh() -> (Mesh, Duration) {
    let start = Instant::now();
    let template = FaceTemplate::new(BIG_GRID).expect("template");
    let mesh = template
        .pose(&FaceShape::NEUTRAL, 15.0, 0.4 * 256.0, [128.0, 128.0])
        .expect("pose");
    (mesh, start.elapsed())
}

fn c1_geometry_round_trip() -> Outcome {
    let (mesh, embed_time) = big_face_mesh();
    let start = Instant::now();
    let diag = bbox_diagonal(mesh.vertices());
    let mut errs = Vec::new();
    for size in [32, 64, 128, 256] {
        errs.push(resample_error(&mesh, size).map_err(|e| e.to_string())?.mean / diag);
    }
    let elapsed = start.elapsed();
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    let pct: Vec<String> = errs.iter().map(|e| format!("{:.4}%", 100.0 * e)).collect();
    check(
        mesh.vertices().len() >= 45_000 && errs[3] < 0.01 && monotone && elapsed < Duration::from_secs(30),
        format!(
            "{} vertices; mean error / diagonal at 32,64,128,256 = {}; bake+unbake {:.2}s (embedding {:.2}s)",
            mesh.vertices().len(),
            pct.join(", "),
            elapsed.as_secs_f64(),
            embed_time.as_secs_f64()
        ),
    )
}

/// Jittered `k x k` grid bent onto a disk, random diagonals, bumpy height.
fn random_disk_mesh(seed: u64) -> Mesh {
    let mut rng = rng(seed);
    let k = rng.gen_range(4..=16);
    let cell = 2.0 / (k - 1) as f64;
    let bumps: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.2..0.8),
            ]
        })
        .collect();
    let mut verts = Vec::with_capacity(k * k);
    for r in 0..k {
        for c in 0..k {
            let mut x = -1.0 + c as f64 * cell;
            let mut y = -1.0 + r as f64 * cell;
            if r > 0 && r + 1 < k && c > 0 && c + 1 < k {
                x += rng.gen_range(-0.3..0.3) * cell;
                y += rng.gen_range(-0.3..0.3) * cell;
            }
            let (dx, dy) = (x * (1.0 - y * y / 2.0).sqrt(), y * (1.0 - x * x / 2.0).sqrt());
            let z: f64 = bumps
                .iter()
                .map(|b| b[2] * (-((dx - b[0]).powi(2) + (dy - b[1]).powi(2)) / (b[3] * b[3])).exp())
                .sum();
            verts.push([dx, dy, z]);
        }
    }
    let mut tris = Vec::new();
    for r in 0..k - 1 {
        for c in 0..k - 1 {
            let i = r * k + c;
            if rng.gen_bool(0.5) {
                tris.push([i, i + 1, i + k + 1]);
                tris.push([i, i + k + 1, i + k]);
            } else {
                tris.push([i, i + 1, i + k]);
                tris.push([i + 1, i + k + 1, i + k]);
            }
        }
    }
    Mesh::new(verts, tris).expect("valid grid mesh")
}

fn c2_tutte() -> Outcome {
    let settings = SolverSettings::default();
    let mut worst: f64 = 0.0;
    let mut flips = 0;
    for seed in 0..50 {
        let mesh = random_disk_mesh(seed);
        for scheme in [LaplacianWeights::Uniform, LaplacianWeights::MeanValue, LaplacianWeights::Conformal] {
            let (out, rep) = tutte_embed_with(&mesh, scheme, &settings).map_err(|e| format!("seed {seed}: {e}"))?;
            worst = worst.max(rep.residual);
            if scheme != LaplacianWeights::Conformal {
                flips += flipped_triangles(&out).map_err(|e| e.to_string())?;
            }
        }
    }
    let template = FaceTemplate::new(BIG_GRID).map_err(|e| e.to_string())?;
    let (_, big) = tutte_embed_with(template.mesh(), LaplacianWeights::Conformal, &settings).map_err(|e| e.to_string())?;
    worst = worst.max(big.residual);
    check(
        worst <= RESIDUAL_LIMIT && flips == 0,
        format!(
            "max relative residual {worst:.2e} (50 disks x 3 schemes + {}-vertex face); flipped uniform/mean-value triangles: {flips}",
            template.mesh().vertices().len()
        ),
    )
}

// ---------------------------------------------------------------- 3 and 4

fn random_map(rng: &mut impl Rng, size: usize, scale: f64) -> PositionMap {
    let data = (0..size * size)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-scale..scale)))
        .collect();
    PositionMap::from_parts(size, data, vec![true; size * size]).expect("map")
}

fn naive_loss(p: &PositionMap, q: &PositionMap, seg: &RegionSegmentation, cfg: &LossConfig) -> f64 {
    let n = p.size();
    let mut total = 0.0;
    let mut positive = 0usize;
    for row in 0..n {
        for col in 0..n {
            let w = cfg.ratio.weight(seg.labels()[row * n + col]);
            if w > 0.0 {
                positive += 1;
            }
            let (a, b) = (p.get(row, col), q.get(row, col));
            let sq = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
            total += w * match cfg.norm {
                NormKind::SquaredL2 => sq,
                NormKind::L2 => sq.sqrt(),
            };
        }
    }
    match cfg.reduction {
        Reduction::Sum => total,
        Reduction::MeanPositive => total / positive.max(1) as f64,
    }
}

fn loss_configs() -> Vec<LossConfig> {
    let mut out = Vec::new();
    for ratio in [WeightRatio::DEFAULT, WeightRatio::UNIFORM, WeightRatio([2.5, 0.0, 7.0, 1.0])] {
        for norm in [NormKind::SquaredL2, NormKind::L2] {
            for reduction in [Reduction::Sum, Reduction::MeanPositive] {
                out.push(LossConfig { ratio, norm, reduction });
            }
        }
    }
    out
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Largest relative error of reverse-mode against central differences with
/// step `h` over every element of every input.
fn op_grad_error(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    const H: f64 = 1e-5;
    let eval = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let vs: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let root = f(&mut g, &vs);
        (g, vs, root)
    };
    let (g, vs, root) = eval(inputs);
    let grads = g.backward(root).expect("backward");
    let mut worst: f64 = 0.0;
    for (i, v) in vs.iter().enumerate() {
        let analytic = grads.get(*v).expect("gradient");
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let (gp, _, rp) = eval(&plus);
            let (gm, _, rm) = eval(&minus);
            let numeric = (gp.value(rp).item() - gm.value(rm).item()) / (2.0 * H);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

fn project(g: &mut Graph, y: Var, seed: u64) -> Var {
    let c = random_tensor(&mut rng(seed), g.value(y).shape());
    g.dot(y, c).expect("dot")
}

fn op_level_errors() -> Vec<(&'static str, f64)> {
    let mut r = rng(31);
    let mut out = Vec::new();
    for (k, s, pad, hw) in [(4, 1, [1, 2, 1, 2], 5), (4, 2, [1, 1, 1, 1], 6), (3, 2, [0, 1, 1, 0], 7)] {
        let spec = Conv2dSpec::new(k, s, pad);
        let xs = [random_tensor(&mut r, &[2, 2, hw, hw]), random_tensor(&mut r, &[3, 2, k, k]), random_tensor(&mut r, &[3])];
        out.push((
            "conv2d",
            op_grad_error(&xs, &|g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), spec).unwrap();
                project(g, y, 1)
            }),
        ));
        let xs = [random_tensor(&mut r, &[2, 2, 3, 3]), random_tensor(&mut r, &[2, 3, k, k]), random_tensor(&mut r, &[3])];
        out.push((
            "conv_transpose2d",
            op_grad_error(&xs, &|g, v| {
                let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), spec).unwrap();
                project(g, y, 2)
            }),
        ));
    }
    let away = Tensor::from_fn(vec![1, 2, 4, 4], |_| {
        let v: f64 = r.gen_range(0.05..1.0);
        if r.gen_bool(0.5) {
            v
        } else {
            -v
        }
    });
    out.push((
        "relu",
        op_grad_error(&[away], &|g, v| {
            let y = g.relu(v[0]);
            project(g, y, 3)
        }),
    ));
    let x = Tensor::from_fn(vec![1, 2, 4, 4], |_| r.gen_range(-6.0..6.0));
    let other = random_tensor(&mut r, &[1, 2, 4, 4]);
    out.push((
        "sigmoid",
        op_grad_error(&[x.clone()], &|g, v| {
            let y = g.sigmoid(v[0]);
            project(g, y, 4)
        }),
    ));
    out.push((
        "scale",
        op_grad_error(&[x.clone()], &|g, v| {
            let y = g.scale(v[0], 1.7);
            project(g, y, 5)
        }),
    ));
    out.push((
        "add",
        op_grad_error(&[x, other], &|g, v| {
            let y = g.add(v[0], v[1]).unwrap();
            project(g, y, 6)
        }),
    ));
    let (n, s) = (2, 4);
    let x = Tensor::from_fn(vec![n, 3, s, s], |_| r.gen_range(0.0..4.0));
    let targets: Vec<f64> = (0..n * 3 * s * s).map(|_| r.gen_range(0.0..4.0)).collect();
    let weights: Vec<f64> = (0..s * s).map(|i| [0.0, 3.0, 4.0, 16.0][i % 4]).collect();
    for cfg in loss_configs() {
        out.push((
            "map_loss",
            op_grad_error(&[x.clone()], &|g, v| g.map_loss(v[0], &targets, &weights, &cfg).unwrap()),
        ));
    }
    out
}

fn tiny_arch() -> PrnArchitecture {
    PrnArchitecture {
        input_size: 32,
        base: 1,
        bottleneck: 32,
    }
}

fn random_image_sample(rng: &mut ChaCha8Rng, size: usize) -> Sample {
    use facemap_core::augment::{ColorImage, SampleMeta};
    let image = ColorImage::new(size, size, (0..3 * size * size).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let s = size as f64;
    let meta = SampleMeta {
        yaw: 0.0,
        bbox: BBox { min: [0.0, 0.0], max: [s, s] },
    };
    Sample::new(image, random_map(rng, size, s).map_valid(|p| p.map(|v| v.abs())), meta).unwrap()
}

/// Central differences on 20 random parameters of a tiny full network.
fn model_grad_error() -> f64 {
    let mut r = rng(32);
    let mut net = PrnNet::new(tiny_arch(), 5).unwrap();
    let mut params = net.params().to_vec();
    for (p, name) in params.iter_mut().zip(net.param_names()) {
        if name.ends_with("bias") {
            p.data_mut().iter_mut().for_each(|b| *b = r.gen_range(-0.2..0.2));
        }
    }
    net.set_params(params).unwrap();
    let mut samples: Vec<Sample> = (0..2).map(|_| random_image_sample(&mut r, 32)).collect();
    for s in &mut samples {
        let pred = net.predict(&[&s.image]).unwrap().remove(0);
        s.posmap = pred.map_valid(|p| p.map(|v| v + r.gen_range(-0.5..0.5)));
    }
    let batch: Vec<&Sample> = samples.iter().collect();
    let weights: Vec<f64> = (0..32 * 32).map(|_| r.gen_range(0.0..2.0)).collect();
    let cfg = LossConfig::default();
    let (_, grads) = loss_and_grads(&net, &batch, &weights, &cfg).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let i = r.gen_range(0..net.params().len());
        let j = r.gen_range(0..net.params()[i].len());
        let eval = |delta: f64| {
            let mut n = net.clone();
            n.params_mut()[i].data_mut()[j] += delta;
            loss_and_grads(&n, &batch, &weights, &cfg).unwrap().0
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max(rel_err(grads[i].data()[j], numeric));
    }
    worst
}

fn c3_loss_and_gradients() -> Outcome {
    let mut r = rng(30);
    let mut worst_loss: f64 = 0.0;
    for _ in 0..20 {
        let size = r.gen_range(1..24);
        let (p, q) = (random_map(&mut r, size, 50.0), random_map(&mut r, size, 50.0));
        let codes: Vec<u8> = (0..size * size).map(|_| r.gen_range(0..5)).collect();
        let seg = RegionSegmentation::from_codes(size, &codes).unwrap();
        for cfg in loss_configs() {
            let got = weighted_loss(&p, &q, &build_mask(&seg, &cfg), &cfg).map_err(|e| e.to_string())?;
            let want = naive_loss(&p, &q, &seg, &cfg);
            if got != want {
                worst_loss = worst_loss.max((got - want).abs() / want.abs());
            }
        }
    }
    let ops = op_level_errors();
    let worst_op = ops.iter().map(|o| o.1).fold(0.0, f64::max);
    let worst_name = ops.iter().max_by(|a, b| a.1.total_cmp(&b.1)).map_or("", |o| o.0);
    let model = model_grad_error();
    check(
        worst_loss <= 1e-10 && worst_op < 1e-4 && model < 1e-3,
        format!(
            "loss vs naive loop max rel {worst_loss:.1e}; op-level max rel {worst_op:.1e} ({worst_name}, {} checks); model-level max rel {model:.1e} (20 params)",
            ops.len()
        ),
    )
}

fn c4_zero_weight_pixels() -> Outcome {
    let template = FaceTemplate::new(33).map_err(|e| e.to_string())?;
    let size = 32;
    let seg = template.segmentation(size).map_err(|e| e.to_string())?;
    let cfg = LossConfig::with_ratio(WeightRatio::DEFAULT);
    let mask = build_mask(&seg, &cfg);
    let zero: Vec<usize> = (0..size * size).filter(|&i| mask.weights()[i] == 0.0).collect();
    let neck = seg.labels().iter().filter(|&&l| l == Region::Neck).count();
    let mut r = rng(40);
    let mut changed_loss = 0;
    let mut changed_grad = 0;
    for norm in [NormKind::SquaredL2, NormKind::L2] {
        for reduction in [Reduction::Sum, Reduction::MeanPositive] {
            let cfg = LossConfig { norm, reduction, ..cfg };
            for _ in 0..25 {
                let (p, q) = (random_map(&mut r, size, 40.0), random_map(&mut r, size, 40.0));
                let mut data = p.data().to_vec();
                for &i in &zero {
                    data[i] = std::array::from_fn(|_| r.gen_range(-1e3..1e3));
                }
                let p2 = PositionMap::from_parts(size, data, vec![true; size * size]).unwrap();
                let (l1, l2) = (weighted_loss(&p, &q, &mask, &cfg).unwrap(), weighted_loss(&p2, &q, &mask, &cfg).unwrap());
                changed_loss += usize::from(l1.to_bits() != l2.to_bits());
                let (g1, g2) = (
                    weighted_loss_grad(&p, &q, &mask, &cfg).unwrap(),
                    weighted_loss_grad(&p2, &q, &mask, &cfg).unwrap(),
                );
                changed_grad += usize::from(g1 != g2);
            }
        }
    }
    // Through the network: perturbing zero-weight targets leaves parameter gradients unchanged.
    let net = PrnNet::new(tiny_arch(), 1).unwrap();
    let a = random_image_sample(&mut r, size);
    let mut b = a.clone();
    let mut t = b.posmap.data().to_vec();
    for &i in &zero {
        t[i] = std::array::from_fn(|_| r.gen_range(-1e3..1e3));
    }
    b.posmap = PositionMap::from_parts(size, t, vec![true; size * size]).unwrap();
    let (la, ga) = loss_and_grads(&net, &[&a], mask.weights(), &cfg).unwrap();
    let (lb, gb) = loss_and_grads(&net, &[&b], mask.weights(), &cfg).unwrap();
    let net_same = la.to_bits() == lb.to_bits() && ga == gb;
    check(
        changed_loss == 0 && changed_grad == 0 && net_same && neck > 0,
        format!(
            "{} zero-weight pixels ({neck} neck); 100 perturbations: loss changed {changed_loss}x, gradient changed {changed_grad}x; network loss and parameter gradients bit-identical: {net_same}",
            zero.len()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn c5_augmentation() -> Outcome {
    let size = 64;
    let data = synthesize(&SyntheticSpec {
        count: 4,
        resolution: size,
        grid: 33,
        seed: 50,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let opts = SampleOptions {
        occlusion: true,
        image_size: size,
    };
    let (mut worst_xy, mut worst_z): (f64, f64) = (0.0, 0.0);
    for draw in 0..100u64 {
        let sample = &data.samples[(draw % 4) as usize];
        let p = sample_params(1000 + draw, &opts);
        let out = apply(sample, &p).map_err(|e| e.to_string())?;
        let sim = p.similarity(size);
        let before = landmarks_from_map(&sample.posmap, &data.table).map_err(|e| e.to_string())?;
        let after = landmarks_from_map(&out.posmap, &data.table).map_err(|e| e.to_string())?;
        for (a, b) in before.points().iter().zip(after.points()) {
            let q = sim.apply([a[0], a[1]]);
            worst_xy = worst_xy.max((q[0] - b[0]).abs()).max((q[1] - b[1]).abs());
            worst_z = worst_z.max((a[2] * p.scale - b[2]).abs());
        }
    }
    check(
        worst_xy <= 1e-6 && worst_z <= 1e-6,
        format!("100 draws x 68 landmarks: max |xy| deviation {worst_xy:.1e}, max |z - s*z0| {worst_z:.1e}"),
    )
}

// ---------------------------------------------------------------- 6 and 7

const TRAIN_COUNT: usize = 200;
const HELD_OUT: usize = 100;
const DESK_BASE: usize = 4;
const DESK_BOTTLENECK: usize = 128;
const DESK_BATCH: usize = 16;
const DESK_EPOCHS: usize = 100;
const DESK_LR: f64 = 5e-4;
const DESK_HALVING: usize = 30;
const ABLATION_SEEDS: [u64; 3] = [1, 2, 3];

fn desk_data() -> SyntheticData {
    synthesize(&SyntheticSpec {
        count: TRAIN_COUNT + HELD_OUT,
        resolution: 32,
        grid: 33,
        seed: 60,
        ..Default::default()
    })
    .expect("synthetic data")
}

struct Run {
    initial_loss: f64,
    final_loss: f64,
    held_out_nme: f64,
    minutes: f64,
}

fn mean_landmark_nme(net: &PrnNet, samples: &[Sample], data: &SyntheticData) -> f64 {
    let mut total = 0.0;
    for chunk in samples.chunks(32) {
        let images: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        for (s, pred) in chunk.iter().zip(net.predict(&images).expect("predict")) {
            total += landmark_nme(&pred, s, &data.table, Dims::Xy, BoxNorm::GeometricMean).expect("nme");
        }
    }
    total / samples.len() as f64
}

fn desk_run(data: &SyntheticData, ratio: WeightRatio, seed: u64) -> Run {
    let start = Instant::now();
    let (train_set, held) = data.samples.split_at(TRAIN_COUNT);
    let arch = PrnArchitecture {
        input_size: 32,
        base: DESK_BASE,
        bottleneck: DESK_BOTTLENECK,
    };
    let mut net = PrnNet::new(arch, seed).expect("network");
    let cfg = TrainConfig {
        epochs: DESK_EPOCHS,
        batch_size: DESK_BATCH,
        lr: LrSchedule {
            initial: DESK_LR,
            factor: 0.5,
            period: DESK_HALVING,
        },
        loss: LossConfig::with_ratio(ratio),
        seed,
        ..Default::default()
    };
    let weights = build_mask(&data.segmentation, &cfg.loss).weights().to_vec();
    let initial_loss = evaluate_loss(&net, train_set, &weights, &cfg.loss, 32).expect("loss");
    train(&mut net, train_set, &data.segmentation, &cfg, |_| {}).expect("training");
    let final_loss = evaluate_loss(&net, train_set, &weights, &cfg.loss, 32).expect("loss");
    Run {
        initial_loss,
        final_loss,
        held_out_nme: mean_landmark_nme(&net, held, data),
        minutes: start.elapsed().as_secs_f64() / 60.0,
    }
}

fn overfit_one_sample(data: &SyntheticData) -> (f64, f64, bool) {
    let arch = PrnArchitecture {
        input_size: 32,
        base: DESK_BASE,
        bottleneck: DESK_BOTTLENECK,
    };
    let mut net = PrnNet::new(arch, 7).expect("network");
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 1,
        lr: LrSchedule {
            initial: 1e-3,
            factor: 0.5,
            period: 1000,
        },
        ..Default::default()
    };
    let report = train(&mut net, &data.samples[..1], &data.segmentation, &cfg, |_| {}).expect("training");
    let losses = report.losses();
    // Means of consecutive 50-step windows over the second half.
    let windows: Vec<f64> = losses[250..].chunks(50).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    let settled = windows.windows(2).all(|w| w[1] <= w[0]);
    let weights = build_mask(&data.segmentation, &cfg.loss).weights().to_vec();
    let last = evaluate_loss(&net, &data.samples[..1], &weights, &cfg.loss, 1).expect("loss");
    (losses[0], last, settled)
}

struct Learnability {
    masked: Vec<Run>,
    uniform: Vec<Run>,
    overfit: (f64, f64, bool),
}

fn learnability() -> Learnability {
    let data = desk_data();
    let overfit = overfit_one_sample(&data);
    let mut masked = Vec::new();
    let mut uniform = Vec::new();
    for seed in ABLATION_SEEDS {
        masked.push(desk_run(&data, WeightRatio::DEFAULT, seed));
        uniform.push(desk_run(&data, WeightRatio::UNIFORM, seed));
    }
    Learnability {
        masked,
        uniform,
        overfit,
    }
}

fn c6_learnability(l: &Learnability) -> Outcome {
    let run = &l.masked[0];
    let (first, last, settled) = l.overfit;
    let ratio = run.final_loss / run.initial_loss;
    check(
        ratio <= 0.10 && run.held_out_nme <= 8.0 && run.minutes <= 30.0 && last <= 0.01 * first,
        format!(
            "{TRAIN_COUNT} samples, input 32, 16:4:3:0, seed {}: final/initial loss {:.2}%, held-out NME {:.3}% ({HELD_OUT} faces), {:.1} min; one-sample overfit after 500 steps {:.3}% of initial (50-step window means non-increasing: {settled})",
            ABLATION_SEEDS[0],
            100.0 * ratio,
            run.held_out_nme,
            run.minutes,
            100.0 * last / first
        ),
    )
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

fn c7_ablation(l: &Learnability) -> Outcome {
    let m: Vec<f64> = l.masked.iter().map(|r| r.held_out_nme).collect();
    let u: Vec<f64> = l.uniform.iter().map(|r| r.held_out_nme).collect();
    let per_seed: Vec<String> = ABLATION_SEEDS
        .iter()
        .zip(m.iter().zip(&u))
        .map(|(s, (a, b))| format!("seed {s}: {a:.3} vs {b:.3}"))
        .collect();
    let (mm, mu) = (median(&m), median(&u));
    check(
        mm <= mu,
        format!("held-out NME 16:4:3:0 vs 1:1:1:1 -- {}; medians {mm:.3} vs {mu:.3}", per_seed.join(", ")),
    )
}

// ---------------------------------------------------------------- 8 and 9

fn surface(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            let x: f64 = rng.gen_range(-1.0..1.0);
            let y: f64 = rng.gen_range(-1.2..1.0);
            let z = 0.6 * (-(x - 0.2).powi(2) * 3.0 - (y + 0.1).powi(2) * 5.0).exp() + 0.3 * x * y + 0.1 * x * x * x;
            [x * 50.0, y * 60.0, z * 40.0]
        })
        .collect()
}

/// Rotation by `deg` about the unit `axis` (Rodrigues).
fn rotation(axis: Vec3, deg: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|a| a / n);
    let (s, c) = deg.to_radians().sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn rotate(r: &[[f64; 3]; 3], p: Vec3) -> Vec3 {
    std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2])
}

fn transpose(r: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| r[j][i]))
}

fn c8_icp() -> Outcome {
    let mut r = rng(80);
    let gt = surface(&mut r, 1500);
    let rot = rotation([0.3, 1.0, 0.2], 20.0);
    let t = [5.0, 2.0, 1.0];
    let inv = transpose(&rot);
    let pred: Vec<Vec3> = gt
        .iter()
        .map(|p| rotate(&inv, [p[0] - t[0], p[1] - t[1], p[2] - t[2]]))
        .collect();
    let res = icp(
        &PointCloud::new(pred).unwrap(),
        &PointCloud::new(gt).unwrap(),
        &IcpConfig {
            rel_tol: 0.0,
            ..IcpConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let mut dr: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            dr = dr.max((res.transform.rotation[(i, j)] - rot[i][j]).abs());
        }
    }
    let dt = (0..3).map(|i| (res.transform.translation[i] - t[i]).abs()).fold(0.0, f64::max);

    let mut increases = 0;
    for case in 0..50u64 {
        let mut r = rng(8000 + case);
        let (ng, np) = (r.gen_range(50..400), r.gen_range(50..400));
        let gt = surface(&mut r, ng);
        let rot = rotation([r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), 1.0], r.gen_range(-30.0..30.0));
        let shift: Vec3 = std::array::from_fn(|_| r.gen_range(-10.0..10.0));
        let pred: Vec<Vec3> = surface(&mut r, np)
            .into_iter()
            .map(|p| {
                let q = rotate(&rot, p);
                std::array::from_fn(|k| q[k] + shift[k] + r.gen_range(-1.0..1.0))
            })
            .collect();
        let res = icp(&PointCloud::new(pred).unwrap(), &PointCloud::new(gt).unwrap(), &IcpConfig::default())
            .map_err(|e| e.to_string())?;
        increases += res.errors.windows(2).filter(|w| w[1] > w[0]).count();
    }

    let mut mismatches = 0;
    let mut queries = 0;
    for trial in 0..20 {
        let n = r.gen_range(1..=2000);
        let lattice = trial % 2 == 0;
        let draw = |r: &mut ChaCha8Rng| -> Vec3 {
            if lattice {
                std::array::from_fn(|_| r.gen_range(0..6) as f64)
            } else {
                std::array::from_fn(|_| r.gen_range(-5.0..5.0))
            }
        };
        let points: Vec<Vec3> = (0..n).map(|_| draw(&mut r)).collect();
        let tree = KdTree::new(&points);
        for _ in 0..200 {
            let q = draw(&mut r).map(|v| v + 0.25);
            let mut best = (usize::MAX, f64::INFINITY);
            for (i, p) in points.iter().enumerate() {
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d < best.1 {
                    best = (i, d);
                }
            }
            queries += 1;
            mismatches += usize::from(tree.nearest(q) != Some(best));
        }
    }
    check(
        dr <= 1e-6 && dt <= 1e-6 && increases == 0 && mismatches == 0,
        format!(
            "20 deg + (5,2,1): rotation error {dr:.1e}, translation error {dt:.1e}; 50 random cases with {increases} error increases; k-d tree vs brute force: {mismatches}/{queries} mismatches"
        ),
    )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

fn c9_metric_oracles() -> Outcome {
    let mut r = rng(90);
    let mut failures = Vec::new();
    for trial in 0..200 {
        let n = r.gen_range(1..150);
        let pred: Vec<Vec3> = (0..n).map(|_| std::array::from_fn(|_| r.gen_range(-100.0..100.0))).collect();
        let gt: Vec<Vec3> = (0..n).map(|_| std::array::from_fn(|_| r.gen_range(-100.0..100.0))).collect();
        let bbox = BBox {
            min: [r.gen_range(-50.0..0.0), r.gen_range(-50.0..0.0)],
            max: [r.gen_range(1.0..80.0), r.gen_range(1.0..80.0)],
        };
        for dims in [Dims::Xy, Dims::Xyz] {
            for norm in [BoxNorm::GeometricMean, BoxNorm::MaxSide] {
                let got = nme_points(&pred, &gt, &bbox, dims, norm).unwrap();
                let k = if dims == Dims::Xy { 2 } else { 3 };
                let mut sum = 0.0;
                for i in 0..n {
                    sum += (0..k).map(|j| (pred[i][j] - gt[i][j]).powi(2)).sum::<f64>().sqrt();
                }
                let (w, h) = (bbox.max[0] - bbox.min[0], bbox.max[1] - bbox.min[1]);
                let f = if norm == BoxNorm::GeometricMean { (w * h).sqrt() } else { w.max(h) };
                let want = sum / n as f64 / f * 100.0;
                if !close(got, want) {
                    failures.push(format!("nme trial {trial}"));
                }
            }
        }

        let m = r.gen_range(1..1000);
        let errors: Vec<f64> = (0..m)
            .map(|_| if r.gen_bool(0.1) { r.gen_range(0..8) as f64 } else { r.gen_range(0.0..12.0) })
            .collect();
        let cutoff = r.gen_range(0.5..15.0);
        let c = ced(&errors, cutoff).unwrap();
        let mut area = 0.0;
        for i in 0..c.thresholds.len() {
            let t = c.thresholds[i];
            let frac = errors.iter().filter(|&&e| e <= t).count() as f64 / m as f64;
            if c.fractions[i] != frac {
                failures.push(format!("ced trial {trial} point {i}"));
                break;
            }
            if i > 0 {
                area += (t - c.thresholds[i - 1]) * (frac + c.fractions[i - 1]) / 2.0;
            }
        }
        if !close(c.auc, area / cutoff) {
            failures.push(format!("auc trial {trial}"));
        }
        let monotone = c.fractions.windows(2).all(|w| w[0] <= w[1]);
        let bounded = c.fractions.iter().all(|f| (0.0..=1.0).contains(f));
        let max_err = errors.iter().cloned().fold(0.0, f64::max);
        let terminal = max_err > cutoff || c.fractions.last() == Some(&1.0);
        if !(monotone && bounded && terminal && c.fraction_at(max_err) == 1.0) {
            failures.push(format!("ced invariants trial {trial}"));
        }

        let yaws: Vec<f64> = (0..m)
            .map(|_| if r.gen_bool(0.1) { [0.0, 30.0, -60.0, 90.0][r.gen_range(0..4)] } else { r.gen_range(-90.0..=90.0) })
            .collect();
        let rep = bucket_by_yaw(&yaws, &errors, cutoff).unwrap();
        for (b, &(lo, hi)) in YAW_BUCKETS.iter().enumerate() {
            let members: Vec<f64> = yaws
                .iter()
                .zip(&errors)
                .filter(|(y, _)| {
                    let a = y.abs();
                    a >= lo && (a < hi || (b == 2 && a <= hi))
                })
                .map(|(_, e)| *e)
                .collect();
            let mean = (!members.is_empty()).then(|| members.iter().sum::<f64>() / members.len() as f64);
            let ok = rep.buckets[b].count == members.len()
                && match (rep.buckets[b].mean, mean) {
                    (Some(a), Some(e)) => close(a, e),
                    (None, None) => true,
                    _ => false,
                };
            if !ok {
                failures.push(format!("yaw trial {trial} bucket {b}"));
            }
        }
        if !close(rep.mean, errors.iter().sum::<f64>() / m as f64) {
            failures.push(format!("overall mean trial {trial}"));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            "200 randomized trials: NME (xy/xyz, both box norms), CED fractions, AUC, CED invariants and yaw buckets all match brute force".into()
        } else {
            format!("{} mismatches, first: {}", failures.len(), failures[0])
        },
    )
}

// ---------------------------------------------------------------- 10

fn encoded_shape(arch: PrnArchitecture) -> Result<Vec<usize>, String> {
    let net = PrnNet::new(arch, 0).map_err(|e| e.to_string())?;
    let mut g = Graph::new();
    let img = facemap_core::augment::ColorImage::black(arch.input_size, arch.input_size);
    let x = g.leaf(images_to_tensor(&[&img], arch.input_size).map_err(|e| e.to_string())?, false);
    let p = net.register(&mut g, false);
    let e = net.encode(&mut g, &p, x).map_err(|e| e.to_string())?;
    Ok(g.value(e).shape().to_vec())
}

fn c10_architecture() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (size, base, bottleneck) in [(32, 4, 128), (64, 4, 128), (256, 16, 512)] {
        let arch = PrnArchitecture {
            input_size: size,
            base,
            bottleneck,
        };
        let shape = encoded_shape(arch)?;
        let net = PrnNet::new(arch, 0).map_err(|e| e.to_string())?;
        let s = size / 32;
        ok &= shape == vec![1, bottleneck, s, s] && net.transposed_layer_count() == DECODER_LAYERS && DECODER_LAYERS == 17;
        lines.push(format!("{size} -> {s}x{s}x{} ({} transposed)", shape[1], net.transposed_layer_count()));
    }
    let default = PrnArchitecture::default();
    let shape = encoded_shape(default)?;
    ok &= default.input_size == 256 && shape == vec![1, 512, 8, 8];
    check(
        ok,
        format!("{}; default arch bottleneck {}x{}x{}", lines.join(", "), shape[2], shape[3], shape[1]),
    )
}

// ----------------------------------------------------------------

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut run = |n: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        if wanted(n) {
            let start = Instant::now();
            let out = f();
            let secs = start.elapsed().as_secs_f64();
            let (tag, detail) = match &out {
                Ok(d) => ("PASS", d),
                Err(d) => ("FAIL", d),
            };
            println!("[{tag}] criterion {n:>2} {name}: {detail} [{secs:.1}s]");
            results.push((n, name, out, secs));
        }
    };
    run(1, "geometry round trip", &c1_geometry_round_trip);
    run(2, "tutte embedding", &c2_tutte);
    run(3, "loss and gradient suite", &c3_loss_and_gradients);
    run(4, "zero-weight pixel semantics", &c4_zero_weight_pixels);
    run(5, "augmentation consistency", &c5_augmentation);
    if wanted(6) || wanted(7) {
        let l = learnability();
        run(6, "desk-scale learnability", &|| c6_learnability(&l));
        run(7, "weight-ratio ablation direction", &|| c7_ablation(&l));
    }
    run(8, "icp", &c8_icp);
    run(9, "metric oracles", &c9_metric_oracles);
    run(10, "architecture shapes", &c10_architecture);

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({failed:?})") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
