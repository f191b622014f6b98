use facemap_core::augment::{self, Sample, SampleOptions};
use facemap_core::maskloss::{build_mask, LossConfig, RegionSegmentation};
use facemap_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::Graph;
use crate::optim::{Adam, LrSchedule};
use crate::prn::{images_to_tensor, PrnNet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub loss: LossConfig,
    pub seed: u64,
    /// Randomly perturb every sample each epoch.
    pub augment: bool,
    /// Also paste random-noise occluders when augmenting.
    pub occlusion: bool,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            lr: LrSchedule::default(),
            loss: LossConfig::default(),
            seed: 0,
            augment: false,
            occlusion: false,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr.initial > 0.0) || self.lr.period == 0 {
            return Err(Error::InvalidArgument(format!(
                "epochs, batch size, learning rate and halving period must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    /// Batch loss before the update.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub steps: Vec<StepInfo>,
    /// Mean batch loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    /// Loss curve as CSV with header `step,epoch,lr,loss`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,epoch,lr,loss\n");
        for s in &self.steps {
            out.push_str(&format!("{},{},{},{}\n", s.step, s.epoch, s.lr, s.loss));
        }
        out
    }
}

/// Interleaved `x, y, z` targets of a batch.
fn targets(batch: &[&Sample]) -> Vec<f64> {
    batch.iter().flat_map(|s| s.posmap.to_flat()).collect()
}

/// Batch loss and parameter gradients at the current parameters.
pub fn loss_and_grads(net: &PrnNet, batch: &[&Sample], weights: &[f64], loss: &LossConfig) -> Result<(f64, Vec<Tensor>)> {
    let size = net.arch().input_size;
    let images: Vec<_> = batch.iter().map(|s| &s.image).collect();
    let mut g = Graph::new();
    let x = g.leaf(images_to_tensor(&images, size)?, false);
    let f = net.forward(&mut g, x, true)?;
    let l = g.map_loss(f.output, &targets(batch), weights, loss)?;
    let mut grads = g.backward(l)?;
    let value = g.value(l).item();
    let out = f
        .params
        .iter()
        .zip(net.params())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
        .collect();
    Ok((value, out))
}

/// Mean loss over `samples` without gradients, in chunks of `batch_size`.
pub fn evaluate_loss(net: &PrnNet, samples: &[Sample], weights: &[f64], loss: &LossConfig, batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to evaluate"));
    }
    let size = net.arch().input_size;
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch: Vec<&Sample> = chunk.iter().collect();
        let images: Vec<_> = batch.iter().map(|s| &s.image).collect();
        let mut g = Graph::new();
        let x = g.leaf(images_to_tensor(&images, size)?, false);
        let f = net.forward(&mut g, x, false)?;
        let l = g.map_loss(f.output, &targets(&batch), weights, loss)?;
        total += g.value(l).item() * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

fn augment_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rand::Rng::gen(&mut rng)
}

/// Adam on the weighted position-map loss. Batches follow a seeded shuffle
/// per epoch; `on_step` sees every step as it completes.
pub fn train(
    net: &mut PrnNet,
    samples: &[Sample],
    segmentation: &RegionSegmentation,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepInfo),
) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let size = net.arch().input_size;
    if let Some(bad) = samples.iter().find(|s| s.size() != size) {
        return Err(Error::ShapeMismatch(format!("{0}x{0} sample for a {size}x{size} network", bad.size())));
    }
    if segmentation.size() != size {
        return Err(Error::ShapeMismatch(format!("segmentation size {} for input {size}", segmentation.size())));
    }
    let weights = build_mask(segmentation, &cfg.loss).weights().to_vec();
    let mut adam = Adam::new(net.params());
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let opts = SampleOptions {
        occlusion: cfg.occlusion,
        image_size: size,
    };
    'epochs: for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let lr = cfg.lr.at_epoch(epoch);
        let mut sum = 0.0;
        let mut count = 0;
        for idx in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| report.steps.len() >= m) {
                break 'epochs;
            }
            let augmented: Vec<Sample>;
            let batch: Vec<&Sample> = if cfg.augment {
                augmented = idx
                    .iter()
                    .map(|&i| augment::apply(&samples[i], &augment::sample_params(augment_seed(cfg.seed, epoch, i), &opts)))
                    .collect::<Result<_>>()?;
                augmented.iter().collect()
            } else {
                idx.iter().map(|&i| &samples[i]).collect()
            };
            let (loss, grads) = loss_and_grads(net, &batch, &weights, &cfg.loss)?;
            adam.step(net.params_mut(), &grads, lr)?;
            let info = StepInfo {
                step: report.steps.len(),
                epoch,
                lr,
                loss,
            };
            on_step(&info);
            report.steps.push(info);
            sum += loss;
            count += 1;
        }
        report.epoch_losses.push(sum / count as f64);
    }
    Ok(report)
}
