//! SGD-with-momentum training loop: two-phase learning-rate schedule,
//! per-epoch shuffling, rotating proposal sets with injected ground-truth
//! regions, and per-epoch validation metrics.
//!
//! Everything is deterministic under a fixed seed: the shuffle order, the
//! proposal rotation (round-robin on the batch counter) and all summation
//! orders are fixed, so two runs produce bit-identical loss logs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::{self, ClassWeights, RegionLabel};
use crate::metrics::{self, ConfusionMatrix};
use crate::models::{
    self, Architecture, BatchLoss, ModelConfig, ModelState, PreparedRegions,
};
use crate::overseg;
use crate::partition::{build_loss_partition, LossPartition};
use crate::regions::{grid_proposal_sets, ground_truth_regions, LabelMap, RegionSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr_phase1: f64,
    pub epochs_phase1: usize,
    pub lr_phase2: f64,
    pub epochs_phase2: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Overlap thresholds for baseline region labeling.
    pub pos_overlap: f64,
    pub neg_overlap: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_phase1: 1e-3,
            epochs_phase1: 20,
            lr_phase2: 1e-4,
            epochs_phase2: 10,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            pos_overlap: 0.5,
            neg_overlap: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_phase1 <= 0.0 || self.lr_phase2 <= 0.0 {
            return Err(Error::invalid("learning rates must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_phase1 + self.epochs_phase2
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OversegParams {
    pub merge_threshold: f64,
    pub min_region_size: usize,
}

impl Default for OversegParams {
    fn default() -> Self {
        OversegParams {
            merge_threshold: 0.12,
            min_region_size: overseg::DEFAULT_MIN_REGION_SIZE,
        }
    }
}

impl OversegParams {
    fn segment(&self, image: &Tensor) -> Result<RegionSet> {
        overseg::oversegment_with_min_size(image, self.merge_threshold, self.min_region_size)
    }
}

/// How region proposals are produced for each image.
#[derive(Clone, Debug)]
pub enum ProposalConfig {
    /// Multi-scale overlapping grid windows unioned with the image's
    /// oversegmentation; three stride-offset grid variants rotate across
    /// mini-batches.
    Grid {
        scales: Vec<usize>,
        stride_fraction: f64,
        overseg: Option<OversegParams>,
    },
    /// Oversegmentation only: one non-overlapping set per image.
    Oversegmentation(OversegParams),
}

impl ProposalConfig {
    pub fn default_grid() -> Self {
        ProposalConfig::Grid {
            scales: vec![8, 16, 32],
            stride_fraction: 0.5,
            overseg: Some(OversegParams::default()),
        }
    }

    /// The rotating proposal sets for one image.
    fn variants(&self, image: &Tensor, width: usize, height: usize) -> Result<Vec<RegionSet>> {
        match self {
            ProposalConfig::Grid {
                scales,
                stride_fraction,
                overseg,
            } => {
                let mut dedup: Vec<usize> = scales
                    .iter()
                    .map(|&s| s.min(width).min(height))
                    .collect();
                dedup.sort_unstable();
                dedup.dedup();
                let grids = grid_proposal_sets(width, height, &dedup, *stride_fraction)?;
                match overseg {
                    None => Ok(grids),
                    Some(params) => {
                        let segments = params.segment(image)?;
                        Ok(grids.into_iter().map(|g| g.union(&segments)).collect())
                    }
                }
            }
            ProposalConfig::Oversegmentation(params) => Ok(vec![params.segment(image)?]),
        }
    }
}

/// Everything precomputed for one (image, proposal variant) pair.
pub struct PreparedBatch {
    pub prepared: PreparedRegions,
    pub partition: LossPartition,
    pub region_labels: Vec<RegionLabel>,
}

/// Per-image training context: rotating prepared batches plus the class
/// weights of the image.
pub struct ImageContext {
    pub batches: Vec<PreparedBatch>,
    pub weights: ClassWeights,
}

/// Test-time region set: proposals only (no ground truth). Grid variants
/// are all merged, with the oversegmentation included once.
pub fn eval_regions(
    proposal_cfg: &ProposalConfig,
    image: &Tensor,
    width: usize,
    height: usize,
) -> Result<RegionSet> {
    match proposal_cfg {
        ProposalConfig::Grid {
            scales,
            stride_fraction,
            overseg,
        } => {
            let mut dedup: Vec<usize> = scales
                .iter()
                .map(|&s| s.min(width).min(height))
                .collect();
            dedup.sort_unstable();
            dedup.dedup();
            let grids = grid_proposal_sets(width, height, &dedup, *stride_fraction)?;
            let mut merged = grids[0].clone();
            for g in &grids[1..] {
                merged = merged.union(g);
            }
            if let Some(params) = overseg {
                merged = merged.union(&params.segment(image)?);
            }
            Ok(merged)
        }
        ProposalConfig::Oversegmentation(params) => params.segment(image),
    }
}

fn prepare_image_context(
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    proposal_cfg: &ProposalConfig,
    image: &Tensor,
    gt: &LabelMap,
) -> Result<ImageContext> {
    let (h, w) = (image.dim(0), image.dim(1));
    let gt_regions = ground_truth_regions(gt);
    if gt_regions.is_empty() {
        return Err(Error::invalid("training image has no labeled pixel"));
    }
    let weights = losses::class_weights(gt, config.num_classes, config.loss_mode)?;
    let mut batches = Vec::new();
    for variant in proposal_cfg.variants(image, w, h)? {
        // ground-truth regions injected so every labeled pixel is covered
        let set = variant.union(&gt_regions);
        let partition = build_loss_partition(&set, gt);
        let region_labels = losses::assign_region_labels(
            &set,
            gt,
            train_cfg.pos_overlap,
            train_cfg.neg_overlap,
        )?;
        let prepared = models::prepare_regions(set, config)?;
        batches.push(PreparedBatch {
            prepared,
            partition,
            region_labels,
        });
    }
    Ok(ImageContext { batches, weights })
}

/// Round-robin proposal-set selection on the global batch counter.
pub fn assemble_batch<'a>(contexts: &'a [ImageContext], batch_counter: usize, image_idx: usize) -> &'a PreparedBatch {
    let ctx = &contexts[image_idx];
    &ctx.batches[batch_counter % ctx.batches.len()]
}

/// One SGD-with-momentum update:
/// buf <- momentum * buf - lr * grad; value <- value + buf; grads zeroed.
pub fn sgd_step(state: &mut ModelState, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    for (name, p) in state.params_mut() {
        if !p.grad.data().iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", name)));
        }
        for i in 0..p.value.len() {
            let mut g = p.grad.data()[i];
            if weight_decay != 0.0 {
                g += weight_decay * p.value.data()[i];
            }
            let buf = momentum * p.momentum.data()[i] - lr * g;
            p.momentum.data_mut()[i] = buf;
            p.value.data_mut()[i] += buf;
        }
        p.zero_grad();
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: usize,
    pub mean_loss: f64,
    pub global_acc: f64,
    pub class_avg_acc: f64,
    pub mean_iou: f64,
}

impl EpochRecord {
    /// One machine-parseable log line; fixed formatting keeps replays
    /// byte-identical.
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} phase={} loss={:.6} global_acc={:.6} class_avg_acc={:.6} mean_iou={:.6}",
            self.epoch, self.phase, self.mean_loss, self.global_acc, self.class_avg_acc, self.mean_iou
        )
    }
}

pub struct TrainOutput {
    pub state: ModelState,
    pub log: Vec<EpochRecord>,
    /// Set when training hit a non-finite loss; `state` is then the last
    /// good snapshot (end of the previous epoch).
    pub diverged: bool,
}

/// Metrics of a model over the given dataset indices.
pub fn evaluate(
    state: &ModelState,
    data: &Dataset,
    indices: &[usize],
    proposal_cfg: &ProposalConfig,
) -> Result<(ConfusionMatrix, usize)> {
    let mut cm = ConfusionMatrix::new(state.config.num_classes);
    let mut uncovered = 0;
    for &i in indices {
        let image = &data.images[i];
        let set = eval_regions(proposal_cfg, image, image.dim(1), image.dim(0))?;
        let prepared = models::prepare_regions(set, &state.config)?;
        let pred = models::predict(state, image, &prepared)?;
        uncovered += pred.uncovered;
        cm.accumulate(&data.labels[i], &pred.labels)?;
    }
    Ok((cm, uncovered))
}

/// Two-phase SGD training. Aborts on divergence, returning the last epoch's
/// finite state as the error payload.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    proposal_cfg: &ProposalConfig,
    data: &Dataset,
) -> Result<TrainOutput> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if data.train_indices.is_empty() {
        return Err(Error::invalid("empty training set"));
    }

    let contexts: Vec<ImageContext> = data
        .train_indices
        .iter()
        .map(|&i| {
            prepare_image_context(model_cfg, train_cfg, proposal_cfg, &data.images[i], &data.labels[i])
        })
        .collect::<Result<Vec<_>>>()?;

    let mut state = ModelState::new(model_cfg.clone(), train_cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0x5eed_1e55_u64);
    let mut log = Vec::new();
    let mut batch_counter = 0usize;
    let mut last_good = state.clone();

    let eval_indices: &[usize] = if data.test_indices.is_empty() {
        &data.train_indices
    } else {
        &data.test_indices
    };

    for epoch in 0..train_cfg.total_epochs() {
        let (phase, lr) = if epoch < train_cfg.epochs_phase1 {
            (1, train_cfg.lr_phase1)
        } else {
            (2, train_cfg.lr_phase2)
        };
        let mut order: Vec<usize> = (0..contexts.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for &ctx_idx in &order {
            let batch = assemble_batch(&contexts, batch_counter, ctx_idx);
            batch_counter += 1;
            let image = &data.images[data.train_indices[ctx_idx]];
            state.zero_grads();
            let loss = match model_cfg.arch {
                Architecture::EndToEnd => models::forward_loss_backward(
                    &mut state,
                    image,
                    &batch.prepared,
                    &BatchLoss::Pixel {
                        partition: &batch.partition,
                        weights: &contexts[ctx_idx].weights,
                    },
                ),
                Architecture::Baseline => models::forward_loss_backward(
                    &mut state,
                    image,
                    &batch.prepared,
                    &BatchLoss::Region {
                        labels: &batch.region_labels,
                    },
                ),
            }?;
            if !loss.is_finite() {
                return Ok(TrainOutput {
                    state: last_good,
                    log,
                    diverged: true,
                });
            }
            loss_sum += loss;
            sgd_step(&mut state, lr, train_cfg.momentum, train_cfg.weight_decay)?;
        }

        let (cm, _) = evaluate(&state, data, eval_indices, proposal_cfg)?;
        log.push(EpochRecord {
            epoch,
            phase,
            mean_loss: loss_sum / order.len() as f64,
            global_acc: metrics::global_accuracy(&cm)?,
            class_avg_acc: metrics::class_average_accuracy(&cm)?,
            mean_iou: metrics::mean_iou(&cm)?,
        });
        last_good = state.clone();
    }
    Ok(TrainOutput {
        state,
        log,
        diverged: false,
    })
}
