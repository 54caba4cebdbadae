//! The trainable architectures: a small convolutional backbone feeding
//! either the baseline region-classification head or the end-to-end
//! region-to-pixel pipeline, with free-form / bounding-box ROI pooling and
//! the two context-fusion strategies.
//!
//! Backbone: conv3x3 -> relu -> maxpool2 -> conv3x3 -> relu, total stride 2.
//! Head: one fully connected layer plus a classification layer. Tied fusion
//! runs region and box features through the same head and adds the two
//! classification outputs; separate fusion concatenates the pooled features
//! before a twice-as-wide fully connected layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradcheck::{GradReport, Probe, RoutingHash};
use crate::losses::{self, ClassWeights, LossMode, RegionLabel};
use crate::ops;
use crate::partition::LossPartition;
use crate::r2p::{self, PixelScoreMap, Prediction, RegionScores};
use crate::regions::RegionSet;
use crate::roipool::{self, ConvRegionMask, RoiFeature};
use crate::tensor::{Param, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// Fig-2c style: region-to-pixel layer, pixel-level loss.
    EndToEnd,
    /// Fig-2b style: bounding-box pooling, region-level loss, softmax
    /// before the pixel max at test time.
    Baseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    BoxOnly,
    RegionOnly,
    Tied,
    Separate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SoftmaxOrder {
    /// Pixel score = max over regions of raw scores, softmax afterwards.
    MaxThenSoftmax,
    /// Per-region softmax first, max over probabilities afterwards.
    SoftmaxThenMax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub num_classes: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub head_width: usize,
    pub pooled_size: usize,
    pub fusion: FusionMode,
    pub loss_mode: LossMode,
    pub softmax_order: SoftmaxOrder,
}

impl ModelConfig {
    pub fn end_to_end(num_classes: usize) -> Self {
        ModelConfig {
            arch: Architecture::EndToEnd,
            num_classes,
            conv1_channels: 16,
            conv2_channels: 32,
            head_width: 64,
            pooled_size: 6,
            fusion: FusionMode::Separate,
            loss_mode: LossMode::Balanced,
            softmax_order: SoftmaxOrder::MaxThenSoftmax,
        }
    }

    pub fn baseline(num_classes: usize) -> Self {
        ModelConfig {
            arch: Architecture::Baseline,
            fusion: FusionMode::BoxOnly,
            softmax_order: SoftmaxOrder::SoftmaxThenMax,
            ..ModelConfig::end_to_end(num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 254 {
            return Err(Error::invalid("need 2..=254 classes"));
        }
        if self.conv1_channels == 0
            || self.conv2_channels == 0
            || self.head_width == 0
            || self.pooled_size == 0
        {
            return Err(Error::invalid("zero-sized layer in model config"));
        }
        if self.arch == Architecture::Baseline && self.fusion != FusionMode::BoxOnly {
            return Err(Error::invalid(
                "the baseline architecture pools bounding boxes only",
            ));
        }
        Ok(())
    }

    /// Total downsampling of the backbone (one 2x2 max pool).
    pub fn feature_stride(&self) -> usize {
        2
    }

    fn pooled_len(&self) -> usize {
        self.pooled_size * self.pooled_size * self.conv2_channels
    }

    /// Input width of the fully connected layer; doubled under separate
    /// fusion which consumes the region/box concatenation.
    pub fn fc_input_width(&self) -> usize {
        match self.fusion {
            FusionMode::Separate => 2 * self.pooled_len(),
            _ => self.pooled_len(),
        }
    }

    fn uses_region_pool(&self) -> bool {
        matches!(
            self.fusion,
            FusionMode::RegionOnly | FusionMode::Tied | FusionMode::Separate
        )
    }

    fn uses_box_pool(&self) -> bool {
        matches!(
            self.fusion,
            FusionMode::BoxOnly | FusionMode::Tied | FusionMode::Separate
        )
    }
}

#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: ModelConfig,
    pub conv1_w: Param,
    pub conv1_b: Param,
    pub conv2_w: Param,
    pub conv2_b: Param,
    pub fc_w: Param,
    pub fc_b: Param,
    pub cls_w: Param,
    pub cls_b: Param,
}

fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

impl ModelState {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c1, c2) = (config.conv1_channels, config.conv2_channels);
        let conv1_w = xavier(&[3, 3, 3, c1], 9 * 3, 9 * c1, &mut rng);
        let conv2_w = xavier(&[3, 3, c1, c2], 9 * c1, 9 * c2, &mut rng);
        let fc_in = config.fc_input_width();
        let fc_w = xavier(&[fc_in, config.head_width], fc_in, config.head_width, &mut rng);
        let cls_w = xavier(
            &[config.head_width, config.num_classes],
            config.head_width,
            config.num_classes,
            &mut rng,
        );
        Ok(ModelState {
            conv1_b: Param::new(Tensor::zeros(&[c1])),
            conv2_b: Param::new(Tensor::zeros(&[c2])),
            fc_b: Param::new(Tensor::zeros(&[config.head_width])),
            cls_b: Param::new(Tensor::zeros(&[config.num_classes])),
            conv1_w: Param::new(conv1_w),
            conv2_w: Param::new(conv2_w),
            fc_w: Param::new(fc_w),
            cls_w: Param::new(cls_w),
            config,
        })
    }

    pub fn named_params(&self) -> Vec<(&'static str, &Param)> {
        vec![
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("conv2_w", &self.conv2_w),
            ("conv2_b", &self.conv2_b),
            ("fc_w", &self.fc_w),
            ("fc_b", &self.fc_b),
            ("cls_w", &self.cls_w),
            ("cls_b", &self.cls_b),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        vec![
            ("conv1_w", &mut self.conv1_w),
            ("conv1_b", &mut self.conv1_b),
            ("conv2_w", &mut self.conv2_w),
            ("conv2_b", &mut self.conv2_b),
            ("fc_w", &mut self.fc_w),
            ("fc_b", &mut self.fc_b),
            ("cls_w", &mut self.cls_w),
            ("cls_b", &mut self.cls_b),
        ]
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// A region set with its masks rasterized to feature-map resolution and the
/// feature-map bounding boxes, computed once and reused across steps.
#[derive(Clone, Debug)]
pub struct PreparedRegions {
    pub set: RegionSet,
    pub conv_masks: Vec<ConvRegionMask>,
}

pub fn prepare_regions(set: RegionSet, config: &ModelConfig) -> Result<PreparedRegions> {
    let stride = config.feature_stride();
    if set.width % stride != 0 || set.height % stride != 0 {
        return Err(Error::invalid(format!(
            "image {}x{} not divisible by feature stride {}",
            set.width, set.height, stride
        )));
    }
    let (fm_w, fm_h) = (set.width / stride, set.height / stride);
    let conv_masks = set
        .regions
        .iter()
        .map(|r| roipool::rasterize_mask(r, set.width, set.height, fm_w, fm_h))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedRegions { set, conv_masks })
}

#[derive(Clone, Debug)]
pub struct BackboneCache {
    pub conv1_out: Tensor,
    pub relu1_out: Tensor,
    pub pool_out: Tensor,
    pub pool_argmax: Vec<u32>,
    pub conv2_out: Tensor,
    /// relu(conv2_out): the map the ROI pooling layers read.
    pub convmap: Tensor,
}

pub fn backbone_forward(state: &ModelState, image: &Tensor) -> Result<BackboneCache> {
    if image.ndim() != 3 || image.dim(2) != 3 {
        return Err(Error::shape("backbone expects an HxWx3 image"));
    }
    let conv1_out = ops::conv2d_forward(image, &state.conv1_w.value, &state.conv1_b.value, 1, 1)?;
    let relu1_out = ops::relu_forward(&conv1_out);
    let (pool_out, pool_argmax) = ops::maxpool2_forward(&relu1_out)?;
    let conv2_out =
        ops::conv2d_forward(&pool_out, &state.conv2_w.value, &state.conv2_b.value, 1, 1)?;
    let convmap = ops::relu_forward(&conv2_out);
    Ok(BackboneCache {
        conv1_out,
        relu1_out,
        pool_out,
        pool_argmax,
        conv2_out,
        convmap,
    })
}

pub fn backbone_backward(
    state: &mut ModelState,
    image: &Tensor,
    cache: &BackboneCache,
    grad_convmap: &Tensor,
) -> Result<()> {
    let grad_conv2_out = ops::relu_backward(&cache.conv2_out, grad_convmap)?;
    let (grad_pool, gw2, gb2) = ops::conv2d_backward(
        &cache.pool_out,
        &state.conv2_w.value,
        &grad_conv2_out,
        1,
        1,
    )?;
    state.conv2_w.accumulate_grad(&gw2)?;
    state.conv2_b.accumulate_grad(&gb2)?;
    let grad_relu1 =
        ops::maxpool2_backward(&cache.pool_argmax, &grad_pool, cache.relu1_out.shape())?;
    let grad_conv1_out = ops::relu_backward(&cache.conv1_out, &grad_relu1)?;
    let (_, gw1, gb1) =
        ops::conv2d_backward(image, &state.conv1_w.value, &grad_conv1_out, 1, 1)?;
    state.conv1_w.accumulate_grad(&gw1)?;
    state.conv1_b.accumulate_grad(&gb1)?;
    Ok(())
}

#[derive(Clone, Debug)]
struct BranchCache {
    input: Tensor,
    fc_out: Tensor,
    hidden: Tensor,
}

#[derive(Clone, Debug)]
pub struct HeadCache {
    region_feats: Vec<Option<RoiFeature>>,
    box_feats: Vec<Option<RoiFeature>>,
    branches: Vec<Vec<BranchCache>>,
}

fn flatten_feature(f: &RoiFeature) -> Tensor {
    Tensor::from_vec(&[f.values.len()], f.values.data().to_vec()).expect("length matches")
}

fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(&[a.len() + b.len()], data).expect("length matches")
}

fn branch_forward(state: &ModelState, input: Tensor) -> Result<(BranchCache, Tensor)> {
    let fc_out = ops::linear_forward(&input, &state.fc_w.value, &state.fc_b.value)?;
    let hidden = ops::relu_forward(&fc_out);
    let scores = ops::linear_forward(&hidden, &state.cls_w.value, &state.cls_b.value)?;
    Ok((
        BranchCache {
            input,
            fc_out,
            hidden,
        },
        scores,
    ))
}

/// Per-region head: ROI pooling per fusion mode, fully connected layer(s),
/// classification scores.
pub fn region_scores_forward(
    state: &ModelState,
    convmap: &Tensor,
    prepared: &PreparedRegions,
) -> Result<(RegionScores, HeadCache)> {
    let config = &state.config;
    let n = prepared.set.len();
    let (hr, wr) = (config.pooled_size, config.pooled_size);
    let mut scores = Tensor::zeros(&[n, config.num_classes]);
    let mut cache = HeadCache {
        region_feats: Vec::with_capacity(n),
        box_feats: Vec::with_capacity(n),
        branches: Vec::with_capacity(n),
    };
    for (r, mask) in prepared.conv_masks.iter().enumerate() {
        let region_feat = config
            .uses_region_pool()
            .then(|| roipool::freeform_roi_pool_forward(convmap, mask, hr, wr))
            .transpose()?;
        let box_feat = config
            .uses_box_pool()
            .then(|| roipool::bbox_roi_pool(convmap, mask.bbox_fm(), hr, wr))
            .transpose()?;

        let mut branches = Vec::with_capacity(2);
        let row = match config.fusion {
            FusionMode::BoxOnly => {
                let (branch, s) =
                    branch_forward(state, flatten_feature(box_feat.as_ref().unwrap()))?;
                branches.push(branch);
                s
            }
            FusionMode::RegionOnly => {
                let (branch, s) =
                    branch_forward(state, flatten_feature(region_feat.as_ref().unwrap()))?;
                branches.push(branch);
                s
            }
            FusionMode::Tied => {
                // same weights on both representations, scores added after
                // the classification layer
                let (rb, rs) =
                    branch_forward(state, flatten_feature(region_feat.as_ref().unwrap()))?;
                let (bb, bs) =
                    branch_forward(state, flatten_feature(box_feat.as_ref().unwrap()))?;
                branches.push(rb);
                branches.push(bb);
                let mut sum = rs;
                sum.add_assign(&bs)?;
                sum
            }
            FusionMode::Separate => {
                let joined = concat(
                    &flatten_feature(region_feat.as_ref().unwrap()),
                    &flatten_feature(box_feat.as_ref().unwrap()),
                );
                let (branch, s) = branch_forward(state, joined)?;
                branches.push(branch);
                s
            }
        };
        scores.data_mut()[r * config.num_classes..(r + 1) * config.num_classes]
            .copy_from_slice(row.data());
        cache.region_feats.push(region_feat);
        cache.box_feats.push(box_feat);
        cache.branches.push(branches);
    }
    Ok((RegionScores::new(scores)?, cache))
}

fn branch_backward(
    state: &mut ModelState,
    branch: &BranchCache,
    grad_row: &Tensor,
) -> Result<Tensor> {
    let (grad_hidden, gw, gb) =
        ops::linear_backward(&branch.hidden, &state.cls_w.value, grad_row)?;
    state.cls_w.accumulate_grad(&gw)?;
    state.cls_b.accumulate_grad(&gb)?;
    let grad_fc_out = ops::relu_backward(&branch.fc_out, &grad_hidden)?;
    let (grad_input, gw, gb) = ops::linear_backward(&branch.input, &state.fc_w.value, &grad_fc_out)?;
    state.fc_w.accumulate_grad(&gw)?;
    state.fc_b.accumulate_grad(&gb)?;
    Ok(grad_input)
}

fn pooled_grad(grad_flat: &[f64], like: &RoiFeature) -> Tensor {
    Tensor::from_vec(like.values.shape(), grad_flat.to_vec()).expect("length matches")
}

/// Backward through heads and pooling; returns the feature-map gradient.
pub fn region_scores_backward(
    state: &mut ModelState,
    cache: &HeadCache,
    grad_scores: &Tensor,
    convmap_shape: &[usize],
) -> Result<Tensor> {
    let config = state.config.clone();
    let num_classes = config.num_classes;
    let mut grad_convmap = Tensor::zeros(convmap_shape);
    for r in 0..cache.branches.len() {
        let grad_row = Tensor::from_vec(
            &[num_classes],
            grad_scores.data()[r * num_classes..(r + 1) * num_classes].to_vec(),
        )?;
        // cheap skip: a region that wins nothing has a zero gradient row
        if grad_row.data().iter().all(|&g| g == 0.0) {
            continue;
        }
        match config.fusion {
            FusionMode::BoxOnly => {
                let grad_input = branch_backward(state, &cache.branches[r][0], &grad_row)?;
                let feat = cache.box_feats[r].as_ref().unwrap();
                roipool::freeform_roi_pool_backward_into(
                    feat,
                    &pooled_grad(grad_input.data(), feat),
                    &mut grad_convmap,
                )?;
            }
            FusionMode::RegionOnly => {
                let grad_input = branch_backward(state, &cache.branches[r][0], &grad_row)?;
                let feat = cache.region_feats[r].as_ref().unwrap();
                roipool::freeform_roi_pool_backward_into(
                    feat,
                    &pooled_grad(grad_input.data(), feat),
                    &mut grad_convmap,
                )?;
            }
            FusionMode::Tied => {
                // additive fusion: both branches receive the same row
                let grad_region = branch_backward(state, &cache.branches[r][0], &grad_row)?;
                let region_feat = cache.region_feats[r].as_ref().unwrap();
                roipool::freeform_roi_pool_backward_into(
                    region_feat,
                    &pooled_grad(grad_region.data(), region_feat),
                    &mut grad_convmap,
                )?;
                let grad_box = branch_backward(state, &cache.branches[r][1], &grad_row)?;
                let box_feat = cache.box_feats[r].as_ref().unwrap();
                roipool::freeform_roi_pool_backward_into(
                    box_feat,
                    &pooled_grad(grad_box.data(), box_feat),
                    &mut grad_convmap,
                )?;
            }
            FusionMode::Separate => {
                let grad_input = branch_backward(state, &cache.branches[r][0], &grad_row)?;
                let half = grad_input.len() / 2;
                let region_feat = cache.region_feats[r].as_ref().unwrap();
                roipool::freeform_roi_pool_backward_into(
                    region_feat,
                    &pooled_grad(&grad_input.data()[..half], region_feat),
                    &mut grad_convmap,
                )?;
                let box_feat = cache.box_feats[r].as_ref().unwrap();
                roipool::freeform_roi_pool_backward_into(
                    box_feat,
                    &pooled_grad(&grad_input.data()[half..], box_feat),
                    &mut grad_convmap,
                )?;
            }
        }
    }
    Ok(grad_convmap)
}

#[derive(Clone, Debug)]
pub struct ModelCache {
    pub backbone: BackboneCache,
    pub head: HeadCache,
    pub scores: RegionScores,
}

/// Forward to region scores, caching everything the backward pass needs.
pub fn forward_scores(
    state: &ModelState,
    image: &Tensor,
    prepared: &PreparedRegions,
) -> Result<ModelCache> {
    let backbone = backbone_forward(state, image)?;
    let (scores, head) = region_scores_forward(state, &backbone.convmap, prepared)?;
    Ok(ModelCache {
        backbone,
        head,
        scores,
    })
}

/// Full end-to-end forward: scores through the region-to-pixel layer.
pub fn forward_endtoend(
    state: &ModelState,
    image: &Tensor,
    prepared: &PreparedRegions,
) -> Result<(PixelScoreMap, ModelCache)> {
    let cache = forward_scores(state, image, prepared)?;
    let pix = r2p::r2p_forward(&cache.scores, &prepared.set)?;
    Ok((pix, cache))
}

/// Baseline forward: identical representation path, region scores out.
pub fn forward_baseline(
    state: &ModelState,
    image: &Tensor,
    prepared: &PreparedRegions,
) -> Result<ModelCache> {
    forward_scores(state, image, prepared)
}

/// Backward from region-score gradients into every parameter gradient.
pub fn backward(
    state: &mut ModelState,
    image: &Tensor,
    cache: &ModelCache,
    grad_scores: &Tensor,
) -> Result<()> {
    if grad_scores.shape() != cache.scores.scores.shape() {
        return Err(Error::shape("backward: score gradient shape mismatch"));
    }
    let grad_convmap = region_scores_backward(
        state,
        &cache.head,
        grad_scores,
        cache.backbone.convmap.shape(),
    )?;
    backbone_backward(state, image, &cache.backbone, &grad_convmap)
}

/// Loss attachment for one training step.
pub enum BatchLoss<'a> {
    Pixel {
        partition: &'a LossPartition,
        weights: &'a ClassWeights,
    },
    Region {
        labels: &'a [RegionLabel],
    },
}

fn loss_and_score_grads(
    state: &ModelState,
    scores: &RegionScores,
    set: &RegionSet,
    loss: &BatchLoss,
) -> Result<(f64, Tensor)> {
    match loss {
        BatchLoss::Pixel { partition, weights } => {
            let result = match state.config.softmax_order {
                SoftmaxOrder::MaxThenSoftmax => {
                    losses::pixel_loss_partitioned(scores, set, partition, weights)?
                }
                SoftmaxOrder::SoftmaxThenMax => {
                    losses::pixel_loss_softmax_first(scores, set, partition, weights)?
                }
            };
            Ok((result.value, result.grad))
        }
        BatchLoss::Region { labels } => {
            let result = losses::region_loss(scores, labels)?;
            Ok((result.value, result.grad))
        }
    }
}

/// One full training evaluation: forward, loss, backward into param grads.
pub fn forward_loss_backward(
    state: &mut ModelState,
    image: &Tensor,
    prepared: &PreparedRegions,
    loss: &BatchLoss,
) -> Result<f64> {
    debug_assert!(matches!(
        (state.config.arch, loss),
        (Architecture::EndToEnd, BatchLoss::Pixel { .. })
            | (Architecture::Baseline, BatchLoss::Region { .. })
    ));
    let cache = forward_scores(state, image, prepared)?;
    let (value, grad_scores) = loss_and_score_grads(state, &cache.scores, &prepared.set, loss)?;
    backward(state, image, &cache, &grad_scores)?;
    Ok(value)
}

/// Prediction under the configured composition: baseline and
/// softmax-then-max models apply the per-region softmax before the pixel
/// max; the end-to-end default maxes raw scores first.
pub fn predict(
    state: &ModelState,
    image: &Tensor,
    prepared: &PreparedRegions,
) -> Result<Prediction> {
    let cache = forward_scores(state, image, prepared)?;
    match (state.config.arch, state.config.softmax_order) {
        (Architecture::Baseline, _) | (_, SoftmaxOrder::SoftmaxThenMax) => {
            r2p::predict_baseline(&cache.scores, &prepared.set)
        }
        (_, SoftmaxOrder::MaxThenSoftmax) => {
            let pix = r2p::r2p_forward(&cache.scores, &prepared.set)?;
            r2p::predict_endtoend(&pix)
        }
    }
}

// --- whole-model gradient checking ---------------------------------------

/// Loss plus a hash of every routing decision in the pipeline: maxpool
/// argmaxes, ROI pooling argmaxes, relu activation patterns, and the
/// max winners inside the loss.
pub fn forward_loss_probe(
    state: &ModelState,
    image: &Tensor,
    prepared: &PreparedRegions,
    loss: &BatchLoss,
) -> Result<Probe> {
    let cache = forward_scores(state, image, prepared)?;
    let (value, _) = loss_and_score_grads(state, &cache.scores, &prepared.set, loss)?;
    let mut h = RoutingHash::new();
    h.mix_slice_u32(&cache.backbone.pool_argmax);
    h.mix_sign_pattern(&cache.backbone.conv1_out);
    h.mix_sign_pattern(&cache.backbone.conv2_out);
    for r in 0..cache.head.branches.len() {
        for feat in [&cache.head.region_feats[r], &cache.head.box_feats[r]] {
            if let Some(f) = feat {
                for &a in &f.argmax {
                    h.mix_i64(a as i64);
                }
            }
        }
        for branch in &cache.head.branches[r] {
            h.mix_sign_pattern(&branch.fc_out);
        }
    }
    let num_classes = state.config.num_classes;
    if let BatchLoss::Pixel { partition, .. } = loss {
        let sdata = cache.scores.scores.data();
        for cell in &partition.cells {
            match state.config.softmax_order {
                SoftmaxOrder::MaxThenSoftmax => {
                    for c in 0..num_classes {
                        let mut best = f64::NEG_INFINITY;
                        let mut winner = 0u32;
                        for &rid in &cell.covering {
                            let v = sdata[rid as usize * num_classes + c];
                            if v > best {
                                best = v;
                                winner = rid;
                            }
                        }
                        h.mix(winner as u64);
                    }
                }
                SoftmaxOrder::SoftmaxThenMax => {
                    // winner for the gt class; per-region softmax is
                    // monotone per row only in the same class's score, so
                    // winner must be computed on log-probs
                    let y = cell.class_id as usize;
                    let mut logp = vec![0.0; num_classes];
                    let mut best = f64::NEG_INFINITY;
                    let mut winner = 0u32;
                    for &rid in &cell.covering {
                        ops::log_softmax_slice(
                            &sdata[rid as usize * num_classes..(rid as usize + 1) * num_classes],
                            &mut logp,
                        );
                        if logp[y] > best {
                            best = logp[y];
                            winner = rid;
                        }
                    }
                    h.mix(winner as u64);
                }
            }
        }
    }
    Ok(Probe {
        loss: value,
        routing: h.finish(),
    })
}

#[derive(Clone, Debug)]
pub struct LayerCheck {
    pub name: &'static str,
    pub report: GradReport,
}

/// Finite-difference check of the whole pipeline over sampled weight
/// coordinates of every parameter tensor.
pub fn whole_model_gradcheck(
    state: &mut ModelState,
    image: &Tensor,
    prepared: &PreparedRegions,
    loss: &BatchLoss,
    samples_per_param: usize,
    eps: f64,
    seed: u64,
) -> Result<Vec<LayerCheck>> {
    use rand::Rng;
    // analytic gradients
    state.zero_grads();
    forward_loss_backward(state, image, prepared, loss)?;
    let analytic: Vec<(&'static str, Tensor)> = state
        .named_params()
        .into_iter()
        .map(|(name, p)| (name, p.grad.clone()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for (name, grad) in analytic {
        let len = grad.len();
        let mut coords: Vec<usize> = if len <= samples_per_param {
            (0..len).collect()
        } else {
            let mut picked: Vec<usize> = (0..samples_per_param)
                .map(|_| rng.gen_range(0..len))
                .collect();
            picked.sort_unstable();
            picked.dedup();
            picked
        };
        coords.retain(|&i| i < len);
        let mut report = GradReport::default();
        for &i in &coords {
            let orig = {
                let (_, p) = state
                    .params_mut()
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .unwrap();
                let orig = p.value.data()[i];
                p.value.data_mut()[i] = orig + eps;
                orig
            };
            let plus = forward_loss_probe(state, image, prepared, loss)?;
            {
                let (_, p) = state
                    .params_mut()
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .unwrap();
                p.value.data_mut()[i] = orig - eps;
            }
            let minus = forward_loss_probe(state, image, prepared, loss)?;
            {
                let (_, p) = state
                    .params_mut()
                    .into_iter()
                    .find(|(n, _)| *n == name)
                    .unwrap();
                p.value.data_mut()[i] = orig;
            }
            if plus.routing != minus.routing {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * eps);
            let err = crate::gradcheck::rel_error(grad.data()[i], numeric);
            if err > report.max_rel_err {
                report.max_rel_err = err;
            }
            report.checked += 1;
        }
        checks.push(LayerCheck { name, report });
    }
    Ok(checks)
}
