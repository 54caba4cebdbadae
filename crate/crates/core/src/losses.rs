//! Pixel-level and region-level cross-entropy losses.
//!
//! The pixel loss can be evaluated naively over the pixel score map or, in
//! exactly equivalent form, over the loss partition: pixels of one cell
//! share their covering set and ground-truth class, so the cell contributes
//! count x (one softmax evaluation). The partitioned path also produces the
//! region-level gradients directly, folding the region-to-pixel backward
//! summation into the same loop.

use crate::error::{Error, Result};
use crate::ops;
use crate::partition::LossPartition;
use crate::r2p::{PixelScoreMap, RegionScores, NO_REGION};
use crate::regions::{LabelMap, RegionSet, VOID};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    Balanced,
    Unbalanced,
}

/// Per-class pixel weights for one training image.
///
/// Balanced mode: w_c = 1 / (Z * P_c) over classes present in the image,
/// with Z chosen so the weighted pixel counts sum to 1; absent classes get
/// weight 0. Unbalanced mode: w_c = 1 / P uniformly.
#[derive(Clone, Debug)]
pub struct ClassWeights {
    pub w: Vec<f64>,
}

impl ClassWeights {
    pub fn get(&self, class: u8) -> f64 {
        self.w[class as usize]
    }

    /// The renormalization identity: sum_c w_c * P_c over the image.
    pub fn weighted_count_sum(&self, gt: &LabelMap) -> f64 {
        let counts = gt.class_counts(self.w.len());
        self.w
            .iter()
            .zip(&counts)
            .map(|(w, &n)| w * n as f64)
            .sum()
    }
}

pub fn class_weights(gt: &LabelMap, num_classes: usize, mode: LossMode) -> Result<ClassWeights> {
    let counts = gt.class_counts(num_classes);
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid("label map has no non-void pixel"));
    }
    let w = match mode {
        LossMode::Unbalanced => vec![1.0 / total as f64; num_classes],
        LossMode::Balanced => {
            let present = counts.iter().filter(|&&n| n > 0).count() as f64;
            counts
                .iter()
                .map(|&n| if n > 0 { 1.0 / (present * n as f64) } else { 0.0 })
                .collect()
        }
    };
    Ok(ClassWeights { w })
}

/// Scalar loss plus its gradient; the gradient tensor is P x C for pixel
/// losses and R x C for region-level ones.
#[derive(Clone, Debug)]
pub struct LossResult {
    pub value: f64,
    pub grad: Tensor,
}

/// Weighted pixel-level log-loss over the maxed scores (naive path).
/// Gradient is w.r.t. the pixel scores S_{p,c}.
pub fn pixel_loss(pix: &PixelScoreMap, gt: &LabelMap, w: &ClassWeights) -> Result<LossResult> {
    if gt.width() != pix.width || gt.height() != pix.height {
        return Err(Error::shape("pixel loss: label map / score map size mismatch"));
    }
    let num_classes = pix.num_classes();
    let num_pixels = gt.len();
    let mut value = 0.0;
    let mut grad = Tensor::zeros(&[num_pixels, num_classes]);
    let mut softmax = vec![0.0; num_classes];
    for p in 0..num_pixels {
        let label = gt.at(p);
        if label == VOID {
            continue;
        }
        if pix.winner[p * num_classes] == NO_REGION {
            return Err(Error::UncoveredPixel {
                x: p % gt.width(),
                y: p / gt.width(),
            });
        }
        let weight = w.get(label);
        let row = &pix.scores.data()[p * num_classes..(p + 1) * num_classes];
        let logp = ops::softmax_with_logp(row, &mut softmax, label as usize);
        value -= weight * logp;
        for c in 0..num_classes {
            let target = (c == label as usize) as u8 as f64;
            grad.data_mut()[p * num_classes + c] = weight * (softmax[c] - target);
        }
    }
    Ok(LossResult { value, grad })
}

/// Equivalent pixel loss evaluated over the partition cells, producing the
/// region-level gradient (R x C) directly.
pub fn pixel_loss_partitioned(
    scores: &RegionScores,
    regions: &RegionSet,
    partition: &LossPartition,
    w: &ClassWeights,
) -> Result<LossResult> {
    if partition.region_count != regions.len() || scores.num_regions() != regions.len() {
        return Err(Error::StalePartition {
            expected: partition.region_count,
            actual: scores.num_regions(),
        });
    }
    let num_classes = scores.num_classes();
    let mut value = 0.0;
    let mut grad = Tensor::zeros(&[regions.len(), num_classes]);
    let mut row = vec![0.0; num_classes];
    let mut winner = vec![0u32; num_classes];
    let mut softmax = vec![0.0; num_classes];
    let sdata = scores.scores.data();
    for cell in &partition.cells {
        if cell.covering.is_empty() {
            let p = cell.pixels[0] as usize;
            return Err(Error::UncoveredPixel {
                x: p % regions.width,
                y: p / regions.width,
            });
        }
        // shared max over the covering set, winner per class
        for c in 0..num_classes {
            row[c] = f64::NEG_INFINITY;
        }
        for &rid in &cell.covering {
            let base = rid as usize * num_classes;
            for c in 0..num_classes {
                let v = sdata[base + c];
                if v > row[c] {
                    row[c] = v;
                    winner[c] = rid;
                }
            }
        }
        let weight = w.get(cell.class_id);
        let count = cell.pixel_count as f64;
        let logp = ops::softmax_with_logp(&row, &mut softmax, cell.class_id as usize);
        value -= count * weight * logp;
        for c in 0..num_classes {
            let target = (c == cell.class_id as usize) as u8 as f64;
            grad.data_mut()[winner[c] as usize * num_classes + c] +=
                count * weight * (softmax[c] - target);
        }
    }
    Ok(LossResult { value, grad })
}

/// Pixel-level loss for the softmax-then-max composition: each pixel is
/// charged -log of the max over covering regions of its ground-truth
/// class probability. Evaluated over the partition; gradient is R x C.
pub fn pixel_loss_softmax_first(
    scores: &RegionScores,
    regions: &RegionSet,
    partition: &LossPartition,
    w: &ClassWeights,
) -> Result<LossResult> {
    if partition.region_count != regions.len() || scores.num_regions() != regions.len() {
        return Err(Error::StalePartition {
            expected: partition.region_count,
            actual: scores.num_regions(),
        });
    }
    let num_classes = scores.num_classes();
    // per-region log-probabilities
    let mut logp_rows = Tensor::zeros(scores.scores.shape());
    for r in 0..regions.len() {
        let row = &scores.scores.data()[r * num_classes..(r + 1) * num_classes];
        ops::log_softmax_slice(
            row,
            &mut logp_rows.data_mut()[r * num_classes..(r + 1) * num_classes],
        );
    }
    let mut value = 0.0;
    let mut grad = Tensor::zeros(&[regions.len(), num_classes]);
    for cell in &partition.cells {
        if cell.covering.is_empty() {
            let p = cell.pixels[0] as usize;
            return Err(Error::UncoveredPixel {
                x: p % regions.width,
                y: p / regions.width,
            });
        }
        let y = cell.class_id as usize;
        let mut best = f64::NEG_INFINITY;
        let mut winner = 0u32;
        for &rid in &cell.covering {
            let v = logp_rows.at2(rid as usize, y);
            if v > best {
                best = v;
                winner = rid;
            }
        }
        let weight = w.get(cell.class_id);
        let count = cell.pixel_count as f64;
        value -= count * weight * best;
        // d(-log softmax_y(S_r*)) / dS_{r*,c} = softmax_c - [c == y]
        let base = winner as usize * num_classes;
        for c in 0..num_classes {
            let softmax = logp_rows.data()[base + c].exp();
            let target = (c == y) as u8 as f64;
            grad.data_mut()[base + c] += count * weight * (softmax - target);
        }
    }
    Ok(LossResult { value, grad })
}

/// Per-region training label for the baseline loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionLabel {
    Class(u8),
    Ignore,
}

/// Mean cross-entropy over labeled regions; ignored regions contribute
/// nothing. Gradient is R x C.
pub fn region_loss(scores: &RegionScores, labels: &[RegionLabel]) -> Result<LossResult> {
    if labels.len() != scores.num_regions() {
        return Err(Error::shape("region loss: label count mismatch"));
    }
    let labeled = labels
        .iter()
        .filter(|l| matches!(l, RegionLabel::Class(_)))
        .count();
    if labeled == 0 {
        return Err(Error::invalid("region loss: every region is ignored"));
    }
    let num_classes = scores.num_classes();
    let norm = 1.0 / labeled as f64;
    let mut value = 0.0;
    let mut grad = Tensor::zeros(scores.scores.shape());
    let mut logp = vec![0.0; num_classes];
    for (r, label) in labels.iter().enumerate() {
        let RegionLabel::Class(y) = label else {
            continue;
        };
        let row = &scores.scores.data()[r * num_classes..(r + 1) * num_classes];
        ops::log_softmax_slice(row, &mut logp);
        value -= norm * logp[*y as usize];
        for c in 0..num_classes {
            let softmax = logp[c].exp();
            let target = (c == *y as usize) as u8 as f64;
            grad.data_mut()[r * num_classes + c] = norm * (softmax - target);
        }
    }
    Ok(LossResult { value, grad })
}

/// Labels each region with its majority ground-truth class when the overlap
/// reaches `pos_overlap`, otherwise Ignore. `neg_overlap` is validated
/// against the positive threshold; under majority-class labeling anything
/// below `pos_overlap` is ignored rather than mined as a negative.
pub fn assign_region_labels(
    regions: &RegionSet,
    gt: &LabelMap,
    pos_overlap: f64,
    neg_overlap: f64,
) -> Result<Vec<RegionLabel>> {
    if !(0.0..=1.0).contains(&neg_overlap)
        || !(0.0..=1.0).contains(&pos_overlap)
        || neg_overlap > pos_overlap
    {
        return Err(Error::invalid(format!(
            "need 0 <= neg ({}) <= pos ({}) <= 1",
            neg_overlap, pos_overlap
        )));
    }
    Ok(regions
        .regions
        .iter()
        .map(|region| match crate::regions::region_label_and_overlap(region, gt) {
            Some((class, overlap)) if overlap >= pos_overlap => RegionLabel::Class(class),
            _ => RegionLabel::Ignore,
        })
        .collect())
}
