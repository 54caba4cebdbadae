//! Region-to-pixel layer: per-class max over covering regions, with exact
//! subgradient routing back to the winning region.
//!
//! The forward pass records, for every (pixel, class), the id of the region
//! that supplied the max. The backward pass sums each pixel-level gradient
//! into that winner's row, so regions that never win receive exactly zero
//! gradient. Both prediction rules live here as well: max-then-softmax over
//! raw scores, and the softmax-then-max composition used by the region
//! classification baseline.

use crate::error::{Error, Result};
use crate::ops;
use crate::regions::{LabelMap, RegionSet};
use crate::tensor::Tensor;

/// Score sentinel for (pixel, class) slots covered by no region. Documented
/// large negative constant; never fed to a loss.
pub const UNCOVERED_SCORE: f64 = -1e30;

/// Marker for winner slots with no covering region.
pub const NO_REGION: i32 = -1;

/// R x C classifier activations, one row per region.
#[derive(Clone, Debug)]
pub struct RegionScores {
    pub scores: Tensor,
}

impl RegionScores {
    pub fn new(scores: Tensor) -> Result<Self> {
        if scores.ndim() != 2 {
            return Err(Error::shape("region scores must be R x C"));
        }
        Ok(RegionScores { scores })
    }

    pub fn num_regions(&self) -> usize {
        self.scores.dim(0)
    }

    pub fn num_classes(&self) -> usize {
        self.scores.dim(1)
    }
}

/// Per-pixel per-class scores plus the winning region per slot.
#[derive(Clone, Debug)]
pub struct PixelScoreMap {
    pub scores: Tensor,
    pub winner: Vec<i32>,
    pub width: usize,
    pub height: usize,
}

impl PixelScoreMap {
    pub fn num_classes(&self) -> usize {
        self.scores.dim(1)
    }

    /// A pixel is covered iff some region contains it; coverage is
    /// class-independent.
    pub fn is_covered(&self, pixel: usize) -> bool {
        self.winner[pixel * self.num_classes()] != NO_REGION
    }
}

/// Shared max-scan: per pixel and class, the max over covering regions of
/// the given R x C rows, with winner ids (lowest region id on ties).
fn max_over_covering(rows: &Tensor, regions: &RegionSet) -> (Tensor, Vec<i32>) {
    let num_classes = rows.dim(1);
    let num_pixels = regions.width * regions.height;
    let mut scores = Tensor::filled(&[num_pixels, num_classes], UNCOVERED_SCORE);
    let mut winner = vec![NO_REGION; num_pixels * num_classes];
    let sdata = scores.data_mut();
    let rdata = rows.data();
    for (rid, region) in regions.regions.iter().enumerate() {
        let rbase = rid * num_classes;
        for &p in region.pixels() {
            let pbase = p as usize * num_classes;
            for c in 0..num_classes {
                let v = rdata[rbase + c];
                // strict > with ascending region id: ties go to the lowest id
                if winner[pbase + c] == NO_REGION || v > sdata[pbase + c] {
                    sdata[pbase + c] = v;
                    winner[pbase + c] = rid as i32;
                }
            }
        }
    }
    (scores, winner)
}

/// Maps region scores to pixel scores: S_pixel = max over covering regions.
pub fn r2p_forward(scores: &RegionScores, regions: &RegionSet) -> Result<PixelScoreMap> {
    if scores.num_regions() != regions.len() {
        return Err(Error::shape(format!(
            "{} score rows for {} regions",
            scores.num_regions(),
            regions.len()
        )));
    }
    let (pixel_scores, winner) = max_over_covering(&scores.scores, regions);
    Ok(PixelScoreMap {
        scores: pixel_scores,
        winner,
        width: regions.width,
        height: regions.height,
    })
}

/// Sums each pixel-level gradient into the row of the region that won the
/// forward max. Regions winning nowhere get a zero row.
pub fn r2p_backward(pix_grad: &Tensor, winner: &[i32], num_regions: usize) -> Result<Tensor> {
    if pix_grad.ndim() != 2 || pix_grad.len() != winner.len() {
        return Err(Error::shape("r2p backward: grad/winner mismatch"));
    }
    let num_classes = pix_grad.dim(1);
    let mut grad = Tensor::zeros(&[num_regions, num_classes]);
    for (slot, &w) in winner.iter().enumerate() {
        if w == NO_REGION {
            continue;
        }
        let g = pix_grad.data()[slot];
        if g != 0.0 {
            let c = slot % num_classes;
            grad.data_mut()[w as usize * num_classes + c] += g;
        }
    }
    Ok(grad)
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub labels: LabelMap,
    /// Pixels labeled through the nearest-covered-pixel fallback.
    pub uncovered: usize,
}

fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Assigns uncovered pixels the label of the nearest covered pixel
/// (Euclidean distance, ties to the smaller linear index).
fn fill_uncovered(
    labels: &mut LabelMap,
    covered: &[bool],
    width: usize,
    height: usize,
) -> Result<usize> {
    let holes: Vec<usize> = (0..covered.len()).filter(|&p| !covered[p]).collect();
    if holes.is_empty() {
        return Ok(0);
    }
    if holes.len() == covered.len() {
        return Err(Error::invalid("no pixel is covered by any region"));
    }
    let mut fills = Vec::with_capacity(holes.len());
    for &p in &holes {
        let (px, py) = ((p % width) as f64, (p / width) as f64);
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for q in 0..covered.len() {
            if !covered[q] {
                continue;
            }
            let (qx, qy) = ((q % width) as f64, (q / width) as f64);
            let d = (px - qx).powi(2) + (py - qy).powi(2);
            if d < best_d {
                best_d = d;
                best = q;
            }
        }
        fills.push((p, labels.at(best)));
    }
    for (p, v) in fills {
        labels.labels_mut()[p] = v;
    }
    let _ = height;
    Ok(holes.len())
}

/// End-to-end prediction rule: softmax over the per-pixel maxed scores,
/// then argmax. Softmax is monotone, so this must agree with a plain
/// argmax of the maxed scores; both are computed and compared.
pub fn predict_endtoend(pix: &PixelScoreMap) -> Result<Prediction> {
    let num_classes = pix.num_classes();
    let num_pixels = pix.width * pix.height;
    let mut labels = LabelMap::new(pix.width, pix.height, 0);
    let mut covered = vec![false; num_pixels];
    let mut probs = vec![0.0; num_classes];
    for p in 0..num_pixels {
        if !pix.is_covered(p) {
            continue;
        }
        covered[p] = true;
        let row = &pix.scores.data()[p * num_classes..(p + 1) * num_classes];
        ops::softmax_slice(row, &mut probs);
        let by_prob = argmax_row(&probs);
        let by_score = argmax_row(row);
        assert_eq!(
            by_prob, by_score,
            "softmax monotonicity violated at pixel {}",
            p
        );
        labels.labels_mut()[p] = by_prob as u8;
    }
    let uncovered = fill_uncovered(&mut labels, &covered, pix.width, pix.height)?;
    Ok(Prediction { labels, uncovered })
}

/// Baseline prediction rule: per-region softmax first, then per pixel the
/// max probability over covering regions, then argmax over classes.
pub fn predict_baseline(scores: &RegionScores, regions: &RegionSet) -> Result<Prediction> {
    if scores.num_regions() != regions.len() {
        return Err(Error::shape("region/score count mismatch"));
    }
    let num_classes = scores.num_classes();
    let mut prob_rows = Tensor::zeros(scores.scores.shape());
    for r in 0..scores.num_regions() {
        let row = &scores.scores.data()[r * num_classes..(r + 1) * num_classes];
        ops::softmax_slice(row, &mut prob_rows.data_mut()[r * num_classes..(r + 1) * num_classes]);
    }
    let (pixel_probs, winner) = max_over_covering(&prob_rows, regions);
    let num_pixels = regions.width * regions.height;
    let mut labels = LabelMap::new(regions.width, regions.height, 0);
    let mut covered = vec![false; num_pixels];
    for p in 0..num_pixels {
        if winner[p * num_classes] == NO_REGION {
            continue;
        }
        covered[p] = true;
        let row = &pixel_probs.data()[p * num_classes..(p + 1) * num_classes];
        labels.labels_mut()[p] = argmax_row(row) as u8;
    }
    let uncovered = fill_uncovered(&mut labels, &covered, regions.width, regions.height)?;
    Ok(Prediction { labels, uncovered })
}
