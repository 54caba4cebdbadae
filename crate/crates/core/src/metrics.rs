//! Segmentation metrics: global accuracy, class-average accuracy, mean IoU,
//! and boundary-band evaluation.
//!
//! Boundary distance is measured from pixel centers to label-change edges
//! (the cracks between 4-neighbors with different non-void labels), by
//! brute-force Euclidean computation. Pixels touching a crack sit at
//! distance 0.5, so band 0 selects exactly the boundary pixels.

use crate::error::{Error, Result};
use crate::regions::{LabelMap, VOID};

#[derive(Clone, Debug)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    num_classes: usize,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![0; num_classes * num_classes],
            num_classes,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn record(&mut self, gt: u8, pred: u8) {
        self.counts[gt as usize * self.num_classes + pred as usize] += 1;
    }

    /// Accumulates one image; ground-truth void pixels are excluded.
    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        if gt.width() != pred.width() || gt.height() != pred.height() {
            return Err(Error::shape("confusion: gt/pred size mismatch"));
        }
        for p in 0..gt.len() {
            let g = gt.at(p);
            if g == VOID {
                continue;
            }
            self.record(g, pred.at(p));
        }
        Ok(())
    }

    /// Accumulates only pixels selected by the mask.
    pub fn accumulate_masked(
        &mut self,
        gt: &LabelMap,
        pred: &LabelMap,
        mask: &[bool],
    ) -> Result<()> {
        if mask.len() != gt.len() {
            return Err(Error::shape("confusion: mask size mismatch"));
        }
        for p in 0..gt.len() {
            if mask[p] && gt.at(p) != VOID {
                self.record(gt.at(p), pred.at(p));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        (0..self.num_classes).map(|j| self.get(c, j)).sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        (0..self.num_classes).map(|i| self.get(i, c)).sum()
    }

    pub fn per_class_accuracy(&self, c: usize) -> Option<f64> {
        let row = self.row_sum(c);
        (row > 0).then(|| self.get(c, c) as f64 / row as f64)
    }

    pub fn per_class_iou(&self, c: usize) -> Option<f64> {
        let union = self.row_sum(c) + self.col_sum(c) - self.get(c, c);
        (union > 0).then(|| self.get(c, c) as f64 / union as f64)
    }
}

/// Fraction of correctly labeled pixels.
pub fn global_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("empty confusion matrix"));
    }
    let trace: u64 = (0..cm.num_classes()).map(|c| cm.get(c, c)).sum();
    Ok(trace as f64 / total as f64)
}

/// Mean over classes with ground-truth pixels of per-class accuracy.
pub fn class_average_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let accs: Vec<f64> = (0..cm.num_classes())
        .filter_map(|c| cm.per_class_accuracy(c))
        .collect();
    if accs.is_empty() {
        return Err(Error::invalid("no class has ground-truth pixels"));
    }
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

/// Mean IoU over classes present in ground truth or prediction. With
/// `include_absent`, classes absent from both contribute an IoU of 0.
pub fn mean_iou_with(cm: &ConfusionMatrix, include_absent: bool) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in 0..cm.num_classes() {
        match cm.per_class_iou(c) {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None if include_absent => {
                n += 1;
            }
            None => {}
        }
    }
    if n == 0 {
        return Err(Error::invalid("no class present in gt or prediction"));
    }
    Ok(sum / n as f64)
}

pub fn mean_iou(cm: &ConfusionMatrix) -> Result<f64> {
    mean_iou_with(cm, false)
}

/// Midpoints of label-change edges: for every pair of 4-neighbors with
/// different non-void labels, the point halfway between their centers.
fn boundary_edge_points(gt: &LabelMap) -> Vec<(f64, f64)> {
    let (w, h) = (gt.width(), gt.height());
    let mut points = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let a = gt.get(x, y);
            if a == VOID {
                continue;
            }
            if x + 1 < w {
                let b = gt.get(x + 1, y);
                if b != VOID && b != a {
                    points.push((x as f64 + 1.0, y as f64 + 0.5));
                }
            }
            if y + 1 < h {
                let b = gt.get(x, y + 1);
                if b != VOID && b != a {
                    points.push((x as f64 + 0.5, y as f64 + 1.0));
                }
            }
        }
    }
    points
}

/// Mask of non-void pixels whose center lies within `band` of the nearest
/// ground-truth label-change edge. Pixels adjacent to an edge (distance
/// 0.5) are always included, so band 0 yields exactly the boundary pixels.
/// A uniform map has no edges and yields an empty mask.
pub fn boundary_band(gt: &LabelMap, band: usize) -> Vec<bool> {
    let (w, h) = (gt.width(), gt.height());
    let points = boundary_edge_points(gt);
    let mut mask = vec![false; w * h];
    if points.is_empty() {
        return mask;
    }
    let limit = (band as f64).max(0.5);
    let limit_sq = limit * limit;
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if gt.at(p) == VOID {
                continue;
            }
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            mask[p] = points
                .iter()
                .any(|&(ex, ey)| (cx - ex).powi(2) + (cy - ey).powi(2) <= limit_sq);
        }
    }
    mask
}

/// Class-average accuracy restricted to the boundary band. `None` when the
/// band is empty (uniform ground truth).
pub fn boundary_class_accuracy(pred: &LabelMap, gt: &LabelMap, band: usize) -> Result<Option<f64>> {
    let mask = boundary_band(gt, band);
    if mask.iter().all(|&m| !m) {
        return Ok(None);
    }
    let classes = 1 + gt
        .labels()
        .iter()
        .chain(pred.labels())
        .filter(|&&v| v != VOID)
        .map(|&v| v as usize)
        .max()
        .unwrap_or(0);
    let mut cm = ConfusionMatrix::new(classes);
    cm.accumulate_masked(gt, pred, &mask)?;
    Ok(Some(class_average_accuracy(&cm)?))
}

/// Human-readable and machine-parseable metric lines for one evaluation.
pub fn report_lines(cm: &ConfusionMatrix, boundary: Option<(usize, Option<f64>)>) -> Vec<String> {
    let mut lines = vec![
        format!("metric=global_accuracy value={:.6}", global_accuracy(cm).unwrap_or(f64::NAN)),
        format!(
            "metric=class_average_accuracy value={:.6}",
            class_average_accuracy(cm).unwrap_or(f64::NAN)
        ),
        format!("metric=mean_iou value={:.6}", mean_iou(cm).unwrap_or(f64::NAN)),
    ];
    if let Some((band, value)) = boundary {
        match value {
            Some(v) => lines.push(format!(
                "metric=boundary_class_accuracy band={} value={:.6}",
                band, v
            )),
            None => lines.push(format!(
                "metric=boundary_class_accuracy band={} value=absent",
                band
            )),
        }
    }
    lines
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cm_from(rows: &[&[u64]]) -> ConfusionMatrix {
        let n = rows.len();
        let mut cm = ConfusionMatrix::new(n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                cm.counts[i * n + j] = v;
            }
        }
        cm
    }

    #[test]
    fn global_accuracy_cases() {
        let perfect = cm_from(&[&[5, 0], &[0, 5]]);
        assert_eq!(global_accuracy(&perfect).unwrap(), 1.0);
        let wrong = cm_from(&[&[0, 5], &[5, 0]]);
        assert_eq!(global_accuracy(&wrong).unwrap(), 0.0);
        let mixed = cm_from(&[&[3, 1], &[2, 4]]);
        assert!((global_accuracy(&mixed).unwrap() - 0.7).abs() < 1e-15);
        assert!(global_accuracy(&ConfusionMatrix::new(2)).is_err());
    }

    #[test]
    fn class_average_cases() {
        let mixed = cm_from(&[&[3, 1], &[2, 4]]);
        let expect = (0.75 + 4.0 / 6.0) / 2.0;
        assert!((class_average_accuracy(&mixed).unwrap() - expect).abs() < 1e-12);

        // absent class excluded from the mean
        let absent = cm_from(&[&[3, 1, 0], &[2, 4, 0], &[0, 0, 0]]);
        assert!((class_average_accuracy(&absent).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn mean_iou_cases() {
        let perfect = cm_from(&[&[5, 0], &[0, 5]]);
        assert_eq!(mean_iou(&perfect).unwrap(), 1.0);

        // gt half A half B, predicted all A
        let half = cm_from(&[&[8, 0], &[8, 0]]);
        assert!((mean_iou(&half).unwrap() - 0.25).abs() < 1e-15);

        // disjoint prediction and gt for a class -> IoU 0 for both classes
        let disjoint = cm_from(&[&[0, 4], &[4, 0]]);
        assert_eq!(mean_iou(&disjoint).unwrap(), 0.0);
    }

    #[test]
    fn per_class_iou_bounded_by_recall() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..20 {
            let mut cm = ConfusionMatrix::new(4);
            for i in 0..4 {
                for j in 0..4 {
                    cm.counts[i * 4 + j] = rng.gen_range(0..50);
                }
            }
            for c in 0..4 {
                if let (Some(iou), Some(acc)) = (cm.per_class_iou(c), cm.per_class_accuracy(c)) {
                    assert!(iou <= acc + 1e-12);
                }
            }
            // global accuracy bounded by per-class extremes
            let accs: Vec<f64> = (0..4).filter_map(|c| cm.per_class_accuracy(c)).collect();
            if !accs.is_empty() && cm.total() > 0 {
                let g = global_accuracy(&cm).unwrap();
                let lo = accs.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(g >= lo - 1e-12 && g <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn metrics_are_permutation_consistent() {
        let cm = cm_from(&[&[3, 1, 2], &[0, 7, 1], &[4, 2, 9]]);
        // permute classes 0<->2 consistently in gt and pred
        let perm = [2usize, 1, 0];
        let mut permuted = ConfusionMatrix::new(3);
        for i in 0..3 {
            for j in 0..3 {
                permuted.counts[perm[i] * 3 + perm[j]] = cm.get(i, j);
            }
        }
        assert!((global_accuracy(&cm).unwrap() - global_accuracy(&permuted).unwrap()).abs() < 1e-15);
        assert!(
            (class_average_accuracy(&cm).unwrap() - class_average_accuracy(&permuted).unwrap())
                .abs()
                < 1e-15
        );
        assert!((mean_iou(&cm).unwrap() - mean_iou(&permuted).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn boundary_band_uniform_map_is_empty() {
        let gt = LabelMap::new(8, 8, 3);
        assert!(boundary_band(&gt, 4).iter().all(|&m| !m));
    }

    #[test]
    fn boundary_band_vertical_split() {
        // split at x = 8 on 16x16: band 4 selects 4 columns on each side
        let mut gt = LabelMap::new(16, 16, 0);
        for y in 0..16 {
            for x in 8..16 {
                gt.set(x, y, 1);
            }
        }
        let mask = boundary_band(&gt, 4);
        for y in 0..16 {
            for x in 0..16 {
                let expect = (4..12).contains(&x);
                assert_eq!(mask[y * 16 + x], expect, "x = {}", x);
            }
        }

        // band 0: exactly the boundary pixels (columns 7 and 8)
        let mask0 = boundary_band(&gt, 0);
        for y in 0..16 {
            for x in 0..16 {
                let expect = x == 7 || x == 8;
                assert_eq!(mask0[y * 16 + x], expect, "x = {}", x);
            }
        }
    }

    /// Definition-level oracle: for every pixel scan all 4-neighbor pairs
    /// with differing non-void labels and compare center-to-midpoint
    /// distance against the band.
    fn boundary_band_oracle(gt: &LabelMap, band: usize) -> Vec<bool> {
        let (w, h) = (gt.width(), gt.height());
        let mut midpoints = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let a = gt.get(x, y);
                if a == VOID {
                    continue;
                }
                for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                    if nx < w && ny < h {
                        let b = gt.get(nx, ny);
                        if b != VOID && b != a {
                            midpoints.push((
                                (x as f64 + nx as f64 + 1.0) / 2.0,
                                (y as f64 + ny as f64 + 1.0) / 2.0,
                            ));
                        }
                    }
                }
            }
        }
        let limit = (band as f64).max(0.5);
        (0..w * h)
            .map(|p| {
                if gt.at(p) == VOID || midpoints.is_empty() {
                    return false;
                }
                let (cx, cy) = ((p % w) as f64 + 0.5, (p / w) as f64 + 0.5);
                midpoints
                    .iter()
                    .any(|&(ex, ey)| ((cx - ex).powi(2) + (cy - ey).powi(2)).sqrt() <= limit)
            })
            .collect()
    }

    #[test]
    fn boundary_band_matches_oracle_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        for _ in 0..20 {
            let mut gt = LabelMap::new(12, 12, 0);
            for p in 0..144 {
                let v = rng.gen_range(0..4);
                gt.labels_mut()[p] = if v == 3 { VOID } else { v };
            }
            for band in [0usize, 1, 2, 4] {
                assert_eq!(boundary_band(&gt, band), boundary_band_oracle(&gt, band));
            }
        }
    }

    #[test]
    fn boundary_accuracy_restriction() {
        let mut gt = LabelMap::new(16, 16, 0);
        for y in 0..16 {
            for x in 8..16 {
                gt.set(x, y, 1);
            }
        }
        // perfect prediction
        assert_eq!(
            boundary_class_accuracy(&gt.clone(), &gt, 4).unwrap(),
            Some(1.0)
        );
        // correct only inside the band: band accuracy 1.0, full-image < 1.0
        let mask = boundary_band(&gt, 2);
        let mut pred = LabelMap::new(16, 16, 0);
        for p in 0..256 {
            pred.labels_mut()[p] = if mask[p] { gt.at(p) } else { 1 - gt.at(p) };
        }
        assert_eq!(boundary_class_accuracy(&pred, &gt, 2).unwrap(), Some(1.0));
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&gt, &pred).unwrap();
        assert!(global_accuracy(&cm).unwrap() < 1.0);

        // uniform gt: band undefined
        let uniform = LabelMap::new(8, 8, 0);
        assert_eq!(
            boundary_class_accuracy(&uniform.clone(), &uniform, 4).unwrap(),
            None
        );
    }

    #[test]
    fn masked_accuracy_matches_recount_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        for _ in 0..10 {
            let mut gt = LabelMap::new(10, 10, 0);
            let mut pred = LabelMap::new(10, 10, 0);
            for p in 0..100 {
                gt.labels_mut()[p] = rng.gen_range(0..3);
                pred.labels_mut()[p] = rng.gen_range(0..3);
            }
            let band = 1;
            let mask = boundary_band(&gt, band);
            if mask.iter().all(|&m| !m) {
                continue;
            }
            // oracle: recount per class on masked pixels
            let mut correct = [0u64; 3];
            let mut total = [0u64; 3];
            for p in 0..100 {
                if mask[p] {
                    total[gt.at(p) as usize] += 1;
                    if gt.at(p) == pred.at(p) {
                        correct[gt.at(p) as usize] += 1;
                    }
                }
            }
            let accs: Vec<f64> = (0..3)
                .filter(|&c| total[c] > 0)
                .map(|c| correct[c] as f64 / total[c] as f64)
                .collect();
            let expect = accs.iter().sum::<f64>() / accs.len() as f64;
            let got = boundary_class_accuracy(&pred, &gt, band).unwrap().unwrap();
            assert!((got - expect).abs() < 1e-12);
        }
    }
}
