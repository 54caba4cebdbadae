//! Partition of a training image into non-overlapping single-class cells on
//! which the pixel-level loss factorizes.
//!
//! Pixels sharing both their ground-truth class and their exact set of
//! covering regions are interchangeable for the loss: per class, the
//! max-over-covering-regions picks the same winner for all of them. Grouping
//! pixels by (class, covering set) therefore yields cells whose loss
//! contribution is one softmax evaluation times the cell's pixel count.

use std::collections::HashMap;

use crate::regions::{LabelMap, RegionSet, VOID};

/// One cell: pixels that share a ground-truth class and a covering set.
#[derive(Clone, Debug)]
pub struct PartitionCell {
    /// Sorted linear pixel indices.
    pub pixels: Vec<u32>,
    pub class_id: u8,
    pub pixel_count: usize,
    /// Sorted ids of the regions covering every pixel of the cell. Empty
    /// when the pixels are covered by no region.
    pub covering: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct LossPartition {
    pub cells: Vec<PartitionCell>,
    /// Number of regions in the proposal set the partition was built from;
    /// used to reject evaluation against a stale or different set.
    pub region_count: usize,
}

impl LossPartition {
    pub fn non_void_pixels(&self) -> usize {
        self.cells.iter().map(|c| c.pixel_count).sum()
    }
}

/// Overlays all region boundaries with the ground-truth class masks and
/// groups the resulting atoms. Void pixels are excluded.
pub fn build_loss_partition(proposals: &RegionSet, gt: &LabelMap) -> LossPartition {
    let num_pixels = gt.len();
    let mut covering: Vec<Vec<u32>> = vec![Vec::new(); num_pixels];
    for (rid, region) in proposals.regions.iter().enumerate() {
        for &p in region.pixels() {
            covering[p as usize].push(rid as u32);
        }
    }
    // region pixel lists are sorted, so each covering list is sorted too
    let mut groups: HashMap<(u8, Vec<u32>), Vec<u32>> = HashMap::new();
    for p in 0..num_pixels {
        let class = gt.at(p);
        if class == VOID {
            continue;
        }
        groups
            .entry((class, std::mem::take(&mut covering[p])))
            .or_default()
            .push(p as u32);
    }
    let mut cells: Vec<PartitionCell> = groups
        .into_iter()
        .map(|((class_id, covering), pixels)| PartitionCell {
            pixel_count: pixels.len(),
            pixels,
            class_id,
            covering,
        })
        .collect();
    // deterministic cell order regardless of hash-map iteration
    cells.sort_by_key(|c| c.pixels[0]);
    LossPartition {
        cells,
        region_count: proposals.len(),
    }
}
