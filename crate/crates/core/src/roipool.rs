//! Free-form and bounding-box ROI pooling on the convolutional feature map.
//!
//! Each region is rasterized to feature-map resolution, its bounding box is
//! split proportionally into a fixed grid of bins, and every bin takes the
//! max over the in-bin cells that lie inside the region mask. The winning
//! cell per (bin, channel) is recorded so the backward pass can route
//! gradients to exactly the coordinates that produced the forward values.

use crate::error::{Error, Result};
use crate::regions::{BBox, RegionMask};
use crate::tensor::Tensor;

/// A region mask at feature-map resolution.
#[derive(Clone, Debug)]
pub struct ConvRegionMask {
    /// Sorted linear feature-map cell indices with the mask bit set.
    cells: Vec<u32>,
    /// Region bounding box mapped to feature-map coordinates.
    bbox_fm: BBox,
    fm_width: usize,
    fm_height: usize,
    /// Dense membership lookup for pooling.
    occupancy: Vec<bool>,
}

impl ConvRegionMask {
    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn bbox_fm(&self) -> BBox {
        self.bbox_fm
    }

    pub fn fm_width(&self) -> usize {
        self.fm_width
    }

    pub fn fm_height(&self) -> usize {
        self.fm_height
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.occupancy[cell]
    }

    /// Full-box mask over `bbox_fm`, used for bounding-box pooling.
    pub fn full_box(bbox_fm: BBox, fm_width: usize, fm_height: usize) -> Self {
        let mut cells = Vec::with_capacity(bbox_fm.width() * bbox_fm.height());
        let mut occupancy = vec![false; fm_width * fm_height];
        for fy in bbox_fm.y0..=bbox_fm.y1 {
            for fx in bbox_fm.x0..=bbox_fm.x1 {
                let idx = fy * fm_width + fx;
                cells.push(idx as u32);
                occupancy[idx] = true;
            }
        }
        ConvRegionMask {
            cells,
            bbox_fm,
            fm_width,
            fm_height,
            occupancy,
        }
    }
}

/// Converts an image-resolution region mask to feature-map resolution.
///
/// A feature-map cell belongs to the mask when at least half of its
/// stride x stride pixel footprint lies in the region. If no cell reaches
/// half coverage the single cell with maximal overlap is used, so the
/// result is never empty.
pub fn rasterize_mask(
    region: &RegionMask,
    image_width: usize,
    image_height: usize,
    fm_width: usize,
    fm_height: usize,
) -> Result<ConvRegionMask> {
    if fm_width == 0 || fm_height == 0 || image_width % fm_width != 0 || image_height % fm_height != 0
    {
        return Err(Error::invalid(format!(
            "feature map {}x{} must evenly divide image {}x{}",
            fm_width, fm_height, image_width, image_height
        )));
    }
    let sx = image_width / fm_width;
    let sy = image_height / fm_height;
    let mut overlap = vec![0u32; fm_width * fm_height];
    for &p in region.pixels() {
        let x = p as usize % image_width;
        let y = p as usize / image_width;
        overlap[(y / sy) * fm_width + x / sx] += 1;
    }
    let footprint = (sx * sy) as u32;
    let mut cells: Vec<u32> = (0..overlap.len())
        .filter(|&i| 2 * overlap[i] >= footprint && overlap[i] > 0)
        .map(|i| i as u32)
        .collect();
    if cells.is_empty() {
        let best = (0..overlap.len())
            .max_by_key(|&i| (overlap[i], usize::MAX - i))
            .expect("feature map is non-empty");
        debug_assert!(overlap[best] > 0, "region invariant guarantees image overlap");
        cells.push(best as u32);
    }
    let b = region.bbox();
    let bbox_fm = BBox {
        x0: b.x0 / sx,
        y0: b.y0 / sy,
        x1: b.x1 / sx,
        y1: b.y1 / sy,
    };
    let mut occupancy = vec![false; fm_width * fm_height];
    for &c in &cells {
        occupancy[c as usize] = true;
    }
    Ok(ConvRegionMask {
        cells,
        bbox_fm,
        fm_width,
        fm_height,
        occupancy,
    })
}

/// Pooled feature of one region: fixed-size values plus, per output
/// coordinate and channel, the flat feature-map cell that won the max
/// (-1 for bins containing no in-mask cell).
#[derive(Clone, Debug)]
pub struct RoiFeature {
    pub values: Tensor,
    pub argmax: Vec<i32>,
}

impl RoiFeature {
    pub fn out_height(&self) -> usize {
        self.values.dim(0)
    }

    pub fn out_width(&self) -> usize {
        self.values.dim(1)
    }

    pub fn channels(&self) -> usize {
        self.values.dim(2)
    }
}

#[inline]
fn bin_range(origin: usize, extent: usize, bins: usize, i: usize) -> (usize, usize) {
    // proportional floor/ceil split of the box into bins
    let start = origin + i * extent / bins;
    let end = origin + (((i + 1) * extent) + bins - 1) / bins;
    (start, end)
}

pub fn freeform_roi_pool_forward(
    convmap: &Tensor,
    mask: &ConvRegionMask,
    out_h: usize,
    out_w: usize,
) -> Result<RoiFeature> {
    if convmap.ndim() != 3 {
        return Err(Error::shape("convmap must be HxWxD"));
    }
    let (fh, fw, d) = (convmap.dim(0), convmap.dim(1), convmap.dim(2));
    if fh != mask.fm_height() || fw != mask.fm_width() {
        return Err(Error::shape(format!(
            "mask rasterized for {}x{} but convmap is {}x{}",
            mask.fm_width(),
            mask.fm_height(),
            fw,
            fh
        )));
    }
    let b = mask.bbox_fm();
    let (bh, bw) = (b.height(), b.width());
    let mut values = Tensor::zeros(&[out_h, out_w, d]);
    let mut argmax = vec![-1i32; out_h * out_w * d];
    let cdata = convmap.data();
    for i in 0..out_h {
        let (y0, y1) = bin_range(b.y0, bh, out_h, i);
        for j in 0..out_w {
            let (x0, x1) = bin_range(b.x0, bw, out_w, j);
            let obase = (i * out_w + j) * d;
            for fy in y0..y1 {
                for fx in x0..x1 {
                    let cell = fy * fw + fx;
                    if !mask.contains(cell) {
                        continue;
                    }
                    let cbase = cell * d;
                    for c in 0..d {
                        let v = cdata[cbase + c];
                        let slot = obase + c;
                        // strict > with ascending cell order: lowest linear
                        // index wins ties
                        if argmax[slot] < 0 || v > values.data()[slot] {
                            values.data_mut()[slot] = v;
                            argmax[slot] = cell as i32;
                        }
                    }
                }
            }
        }
    }
    Ok(RoiFeature { values, argmax })
}

/// Routes each bin gradient back to the feature-map cell that won its max.
/// Bins with no in-mask cell contribute nothing.
pub fn freeform_roi_pool_backward(
    roi: &RoiFeature,
    grad_out: &Tensor,
    convmap_shape: &[usize],
) -> Result<Tensor> {
    if grad_out.shape() != roi.values.shape() {
        return Err(Error::shape(format!(
            "roi backward: grad {:?} vs forward {:?}",
            grad_out.shape(),
            roi.values.shape()
        )));
    }
    if convmap_shape.len() != 3 {
        return Err(Error::shape("convmap shape must be HxWxD"));
    }
    let d = convmap_shape[2];
    if d != roi.channels() {
        return Err(Error::shape("roi backward: channel mismatch"));
    }
    let cells = convmap_shape[0] * convmap_shape[1];
    let mut grad = Tensor::zeros(convmap_shape);
    for (slot, &src) in roi.argmax.iter().enumerate() {
        if src < 0 {
            continue;
        }
        let cell = src as usize;
        if cell >= cells {
            return Err(Error::shape("roi backward: argmax outside convmap"));
        }
        let c = slot % d;
        grad.data_mut()[cell * d + c] += grad_out.data()[slot];
    }
    Ok(grad)
}

/// Accumulating variant used by the model backward pass, which sums the
/// contributions of all regions into one shared feature-map gradient.
pub fn freeform_roi_pool_backward_into(
    roi: &RoiFeature,
    grad_out: &Tensor,
    grad_convmap: &mut Tensor,
) -> Result<()> {
    let delta = freeform_roi_pool_backward(roi, grad_out, grad_convmap.shape())?;
    grad_convmap.add_assign(&delta)
}

/// ROI pooling over the region's bounding box: identical to free-form
/// pooling under a full-box mask.
pub fn bbox_roi_pool(
    convmap: &Tensor,
    bbox_fm: BBox,
    out_h: usize,
    out_w: usize,
) -> Result<RoiFeature> {
    let mask = ConvRegionMask::full_box(bbox_fm, convmap.dim(1), convmap.dim(0));
    freeform_roi_pool_forward(convmap, &mask, out_h, out_w)
}
