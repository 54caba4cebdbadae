//! Color-based greedy oversegmentation producing non-overlapping regions.
//!
//! Agglomerates 4-connected pixels in order of increasing color difference,
//! merging two components while the Euclidean distance between their mean
//! colors stays below the threshold. A final pass absorbs components below
//! the minimum size into an adjacent component, keeping the disjoint-cover
//! property.

use crate::error::{Error, Result};
use crate::regions::{RegionMask, RegionSet, RegionSource};
use crate::tensor::Tensor;

pub const DEFAULT_MIN_REGION_SIZE: usize = 16;

struct Components {
    parent: Vec<u32>,
    size: Vec<u32>,
    color_sum: Vec<[f64; 3]>,
}

impl Components {
    fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let up = self.parent[self.parent[i as usize] as usize];
            self.parent[i as usize] = up;
            i = up;
        }
        i
    }

    fn mean(&self, root: u32) -> [f64; 3] {
        let n = self.size[root as usize] as f64;
        let s = self.color_sum[root as usize];
        [s[0] / n, s[1] / n, s[2] / n]
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        // attach the smaller tree under the larger
        let (a, b) = if self.size[a as usize] >= self.size[b as usize] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[b as usize] = a;
        self.size[a as usize] += self.size[b as usize];
        for c in 0..3 {
            self.color_sum[a as usize][c] += self.color_sum[b as usize][c];
        }
        a
    }
}

fn color_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    (d0 * d0 + d1 * d1 + d2 * d2).sqrt()
}

pub fn oversegment(image: &Tensor, merge_threshold: f64) -> Result<RegionSet> {
    oversegment_with_min_size(image, merge_threshold, DEFAULT_MIN_REGION_SIZE)
}

pub fn oversegment_with_min_size(
    image: &Tensor,
    merge_threshold: f64,
    min_size: usize,
) -> Result<RegionSet> {
    if image.ndim() != 3 || image.dim(2) != 3 {
        return Err(Error::shape("oversegment expects an HxWx3 image"));
    }
    if merge_threshold <= 0.0 {
        return Err(Error::invalid("merge threshold must be > 0"));
    }
    let (h, w) = (image.dim(0), image.dim(1));
    let pixel = |x: usize, y: usize| -> [f64; 3] {
        [
            image.at3(y, x, 0),
            image.at3(y, x, 1),
            image.at3(y, x, 2),
        ]
    };

    // 4-connected edges sorted by pixel color distance (stable on ties).
    let mut edges: Vec<(f64, u32, u32)> = Vec::with_capacity(2 * w * h);
    for y in 0..h {
        for x in 0..w {
            let p = (y * w + x) as u32;
            if x + 1 < w {
                edges.push((color_distance(pixel(x, y), pixel(x + 1, y)), p, p + 1));
            }
            if y + 1 < h {
                edges.push((color_distance(pixel(x, y), pixel(x, y + 1)), p, p + w as u32));
            }
        }
    }
    edges.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut comps = Components {
        parent: (0..(w * h) as u32).collect(),
        size: vec![1; w * h],
        color_sum: (0..w * h)
            .map(|p| pixel(p % w, p / w))
            .collect(),
    };
    for &(_, a, b) in &edges {
        let ra = comps.find(a);
        let rb = comps.find(b);
        if ra != rb && color_distance(comps.mean(ra), comps.mean(rb)) < merge_threshold {
            comps.union(ra, rb);
        }
    }
    // absorb undersized components into any neighbor, smallest edges first
    if min_size > 1 {
        for &(_, a, b) in &edges {
            let ra = comps.find(a);
            let rb = comps.find(b);
            if ra != rb
                && ((comps.size[ra as usize] as usize) < min_size
                    || (comps.size[rb as usize] as usize) < min_size)
            {
                comps.union(ra, rb);
            }
        }
    }

    let mut groups: std::collections::BTreeMap<u32, Vec<u32>> = std::collections::BTreeMap::new();
    for p in 0..(w * h) as u32 {
        groups.entry(comps.find(p)).or_default().push(p);
    }
    let regions = groups
        .into_values()
        .map(|pixels| RegionMask::new(pixels, w, h).expect("non-empty in-image component"))
        .collect();
    Ok(RegionSet {
        regions,
        source: RegionSource::Oversegmentation,
        width: w,
        height: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_image(w: usize, h: usize, color: [f64; 3]) -> Tensor {
        let mut t = Tensor::zeros(&[h, w, 3]);
        for p in 0..w * h {
            for c in 0..3 {
                t.data_mut()[p * 3 + c] = color[c];
            }
        }
        t
    }

    #[test]
    fn uniform_image_is_one_region() {
        let img = flat_image(8, 8, [0.3, 0.5, 0.7]);
        let set = oversegment(&img, 0.1).unwrap();
        assert_eq!(set.len(), 1);
        assert!(set.is_disjoint_cover());
    }

    #[test]
    fn two_half_planes_stay_separate() {
        let mut img = flat_image(8, 8, [0.1, 0.1, 0.1]);
        for y in 0..8 {
            for x in 4..8 {
                let p = y * 8 + x;
                img.data_mut()[p * 3] = 0.9;
                img.data_mut()[p * 3 + 1] = 0.9;
                img.data_mut()[p * 3 + 2] = 0.9;
            }
        }
        let set = oversegment(&img, 0.2).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.is_disjoint_cover());
        assert!(set.regions.iter().all(|r| r.len() == 32));
    }

    #[test]
    fn synthetic_scene_yields_disjoint_cover() {
        // three flat shapes over a background, distinct colors
        let mut img = flat_image(16, 16, [0.5, 0.5, 0.5]);
        let paint = |img: &mut Tensor, x0: usize, y0: usize, x1: usize, y1: usize, c: [f64; 3]| {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y * 16 + x;
                    for k in 0..3 {
                        img.data_mut()[p * 3 + k] = c[k];
                    }
                }
            }
        };
        paint(&mut img, 1, 1, 6, 6, [0.9, 0.1, 0.1]);
        paint(&mut img, 9, 2, 14, 7, [0.1, 0.9, 0.1]);
        paint(&mut img, 4, 9, 11, 14, [0.1, 0.1, 0.9]);
        let set = oversegment_with_min_size(&img, 0.2, 4).unwrap();
        assert!(set.len() >= 4 && set.len() < 256, "got {} regions", set.len());
        assert!(set.is_disjoint_cover());
    }

    #[test]
    fn rejects_bad_inputs() {
        let img = flat_image(4, 4, [0.0; 3]);
        assert!(oversegment(&img, 0.0).is_err());
        assert!(oversegment(&Tensor::zeros(&[4, 4, 1]), 0.1).is_err());
    }

    #[test]
    fn min_size_absorbs_small_components() {
        let mut img = flat_image(8, 8, [0.2, 0.2, 0.2]);
        // single odd pixel
        img.data_mut()[(3 * 8 + 3) * 3] = 0.95;
        let set = oversegment_with_min_size(&img, 0.1, 4).unwrap();
        assert_eq!(set.len(), 1);
    }
}
