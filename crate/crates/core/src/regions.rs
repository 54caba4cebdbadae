//! Free-form pixel regions, multi-scale grid proposals, ground-truth
//! regions, and a line-oriented serialization format.
//!
//! A region is a set of linear pixel indices at image resolution together
//! with its tight bounding box. Proposals may overlap; oversegmentations
//! and ground-truth region sets are disjoint covers.

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Label value marking unannotated pixels; excluded from every loss and
/// metric.
pub const VOID: u8 = 255;

/// Per-pixel class ids in [0, C) or [`VOID`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        LabelMap {
            width,
            height,
            labels: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape(format!(
                "label map {}x{} needs {} entries, got {}",
                width,
                height,
                width * height,
                labels.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            labels,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.labels[y * self.width + x] = v;
    }

    #[inline]
    pub fn at(&self, idx: usize) -> u8 {
        self.labels[idx]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn non_void_count(&self) -> usize {
        self.labels.iter().filter(|&&v| v != VOID).count()
    }

    /// Pixel count per class id present in the map (void excluded).
    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0usize; num_classes];
        for &v in &self.labels {
            if v != VOID {
                counts[v as usize] += 1;
            }
        }
        counts
    }
}

/// Inclusive pixel bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

/// One free-form region: sorted linear pixel indices plus tight bounds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMask {
    pixels: Vec<u32>,
    bbox: BBox,
}

impl RegionMask {
    /// Builds a region from pixel indices, sorting them and computing the
    /// tight bounding box. Rejects empty or out-of-image regions.
    pub fn new(mut pixels: Vec<u32>, image_width: usize, image_height: usize) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::invalid("region must contain at least one pixel"));
        }
        pixels.sort_unstable();
        pixels.dedup();
        let last = *pixels.last().unwrap() as usize;
        if last >= image_width * image_height {
            return Err(Error::invalid(format!(
                "region pixel {} outside {}x{} image",
                last, image_width, image_height
            )));
        }
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for &p in &pixels {
            let x = p as usize % image_width;
            let y = p as usize / image_width;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        Ok(RegionMask {
            pixels,
            bbox: BBox { x0, y0, x1, y1 },
        })
    }

    pub fn rect(x0: usize, y0: usize, x1: usize, y1: usize, image_width: usize) -> Self {
        let mut pixels = Vec::with_capacity((x1 - x0 + 1) * (y1 - y0 + 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                pixels.push((y * image_width + x) as u32);
            }
        }
        RegionMask {
            pixels,
            bbox: BBox { x0, y0, x1, y1 },
        }
    }

    pub fn pixels(&self) -> &[u32] {
        &self.pixels
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn contains(&self, pixel: u32) -> bool {
        self.pixels.binary_search(&pixel).is_ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionSource {
    ProposalsA,
    ProposalsB,
    ProposalsC,
    Oversegmentation,
    GroundTruth,
    /// Union of sets (e.g. proposals plus injected ground-truth regions).
    Mixed,
}

impl fmt::Display for RegionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RegionSource::ProposalsA => "proposals-a",
            RegionSource::ProposalsB => "proposals-b",
            RegionSource::ProposalsC => "proposals-c",
            RegionSource::Oversegmentation => "oversegmentation",
            RegionSource::GroundTruth => "ground-truth",
            RegionSource::Mixed => "mixed",
        };
        f.write_str(s)
    }
}

impl RegionSource {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "proposals-a" => RegionSource::ProposalsA,
            "proposals-b" => RegionSource::ProposalsB,
            "proposals-c" => RegionSource::ProposalsC,
            "oversegmentation" => RegionSource::Oversegmentation,
            "ground-truth" => RegionSource::GroundTruth,
            "mixed" => RegionSource::Mixed,
            _ => return None,
        })
    }

    pub fn proposal_variant(index: usize) -> Self {
        match index % 3 {
            0 => RegionSource::ProposalsA,
            1 => RegionSource::ProposalsB,
            _ => RegionSource::ProposalsC,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RegionSet {
    pub regions: Vec<RegionMask>,
    pub source: RegionSource,
    pub width: usize,
    pub height: usize,
}

impl RegionSet {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Appends another set's regions, producing a Mixed-source set.
    pub fn union(&self, other: &RegionSet) -> RegionSet {
        let mut regions = self.regions.clone();
        regions.extend(other.regions.iter().cloned());
        RegionSet {
            regions,
            source: RegionSource::Mixed,
            width: self.width,
            height: self.height,
        }
    }

    /// True when the regions are pairwise disjoint and jointly cover every
    /// pixel of the image.
    pub fn is_disjoint_cover(&self) -> bool {
        let mut seen = vec![false; self.width * self.height];
        for region in &self.regions {
            for &p in region.pixels() {
                if seen[p as usize] {
                    return false;
                }
                seen[p as usize] = true;
            }
        }
        seen.iter().all(|&s| s)
    }
}

/// Window origins along one axis: multiples of the stride while the window
/// fits, shifted by `offset`, with 0 and the last fitting origin always
/// included so each scale covers the axis completely.
fn window_origins(extent: usize, scale: usize, stride: usize, offset: usize) -> Vec<usize> {
    let last = extent - scale;
    let mut origins = vec![0, last];
    let mut x = offset;
    while x <= last {
        origins.push(x);
        x += stride;
    }
    origins.sort_unstable();
    origins.dedup();
    origins
}

/// Multi-scale overlapping square window proposals. `variant` (0..3) shifts
/// the grid to produce the three rotating proposal sets.
pub fn grid_proposals_variant(
    width: usize,
    height: usize,
    scales: &[usize],
    stride_fraction: f64,
    variant: usize,
) -> Result<RegionSet> {
    if scales.is_empty() {
        return Err(Error::invalid("at least one proposal scale required"));
    }
    if !(stride_fraction > 0.0 && stride_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "stride fraction must be in (0, 1], got {}",
            stride_fraction
        )));
    }
    for &s in scales {
        if s == 0 || s > width.min(height) {
            return Err(Error::invalid(format!(
                "scale {} does not fit a {}x{} image",
                s, width, height
            )));
        }
    }
    let mut regions = Vec::new();
    for &scale in scales {
        let stride = ((scale as f64 * stride_fraction).round() as usize).max(1);
        let offset = (variant % 3) * stride / 3;
        for &oy in &window_origins(height, scale, stride, offset) {
            for &ox in &window_origins(width, scale, stride, offset) {
                regions.push(RegionMask::rect(
                    ox,
                    oy,
                    ox + scale - 1,
                    oy + scale - 1,
                    width,
                ));
            }
        }
    }
    Ok(RegionSet {
        regions,
        source: RegionSource::proposal_variant(variant),
        width,
        height,
    })
}

pub fn grid_proposals(
    width: usize,
    height: usize,
    scales: &[usize],
    stride_fraction: f64,
) -> Result<RegionSet> {
    grid_proposals_variant(width, height, scales, stride_fraction, 0)
}

/// The three stride-offset grid variants rotated across mini-batches.
pub fn grid_proposal_sets(
    width: usize,
    height: usize,
    scales: &[usize],
    stride_fraction: f64,
) -> Result<Vec<RegionSet>> {
    (0..3)
        .map(|v| grid_proposals_variant(width, height, scales, stride_fraction, v))
        .collect()
}

/// One region per 4-connected component of each class; disjoint and covering
/// all non-void pixels. An all-void map yields an empty set.
pub fn ground_truth_regions(gt: &LabelMap) -> RegionSet {
    let (w, h) = (gt.width(), gt.height());
    let mut visited = vec![false; w * h];
    let mut regions = Vec::new();
    for start in 0..w * h {
        if visited[start] || gt.at(start) == VOID {
            continue;
        }
        let class = gt.at(start);
        let mut pixels = Vec::new();
        let mut queue = VecDeque::new();
        queue.push_back(start);
        visited[start] = true;
        while let Some(p) = queue.pop_front() {
            pixels.push(p as u32);
            let (x, y) = (p % w, p / w);
            let mut push = |nx: usize, ny: usize| {
                let n = ny * w + nx;
                if !visited[n] && gt.at(n) == class {
                    visited[n] = true;
                    queue.push_back(n);
                }
            };
            if x > 0 {
                push(x - 1, y);
            }
            if x + 1 < w {
                push(x + 1, y);
            }
            if y > 0 {
                push(x, y - 1);
            }
            if y + 1 < h {
                push(x, y + 1);
            }
        }
        regions.push(RegionMask::new(pixels, w, h).expect("component is non-empty and in-image"));
    }
    RegionSet {
        regions,
        source: RegionSource::GroundTruth,
        width: w,
        height: h,
    }
}

/// Majority non-void class inside the region and its fraction of the region
/// area. `None` when the region is entirely void.
pub fn region_label_and_overlap(region: &RegionMask, gt: &LabelMap) -> Option<(u8, f64)> {
    let mut counts = [0usize; 256];
    for &p in region.pixels() {
        counts[gt.at(p as usize) as usize] += 1;
    }
    let mut best: Option<(u8, usize)> = None;
    for c in 0..255 {
        // ties broken by lower class id: strict > keeps the first maximum
        if counts[c] > 0 && best.map_or(true, |(_, n)| counts[c] > n) {
            best = Some((c as u8, counts[c]));
        }
    }
    best.map(|(c, n)| (c, n as f64 / region.len() as f64))
}

// --- serialization -------------------------------------------------------
//
// Line-oriented text format, one region per line:
//
//   regionset v1 <source> <width> <height> <count>
//   <class|-> <x0> <y0> <x1> <y1> : <start>+<len> <start>+<len> ...
//
// Runs are maximal runs of consecutive linear pixel indices. The leading
// field is an optional class hint (`-` when absent), used for ground-truth
// region sets.

pub fn write_region_set(
    out: &mut impl Write,
    set: &RegionSet,
    class_hints: Option<&[u8]>,
) -> Result<()> {
    if let Some(hints) = class_hints {
        if hints.len() != set.regions.len() {
            return Err(Error::invalid("class hint count != region count"));
        }
    }
    writeln!(
        out,
        "regionset v1 {} {} {} {}",
        set.source,
        set.width,
        set.height,
        set.regions.len()
    )?;
    for (i, region) in set.regions.iter().enumerate() {
        match class_hints.map(|h| h[i]) {
            Some(c) => write!(out, "{}", c)?,
            None => write!(out, "-")?,
        }
        let b = region.bbox();
        write!(out, " {} {} {} {} :", b.x0, b.y0, b.x1, b.y1)?;
        let mut run_start = region.pixels()[0];
        let mut run_len = 1u32;
        for &p in &region.pixels()[1..] {
            if p == run_start + run_len {
                run_len += 1;
            } else {
                write!(out, " {}+{}", run_start, run_len)?;
                run_start = p;
                run_len = 1;
            }
        }
        writeln!(out, " {}+{}", run_start, run_len)?;
    }
    Ok(())
}

pub fn read_region_set(input: &mut impl BufRead) -> Result<(RegionSet, Option<Vec<u8>>)> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != "regionset" || fields[1] != "v1" {
        return Err(Error::Parse {
            offset: 0,
            message: "expected `regionset v1 <source> <width> <height> <count>`".into(),
        });
    }
    let source = RegionSource::parse(fields[2]).ok_or_else(|| Error::Parse {
        offset: 0,
        message: format!("unknown region source `{}`", fields[2]),
    })?;
    let parse_usize = |s: &str, what: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::Parse {
            offset: 0,
            message: format!("bad {}: `{}`", what, s),
        })
    };
    let width = parse_usize(fields[3], "width")?;
    let height = parse_usize(fields[4], "height")?;
    let count = parse_usize(fields[5], "count")?;

    let mut regions = Vec::with_capacity(count);
    let mut hints = Vec::with_capacity(count);
    let mut any_hint = false;
    for lineno in 0..count {
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            return Err(Error::Parse {
                offset: 0,
                message: format!("expected {} regions, file ended after {}", count, lineno),
            });
        }
        let (head, runs) = line.split_once(':').ok_or_else(|| Error::Parse {
            offset: 0,
            message: format!("region line {} missing `:`", lineno),
        })?;
        let head_fields: Vec<&str> = head.split_whitespace().collect();
        if head_fields.len() != 5 {
            return Err(Error::Parse {
                offset: 0,
                message: format!("region line {} needs `class x0 y0 x1 y1`", lineno),
            });
        }
        if head_fields[0] == "-" {
            hints.push(VOID);
        } else {
            any_hint = true;
            hints.push(head_fields[0].parse().map_err(|_| Error::Parse {
                offset: 0,
                message: format!("bad class hint on line {}", lineno),
            })?);
        }
        let mut pixels = Vec::new();
        for token in runs.split_whitespace() {
            let (start, len) = token.split_once('+').ok_or_else(|| Error::Parse {
                offset: 0,
                message: format!("bad run `{}` on line {}", token, lineno),
            })?;
            let start: u32 = start.parse().map_err(|_| Error::Parse {
                offset: 0,
                message: format!("bad run start on line {}", lineno),
            })?;
            let len: u32 = len.parse().map_err(|_| Error::Parse {
                offset: 0,
                message: format!("bad run length on line {}", lineno),
            })?;
            pixels.extend(start..start + len);
        }
        regions.push(RegionMask::new(pixels, width, height)?);
    }
    let set = RegionSet {
        regions,
        source,
        width,
        height,
    };
    Ok((set, any_hint.then_some(hints)))
}
