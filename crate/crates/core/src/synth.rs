//! Synthetic multi-scale labeled scenes with power-law class frequencies.
//!
//! Scenes are a flat background plus occluding striped shapes. Classes
//! come in pairs that share their shape family and stripe colors but
//! differ in object size, so a local fragment is ambiguous within its pair
//! and recognition requires judging the object's scale. Object classes are
//! sampled so that pixel frequencies follow class_id^-exponent, giving the
//! heavy class imbalance the balanced loss is designed for.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::regions::{LabelMap, VOID};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    /// Power-law exponent for object class sampling.
    pub exponent: f64,
    pub objects_min: usize,
    pub objects_max: usize,
    pub background_class: u8,
    /// Per-object uniform color offset amplitude.
    pub color_jitter: f64,
    /// Per-pixel uniform noise amplitude.
    pub pixel_noise: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(width: usize, height: usize, num_classes: usize, seed: u64) -> Result<Self> {
        let spec = SceneSpec {
            width,
            height,
            num_classes,
            exponent: 2.0,
            objects_min: 3,
            objects_max: 6,
            background_class: 0,
            color_jitter: 0.05,
            pixel_noise: 0.03,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 254 {
            return Err(Error::invalid("need 2..=254 classes"));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::invalid("scene must be at least 16x16"));
        }
        if self.objects_min > self.objects_max {
            return Err(Error::invalid("objects_min > objects_max"));
        }
        if (self.background_class as usize) >= self.num_classes {
            return Err(Error::invalid("background class out of range"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeFamily {
    Rectangle,
    Disc,
    Triangle,
}

/// Scale pair of an object class: classes 1/2 form pair 0, 3/4 pair 1, ...
/// The two classes of a pair share family and colors and differ in size.
fn pair_of(class: u8) -> usize {
    (class as usize).saturating_sub(1) / 2
}

fn is_large(class: u8) -> bool {
    class >= 1 && (class - 1) % 2 == 1
}

/// Object radius range of a class; the large class of each pair is roughly
/// twice the linear size of the small one.
fn radius_range(class: u8) -> (i64, i64) {
    if is_large(class) {
        (7, 9)
    } else {
        (3, 4)
    }
}

pub fn shape_family(class: u8) -> ShapeFamily {
    match pair_of(class) % 3 {
        0 => ShapeFamily::Rectangle,
        1 => ShapeFamily::Disc,
        _ => ShapeFamily::Triangle,
    }
}

/// Stripe colors of an object class: the pair index selects the hue, the
/// stripes alternate between the base color and a slightly darker variant
/// (subtle texture that the oversegmentation merges across). Both classes
/// of a pair paint identically; only object size separates them.
fn object_colors(class: u8, num_classes: usize) -> ([f64; 3], [f64; 3]) {
    let pairs = (num_classes.saturating_sub(1) + 1) / 2;
    let hue = 360.0 * pair_of(class) as f64 / pairs.max(1) as f64;
    let primary = hsv_to_rgb(hue, 0.7, 0.85);
    let secondary = [primary[0] * 0.9, primary[1] * 0.9, primary[2] * 0.9];
    (primary, secondary)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let i = h.floor() as i64;
    let f = h - i as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i.rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Base color of class `c`: gray for class 0, evenly spaced hues otherwise.
pub fn class_base_color(c: u8, num_classes: usize) -> [f64; 3] {
    if c == 0 {
        return [0.5, 0.5, 0.5];
    }
    let hue = 360.0 * (c as f64 - 1.0) / (num_classes as f64 - 1.0);
    hsv_to_rgb(hue, 0.65, 0.85)
}

/// Distinct visualization palette: one color per class, void maps to black.
pub fn default_palette(num_classes: usize) -> Vec<[u8; 3]> {
    (0..num_classes)
        .map(|c| {
            let rgb = class_base_color(c as u8, num_classes);
            [
                (rgb[0] * 255.0).round() as u8,
                (rgb[1] * 255.0).round() as u8,
                (rgb[2] * 255.0).round() as u8,
            ]
        })
        .collect()
}

fn rect_area(r: i64) -> f64 {
    ((2 * r + 1) * (2 * r + 1)) as f64
}

fn disc_area(r: i64) -> f64 {
    let mut count = 0;
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                count += 1;
            }
        }
    }
    count as f64
}

fn tri_area(r: i64) -> f64 {
    (-r..=r).map(|dy| 2 * ((dy + r) / 2) + 1).sum::<i64>() as f64
}

/// Mean rasterized area of a class's shapes over its radius range.
fn mean_class_area(class: u8) -> f64 {
    let (min_r, max_r) = radius_range(class);
    let family = shape_family(class);
    let total: f64 = (min_r..=max_r)
        .map(|r| match family {
            ShapeFamily::Rectangle => rect_area(r),
            ShapeFamily::Disc => disc_area(r),
            ShapeFamily::Triangle => tri_area(r),
        })
        .sum();
    total / (max_r - min_r + 1) as f64
}

fn sample_class(spec: &SceneSpec, rng: &mut impl Rng) -> u8 {
    // pixel frequency should follow c^-exponent, so the sampling weight
    // divides out the mean object area of the class
    let weights: Vec<f64> = (1..spec.num_classes)
        .map(|c| (c as f64).powf(-spec.exponent) / mean_class_area(c as u8))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if draw < *w {
            return (i + 1) as u8;
        }
        draw -= w;
    }
    (spec.num_classes - 1) as u8
}

struct Shape {
    class: u8,
    family: ShapeFamily,
    cx: i64,
    cy: i64,
    radius: i64,
    primary: [f64; 3],
    secondary: [f64; 3],
}

impl Shape {
    fn contains(&self, x: i64, y: i64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        match self.family {
            ShapeFamily::Rectangle => dx.abs() <= self.radius && dy.abs() <= self.radius,
            ShapeFamily::Disc => dx * dx + dy * dy <= self.radius * self.radius,
            ShapeFamily::Triangle => {
                // apex up: row y has half-width (y - cy + r) / 2
                if dy < -self.radius || dy > self.radius {
                    return false;
                }
                2 * dx.abs() <= dy + self.radius
            }
        }
    }

    /// Stripe pattern anchored at the shape center, period 4.
    fn color_at(&self, _x: i64, y: i64) -> [f64; 3] {
        if (y - self.cy).rem_euclid(4) < 2 {
            self.primary
        } else {
            self.secondary
        }
    }
}

fn jitter(base: [f64; 3], amount: f64, rng: &mut impl Rng) -> [f64; 3] {
    let mut out = base;
    for v in &mut out {
        *v += rng.gen_range(-amount..=amount);
    }
    out
}

/// Generates scene `index` of the stream defined by `spec`. Deterministic
/// in (seed, index); output colors are exact multiples of 1/255 so image
/// files round-trip losslessly.
pub fn synthesize(spec: &SceneSpec, index: u64) -> Result<(Tensor, LabelMap)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index.wrapping_add(1));

    let (w, h) = (spec.width, spec.height);
    let mut image = Tensor::zeros(&[h, w, 3]);
    let mut labels = LabelMap::new(w, h, spec.background_class);

    let bg = jitter(
        class_base_color(spec.background_class, spec.num_classes),
        spec.color_jitter,
        &mut rng,
    );
    for p in 0..w * h {
        for c in 0..3 {
            image.data_mut()[p * 3 + c] = bg[c];
        }
    }

    let count = rng.gen_range(spec.objects_min..=spec.objects_max);
    for _ in 0..count {
        let class = sample_class(spec, &mut rng);
        let (min_r, max_r) = radius_range(class);
        let radius = rng.gen_range(min_r..=max_r);
        let (primary, secondary) = object_colors(class, spec.num_classes);
        let shape = Shape {
            class,
            family: shape_family(class),
            cx: rng.gen_range(0..w) as i64,
            cy: rng.gen_range(0..h) as i64,
            radius,
            primary: jitter(primary, spec.color_jitter, &mut rng),
            secondary: jitter(secondary, spec.color_jitter, &mut rng),
        };
        // later shapes occlude earlier ones
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                if shape.contains(x, y) {
                    let color = shape.color_at(x, y);
                    let p = (y as usize * w + x as usize) * 3;
                    image.data_mut()[p..p + 3].copy_from_slice(&color);
                    labels.set(x as usize, y as usize, shape.class);
                }
            }
        }
    }

    // per-pixel noise, then quantize to the 1/255 grid used by the ppm files
    for v in image.data_mut() {
        if spec.pixel_noise > 0.0 {
            *v += rng.gen_range(-spec.pixel_noise..=spec.pixel_noise);
        }
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
    Ok((image, labels))
}

/// Renders a label map through the palette; void pixels become black.
pub fn colorize_labels(labels: &LabelMap, palette: &[[u8; 3]]) -> Result<Tensor> {
    let mut image = Tensor::zeros(&[labels.height(), labels.width(), 3]);
    for p in 0..labels.len() {
        let label = labels.at(p);
        let rgb = if label == VOID {
            [0, 0, 0]
        } else {
            *palette
                .get(label as usize)
                .ok_or_else(|| Error::invalid(format!("no palette entry for class {}", label)))?
        };
        for c in 0..3 {
            image.data_mut()[p * 3 + c] = rgb[c] as f64 / 255.0;
        }
    }
    Ok(image)
}
