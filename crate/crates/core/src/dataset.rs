//! On-disk dataset layout and manifest.
//!
//! A dataset directory holds `images/NNNNN.ppm`, `labels/NNNNN.pgm` and a
//! `manifest.txt` with the generation spec, seed and split ranges. The
//! manifest fully determines every byte of the dataset, so regeneration
//! with the same manifest is bit-identical.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::netpbm;
use crate::regions::LabelMap;
use crate::synth::{synthesize, SceneSpec};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: SceneSpec,
    pub images: Vec<Tensor>,
    pub labels: Vec<LabelMap>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }
}

fn image_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("images").join(format!("{:05}.ppm", index))
}

fn label_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("labels").join(format!("{:05}.pgm", index))
}

fn manifest_text(spec: &SceneSpec, train_count: usize, test_count: usize) -> String {
    format!(
        "manifest v1\nwidth {}\nheight {}\nclasses {}\nexponent {}\nobjects {} {}\nbackground {}\ncolor_jitter {}\npixel_noise {}\nseed {}\ncount {}\ntrain 0..{}\ntest {}..{}\n",
        spec.width,
        spec.height,
        spec.num_classes,
        spec.exponent,
        spec.objects_min,
        spec.objects_max,
        spec.background_class,
        spec.color_jitter,
        spec.pixel_noise,
        spec.seed,
        train_count + test_count,
        train_count,
        train_count,
        train_count + test_count,
    )
}

/// Generates and writes a dataset. Refuses a non-empty directory unless
/// `force` is set; regeneration with identical arguments is bit-identical.
pub fn generate_dataset(
    dir: &Path,
    spec: &SceneSpec,
    train_count: usize,
    test_count: usize,
    force: bool,
) -> Result<()> {
    spec.validate()?;
    if dir.exists() && dir.read_dir()?.next().is_some() && !force {
        return Err(Error::invalid(format!(
            "output directory {} is not empty (use force to overwrite)",
            dir.display()
        )));
    }
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("labels"))?;
    for index in 0..train_count + test_count {
        let (image, labels) = synthesize(spec, index as u64)?;
        netpbm::write_ppm(&image_path(dir, index), &image)?;
        netpbm::write_pgm(&label_path(dir, index), &labels)?;
    }
    fs::write(dir.join("manifest.txt"), manifest_text(spec, train_count, test_count))?;
    Ok(())
}

fn parse_range(s: &str) -> Option<(usize, usize)> {
    let (a, b) = s.split_once("..")?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

pub fn read_manifest(dir: &Path) -> Result<(SceneSpec, (usize, usize), (usize, usize))> {
    let text = fs::read_to_string(dir.join("manifest.txt"))?;
    let mut lines = text.lines();
    if lines.next() != Some("manifest v1") {
        return Err(Error::Parse {
            offset: 0,
            message: "expected `manifest v1`".into(),
        });
    }
    let mut fields = std::collections::BTreeMap::new();
    for line in lines {
        if let Some((key, value)) = line.split_once(' ') {
            fields.insert(key.to_string(), value.to_string());
        }
    }
    let get = |key: &str| -> Result<String> {
        fields
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Parse {
                offset: 0,
                message: format!("manifest missing `{}`", key),
            })
    };
    let parse = |key: &str| -> Result<f64> {
        get(key)?.parse().map_err(|_| Error::Parse {
            offset: 0,
            message: format!("bad numeric field `{}`", key),
        })
    };
    let objects = get("objects")?;
    let (omin, omax) = objects.split_once(' ').ok_or_else(|| Error::Parse {
        offset: 0,
        message: "bad objects field".into(),
    })?;
    let spec = SceneSpec {
        width: parse("width")? as usize,
        height: parse("height")? as usize,
        num_classes: parse("classes")? as usize,
        exponent: parse("exponent")?,
        objects_min: omin.parse().map_err(|_| Error::Parse {
            offset: 0,
            message: "bad objects min".into(),
        })?,
        objects_max: omax.parse().map_err(|_| Error::Parse {
            offset: 0,
            message: "bad objects max".into(),
        })?,
        background_class: parse("background")? as u8,
        color_jitter: parse("color_jitter")?,
        pixel_noise: parse("pixel_noise")?,
        seed: parse("seed")? as u64,
    };
    spec.validate()?;
    let train = parse_range(&get("train")?).ok_or_else(|| Error::Parse {
        offset: 0,
        message: "bad train range".into(),
    })?;
    let test = parse_range(&get("test")?).ok_or_else(|| Error::Parse {
        offset: 0,
        message: "bad test range".into(),
    })?;
    Ok((spec, train, test))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let (spec, train, test) = read_manifest(dir)?;
    let count = test.1.max(train.1);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for index in 0..count {
        images.push(netpbm::read_ppm(&image_path(dir, index))?);
        let map = netpbm::read_pgm(&label_path(dir, index))?;
        for &l in map.labels() {
            if l != crate::regions::VOID && l as usize >= spec.num_classes {
                return Err(Error::Parse {
                    offset: 0,
                    message: format!("label {} out of range in image {}", l, index),
                });
            }
        }
        labels.push(map);
    }
    Ok(Dataset {
        spec,
        images,
        labels,
        train_indices: (train.0..train.1).collect(),
        test_indices: (test.0..test.1).collect(),
    })
}

/// In-memory dataset without touching disk, for tests and experiments.
pub fn synthesize_dataset(spec: &SceneSpec, train_count: usize, test_count: usize) -> Result<Dataset> {
    let count = train_count + test_count;
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for index in 0..count {
        let (image, map) = synthesize(spec, index as u64)?;
        images.push(image);
        labels.push(map);
    }
    Ok(Dataset {
        spec: spec.clone(),
        images,
        labels,
        train_indices: (0..train_count).collect(),
        test_indices: (train_count..count).collect(),
    })
}
