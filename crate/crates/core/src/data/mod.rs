//! Dataset ingestion, whitening and training augmentation.

mod augment;
mod cifar;
pub mod rng;
pub mod synthetic;
mod whiten;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ppm::RgbImage;
use crate::tensor::Tensor;

pub use augment::{
    bilinear_resize, eval_transform, horizontal_flip, random_resized_crop, resized_crop, sample_crop, CropBox,
    AREA_RANGE, ASPECT_RANGE, CROP_ATTEMPTS,
};
pub use cifar::{load_cifar10, parse_cifar_records, CIFAR_RECORD_BYTES};
pub use whiten::{apply_whiten, compute_whiten, invert_whiten, WhitenStats};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// One labelled image with values in `[0, 1]`, shape `(1, C, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize, split: Split) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Data(format!("duplicate image id `{}`", s.id)));
            }
            if s.label >= num_classes {
                return Err(Error::Data(format!(
                    "label {} of `{}` outside [0, {num_classes})",
                    s.label, s.id
                )));
            }
        }
        Ok(Dataset {
            samples,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// SHA-256 over ids, labels and pixel values, in sample order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.samples {
            h.update(s.id.as_bytes());
            h.update([0u8]);
            h.update((s.label as u64).to_le_bytes());
            for v in s.image.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// First `n` samples (all if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        Dataset {
            samples: self.samples.iter().take(n).cloned().collect(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// Stacks the given samples after applying `transform` to each.
    pub fn batch(
        &self,
        indices: &[usize],
        mut transform: impl FnMut(usize, &Tensor<f32>) -> Result<Tensor<f32>>,
    ) -> Result<(Tensor<f32>, Vec<usize>)> {
        let imgs: Vec<Tensor<f32>> = indices
            .iter()
            .map(|&i| transform(i, &self.samples[i].image))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor<f32>> = imgs.iter().collect();
        let labels = indices.iter().map(|&i| self.samples[i].label).collect();
        Ok((Tensor::stack(&refs)?, labels))
    }
}

/// Loads a directory of binary PPM files listed in a manifest of
/// `id<TAB>relative_path<TAB>label` lines. Blank lines and lines starting
/// with `#` are ignored. `num_classes` defaults to the largest label + 1.
pub fn load_ppm_dir(dir: impl AsRef<Path>, manifest: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Dataset> {
    let (dir, manifest) = (dir.as_ref(), manifest.as_ref());
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Data(format!(
                "{}:{}: expected 3 tab-separated fields, found {}",
                manifest.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let label: usize = fields[2].trim().parse().map_err(|_| {
            Error::Data(format!("{}:{}: bad label `{}`", manifest.display(), lineno + 1, fields[2]))
        })?;
        let path = dir.join(fields[1]);
        if !path.is_file() {
            return Err(Error::Data(format!(
                "{}:{}: listed file {} does not exist",
                manifest.display(),
                lineno + 1,
                path.display()
            )));
        }
        let image = RgbImage::load(&path)?.to_tensor();
        samples.push(Sample {
            id: fields[0].to_string(),
            image,
            label,
        });
    }
    let classes = num_classes.unwrap_or_else(|| samples.iter().map(|s| s.label + 1).max().unwrap_or(0));
    Dataset::new(samples, classes, Split::Val)
}

/// Writes a dataset as PPM files plus manifest (inverse of [`load_ppm_dir`]).
pub fn save_ppm_dir(ds: &Dataset, dir: impl AsRef<Path>, manifest_name: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for s in &ds.samples {
        let file = format!("{}.ppm", s.id);
        crate::ppm::render(&s.image, 0).save(dir.join(&file))?;
        manifest.push_str(&format!("{}\t{}\t{}\n", s.id, file, s.label));
    }
    let path = dir.join(manifest_name);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}
