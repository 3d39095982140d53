//! Preferred-stimulus mining.
//!
//! A scan records, for every image and channel, one neuron's post-ReLU
//! activation together with the input rectangle it sees. Ranking those
//! records gives the top-K stimuli; averaging the patches of all strictly
//! positive records gives the mean preferred stimulus.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, WhitenStats};
use crate::error::{Error, Result};
use crate::graph::{ModelGraph, Mode};
use crate::ppm::{self, RgbImage};
use crate::rf::{self, Rect};
use crate::tensor::{Shape, Tensor};
use crate::train::{eval_batch, eval_input};
use crate::tsv;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronMode {
    /// Neuron `(H/2, W/2)` of the feature map.
    Center,
    /// Spatial argmax per image; the first maximum in row-major order wins.
    MaxSpatial,
}

impl std::str::FromStr for NeuronMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(NeuronMode::Center),
            "max_spatial" | "max" => Ok(NeuronMode::MaxSpatial),
            other => Err(Error::InvalidArgument(format!("unknown neuron mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StimulusRecord {
    pub image_id: String,
    pub layer: String,
    pub channel: usize,
    pub neuron: (usize, usize),
    pub activation: f32,
    /// Visible part of the receptive field.
    pub rect: Rect,
    pub full: Rect,
    pub clipped: bool,
}

pub const RECORD_HEADER: [&str; 10] = [
    "image_id", "layer", "channel", "i", "j", "activation", "top", "left", "bottom", "right",
];

impl StimulusRecord {
    pub fn tsv_row(&self) -> Vec<String> {
        vec![
            self.image_id.clone(),
            self.layer.clone(),
            self.channel.to_string(),
            self.neuron.0.to_string(),
            self.neuron.1.to_string(),
            self.activation.to_string(),
            self.rect.top.to_string(),
            self.rect.left.to_string(),
            self.rect.bottom.to_string(),
            self.rect.right.to_string(),
        ]
    }
}

pub fn write_records(path: impl AsRef<Path>, records: &[StimulusRecord]) -> Result<()> {
    tsv::write(path, &RECORD_HEADER, records.iter().map(StimulusRecord::tsv_row))
}

/// Scans `ds` and returns one record list per requested channel (all
/// channels when `channels` is `None`), each in dataset order.
pub fn scan(
    model: &ModelGraph<f32>,
    ds: &Dataset,
    layer: &str,
    channels: Option<&[usize]>,
    mode: NeuronMode,
    whiten: Option<&WhitenStats>,
    batch: usize,
) -> Result<Vec<Vec<StimulusRecord>>> {
    let idx = model.resolve(layer)?;
    let (c_in, h, w) = model.arch().input;
    let input = Shape::new(1, c_in, h, w);
    let fm = model.shapes(input)?[idx];
    let geom = rf::geometry_table_for(model, input)?[idx].geom;
    let channels: Vec<usize> = match channels {
        Some(cs) => cs.to_vec(),
        None => (0..fm.c).collect(),
    };
    if let Some(&bad) = channels.iter().find(|&&c| c >= fm.c) {
        return Err(Error::UnknownChannel {
            layer: layer.to_string(),
            channel: bad,
            channels: fm.c,
        });
    }
    let mut out: Vec<Vec<StimulusRecord>> = vec![Vec::with_capacity(ds.len()); channels.len()];
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(batch.max(1)) {
        let (x, _) = eval_batch(ds, chunk, (h, w), whiten)?;
        let trace = model.run_until(&x, Mode::Eval, idx, None)?;
        let act = trace.output(idx).expect("traced");
        for (n, &img) in chunk.iter().enumerate() {
            for (slot, &c) in channels.iter().enumerate() {
                let plane = act.plane(n, c);
                let (i, j) = match mode {
                    NeuronMode::Center => (fm.h / 2, fm.w / 2),
                    NeuronMode::MaxSpatial => {
                        let best = plane
                            .iter()
                            .enumerate()
                            .fold(0, |b, (k, &v)| if v > plane[b] { k } else { b });
                        (best / fm.w, best % fm.w)
                    }
                };
                let field = rf::project_with(&geom, layer, (i, j), (fm.h, fm.w), (h, w))?;
                out[slot].push(StimulusRecord {
                    image_id: ds.samples[img].id.clone(),
                    layer: layer.to_string(),
                    channel: c,
                    neuron: (i, j),
                    activation: plane[i * fm.w + j],
                    rect: field.rect,
                    full: field.full,
                    clipped: field.clipped,
                });
            }
        }
    }
    Ok(out)
}

/// Fresh single-image forward at the record's neuron.
pub fn recompute_activation(
    model: &ModelGraph<f32>,
    ds: &Dataset,
    record: &StimulusRecord,
    whiten: Option<&WhitenStats>,
) -> Result<f32> {
    let img = ds
        .samples
        .iter()
        .position(|s| s.id == record.image_id)
        .ok_or_else(|| Error::Data(format!("image `{}` not in dataset", record.image_id)))?;
    let (_, h, w) = model.arch().input;
    let x = eval_input(ds, img, (h, w), whiten)?;
    let idx = model.resolve(&record.layer)?;
    let trace = model.run_until(&x, Mode::Eval, idx, None)?;
    let act = trace.output(idx).expect("traced");
    Ok(act.at(0, record.channel, record.neuron.0, record.neuron.1))
}

fn rank(a: &StimulusRecord, b: &StimulusRecord) -> Ordering {
    b.activation
        .total_cmp(&a.activation)
        .then_with(|| a.image_id.cmp(&b.image_id))
}

/// The `k` highest activations, descending; equal activations by ascending id.
pub fn topk(records: &[StimulusRecord], k: usize) -> Vec<StimulusRecord> {
    let mut sorted = records.to_vec();
    sorted.sort_by(rank);
    sorted.truncate(k.max(1));
    sorted
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanStimulus {
    /// `(1, C, r, r)` mean patch; `None` when no unclipped record is positive.
    pub mean: Option<Tensor<f32>>,
    /// `N = |X⁺|`, the number of strictly positive records.
    pub support: usize,
    /// Set when `N == 0`.
    pub inactive_on_dataset: bool,
    /// Positive records left out of the mean because their field was clipped.
    pub clipped_excluded: usize,
}

/// Mean of the patches of all records with activation strictly above zero.
///
/// `image_of` returns the un-whitened network input for an image id.
/// Clipped fields count towards `N` but are left out of the average.
/// Summation runs in ascending id order so the result does not depend on
/// record order.
pub fn mean_preferred(
    records: &[StimulusRecord],
    mut image_of: impl FnMut(&str) -> Result<Tensor<f32>>,
) -> Result<MeanStimulus> {
    let mut positive: Vec<&StimulusRecord> = records.iter().filter(|r| r.activation > 0.0).collect();
    let support = positive.len();
    positive.retain(|r| !r.clipped);
    positive.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let clipped_excluded = support - positive.len();
    if positive.is_empty() {
        return Ok(MeanStimulus {
            mean: None,
            support,
            inactive_on_dataset: support == 0,
            clipped_excluded,
        });
    }
    let mut sum: Option<(Shape, Vec<f64>)> = None;
    for r in &positive {
        let img = image_of(&r.image_id)?;
        let field = rf::ReceptiveField {
            layer: r.layer.clone(),
            neuron: r.neuron,
            full: r.full,
            rect: r.rect,
            clipped: r.clipped,
        };
        let patch = rf::extract_patch(&img, &field)?;
        let (shape, acc) = sum.get_or_insert_with(|| (patch.shape(), vec![0.0; patch.shape().numel()]));
        if patch.shape() != *shape {
            return Err(Error::shape("mean_preferred patch", patch.shape(), *shape));
        }
        for (a, &v) in acc.iter_mut().zip(patch.data()) {
            *a += v as f64;
        }
    }
    let (shape, acc) = sum.expect("at least one positive record");
    let n = positive.len() as f64;
    let mean = Tensor::from_vec(shape, acc.iter().map(|&v| (v / n) as f32).collect())?;
    Ok(MeanStimulus {
        mean: Some(mean),
        support,
        inactive_on_dataset: false,
        clipped_excluded,
    })
}

/// Tile for one record: its field filled with mid-grey where the field
/// leaves the image, the visible pixels clamped to `[0, 1]`.
pub fn record_tile(record: &StimulusRecord, image: &Tensor<f32>) -> Result<RgbImage> {
    let field = rf::ReceptiveField {
        layer: record.layer.clone(),
        neuron: record.neuron,
        full: record.full,
        rect: record.rect,
        clipped: record.clipped,
    };
    let patch = ppm::render(&rf::extract_patch(image, &field)?, 0);
    if !record.clipped {
        return Ok(patch);
    }
    let mut tile = RgbImage::new(record.full.width(), record.full.height(), [128; 3]);
    tile.blit(
        &patch,
        (record.rect.left - record.full.left) as usize,
        (record.rect.top - record.full.top) as usize,
    );
    Ok(tile)
}

/// Tiles into a `⌈√K⌉`-column grid after nearest-neighbour upscaling.
pub fn export_grid(tiles: &[RgbImage], path: impl AsRef<Path>, scale: usize) -> Result<()> {
    let scaled: Vec<RgbImage> = tiles.iter().map(|t| t.upscale(scale)).collect();
    ppm::grid(&scaled, ppm::grid_cols(scaled.len())).save(path)
}

/// Min-max normalised mean image.
pub fn mean_tile(mean: &Tensor<f32>) -> RgbImage {
    ppm::render(&ppm::min_max_normalize(mean), 0)
}
