//! Virtual filters: a second-layer filter approximated in input space.
//!
//! For output channel `p` of `W2` and each intermediate channel `k`, the
//! spatial tap `(ĩ, j̃) = argmax |W2[p, k, ·, ·]|` is kept and the first-layer
//! filter `W1[k]` is scaled by it:
//!
//! ```text
//! W̃[q, i, j] = Σ_k W2[p, k, ĩ_k, j̃_k] · W1[k, q, i, j]
//! ```
//!
//! Normalisation and nonlinearity between the two layers are ignored.

use std::cmp::Ordering;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ppm::{self, RgbImage};
use crate::tensor::{ConvWeights, Scalar, Tensor};
use crate::tsv;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Coupling<T> {
    pub k: usize,
    pub coefficient: T,
    pub pos: (usize, usize),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum CouplingOrder {
    /// Descending signed coefficient.
    #[default]
    Signed,
    /// Descending absolute coefficient.
    Magnitude,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VirtualFilter<T> {
    pub channel: usize,
    /// `(1, q, kh, kw)` with the first layer's filter dims.
    pub filter: Tensor<T>,
    /// One entry per intermediate channel, sorted; ties keep ascending `k`.
    pub couplings: Vec<Coupling<T>>,
}

/// Row-major position of the largest `|w|`; the earliest one wins ties.
fn argmax_abs<T: Scalar>(w2: &ConvWeights<T>, p: usize, k: usize) -> (usize, usize) {
    let (kh, kw) = w2.kernel();
    let mut best = (0, 0);
    for i in 0..kh {
        for j in 0..kw {
            if w2.at(p, k, i, j).abs() > w2.at(p, k, best.0, best.1).abs() {
                best = (i, j);
            }
        }
    }
    best
}

pub fn virtual_filter<T: Scalar>(w1: &ConvWeights<T>, w2: &ConvWeights<T>, p: usize) -> Result<VirtualFilter<T>> {
    virtual_filter_with(w1, w2, p, CouplingOrder::Signed)
}

pub fn virtual_filter_with<T: Scalar>(
    w1: &ConvWeights<T>,
    w2: &ConvWeights<T>,
    p: usize,
    order: CouplingOrder,
) -> Result<VirtualFilter<T>> {
    if w2.in_channels() != w1.out_channels() {
        return Err(Error::shape(
            "virtual filter channels",
            format!("W2 expects {} inputs", w2.in_channels()),
            format!("W1 has {} outputs", w1.out_channels()),
        ));
    }
    if p >= w2.out_channels() {
        return Err(Error::InvalidArgument(format!(
            "channel {p} out of range for {} output channels",
            w2.out_channels()
        )));
    }
    let mut couplings: Vec<Coupling<T>> = (0..w1.out_channels())
        .map(|k| {
            let pos = argmax_abs(w2, p, k);
            Coupling {
                k,
                coefficient: w2.at(p, k, pos.0, pos.1),
                pos,
            }
        })
        .collect();
    let n = w1.filter_len();
    let mut acc = vec![T::zero(); n];
    for c in &couplings {
        for (a, &w) in acc.iter_mut().zip(w1.filter(c.k)) {
            *a += c.coefficient * w;
        }
    }
    let key = |c: &Coupling<T>| match order {
        CouplingOrder::Signed => c.coefficient,
        CouplingOrder::Magnitude => c.coefficient.abs(),
    };
    // stable sort keeps ascending k among equal keys
    couplings.sort_by(|a, b| key(b).partial_cmp(&key(a)).unwrap_or(Ordering::Equal));
    let (kh, kw) = w1.kernel();
    Ok(VirtualFilter {
        channel: p,
        filter: Tensor::from_vec((1, w1.in_channels(), kh, kw), acc)?,
        couplings,
    })
}

pub fn virtual_filter_all<T: Scalar>(
    w1: &ConvWeights<T>,
    w2: &ConvWeights<T>,
    order: CouplingOrder,
) -> Result<Vec<VirtualFilter<T>>> {
    (0..w2.out_channels())
        .map(|p| virtual_filter_with(w1, w2, p, order))
        .collect()
}

pub const COUPLING_HEADER: [&str; 5] = ["rank", "k", "coefficient", "i_tilde", "j_tilde"];

pub fn coupling_rows<T: Scalar>(vf: &VirtualFilter<T>) -> Vec<Vec<String>> {
    vf.couplings
        .iter()
        .enumerate()
        .map(|(rank, c)| {
            vec![
                rank.to_string(),
                c.k.to_string(),
                c.coefficient.to_string(),
                c.pos.0.to_string(),
                c.pos.1.to_string(),
            ]
        })
        .collect()
}

/// Min-max normalised rendering of a `(1, q, kh, kw)` filter.
pub fn filter_image<T: Scalar>(filter: &Tensor<T>, scale: usize) -> RgbImage {
    ppm::render(&ppm::min_max_normalize(filter), 0).upscale(scale)
}

/// Writes `{stem}.ppm` (the virtual filter), `{stem}_strip.ppm` (first-layer
/// filters in coupling order) and `{stem}.tsv` (sorted couplings) into `dir`.
pub fn export_vfilter_report<T: Scalar>(
    vf: &VirtualFilter<T>,
    w1: &ConvWeights<T>,
    dir: impl AsRef<Path>,
    stem: &str,
    scale: usize,
) -> Result<()> {
    let dir = dir.as_ref();
    filter_image(&vf.filter, scale).save(dir.join(format!("{stem}.ppm")))?;
    let tiles: Vec<RgbImage> = vf
        .couplings
        .iter()
        .map(|c| filter_image(&w1.filter_tensor(c.k), scale))
        .collect();
    ppm::grid(&tiles, tiles.len()).save(dir.join(format!("{stem}_strip.ppm")))?;
    tsv::write(dir.join(format!("{stem}.tsv")), &COUPLING_HEADER, coupling_rows(vf))
}
