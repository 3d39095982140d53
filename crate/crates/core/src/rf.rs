//! Receptive-field geometry.
//!
//! Every layer output carries a triple `(size r, jump j, c0)`: neuron `i`
//! along an axis sees input pixels centred on `c0 + i·j` with side `r`.
//! Passing through a window op with kernel `k`, stride `s`, padding `p`:
//!
//! ```text
//! r' = r + (k − 1)·j
//! j' = j·s
//! c0' = c0 + ((k − 1)/2 − p)·j
//! ```
//!
//! `c0` can be a half-integer for even kernels, so it is stored in half-pixel
//! units. A rectangle spans `top = ⌊(2c − (r − 1)) / 2⌋ ..= top + r − 1`.
//! All builders use square kernels, so one triple covers both axes.

use crate::error::{Error, Result};
use crate::graph::{LayerKind, ModelGraph};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct RFGeometry {
    pub size: usize,
    pub jump: usize,
    /// Centre of neuron 0's field, in half pixels.
    pub c0_half: i64,
}

impl RFGeometry {
    pub const IDENTITY: RFGeometry = RFGeometry {
        size: 1,
        jump: 1,
        c0_half: 0,
    };

    pub fn c0(&self) -> f64 {
        self.c0_half as f64 / 2.0
    }

    pub fn compose(self, kernel: usize, stride: usize, padding: usize) -> RFGeometry {
        assert!(kernel >= 1 && stride >= 1, "kernel and stride must be positive");
        let j = self.jump as i64;
        RFGeometry {
            size: self.size + (kernel - 1) * self.jump,
            jump: self.jump * stride,
            c0_half: self.c0_half + ((kernel as i64 - 1) - 2 * padding as i64) * j,
        }
    }

    /// Centre of neuron `i` in half pixels.
    fn center_half(&self, i: usize) -> i64 {
        self.c0_half + 2 * (i as i64) * self.jump as i64
    }

    fn span(&self, i: usize) -> (i64, i64) {
        let top = (self.center_half(i) - (self.size as i64 - 1)).div_euclid(2);
        (top, top + self.size as i64 - 1)
    }
}

/// Geometry of one layer output. `merged` marks layers whose field was
/// widened at an add node (the maximum of both branches was taken).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGeometry {
    pub layer: String,
    pub geom: RFGeometry,
    pub merged: bool,
}

/// Inclusive rectangle in input coordinates.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub top: i64,
    pub left: i64,
    pub bottom: i64,
    pub right: i64,
}

impl Rect {
    pub fn height(&self) -> usize {
        (self.bottom - self.top + 1).max(0) as usize
    }

    pub fn width(&self) -> usize {
        (self.right - self.left + 1).max(0) as usize
    }

    pub fn contains(&self, y: i64, x: i64) -> bool {
        (self.top..=self.bottom).contains(&y) && (self.left..=self.right).contains(&x)
    }

    fn clip(&self, h: usize, w: usize) -> Rect {
        Rect {
            top: self.top.max(0),
            left: self.left.max(0),
            bottom: self.bottom.min(h as i64 - 1),
            right: self.right.min(w as i64 - 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReceptiveField {
    pub layer: String,
    pub neuron: (usize, usize),
    /// Unclipped field; both sides equal the layer's `size`.
    pub full: Rect,
    /// Part of `full` inside the image.
    pub rect: Rect,
    pub clipped: bool,
}

/// Geometry of every layer for the model's nominal input.
pub fn geometry_table<T: Scalar>(model: &ModelGraph<T>) -> Result<Vec<LayerGeometry>> {
    geometry_table_for(model, model.input_shape(1))
}

/// Geometry of every layer; the input shape matters only for global pooling.
pub fn geometry_table_for<T: Scalar>(model: &ModelGraph<T>, input: Shape) -> Result<Vec<LayerGeometry>> {
    let shapes = model.shapes(input)?;
    let mut table: Vec<LayerGeometry> = Vec::with_capacity(model.layers().len());
    for layer in model.layers() {
        let src = layer.inputs.first().map(|&i| table[i].geom);
        let mut merged = false;
        let geom = match &layer.kind {
            LayerKind::Input => RFGeometry::IDENTITY,
            LayerKind::Conv { weights, geom, .. } => {
                src.unwrap().compose(weights.kernel().0, geom.stride.0, geom.padding.0)
            }
            LayerKind::MaxPool(p) => src.unwrap().compose(p.kernel, p.stride, p.padding),
            LayerKind::GlobalAvgPool => {
                let s = shapes[layer.inputs[0]];
                src.unwrap().compose(s.h.max(s.w), 1, 0)
            }
            LayerKind::Add => {
                let (a, b) = (src.unwrap(), table[layer.inputs[1]].geom);
                if a.jump != b.jump || a.c0_half != b.c0_half {
                    return Err(Error::IncompatibleDims(format!(
                        "{}: branches disagree in jump or offset ({a:?} vs {b:?})",
                        layer.name
                    )));
                }
                merged = a.size != b.size;
                RFGeometry {
                    size: a.size.max(b.size),
                    ..a
                }
            }
            LayerKind::BatchNorm(_) | LayerKind::Relu | LayerKind::Linear(_) => src.unwrap(),
        };
        merged |= layer.inputs.first().is_some_and(|&i| table[i].merged);
        table.push(LayerGeometry {
            layer: layer.name.clone(),
            geom,
            merged,
        });
    }
    Ok(table)
}

/// Geometry of a layer given by name or alias (`maxpool`, `layerN`).
pub fn geometry_of<T: Scalar>(model: &ModelGraph<T>, layer: &str) -> Result<RFGeometry> {
    let idx = model.resolve(layer)?;
    Ok(geometry_table(model)?[idx].geom)
}

/// Input rectangle seen by neuron `(i, j)` of `layer` for an `h × w` input.
pub fn project<T: Scalar>(
    model: &ModelGraph<T>,
    layer: &str,
    neuron: (usize, usize),
    input_hw: (usize, usize),
) -> Result<ReceptiveField> {
    let idx = model.resolve(layer)?;
    let input = Shape::new(1, model.arch().input.0, input_hw.0, input_hw.1);
    let fm = model.shapes(input)?[idx];
    let geom = geometry_table_for(model, input)?[idx].geom;
    project_with(&geom, layer, neuron, (fm.h, fm.w), input_hw)
}

/// [`project`] for a known geometry and feature-map size.
pub fn project_with(
    geom: &RFGeometry,
    layer: &str,
    (i, j): (usize, usize),
    (fh, fw): (usize, usize),
    (h, w): (usize, usize),
) -> Result<ReceptiveField> {
    if i >= fh || j >= fw {
        return Err(Error::NeuronOutOfBounds { i, j, h: fh, w: fw });
    }
    let (top, bottom) = geom.span(i);
    let (left, right) = geom.span(j);
    let full = Rect {
        top,
        left,
        bottom,
        right,
    };
    let rect = full.clip(h, w);
    Ok(ReceptiveField {
        layer: layer.to_string(),
        neuron: (i, j),
        full,
        rect,
        clipped: rect != full,
    })
}

/// Copies the visible part of the field from every item and channel.
pub fn extract_patch<T: Scalar>(image: &Tensor<T>, rf: &ReceptiveField) -> Result<Tensor<T>> {
    let s = image.shape();
    let r = rf.rect.clip(s.h, s.w);
    if r.height() == 0 || r.width() == 0 || r.top >= s.h as i64 || r.left >= s.w as i64 {
        return Err(Error::EmptyPatch);
    }
    let (t, l) = (r.top as usize, r.left as usize);
    let (ph, pw) = (r.height(), r.width());
    let mut out = Tensor::zeros((s.n, s.c, ph, pw));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = image.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..ph {
                let row = (t + y) * s.w + l;
                dst[y * pw..(y + 1) * pw].copy_from_slice(&src[row..row + pw]);
            }
        }
    }
    Ok(out)
}
