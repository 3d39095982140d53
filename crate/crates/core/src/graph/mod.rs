//! Model assembly for ResNet-style and skip-free (Plain) networks.
//!
//! A [`ModelGraph`] is a topologically ordered list of [`Layer`]s, each
//! owning its parameters. Layer names follow a fixed scheme:
//!
//! ```text
//! input
//! stem.conv  stem.bn  stem.relu  stem.maxpool
//! stage{S}.block{B}.{conv1|bn1|relu1|conv2|bn2|add|relu2}
//! downsample{S}.{conv|bn}
//! head.avgpool  head.fc
//! ```
//!
//! Main-path convolutions are additionally addressable as `layer1`, `layer2`,
//! ... with the stem convolution as `layer1`. An alias resolves to the
//! post-ReLU output that follows that convolution; `maxpool` resolves to
//! `stem.maxpool`.

mod checkpoint;
mod exec;
mod params;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BatchNormState, Conv2dGeometry, ConvWeights, LinearWeights, PoolGeometry, Scalar, Shape};

pub use crate::tensor::Mode;
pub use checkpoint::{
    import_raw, save_checkpoint, load_checkpoint, Checkpoint, CheckpointMeta, NamedTensor, RawManifestEntry,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use exec::{Gradients, Hook, NeuronSelector, Objective, Trace};
pub use params::{ParamRole, ParamSet, ParamTensor};

/// Network family: with or without skip connections.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Resnet,
    Plain,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet" => Ok(Family::Resnet),
            "plain" => Ok(Family::Plain),
            other => Err(Error::InvalidArgument(format!("unknown architecture `{other}` (expected resnet or plain)"))),
        }
    }
}

/// First convolution and optional max-pool in front of the residual stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StemSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool: Option<PoolGeometry>,
}

/// Everything needed to rebuild a model's topology and initial weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub family: Family,
    pub stem: StemSpec,
    pub stage_blocks: Vec<usize>,
    pub base_channels: usize,
    /// Input `(channels, height, width)`.
    pub input: (usize, usize, usize),
    pub num_classes: usize,
    #[serde(default)]
    pub init_seed: u64,
}

impl ArchSpec {
    /// The 34-layer topology: 7×7/2 stem, 3×3/2 max-pool, stages [3, 4, 6, 3].
    pub fn resnet34(family: Family, num_classes: usize) -> Self {
        ArchSpec {
            family,
            stem: StemSpec {
                kernel: 7,
                stride: 2,
                padding: 3,
                pool: Some(PoolGeometry::new(3, 2, 1)),
            },
            stage_blocks: vec![3, 4, 6, 3],
            base_channels: 64,
            input: (3, 224, 224),
            num_classes,
            init_seed: 0,
        }
    }

    /// Desk-scale variant: 3×3/1 stem conv followed by a 3×3/2 max-pool.
    pub fn scaled(
        family: Family,
        stage_blocks: &[usize],
        base_channels: usize,
        input: (usize, usize, usize),
        num_classes: usize,
    ) -> Self {
        ArchSpec {
            family,
            stem: StemSpec {
                kernel: 3,
                stride: 1,
                padding: 1,
                pool: Some(PoolGeometry::new(3, 2, 1)),
            },
            stage_blocks: stage_blocks.to_vec(),
            base_channels,
            input,
            num_classes,
            init_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn build<T: Scalar>(&self) -> Result<ModelGraph<T>> {
        Builder::new(self)?.build()
    }
}

pub fn build_resnet34<T: Scalar>(num_classes: usize) -> Result<ModelGraph<T>> {
    check_classes(num_classes)?;
    ArchSpec::resnet34(Family::Resnet, num_classes).build()
}

pub fn build_plainnet34<T: Scalar>(num_classes: usize) -> Result<ModelGraph<T>> {
    check_classes(num_classes)?;
    ArchSpec::resnet34(Family::Plain, num_classes).build()
}

pub fn build_scaled<T: Scalar>(
    family: Family,
    stage_blocks: &[usize],
    base_channels: usize,
    input: (usize, usize, usize),
    num_classes: usize,
) -> Result<ModelGraph<T>> {
    check_classes(num_classes)?;
    ArchSpec::scaled(family, stage_blocks, base_channels, input, num_classes).build()
}

fn check_classes(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("num_classes must be at least 2, got {n}")));
    }
    Ok(())
}

/// Operation performed by a layer, together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind<T> {
    Input,
    Conv {
        weights: ConvWeights<T>,
        bias: Option<Vec<T>>,
        geom: Conv2dGeometry,
    },
    BatchNorm(BatchNormState<T>),
    Relu,
    MaxPool(PoolGeometry),
    GlobalAvgPool,
    Linear(LinearWeights<T>),
    Add,
}

impl<T> LayerKind<T> {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::BatchNorm(_) => "bn",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool(_) => "maxpool",
            LayerKind::GlobalAvgPool => "avgpool",
            LayerKind::Linear(_) => "linear",
            LayerKind::Add => "add",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub name: String,
    pub kind: LayerKind<T>,
    /// Indices of producer layers; two for `Add`, one otherwise, none for the input.
    pub inputs: Vec<usize>,
}

/// A main-path convolution addressable as `layer{N}`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ConvAlias {
    pub conv: usize,
    pub activation: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph<T = f32> {
    arch: ArchSpec,
    layers: Vec<Layer<T>>,
    index: HashMap<String, usize>,
    aliases: Vec<ConvAlias>,
}

impl<T: Scalar> ModelGraph<T> {
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn layer(&self, idx: usize) -> &Layer<T> {
        &self.layers[idx]
    }

    pub fn output_index(&self) -> usize {
        self.layers.len() - 1
    }

    /// Main-path convolutions in order; entry 0 is `layer1`.
    pub fn conv_aliases(&self) -> &[ConvAlias] {
        &self.aliases
    }

    /// Index of a layer by its exact name.
    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    /// Resolves exact names and the `layerN` / `maxpool` aliases.
    pub fn resolve(&self, name: &str) -> Result<usize> {
        if let Some(&i) = self.index.get(name) {
            return Ok(i);
        }
        if name == "maxpool" {
            return self.index_of("stem.maxpool");
        }
        if let Some(n) = name.strip_prefix("layer").and_then(|s| s.parse::<usize>().ok()) {
            if n >= 1 && n <= self.aliases.len() {
                return Ok(self.aliases[n - 1].activation);
            }
        }
        Err(Error::UnknownLayer(name.to_string()))
    }

    /// Conv index for `layerN`, or the named layer itself if it is a conv.
    pub fn resolve_conv(&self, name: &str) -> Result<usize> {
        if let Some(n) = name.strip_prefix("layer").and_then(|s| s.parse::<usize>().ok()) {
            if n >= 1 && n <= self.aliases.len() {
                return Ok(self.aliases[n - 1].conv);
            }
        }
        let idx = self.index_of(name)?;
        match self.layers[idx].kind {
            LayerKind::Conv { .. } => Ok(idx),
            _ => Err(Error::InvalidArgument(format!("layer `{name}` is not a convolution"))),
        }
    }

    pub fn conv_weights(&self, idx: usize) -> Option<&ConvWeights<T>> {
        match &self.layers[idx].kind {
            LayerKind::Conv { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// The standard input shape for a batch of `n`.
    pub fn input_shape(&self, n: usize) -> Shape {
        let (c, h, w) = self.arch.input;
        Shape::new(n, c, h, w)
    }

    /// Static shape inference for every layer.
    pub fn shapes(&self, input: Shape) -> Result<Vec<Shape>> {
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let src = layer.inputs.first().map(|&i| shapes[i]).unwrap_or(input);
            let s = match &layer.kind {
                LayerKind::Input => input,
                LayerKind::Conv { weights, geom, .. } => {
                    if src.c != weights.in_channels() {
                        return Err(Error::shape("conv", src, format!("{:?}", weights.dims())));
                    }
                    let (kh, kw) = weights.kernel();
                    let (h, w) = geom.output_hw(src.h, src.w, kh, kw).ok_or_else(|| {
                        Error::IncompatibleDims(format!("{} receives {src}", layer.name))
                    })?;
                    Shape::new(src.n, weights.out_channels(), h, w)
                }
                LayerKind::MaxPool(g) => match (g.output_len(src.h), g.output_len(src.w)) {
                    (Some(h), Some(w)) => Shape::new(src.n, src.c, h, w),
                    _ => return Err(Error::IncompatibleDims(format!("{} receives {src}", layer.name))),
                },
                LayerKind::GlobalAvgPool => Shape::new(src.n, src.c, 1, 1),
                LayerKind::Linear(lw) => {
                    if src.item_len() != lw.in_features {
                        return Err(Error::IncompatibleDims(format!(
                            "{} expects {} features, receives {src}",
                            layer.name, lw.in_features
                        )));
                    }
                    Shape::new(src.n, lw.out_features, 1, 1)
                }
                LayerKind::Add => {
                    let other = shapes[layer.inputs[1]];
                    if other != src {
                        return Err(Error::shape("add", src, other));
                    }
                    src
                }
                LayerKind::BatchNorm(_) | LayerKind::Relu => src,
            };
            if s.h == 0 || s.w == 0 {
                return Err(Error::IncompatibleDims(format!("{} collapses to {s}", layer.name)));
            }
            shapes.push(s);
        }
        Ok(shapes)
    }

    pub fn count_kind(&self, tag: &str) -> usize {
        self.layers.iter().filter(|l| l.kind.tag() == tag).count()
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                name: l.name.clone(),
                inputs: l.inputs.clone(),
                kind: match &l.kind {
                    LayerKind::Input => LayerKind::Input,
                    LayerKind::Conv { weights, bias, geom } => LayerKind::Conv {
                        weights: weights.cast(),
                        bias: bias
                            .as_ref()
                            .map(|b| b.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect()),
                        geom: *geom,
                    },
                    LayerKind::BatchNorm(s) => LayerKind::BatchNorm(s.cast()),
                    LayerKind::Relu => LayerKind::Relu,
                    LayerKind::MaxPool(g) => LayerKind::MaxPool(*g),
                    LayerKind::GlobalAvgPool => LayerKind::GlobalAvgPool,
                    LayerKind::Linear(lw) => LayerKind::Linear(lw.cast()),
                    LayerKind::Add => LayerKind::Add,
                },
            })
            .collect();
        ModelGraph {
            arch: self.arch.clone(),
            layers,
            index: self.index.clone(),
            aliases: self.aliases.clone(),
        }
    }
}

struct Builder<'a, T> {
    arch: &'a ArchSpec,
    layers: Vec<Layer<T>>,
    index: HashMap<String, usize>,
    aliases: Vec<ConvAlias>,
    rng: ChaCha8Rng,
}

impl<'a, T: Scalar> Builder<'a, T> {
    fn new(arch: &'a ArchSpec) -> Result<Self> {
        if arch.stage_blocks.is_empty() || arch.stage_blocks.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "stage_blocks must be non-empty and positive, got {:?}",
                arch.stage_blocks
            )));
        }
        if arch.base_channels == 0 || arch.input.0 == 0 {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        check_classes(arch.num_classes)?;
        Ok(Builder {
            arch,
            layers: Vec::new(),
            index: HashMap::new(),
            aliases: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(arch.init_seed),
        })
    }

    fn push(&mut self, name: String, kind: LayerKind<T>, inputs: Vec<usize>) -> usize {
        let idx = self.layers.len();
        debug_assert!(!self.index.contains_key(&name), "duplicate layer {name}");
        self.index.insert(name.clone(), idx);
        self.layers.push(Layer { name, kind, inputs });
        idx
    }

    /// Kaiming normal, fan-out mode.
    fn conv(&mut self, name: String, input: usize, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> usize {
        let std = (2.0 / (cout * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let weights = ConvWeights::from_fn(cout, cin, k, k, |_, _, _, _| T::from_f64_lossy(normal.sample(&mut self.rng)));
        self.push(
            name,
            LayerKind::Conv {
                weights,
                bias: None,
                geom: Conv2dGeometry::new(stride, pad),
            },
            vec![input],
        )
    }

    fn bn(&mut self, name: String, input: usize, channels: usize) -> usize {
        self.push(name, LayerKind::BatchNorm(BatchNormState::new(channels)), vec![input])
    }

    fn relu(&mut self, name: String, input: usize) -> usize {
        self.push(name, LayerKind::Relu, vec![input])
    }

    fn build(mut self) -> Result<ModelGraph<T>> {
        let arch = self.arch;
        let (cin, _, _) = arch.input;
        let base = arch.base_channels;
        let input = self.push("input".into(), LayerKind::Input, vec![]);

        let stem_conv = self.conv("stem.conv".into(), input, cin, base, arch.stem.kernel, arch.stem.stride, arch.stem.padding);
        let bn = self.bn("stem.bn".into(), stem_conv, base);
        let mut cur = self.relu("stem.relu".into(), bn);
        self.aliases.push(ConvAlias {
            conv: stem_conv,
            activation: cur,
        });
        if let Some(pool) = arch.stem.pool {
            cur = self.push("stem.maxpool".into(), LayerKind::MaxPool(pool), vec![cur]);
        }

        let mut channels = base;
        for (s, &blocks) in arch.stage_blocks.iter().enumerate() {
            let stage = s + 1;
            let out_ch = base << s;
            let stage_stride = if s == 0 { 1 } else { 2 };
            for b in 1..=blocks {
                let stride = if b == 1 { stage_stride } else { 1 };
                let p = format!("stage{stage}.block{b}");
                let block_in = cur;
                let c1 = self.conv(format!("{p}.conv1"), block_in, channels, out_ch, 3, stride, 1);
                let b1 = self.bn(format!("{p}.bn1"), c1, out_ch);
                let r1 = self.relu(format!("{p}.relu1"), b1);
                let c2 = self.conv(format!("{p}.conv2"), r1, out_ch, out_ch, 3, 1, 1);
                let b2 = self.bn(format!("{p}.bn2"), c2, out_ch);
                let r2 = match arch.family {
                    Family::Resnet => {
                        let skip = if stride != 1 || channels != out_ch {
                            let dc = self.conv(format!("downsample{stage}.conv"), block_in, channels, out_ch, 1, stride, 0);
                            self.bn(format!("downsample{stage}.bn"), dc, out_ch)
                        } else {
                            block_in
                        };
                        let add = self.push(format!("{p}.add"), LayerKind::Add, vec![b2, skip]);
                        self.relu(format!("{p}.relu2"), add)
                    }
                    Family::Plain => self.relu(format!("{p}.relu2"), b2),
                };
                self.aliases.push(ConvAlias { conv: c1, activation: r1 });
                self.aliases.push(ConvAlias { conv: c2, activation: r2 });
                channels = out_ch;
                cur = r2;
            }
        }

        let pool = self.push("head.avgpool".into(), LayerKind::GlobalAvgPool, vec![cur]);
        let bound = 1.0 / (channels as f64).sqrt();
        let uniform = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let mut fc = LinearWeights::zeros(arch.num_classes, channels);
        for v in fc.weight.iter_mut().chain(fc.bias.iter_mut()) {
            *v = T::from_f64_lossy(uniform.sample(&mut self.rng));
        }
        self.push("head.fc".into(), LayerKind::Linear(fc), vec![pool]);

        let model = ModelGraph {
            arch: arch.clone(),
            layers: self.layers,
            index: self.index,
            aliases: self.aliases,
        };
        let (c, h, w) = arch.input;
        model.shapes(Shape::new(1, c, h, w))?;
        Ok(model)
    }
}
