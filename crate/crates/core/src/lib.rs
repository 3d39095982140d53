//! Receptive-field and preferred-stimulus analysis for residual and plain
//! convolutional networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] – dense NCHW tensors and differentiable layer kernels.
//! * [`graph`] – ResNet / PlainNet assembly, execution and checkpoints.
//! * [`rf`] – receptive-field geometry and patch extraction.
//! * [`data`] – CIFAR-10 and PPM ingestion, whitening, augmentation.
//! * [`train`] – SGD with momentum and step decay.
//! * [`mine`] – preferred-stimulus mining and mean stimulus images.
//! * [`vfilter`] – virtual filters of second-layer convolutions.
//! * [`actmax`] – activation maximisation with Adam.
//! * [`probe`] – inactive channels and noise injection.

pub mod actmax;
pub mod data;
pub mod error;
pub mod graph;
pub mod mine;
pub mod ppm;
pub mod probe;
pub mod rf;
pub mod tensor;
pub mod train;
pub mod tsv;
pub mod vfilter;

pub use error::{Error, Result};
pub use graph::{ArchSpec, Family, Mode, ModelGraph};
pub use tensor::{Scalar, Shape, Tensor};
