//! Small reference architectures.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::LossKind;
use crate::network::{Network, NetworkBuilder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// A single linear layer.
    LogReg,
    /// Two hidden ReLU layers.
    Mlp2,
    /// conv → ReLU → pool → conv → ReLU → pool → linear → ReLU → linear.
    CnnSmall,
    /// `CnnSmall` with a sigmoid instead of the last ReLU.
    CnnSigmoid,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::LogReg, ModelKind::Mlp2, ModelKind::CnnSmall, ModelKind::CnnSigmoid];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LogReg => "logreg",
            ModelKind::Mlp2 => "mlp2",
            ModelKind::CnnSmall => "cnn-small",
            ModelKind::CnnSigmoid => "cnn-sigmoid",
        }
    }

    pub fn is_conv(self) -> bool {
        matches!(self, ModelKind::CnnSmall | ModelKind::CnnSigmoid)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

/// Architecture and sizes of a zoo model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Per-sample input shape; `[C, H, W]` for the convolutional models.
    pub input_shape: Vec<usize>,
    pub classes: usize,
    /// Width of the hidden linear layers.
    pub hidden: usize,
    /// Output channels of the two convolutions.
    pub channels: (usize, usize),
    pub loss: LossKind,
}

impl ModelSpec {
    /// MNIST-shaped model for benchmarks and training.
    pub fn desk(kind: ModelKind, classes: usize) -> Self {
        ModelSpec {
            kind,
            input_shape: vec![1, 28, 28],
            classes,
            hidden: 64,
            channels: (8, 16),
            loss: LossKind::CrossEntropy,
        }
    }

    /// Variant small enough for dense and finite-difference oracles
    /// (at most 100 parameters).
    pub fn tiny(kind: ModelKind) -> Self {
        let input_shape = if kind.is_conv() { vec![1, 4, 4] } else { vec![4] };
        ModelSpec {
            kind,
            input_shape,
            classes: 3,
            hidden: if kind.is_conv() { 4 } else { 5 },
            channels: (2, 2),
            loss: LossKind::CrossEntropy,
        }
    }

    pub fn with_input(mut self, shape: &[usize]) -> Self {
        self.input_shape = shape.to_vec();
        self
    }

    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        self
    }

    pub fn build(&self, seed: u64) -> Result<Network> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Network::builder(&self.input_shape);
        let b = if self.input_shape.len() > 1 && !self.kind.is_conv() {
            b.flatten()
        } else {
            b
        };
        let (h, c) = (self.hidden, self.classes);
        let b: NetworkBuilder = match self.kind {
            ModelKind::LogReg => b.linear(c, &mut rng),
            ModelKind::Mlp2 => b
                .linear(h, &mut rng)
                .relu()
                .linear(h, &mut rng)
                .relu()
                .linear(c, &mut rng),
            ModelKind::CnnSmall | ModelKind::CnnSigmoid => {
                let (c1, c2) = self.channels;
                let b = b
                    .conv2d(c1, (3, 3), (1, 1), (1, 1), &mut rng)
                    .relu()
                    .maxpool2d((2, 2), (2, 2))
                    .conv2d(c2, (3, 3), (1, 1), (1, 1), &mut rng)
                    .relu()
                    .maxpool2d((2, 2), (2, 2))
                    .flatten()
                    .linear(h, &mut rng);
                let b = if self.kind == ModelKind::CnnSigmoid { b.sigmoid() } else { b.relu() };
                b.linear(c, &mut rng)
            }
        };
        b.build(self.loss)
    }
}
