//! Sequential networks `f = T_L ∘ … ∘ T_1` with a loss on top.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Activation, Conv2d, Flatten, Linear, LossKind, MaxPool2d};
use crate::module::Layer;
use crate::tensor::Tensor;

/// Position of a parameter block: layer index and block index within that layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    pub layer: usize,
    pub block: usize,
}

#[derive(Debug)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Box<dyn Layer>>,
    loss: LossKind,
}

impl Network {
    /// Checks that adjacent layers compose and that every layer is supported
    /// by the curvature machinery.
    pub fn new(input_shape: &[usize], layers: Vec<Box<dyn Layer>>, loss: LossKind) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        let mut dim: usize = input_shape.iter().product();
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim() != dim {
                return Err(Error::shape("Network::new", &[dim], layer.in_shape())
                    .at_layer(i, layer.name()));
            }
            if layer.has_curvature() && !layer.is_elementwise() {
                return Err(Error::Config(format!(
                    "layer {i} ({}) has second-order input curvature but is not element-wise",
                    layer.name()
                )));
            }
            dim = layer.out_dim();
        }
        if dim == 0 {
            return Err(Error::Config("network output is empty".into()));
        }
        Ok(Network {
            input_shape: input_shape.to_vec(),
            layers,
            loss,
        })
    }

    pub fn builder(input_shape: &[usize]) -> NetworkBuilder {
        NetworkBuilder {
            input_shape: input_shape.to_vec(),
            shape: input_shape.to_vec(),
            layers: Vec::new(),
            error: None,
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer>] {
        &mut self.layers
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    /// Output dimension `C`.
    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim())
    }

    /// Every parameter block in layer order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(layer, l)| (0..l.params().len()).map(move |block| ParamId { layer, block }))
            .collect()
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.layers[id.layer].params()[id.block].value
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.layers[id.layer].params_mut()[id.block].value
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params().iter())
            .map(|p| p.dim())
            .sum()
    }

    /// All parameters concatenated in [`param_ids`](Self::param_ids) order.
    pub fn params_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.params().iter())
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::shape("set_params_flat", &[values.len()], &[self.num_params()]));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                let d = p.dim();
                p.value.data_mut().copy_from_slice(&values[offset..offset + d]);
                offset += d;
            }
        }
        Ok(())
    }

    /// Network output without caching.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut z = self.check_input(x)?.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            z = layer.forward(&z).map_err(|e| e.at_layer(i, layer.name()))?;
        }
        let n = z.shape()[0];
        let c = z.row_len();
        z.reshape(&[n, c])
    }

    pub(crate) fn check_input<'a>(&self, x: &'a Tensor) -> Result<&'a Tensor> {
        let dim: usize = self.input_shape.iter().product();
        if x.ndim() < 2 || x.row_len() != dim {
            let mut want = vec![0];
            want.extend_from_slice(&self.input_shape);
            return Err(Error::shape("network input", x.shape(), &want));
        }
        Ok(x)
    }
}

/// Appends layers while tracking the running per-sample shape.
///
/// The first failing step is reported by [`build`](Self::build).
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    shape: Vec<usize>,
    layers: Vec<Box<dyn Layer>>,
    error: Option<Error>,
}

impl NetworkBuilder {
    pub fn push(mut self, layer: Box<dyn Layer>) -> Self {
        if self.error.is_none() {
            self.shape = layer.out_shape().to_vec();
            self.layers.push(layer);
        }
        self
    }

    fn try_push(mut self, layer: Result<Box<dyn Layer>>) -> Self {
        match layer {
            Ok(l) => self.push(l),
            Err(e) => {
                self.error.get_or_insert(e.at_layer(self.layers.len(), "builder"));
                self
            }
        }
    }

    fn image_shape(&self) -> Result<[usize; 3]> {
        match self.shape[..] {
            [c, h, w] => Ok([c, h, w]),
            _ => Err(Error::Config(format!(
                "expected a [C, H, W] input, found {:?}",
                self.shape
            ))),
        }
    }

    pub fn linear<R: Rng + ?Sized>(self, out_features: usize, rng: &mut R) -> Self {
        let layer = match self.shape[..] {
            [d] => Ok(Box::new(Linear::new(d, out_features, rng)) as Box<dyn Layer>),
            _ => Err(Error::Config(format!(
                "Linear needs a flat input, found {:?}; add flatten() first",
                self.shape
            ))),
        };
        self.try_push(layer)
    }

    pub fn conv2d<R: Rng + ?Sized>(
        self,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let layer = self.image_shape().and_then(|s| {
            Conv2d::new(s, out_channels, kernel, stride, padding, rng)
                .map(|c| Box::new(c) as Box<dyn Layer>)
        });
        self.try_push(layer)
    }

    pub fn maxpool2d(self, kernel: (usize, usize), stride: (usize, usize)) -> Self {
        let layer = self
            .image_shape()
            .and_then(|s| MaxPool2d::new(s, kernel, stride).map(|p| Box::new(p) as Box<dyn Layer>));
        self.try_push(layer)
    }

    pub fn flatten(self) -> Self {
        let f = Flatten::new(&self.shape);
        self.push(Box::new(f))
    }

    pub fn relu(self) -> Self {
        let a = Activation::relu(&self.shape);
        self.push(Box::new(a))
    }

    pub fn sigmoid(self) -> Self {
        let a = Activation::sigmoid(&self.shape);
        self.push(Box::new(a))
    }

    pub fn tanh(self) -> Self {
        let a = Activation::tanh(&self.shape);
        self.push(Box::new(a))
    }

    pub fn build(self, loss: LossKind) -> Result<Network> {
        if let Some(e) = self.error {
            return Err(e);
        }
        Network::new(&self.input_shape, self.layers, loss)
    }
}
