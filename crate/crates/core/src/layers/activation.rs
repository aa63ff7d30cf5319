use std::any::Any;

use crate::error::Result;
use crate::module::{batched, check_cols, check_input, Layer, LayerIO};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationKind {
    ReLU,
    Sigmoid,
    Tanh,
}

impl ActivationKind {
    fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::ReLU => x.max(0.0),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => x.tanh(),
        }
    }

    /// First derivative from input `x` and output `y`.
    fn d1(self, x: f64, y: f64) -> f64 {
        match self {
            ActivationKind::ReLU => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Sigmoid => y * (1.0 - y),
            ActivationKind::Tanh => 1.0 - y * y,
        }
    }

    fn d2(self, y: f64) -> f64 {
        match self {
            ActivationKind::ReLU => 0.0,
            ActivationKind::Sigmoid => y * (1.0 - y) * (1.0 - 2.0 * y),
            ActivationKind::Tanh => -2.0 * y * (1.0 - y * y),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Element-wise activation over a tensor of any per-sample shape.
#[derive(Clone, Debug)]
pub struct Activation {
    kind: ActivationKind,
    shape: Vec<usize>,
}

impl Activation {
    pub fn new(kind: ActivationKind, shape: &[usize]) -> Self {
        Activation {
            kind,
            shape: shape.to_vec(),
        }
    }

    pub fn relu(shape: &[usize]) -> Self {
        Self::new(ActivationKind::ReLU, shape)
    }

    pub fn sigmoid(shape: &[usize]) -> Self {
        Self::new(ActivationKind::Sigmoid, shape)
    }

    pub fn tanh(shape: &[usize]) -> Self {
        Self::new(ActivationKind::Tanh, shape)
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    /// Scales column blocks of `m` by σ'(x) per entry.
    fn diag_prod(&self, io: &LayerIO, m: &Tensor, op: &'static str) -> Result<Tensor> {
        let n = io.batch_size();
        let dim = self.in_dim();
        let k = check_cols(op, m, n, dim)?;
        let (x, y) = (io.input.data(), io.output.data());
        let mut out = Tensor::zeros(m.shape());
        for (e, (dst, src)) in out
            .data_mut()
            .chunks_mut(k)
            .zip(m.data().chunks(k))
            .enumerate()
        {
            let s = self.kind.d1(x[e], y[e]);
            for (d, v) in dst.iter_mut().zip(src) {
                *d = s * v;
            }
        }
        Ok(out)
    }
}

impl Layer for Activation {
    fn name(&self) -> &'static str {
        match self.kind {
            ActivationKind::ReLU => "ReLU",
            ActivationKind::Sigmoid => "Sigmoid",
            ActivationKind::Tanh => "Tanh",
        }
    }

    fn in_shape(&self) -> &[usize] {
        &self.shape
    }

    fn out_shape(&self) -> &[usize] {
        &self.shape
    }

    fn is_elementwise(&self) -> bool {
        true
    }

    fn has_curvature(&self) -> bool {
        self.kind != ActivationKind::ReLU
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let n = check_input(self.name(), input, &self.shape)?;
        Tensor::new(&batched(n, &self.shape), input.data().iter().map(|&v| self.kind.apply(v)).collect())
    }

    fn jac_t_mat_prod(&self, io: &LayerIO, m: &Tensor) -> Result<Tensor> {
        self.diag_prod(io, m, "Activation::jac_t_mat_prod")
    }

    fn jac_mat_prod(&self, io: &LayerIO, m: &Tensor) -> Result<Tensor> {
        self.diag_prod(io, m, "Activation::jac_mat_prod")
    }

    fn residual_diag(&self, io: &LayerIO, grad_out: &Tensor) -> Option<Tensor> {
        if !self.has_curvature() {
            return None;
        }
        let y = io.output.data();
        let g = grad_out.data();
        Some(Tensor::from_fn(&[io.batch_size(), self.in_dim()], |i| {
            self.kind.d2(y[i]) * g[i]
        }))
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
