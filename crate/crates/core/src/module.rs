//! The layer contract consumed by the backward sweep.
//!
//! Batched quantities keep the sample index first. Jacobian products act on
//! `[N × dim × K]` tensors: `K` columns per sample are propagated at once,
//! which is how one code path serves plain gradients (`K = 1`), Monte-Carlo
//! factors (`K = m`) and exact loss-Hessian square roots (`K = C`).
//! Per-sample features are flattened row-major.

use std::any::Any;
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named parameter tensor owned by a layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub name: &'static str,
    pub value: Tensor,
}

impl ParamBlock {
    pub fn new(name: &'static str, value: Tensor) -> Self {
        ParamBlock { name, value }
    }

    /// Flattened length.
    pub fn dim(&self) -> usize {
        self.value.len()
    }
}

/// Layer-specific forward cache.
#[derive(Clone, Debug, Default)]
pub enum Cache {
    #[default]
    None,
    /// Unfolded inputs `[N × patch_len × positions]` of a convolution.
    Unfolded(Tensor),
    /// For every output entry of every sample, the input index it was read from.
    Argmax(Vec<usize>),
}

/// Input and output of one layer for a batch, as cached by the forward pass.
#[derive(Clone, Debug)]
pub struct LayerIO {
    pub input: Tensor,
    pub output: Tensor,
    pub cache: Cache,
}

impl LayerIO {
    pub fn batch_size(&self) -> usize {
        self.input.shape()[0]
    }

    /// Single-sample view, copied.
    pub fn sample(&self, n: usize) -> LayerIO {
        let cache = match &self.cache {
            Cache::None => Cache::None,
            Cache::Unfolded(u) => Cache::Unfolded(u.select_rows(&[n])),
            Cache::Argmax(idx) => {
                let per = self.output.row_len();
                Cache::Argmax(idx[n * per..(n + 1) * per].to_vec())
            }
        };
        LayerIO {
            input: self.input.select_rows(&[n]),
            output: self.output.select_rows(&[n]),
            cache,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }
}

/// Per-sample symmetric factor `S_n` of a curvature matrix, stored `[N × dim × K]`.
///
/// A negative sign marks a factor of the negative part of a residual, whose
/// contribution is subtracted.
#[derive(Clone, Debug)]
pub struct SqrtFactor {
    pub data: Tensor,
    pub sign: Sign,
}

impl SqrtFactor {
    pub fn positive(data: Tensor) -> Self {
        SqrtFactor {
            data,
            sign: Sign::Positive,
        }
    }

    pub fn columns(&self) -> usize {
        self.data.shape()[2]
    }

    /// `S_n S_nᵀ` for every sample, `[N × dim × dim]`.
    pub fn outer(&self) -> Tensor {
        let &[n, d, k] = self.data.shape() else {
            unreachable!("factors are rank 3")
        };
        let mut out = Tensor::zeros(&[n, d, d]);
        for s in 0..n {
            let f = self.data.row(s);
            let o = out.row_mut(s);
            for i in 0..d {
                for j in 0..d {
                    let mut acc = 0.0;
                    for c in 0..k {
                        acc += f[i * k + c] * f[j * k + c];
                    }
                    o[i * d + j] = acc;
                }
            }
        }
        out
    }
}

/// A transformation `z_out = T(z_in)` in a sequential network.
///
/// Row `n` of every output depends on row `n` of the input only.
pub trait Layer: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Per-sample input shape.
    fn in_shape(&self) -> &[usize];

    /// Per-sample output shape.
    fn out_shape(&self) -> &[usize];

    fn in_dim(&self) -> usize {
        self.in_shape().iter().product()
    }

    fn out_dim(&self) -> usize {
        self.out_shape().iter().product()
    }

    fn params(&self) -> &[ParamBlock] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [ParamBlock] {
        &mut []
    }

    /// Batched evaluation, `[N × in] → [N × out]`.
    fn forward(&self, input: &Tensor) -> Result<Tensor>;

    /// Forward pass that also records what the backward products need.
    fn forward_io(&self, input: Tensor) -> Result<LayerIO> {
        let output = self.forward(&input)?;
        Ok(LayerIO {
            input,
            output,
            cache: Cache::None,
        })
    }

    /// `(J_{z_in} z_out)ᵀ M_n` per sample: `[N × out × K] → [N × in × K]`.
    fn jac_t_mat_prod(&self, io: &LayerIO, m: &Tensor) -> Result<Tensor>;

    /// `(J_{z_in} z_out) M_n` per sample: `[N × in × K] → [N × out × K]`.
    fn jac_mat_prod(&self, io: &LayerIO, m: &Tensor) -> Result<Tensor>;

    /// `(J_θ z_out)ᵀ M_n` for parameter block `block`.
    ///
    /// Returns `[N × d × K]`, or `[d × K]` summed over samples (in sample order)
    /// when `sum_samples` is set.
    fn param_jac_t_mat_prod(
        &self,
        _io: &LayerIO,
        _block: usize,
        _m: &Tensor,
        _sum_samples: bool,
    ) -> Result<Tensor> {
        Err(Error::unsupported(self.name(), "param_jac_t_mat_prod"))
    }

    /// Applies its function independently to every entry.
    fn is_elementwise(&self) -> bool {
        false
    }

    /// The output has a non-vanishing second derivative with respect to the input.
    fn has_curvature(&self) -> bool {
        false
    }

    /// The input Jacobian does not depend on the input.
    fn jacobian_is_constant(&self) -> bool {
        false
    }

    /// Diagonal of the residual `Σ_j ∇²_{z_in}[z_out]_j · g_j` per sample,
    /// `[N × in]`. `None` when the layer has no second derivative.
    fn residual_diag(&self, _io: &LayerIO, _grad_out: &Tensor) -> Option<Tensor> {
        None
    }

    /// `Σ_n Σ_k ([(J_θ z_out)ᵀ F_n]_{j,k})²` for every parameter entry `j`, shape `[d]`.
    fn param_sq_contraction(&self, io: &LayerIO, block: usize, factor: &Tensor) -> Result<Tensor> {
        let j = self.param_jac_t_mat_prod(io, block, factor, false)?;
        let &[n, d, k] = j.shape() else {
            unreachable!("per-sample parameter products are rank 3")
        };
        let mut out = Tensor::zeros(&[d]);
        let o = out.data_mut();
        for s in 0..n {
            let row = j.row(s);
            for (i, acc) in o.iter_mut().enumerate() {
                for v in &row[i * k..(i + 1) * k] {
                    *acc += v * v;
                }
            }
        }
        Ok(out)
    }

    /// Streams the per-sample gradient `(J_θ z_out)ᵀ m_n` of `block` for `m = grad_out [N × out]`.
    fn for_each_sample_grad(
        &self,
        io: &LayerIO,
        block: usize,
        grad_out: &Tensor,
        f: &mut dyn FnMut(usize, &[f64]),
    ) -> Result<()> {
        let out = self.out_dim();
        for n in 0..io.batch_size() {
            let sample = io.sample(n);
            let m = Tensor::new(&[1, out, 1], grad_out.row(n).to_vec())?;
            let g = self.param_jac_t_mat_prod(&sample, block, &m, false)?;
            f(n, g.data());
        }
        Ok(())
    }

    /// Input-side Kronecker factor summed over samples (averaged over positions for convolutions).
    fn kron_input_factor(&self, _io: &LayerIO) -> Result<Tensor> {
        Err(Error::unsupported(self.name(), "kron_input_factor"))
    }

    /// Output-side Kronecker factor `Σ_n (Eᵀ F_n)(Eᵀ F_n)ᵀ`, where `E` maps the
    /// bias onto the output (identity for dense layers, channel broadcast for convolutions).
    fn kron_output_factor(&self, _io: &LayerIO, _factor: &Tensor) -> Result<Tensor> {
        Err(Error::unsupported(self.name(), "kron_output_factor"))
    }

    /// `Eᵀ G E` for a matrix `G` over the output.
    fn kron_output_from_matrix(&self, _g: &Tensor) -> Result<Tensor> {
        Err(Error::unsupported(self.name(), "kron_output_from_matrix"))
    }

    fn as_any(&self) -> &dyn Any;
}

/// Validates an `[N × dim × K]` operand and returns `K`.
pub(crate) fn check_cols(op: &'static str, m: &Tensor, n: usize, dim: usize) -> Result<usize> {
    match *m.shape() {
        [mn, md, k] if mn == n && md == dim => Ok(k),
        _ => Err(Error::shape(op, m.shape(), &[n, dim, 0])),
    }
}

/// Validates a batched input against a per-sample shape and returns `N`.
pub(crate) fn check_input(op: &'static str, x: &Tensor, per_sample: &[usize]) -> Result<usize> {
    let dim: usize = per_sample.iter().product();
    if x.ndim() == 0 || x.row_len() != dim {
        let mut want = vec![0];
        want.extend_from_slice(per_sample);
        return Err(Error::shape(op, x.shape(), &want));
    }
    Ok(x.shape()[0])
}

/// `[N, shape...]`
pub(crate) fn batched(n: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len() + 1);
    s.push(n);
    s.extend_from_slice(shape);
    s
}
