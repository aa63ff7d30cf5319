//! Curvature extraction from backpropagated symmetric factors.

use crate::error::Result;
use crate::module::{Layer, LayerIO, Sign, SqrtFactor};
use crate::tensor::Tensor;

/// Kronecker approximation `A ⊗ B` of a weight block's curvature.
///
/// `A` (`p × p`) comes from the layer inputs and `B` (`q × q`) from the
/// output side. The product indexes the weight input-major, i.e. it acts on
/// the row-major flattening of `Wᵀ` (shape `[p × q]`). For a weight stored
/// `[q × p]` the same matrix in the parameter's own ordering is `B ⊗ A`.
#[derive(Clone, Debug, PartialEq)]
pub struct KroneckerPair {
    pub a: Tensor,
    pub b: Tensor,
}

impl KroneckerPair {
    /// `A ⊗ B` as a dense `pq × pq` matrix.
    pub fn dense(&self) -> Tensor {
        self.a.kron(&self.b).expect("factors are square matrices")
    }

    /// `B ⊗ A`, the curvature in the row-major ordering of the `[q × p]` weight.
    pub fn dense_param_layout(&self) -> Tensor {
        self.b.kron(&self.a).expect("factors are square matrices")
    }
}

/// Curvature of one parameter block: a Kronecker pair for weights, a full
/// matrix for biases.
#[derive(Clone, Debug, PartialEq)]
pub enum Curvature {
    Kronecker(KroneckerPair),
    Dense(Tensor),
}

impl Curvature {
    /// The approximated `d × d` block in the parameter's row-major ordering.
    pub fn to_dense(&self) -> Tensor {
        match self {
            Curvature::Kronecker(p) => p.dense_param_layout(),
            Curvature::Dense(m) => m.clone(),
        }
    }

    pub fn as_kronecker(&self) -> Option<&KroneckerPair> {
        match self {
            Curvature::Kronecker(p) => Some(p),
            Curvature::Dense(_) => None,
        }
    }
}

fn is_bias(layer: &dyn Layer, block: usize) -> bool {
    layer.params()[block].name == "bias"
}

/// `(1/N) Σ_n` squared row sums of `(J_θ z_n)ᵀ S_n`: the block diagonal of
/// `(1/N) Σ_n J_θᵀ S_n S_nᵀ J_θ`, `[d]`.
pub fn diag_ggn(layer: &dyn Layer, io: &LayerIO, block: usize, factor: &SqrtFactor) -> Result<Tensor> {
    let n = io.batch_size() as f64;
    let t = layer.param_sq_contraction(io, block, &factor.data)?;
    Ok(t.scale(1.0 / n))
}

/// Same contraction as [`diag_ggn`] over a sampled factor.
pub fn diag_ggn_mc(
    layer: &dyn Layer,
    io: &LayerIO,
    block: usize,
    mc_factor: &SqrtFactor,
) -> Result<Tensor> {
    diag_ggn(layer, io, block, mc_factor)
}

/// Signed sum of [`diag_ggn`] over every received factor.
pub fn diag_hessian(
    layer: &dyn Layer,
    io: &LayerIO,
    block: usize,
    factors: &[&SqrtFactor],
) -> Result<Tensor> {
    let d = layer.params()[block].dim();
    let mut out = Tensor::zeros(&[d]);
    for f in factors {
        let part = diag_ggn(layer, io, block, f)?;
        let sign = f.sign.value();
        for (o, v) in out.data_mut().iter_mut().zip(part.data()) {
            *o += sign * v;
        }
    }
    Ok(out)
}

/// Kronecker factors from a backpropagated factor: `A = (1/N) Σ x xᵀ`,
/// `B = (1/N) Σ S Sᵀ`. Used by KFAC (sampled factor) and KFLR (exact factor).
pub fn kron_factors(
    layer: &dyn Layer,
    io: &LayerIO,
    block: usize,
    factor: &SqrtFactor,
) -> Result<Curvature> {
    let inv_n = 1.0 / io.batch_size() as f64;
    let b = layer.kron_output_factor(io, &factor.data)?.scale(inv_n);
    if is_bias(layer, block) {
        return Ok(Curvature::Dense(b));
    }
    let a = layer.kron_input_factor(io)?.scale(inv_n);
    Ok(Curvature::Kronecker(KroneckerPair { a, b }))
}

/// KFRA factors with `B = Eᵀ Ḡ E` for the averaged output curvature `Ḡ`.
pub fn kfra(layer: &dyn Layer, io: &LayerIO, block: usize, gbar: &Tensor) -> Result<Curvature> {
    let b = layer.kron_output_from_matrix(gbar)?;
    if is_bias(layer, block) {
        return Ok(Curvature::Dense(b));
    }
    let a = layer.kron_input_factor(io)?.scale(1.0 / io.batch_size() as f64);
    Ok(Curvature::Kronecker(KroneckerPair { a, b }))
}

/// `(1/N) Σ_n J_nᵀ Ḡ J_n` from `Ḡ` at the layer output, evaluated as
/// `Jᵀ (Jᵀ Ḡ)ᵀ` with two transposed products per sample. Layers with a
/// constant Jacobian are evaluated once.
pub fn kfra_propagate(layer: &dyn Layer, io: &LayerIO, gbar: &Tensor) -> Result<Tensor> {
    let (din, dout) = (layer.in_dim(), layer.out_dim());
    let n = io.batch_size();
    let samples = if layer.jacobian_is_constant() { 1 } else { n };
    let mut acc = Tensor::zeros(&[din, din]);
    for s in 0..samples {
        let one;
        let io_s = if n == 1 {
            io
        } else {
            one = io.sample(s);
            &one
        };
        let m = gbar.clone().reshape(&[1, dout, dout])?;
        let left = layer.jac_t_mat_prod(io_s, &m)?.reshape(&[din, dout])?;
        let right = left.transpose()?.reshape(&[1, dout, din])?;
        let two = layer.jac_t_mat_prod(io_s, &right)?;
        for (a, v) in acc.data_mut().iter_mut().zip(two.data()) {
            *a += v;
        }
    }
    let inv = 1.0 / samples as f64;
    acc.data_mut().iter_mut().for_each(|v| *v *= inv);
    Ok(acc)
}

/// Positive and negative parts of a diagonal residual as factors at the
/// layer input. `grad_out` is the unscaled per-sample gradient `∇_{z_out} ℓ_n`.
/// All-zero parts are dropped.
pub fn residual_factors(layer: &dyn Layer, io: &LayerIO, grad_out: &Tensor) -> Vec<SqrtFactor> {
    let Some(r) = layer.residual_diag(io, grad_out) else {
        return Vec::new();
    };
    let (n, dim) = (io.batch_size(), layer.in_dim());
    let mut out = Vec::new();
    for sign in [Sign::Positive, Sign::Negative] {
        let s = sign.value();
        if !r.data().iter().any(|&v| s * v > 0.0) {
            continue;
        }
        let mut data = Tensor::zeros(&[n, dim, dim]);
        for b in 0..n {
            let rr = r.row(b);
            let dst = data.row_mut(b);
            for j in 0..dim {
                dst[j * dim + j] = (s * rr[j]).max(0.0).sqrt();
            }
        }
        out.push(SqrtFactor { data, sign });
    }
    out
}
