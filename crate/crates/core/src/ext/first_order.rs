//! Per-sample gradient statistics computed from the layer's incoming gradient.
//!
//! Scalings follow one fixed table: `batch_grad` rows and `batch_l2` use the
//! scaled individual gradient `(1/N)∇ℓ_n`, while `sum_grad_squared` and
//! `variance` use the unscaled `∇ℓ_n`.

use crate::alloc;
use crate::error::Result;
use crate::layers::{linear, Linear};
use crate::module::{Layer, LayerIO};
use crate::tensor::Tensor;

/// Which first-order quantities to compute for one parameter block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FirstOrderRequest {
    pub batch_grad: bool,
    pub batch_l2: bool,
    pub sum_grad_squared: bool,
    pub variance: bool,
}

impl FirstOrderRequest {
    pub fn any(&self) -> bool {
        self.batch_grad || self.batch_l2 || self.sum_grad_squared || self.variance
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FirstOrderResult {
    /// `[N × d]`, row `n` is `(1/N)∇ℓ_n`.
    pub batch_grad: Option<Tensor>,
    /// `[N]`, entry `n` is `‖(1/N)∇ℓ_n‖²`.
    pub batch_l2: Option<Tensor>,
    /// `[d]`, `(1/N) Σ_n [∇ℓ_n]²`.
    pub sum_grad_squared: Option<Tensor>,
    /// `[d]`, `(1/N) Σ_n ([∇ℓ_n] − [∇L])²`.
    pub variance: Option<Tensor>,
}

/// `[N × d]` scaled individual gradients of `block`.
///
/// `grad_out` is the `[N × out]` gradient of the mean loss with respect to
/// the layer output.
pub fn batch_grad(layer: &dyn Layer, io: &LayerIO, block: usize, grad_out: &Tensor) -> Result<Tensor> {
    let n = io.batch_size();
    let m = grad_out.clone().reshape(&[n, layer.out_dim(), 1])?;
    let per = layer.param_jac_t_mat_prod(io, block, &m, false)?;
    let d = per.shape()[1];
    per.reshape(&[n, d])
}

/// Sums the rows of `[N × d]` in sample order.
pub fn sum_rows(per_sample: &Tensor) -> Tensor {
    let d = per_sample.row_len();
    let mut out = Tensor::zeros(&[d]);
    for s in 0..per_sample.shape()[0] {
        for (a, v) in out.data_mut().iter_mut().zip(per_sample.row(s)) {
            *a += v;
        }
    }
    out
}

/// `[N]` squared norms of the scaled individual gradients.
pub fn batch_l2(layer: &dyn Layer, io: &LayerIO, block: usize, grad_out: &Tensor) -> Result<Tensor> {
    let req = FirstOrderRequest {
        batch_l2: true,
        ..Default::default()
    };
    Ok(compute(layer, io, block, grad_out, None, req)?.batch_l2.expect("requested"))
}

/// `[d]` second moment `(1/N) Σ_n [∇ℓ_n]²`.
pub fn sum_grad_squared(
    layer: &dyn Layer,
    io: &LayerIO,
    block: usize,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let req = FirstOrderRequest {
        sum_grad_squared: true,
        ..Default::default()
    };
    Ok(compute(layer, io, block, grad_out, None, req)?
        .sum_grad_squared
        .expect("requested"))
}

/// `[d]` population variance of the unscaled individual gradients around `grad`,
/// the flattened batch gradient of `block`.
pub fn variance(
    layer: &dyn Layer,
    io: &LayerIO,
    block: usize,
    grad_out: &Tensor,
    grad: &Tensor,
) -> Result<Tensor> {
    let req = FirstOrderRequest {
        variance: true,
        ..Default::default()
    };
    Ok(compute(layer, io, block, grad_out, Some(grad), req)?
        .variance
        .expect("requested"))
}

/// Computes every requested quantity with at most one pass over the
/// individual gradients. `grad` is required when the variance is requested.
pub fn compute(
    layer: &dyn Layer,
    io: &LayerIO,
    block: usize,
    grad_out: &Tensor,
    grad: Option<&Tensor>,
    req: FirstOrderRequest,
) -> Result<FirstOrderResult> {
    let per_sample = if req.batch_grad {
        Some(batch_grad(layer, io, block, grad_out)?)
    } else {
        None
    };
    compute_with(layer, io, block, grad_out, grad, req, per_sample)
}

/// Like [`compute`], reusing already computed `[N × d]` individual gradients.
/// Whenever individual gradients are available the remaining statistics
/// stream over their rows instead of recomputing them.
pub fn compute_with(
    layer: &dyn Layer,
    io: &LayerIO,
    block: usize,
    grad_out: &Tensor,
    grad: Option<&Tensor>,
    req: FirstOrderRequest,
    per_sample: Option<Tensor>,
) -> Result<FirstOrderResult> {
    let mut res = FirstOrderResult::default();
    if req.batch_grad {
        res.batch_grad = match per_sample {
            Some(t) => Some(t),
            None => Some(batch_grad(layer, io, block, grad_out)?),
        };
    }
    let mut stream = FirstOrderRequest {
        batch_grad: false,
        ..req
    };
    if let Some(lin) = layer.as_any().downcast_ref::<Linear>() {
        if stream.batch_l2 {
            res.batch_l2 = Some(linear_batch_l2(io, block, grad_out));
            stream.batch_l2 = false;
        }
        if stream.sum_grad_squared {
            res.sum_grad_squared = Some(linear_sum_grad_squared(lin, io, block, grad_out));
            stream.sum_grad_squared = false;
        }
    }
    if !stream.any() {
        return Ok(res);
    }

    let n = io.batch_size();
    let nf = n as f64;
    let d = layer.params()[block].dim();
    let mean = if stream.variance {
        let g = grad.expect("variance needs the batch gradient");
        Some(g.data())
    } else {
        None
    };
    let mut l2 = stream.batch_l2.then(|| Tensor::zeros(&[n]));
    let mut sgs = stream.sum_grad_squared.then(|| Tensor::zeros(&[d]));
    let mut var = stream.variance.then(|| Tensor::zeros(&[d]));
    let mut visit = |s: usize, g: &[f64]| {
        if let Some(l) = l2.as_mut() {
            l.data_mut()[s] = g.iter().map(|v| v * v).sum();
        }
        if let Some(acc) = sgs.as_mut() {
            for (a, v) in acc.data_mut().iter_mut().zip(g) {
                let u = nf * v;
                *a += u * u;
            }
        }
        if let (Some(acc), Some(mean)) = (var.as_mut(), mean) {
            for ((a, v), m) in acc.data_mut().iter_mut().zip(g).zip(mean) {
                let c = nf * v - m;
                *a += c * c;
            }
        }
    };
    match res.batch_grad.as_ref() {
        Some(rows) => (0..n).for_each(|s| visit(s, rows.row(s))),
        None => layer.for_each_sample_grad(io, block, grad_out, &mut visit)?,
    }
    let inv_n = 1.0 / nf;
    if let Some(mut t) = sgs {
        t.data_mut().iter_mut().for_each(|v| *v *= inv_n);
        res.sum_grad_squared = Some(t);
    }
    if let Some(mut t) = var {
        t.data_mut().iter_mut().for_each(|v| *v *= inv_n);
        res.variance = Some(t);
    }
    if l2.is_some() {
        res.batch_l2 = l2;
    }
    Ok(res)
}

/// `‖g_n‖²·‖x_n‖²` for the weight, `‖g_n‖²` for the bias.
fn linear_batch_l2(io: &LayerIO, block: usize, grad_out: &Tensor) -> Tensor {
    let n = io.batch_size();
    let mut out = Tensor::zeros(&[n]);
    for s in 0..n {
        let b: f64 = grad_out.row(s).iter().map(|v| v * v).sum();
        out.data_mut()[s] = if block == linear::WEIGHT {
            let a: f64 = io.input.row(s).iter().map(|v| v * v).sum();
            a * b
        } else {
            b
        };
    }
    out
}

/// `N Σ_n g_n² ⊗ x_n²` for the weight, `N Σ_n g_n²` for the bias.
fn linear_sum_grad_squared(lin: &Linear, io: &LayerIO, block: usize, grad_out: &Tensor) -> Tensor {
    let n = io.batch_size();
    let (inp, o) = (lin.in_features(), lin.out_features());
    let nf = n as f64;
    if block == linear::BIAS {
        let mut out = Tensor::zeros(&[o]);
        for s in 0..n {
            for (a, g) in out.data_mut().iter_mut().zip(grad_out.row(s)) {
                *a += g * g;
            }
        }
        out.data_mut().iter_mut().for_each(|v| *v *= nf);
        return out;
    }
    let mut out = Tensor::zeros(&[o * inp]);
    let mut xsq = alloc::buffer(inp);
    let acc = out.data_mut();
    for s in 0..n {
        for (q, x) in xsq.iter_mut().zip(io.input.row(s)) {
            *q = x * x;
        }
        for (oi, g) in grad_out.row(s).iter().enumerate() {
            let gg = g * g;
            for (a, q) in acc[oi * inp..(oi + 1) * inp].iter_mut().zip(&xsq) {
                *a += gg * q;
            }
        }
    }
    acc.iter_mut().for_each(|v| *v *= nf);
    out
}
