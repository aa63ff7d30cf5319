use std::any::Any;

use rand::Rng;

use crate::alloc;
use crate::error::{Error, Result};
use crate::module::{check_cols, check_input, Layer, LayerIO, ParamBlock};
use crate::tensor::{gemm, MatMut, MatRef, Tensor};

pub const WEIGHT: usize = 0;
pub const BIAS: usize = 1;

/// Dense layer `z_out = W z_in + b` with `W` stored `[out × in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    in_shape: [usize; 1],
    out_shape: [usize; 1],
    params: [ParamBlock; 2],
}

impl Linear {
    /// Uniform initialization on `±1/√in`.
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features.max(1) as f64).sqrt();
        let w = Tensor::from_fn(&[out_features, in_features], |_| rng.random_range(-bound..bound));
        let b = Tensor::from_fn(&[out_features], |_| rng.random_range(-bound..bound));
        Linear {
            in_shape: [in_features],
            out_shape: [out_features],
            params: [ParamBlock::new("weight", w), ParamBlock::new("bias", b)],
        }
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Result<Self> {
        let &[out, inp] = weight.shape() else {
            return Err(Error::shape("Linear weight", weight.shape(), &[0, 0]));
        };
        if bias.shape() != [out] {
            return Err(Error::shape("Linear bias", bias.shape(), &[out]));
        }
        Ok(Linear {
            in_shape: [inp],
            out_shape: [out],
            params: [ParamBlock::new("weight", weight), ParamBlock::new("bias", bias)],
        })
    }

    pub fn in_features(&self) -> usize {
        self.in_shape[0]
    }

    pub fn out_features(&self) -> usize {
        self.out_shape[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.params[WEIGHT].value
    }

    pub fn bias(&self) -> &Tensor {
        &self.params[BIAS].value
    }

    fn w(&self) -> MatRef<'_> {
        MatRef::row_major(self.weight().data(), self.out_features(), self.in_features())
    }

    fn check_block(&self, block: usize) -> Result<()> {
        if block > BIAS {
            return Err(Error::Config(format!("Linear has no parameter block {block}")));
        }
        Ok(())
    }
}

impl Layer for Linear {
    fn name(&self) -> &'static str {
        "Linear"
    }

    fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }

    fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    fn params(&self) -> &[ParamBlock] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [ParamBlock] {
        &mut self.params
    }

    fn jacobian_is_constant(&self) -> bool {
        true
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let n = check_input("Linear::forward", input, &self.in_shape)?;
        let (i, o) = (self.in_features(), self.out_features());
        let mut out = Tensor::zeros(&[n, o]);
        gemm(
            1.0,
            MatRef::row_major(input.data(), n, i),
            self.w().t(),
            0.0,
            MatMut::row_major(out.data_mut(), n, o),
        );
        let b = self.bias().data();
        for r in 0..n {
            for (v, bj) in out.row_mut(r).iter_mut().zip(b) {
                *v += bj;
            }
        }
        Ok(out)
    }

    fn jac_t_mat_prod(&self, io: &LayerIO, m: &Tensor) -> Result<Tensor> {
        let n = io.batch_size();
        let (i, o) = (self.in_features(), self.out_features());
        let k = check_cols("Linear::jac_t_mat_prod", m, n, o)?;
        let mut out = Tensor::zeros(&[n, i, k]);
        if k == 1 {
            gemm(
                1.0,
                MatRef::row_major(m.data(), n, o),
                self.w(),
                0.0,
                MatMut::row_major(out.data_mut(), n, i),
            );
        } else {
            for s in 0..n {
                gemm(
                    1.0,
                    self.w().t(),
                    MatRef::row_major(m.row(s), o, k),
                    0.0,
                    MatMut::row_major(out.row_mut(s), i, k),
                );
            }
        }
        Ok(out)
    }

    fn jac_mat_prod(&self, io: &LayerIO, m: &Tensor) -> Result<Tensor> {
        let n = io.batch_size();
        let (i, o) = (self.in_features(), self.out_features());
        let k = check_cols("Linear::jac_mat_prod", m, n, i)?;
        let mut out = Tensor::zeros(&[n, o, k]);
        if k == 1 {
            gemm(
                1.0,
                MatRef::row_major(m.data(), n, i),
                self.w().t(),
                0.0,
                MatMut::row_major(out.data_mut(), n, o),
            );
        } else {
            for s in 0..n {
                gemm(
                    1.0,
                    self.w(),
                    MatRef::row_major(m.row(s), i, k),
                    0.0,
                    MatMut::row_major(out.row_mut(s), o, k),
                );
            }
        }
        Ok(out)
    }

    fn param_jac_t_mat_prod(
        &self,
        io: &LayerIO,
        block: usize,
        m: &Tensor,
        sum_samples: bool,
    ) -> Result<Tensor> {
        self.check_block(block)?;
        let n = io.batch_size();
        let (inp, o) = (self.in_features(), self.out_features());
        let k = check_cols("Linear::param_jac_t_mat_prod", m, n, o)?;
        let d = if block == WEIGHT { o * inp } else { o };
        let mut out = if sum_samples {
            Tensor::zeros(&[d, k])
        } else {
            Tensor::zeros(&[n, d, k])
        };
        for s in 0..n {
            let ms = m.row(s);
            let x = io.input.row(s);
            let dst = if sum_samples {
                out.data_mut()
            } else {
                out.row_mut(s)
            };
            // Each entry is one product; summing over samples in order keeps
            // the summed result equal to the row-sum of the per-sample one.
            if block == WEIGHT && k == 1 {
                for (oi, row) in dst.chunks_exact_mut(inp).enumerate() {
                    let g = ms[oi];
                    if sum_samples {
                        row.iter_mut().zip(x).for_each(|(a, xi)| *a += g * xi);
                    } else {
                        row.iter_mut().zip(x).for_each(|(a, xi)| *a = g * xi);
                    }
                }
            } else if block == WEIGHT {
                for oi in 0..o {
                    for ii in 0..inp {
                        let base = (oi * inp + ii) * k;
                        for c in 0..k {
                            let v = ms[oi * k + c] * x[ii];
                            if sum_samples {
                                dst[base + c] += v;
                            } else {
                                dst[base + c] = v;
                            }
                        }
                    }
                }
            } else if sum_samples {
                for (a, v) in dst.iter_mut().zip(ms) {
                    *a += v;
                }
            } else {
                dst.copy_from_slice(ms);
            }
        }
        Ok(out)
    }

    fn param_sq_contraction(&self, io: &LayerIO, block: usize, factor: &Tensor) -> Result<Tensor> {
        self.check_block(block)?;
        let n = io.batch_size();
        let (inp, o) = (self.in_features(), self.out_features());
        let k = check_cols("Linear::param_sq_contraction", factor, n, o)?;
        let d = if block == WEIGHT { o * inp } else { o };
        let mut out = Tensor::zeros(&[d]);
        let mut xsq = alloc::buffer(inp);
        let acc = out.data_mut();
        for s in 0..n {
            let f = factor.row(s);
            for (q, x) in xsq.iter_mut().zip(io.input.row(s)) {
                *q = x * x;
            }
            for oi in 0..o {
                let fs: f64 = f[oi * k..(oi + 1) * k].iter().map(|v| v * v).sum();
                if block == WEIGHT {
                    for (a, q) in acc[oi * inp..(oi + 1) * inp].iter_mut().zip(&xsq) {
                        *a += fs * q;
                    }
                } else {
                    acc[oi] += fs;
                }
            }
        }
        Ok(out)
    }

    fn for_each_sample_grad(
        &self,
        io: &LayerIO,
        block: usize,
        grad_out: &Tensor,
        f: &mut dyn FnMut(usize, &[f64]),
    ) -> Result<()> {
        self.check_block(block)?;
        let n = io.batch_size();
        let (inp, o) = (self.in_features(), self.out_features());
        if grad_out.shape() != [n, o] {
            return Err(Error::shape("Linear::for_each_sample_grad", grad_out.shape(), &[n, o]));
        }
        if block == BIAS {
            for s in 0..n {
                f(s, grad_out.row(s));
            }
            return Ok(());
        }
        let mut buf = alloc::buffer(o * inp);
        for s in 0..n {
            let g = grad_out.row(s);
            let x = io.input.row(s);
            for oi in 0..o {
                for (b, xi) in buf[oi * inp..(oi + 1) * inp].iter_mut().zip(x) {
                    *b = g[oi] * xi;
                }
            }
            f(s, &buf);
        }
        Ok(())
    }

    fn kron_input_factor(&self, io: &LayerIO) -> Result<Tensor> {
        let n = io.batch_size();
        let i = self.in_features();
        let mut out = Tensor::zeros(&[i, i]);
        let x = MatRef::row_major(io.input.data(), n, i);
        gemm(1.0, x.t(), x, 0.0, MatMut::row_major(out.data_mut(), i, i));
        Ok(out)
    }

    fn kron_output_factor(&self, io: &LayerIO, factor: &Tensor) -> Result<Tensor> {
        let n = io.batch_size();
        let o = self.out_features();
        let k = check_cols("Linear::kron_output_factor", factor, n, o)?;
        let mut out = Tensor::zeros(&[o, o]);
        for s in 0..n {
            let f = MatRef::row_major(factor.row(s), o, k);
            gemm(1.0, f, f.t(), 1.0, MatMut::row_major(out.data_mut(), o, o));
        }
        Ok(out)
    }

    fn kron_output_from_matrix(&self, g: &Tensor) -> Result<Tensor> {
        let o = self.out_features();
        if g.shape() != [o, o] {
            return Err(Error::shape("Linear::kron_output_from_matrix", g.shape(), &[o, o]));
        }
        Ok(g.clone())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

