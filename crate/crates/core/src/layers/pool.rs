use std::any::Any;

use crate::error::Result;
use crate::module::{batched, check_cols, check_input, Cache, Layer, LayerIO};
use crate::tensor::{ConvGeometry, Tensor};

/// Max pooling without padding. Ties go to the first window entry in row-major order.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    geom: ConvGeometry,
    in_shape: [usize; 3],
    out_shape: [usize; 3],
}

impl MaxPool2d {
    pub fn new(in_shape: [usize; 3], kernel: (usize, usize), stride: (usize, usize)) -> Result<Self> {
        let geom = ConvGeometry::new(in_shape, kernel, stride, (0, 0))?;
        Ok(MaxPool2d {
            geom,
            in_shape,
            out_shape: [in_shape[0], geom.out_h, geom.out_w],
        })
    }

    /// Input index of the maximum for every output entry of every sample.
    fn argmax(&self, input: &Tensor) -> Vec<usize> {
        let n = input.shape()[0];
        let (c, h, w) = (self.in_shape[0], self.in_shape[1], self.in_shape[2]);
        let (oh, ow) = (self.geom.out_h, self.geom.out_w);
        let (kh, kw) = self.geom.kernel;
        let (sh, sw) = self.geom.stride;
        let mut idx = Vec::with_capacity(n * c * oh * ow);
        for s in 0..n {
            let x = input.row(s);
            for ch in 0..c {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut best = (ch * h + oi * sh) * w + oj * sw;
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let at = (ch * h + oi * sh + ki) * w + oj * sw + kj;
                                if x[at] > x[best] {
                                    best = at;
                                }
                            }
                        }
                        idx.push(best);
                    }
                }
            }
        }
        idx
    }

    fn cached_argmax<'a>(&self, io: &'a LayerIO, owned: &'a mut Vec<usize>) -> &'a [usize] {
        match &io.cache {
            Cache::Argmax(a) => a,
            _ => {
                *owned = self.argmax(&io.input);
                owned
            }
        }
    }
}

impl Layer for MaxPool2d {
    fn name(&self) -> &'static str {
        "MaxPool2d"
    }

    fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }

    fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_io(input.clone())?.output)
    }

    fn forward_io(&self, input: Tensor) -> Result<LayerIO> {
        let n = check_input("MaxPool2d::forward", &input, &self.in_shape)?;
        let idx = self.argmax(&input);
        let per = self.out_dim();
        let mut out = Tensor::zeros(&batched(n, &self.out_shape));
        for s in 0..n {
            let x = input.row(s);
            for (o, &i) in out.row_mut(s).iter_mut().zip(&idx[s * per..(s + 1) * per]) {
                *o = x[i];
            }
        }
        Ok(LayerIO {
            input,
            output: out,
            cache: Cache::Argmax(idx),
        })
    }

    fn jac_t_mat_prod(&self, io: &LayerIO, m: &Tensor) -> Result<Tensor> {
        let n = io.batch_size();
        let (per_out, per_in) = (self.out_dim(), self.in_dim());
        let k = check_cols("MaxPool2d::jac_t_mat_prod", m, n, per_out)?;
        let mut owned = Vec::new();
        let idx = self.cached_argmax(io, &mut owned);
        let mut out = Tensor::zeros(&[n, per_in, k]);
        for s in 0..n {
            let src = m.row(s);
            let dst = out.row_mut(s);
            for (q, &i) in idx[s * per_out..(s + 1) * per_out].iter().enumerate() {
                for c in 0..k {
                    dst[i * k + c] += src[q * k + c];
                }
            }
        }
        Ok(out)
    }

    fn jac_mat_prod(&self, io: &LayerIO, m: &Tensor) -> Result<Tensor> {
        let n = io.batch_size();
        let (per_out, per_in) = (self.out_dim(), self.in_dim());
        let k = check_cols("MaxPool2d::jac_mat_prod", m, n, per_in)?;
        let mut owned = Vec::new();
        let idx = self.cached_argmax(io, &mut owned);
        let mut out = Tensor::zeros(&[n, per_out, k]);
        for s in 0..n {
            let src = m.row(s);
            let dst = out.row_mut(s);
            for (q, &i) in idx[s * per_out..(s + 1) * per_out].iter().enumerate() {
                dst[q * k..(q + 1) * k].copy_from_slice(&src[i * k..(i + 1) * k]);
            }
        }
        Ok(out)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Reshapes `[C, H, W]` (or any shape) into a flat feature vector.
#[derive(Clone, Debug)]
pub struct Flatten {
    in_shape: Vec<usize>,
    out_shape: [usize; 1],
}

impl Flatten {
    pub fn new(in_shape: &[usize]) -> Self {
        Flatten {
            in_shape: in_shape.to_vec(),
            out_shape: [in_shape.iter().product()],
        }
    }

    fn pass(&self, io: &LayerIO, m: &Tensor, dim: usize, op: &'static str) -> Result<Tensor> {
        check_cols(op, m, io.batch_size(), dim)?;
        Ok(m.clone())
    }
}

impl Layer for Flatten {
    fn name(&self) -> &'static str {
        "Flatten"
    }

    fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }

    fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    fn jacobian_is_constant(&self) -> bool {
        true
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let n = check_input("Flatten::forward", input, &self.in_shape)?;
        input.clone().reshape(&[n, self.out_shape[0]])
    }

    fn jac_t_mat_prod(&self, io: &LayerIO, m: &Tensor) -> Result<Tensor> {
        self.pass(io, m, self.out_shape[0], "Flatten::jac_t_mat_prod")
    }

    fn jac_mat_prod(&self, io: &LayerIO, m: &Tensor) -> Result<Tensor> {
        self.pass(io, m, self.out_shape[0], "Flatten::jac_mat_prod")
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
