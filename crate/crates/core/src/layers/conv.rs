use std::any::Any;

use rand::Rng;

use crate::alloc;
use crate::error::{Error, Result};
use crate::module::{check_cols, check_input, Cache, Layer, LayerIO, ParamBlock};
use crate::tensor::{col2im_add, gemm, im2col_into, ConvGeometry, MatMut, MatRef, Tensor};

pub const WEIGHT: usize = 0;
pub const BIAS: usize = 1;

/// 2-D convolution computed as `W · im2col(x) + b`.
///
/// The weight is stored `[C_out, C_in, kh, kw]`, i.e. a `[C_out × patch_len]`
/// matrix in row-major order. Outputs are laid out `[C_out, out_h, out_w]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    geom: ConvGeometry,
    in_shape: [usize; 3],
    out_shape: [usize; 3],
    params: [ParamBlock; 2],
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_shape: [usize; 3],
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        let geom = ConvGeometry::new(in_shape, kernel, stride, padding)?;
        let fan_in = geom.patch_len();
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Tensor::from_fn(&[out_channels, in_shape[0], kernel.0, kernel.1], |_| {
            rng.random_range(-bound..bound)
        });
        let b = Tensor::from_fn(&[out_channels], |_| rng.random_range(-bound..bound));
        Self::build(geom, w, b)
    }

    pub fn from_params(
        in_shape: [usize; 3],
        weight: Tensor,
        bias: Tensor,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let &[_, cin, kh, kw] = weight.shape() else {
            return Err(Error::shape("Conv2d weight", weight.shape(), &[0, in_shape[0], 0, 0]));
        };
        if cin != in_shape[0] {
            return Err(Error::shape("Conv2d weight", weight.shape(), &in_shape));
        }
        let geom = ConvGeometry::new(in_shape, (kh, kw), stride, padding)?;
        Self::build(geom, weight, bias)
    }

    fn build(geom: ConvGeometry, weight: Tensor, bias: Tensor) -> Result<Self> {
        let cout = weight.shape()[0];
        if bias.shape() != [cout] {
            return Err(Error::shape("Conv2d bias", bias.shape(), &[cout]));
        }
        if cout == 0 {
            return Err(Error::Config("convolution with zero output channels".into()));
        }
        Ok(Conv2d {
            geom,
            in_shape: [geom.channels, geom.height, geom.width],
            out_shape: [cout, geom.out_h, geom.out_w],
            params: [ParamBlock::new("weight", weight), ParamBlock::new("bias", bias)],
        })
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geom
    }

    pub fn out_channels(&self) -> usize {
        self.out_shape[0]
    }

    fn w(&self) -> MatRef<'_> {
        MatRef::row_major(
            self.params[WEIGHT].value.data(),
            self.out_channels(),
            self.geom.patch_len(),
        )
    }

    fn check_block(&self, block: usize) -> Result<()> {
        if block > BIAS {
            return Err(Error::Config(format!("Conv2d has no parameter block {block}")));
        }
        Ok(())
    }

    fn block_dim(&self, block: usize) -> usize {
        if block == WEIGHT {
            self.out_channels() * self.geom.patch_len()
        } else {
            self.out_channels()
        }
    }

    /// Unfolded sample `n`, either from the forward cache or recomputed into `scratch`.
    fn unfolded<'a>(&self, io: &'a LayerIO, n: usize, scratch: &'a mut Vec<f64>) -> &'a [f64] {
        match &io.cache {
            Cache::Unfolded(u) => u.row(n),
            _ => {
                let len = self.geom.patch_len() * self.geom.positions();
                if scratch.len() != len {
                    *scratch = alloc::buffer(len);
                }
                im2col_into(io.input.row(n), &self.geom, 1, scratch);
                scratch
            }
        }
    }

    fn conv_sample(&self, u: &[f64], out: &mut [f64]) {
        let (cout, rows, pos) = (self.out_channels(), self.geom.patch_len(), self.geom.positions());
        gemm(
            1.0,
            self.w(),
            MatRef::row_major(u, rows, pos),
            0.0,
            MatMut::row_major(out, cout, pos),
        );
        for (c, b) in self.params[BIAS].value.data().iter().enumerate() {
            out[c * pos..(c + 1) * pos].iter_mut().for_each(|v| *v += b);
        }
    }

    /// Weight gradient of one sample for every column `k` of `m_n [C_out·P × K]`,
    /// written `(c, j, k)` into `out`.
    fn weight_jac_t_sample(&self, u: &[f64], mn: &[f64], k: usize, out: &mut [f64]) {
        let (cout, rows, pos) = (self.out_channels(), self.geom.patch_len(), self.geom.positions());
        let ut = MatRef::row_major(u, rows, pos).t();
        for c in 0..k {
            gemm(
                1.0,
                MatRef::strided(&mn[c..], cout, pos, pos * k, k),
                ut,
                0.0,
                MatMut::strided(&mut out[c..], cout, rows, rows * k, k),
            );
        }
    }

    fn bias_jac_t_sample(&self, mn: &[f64], k: usize, out: &mut [f64]) {
        let pos = self.geom.positions();
        for (c, chunk) in out.chunks_mut(k).enumerate() {
            chunk.iter_mut().for_each(|v| *v = 0.0);
            for p in 0..pos {
                let src = &mn[(c * pos + p) * k..(c * pos + p + 1) * k];
                for (a, v) in chunk.iter_mut().zip(src) {
                    *a += v;
                }
            }
        }
    }
}

impl Layer for Conv2d {
    fn name(&self) -> &'static str {
        "Conv2d"
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
        let n = check_input("Conv2d::forward", input, &self.in_shape)?;
        let mut out = Tensor::zeros(&[n, self.out_shape[0], self.out_shape[1], self.out_shape[2]]);
        let mut u = alloc::buffer(self.geom.patch_len() * self.geom.positions());
        for s in 0..n {
            im2col_into(input.row(s), &self.geom, 1, &mut u);
            self.conv_sample(&u, out.row_mut(s));
        }
        Ok(out)
    }

    fn forward_io(&self, input: Tensor) -> Result<LayerIO> {
        let n = check_input("Conv2d::forward", &input, &self.in_shape)?;
        let (rows, pos) = (self.geom.patch_len(), self.geom.positions());
        let mut unfolded = Tensor::zeros(&[n, rows, pos]);
        let mut out = Tensor::zeros(&[n, self.out_shape[0], self.out_shape[1], self.out_shape[2]]);
        for s in 0..n {
            im2col_into(input.row(s), &self.geom, 1, unfolded.row_mut(s));
            self.conv_sample(unfolded.row(s), out.row_mut(s));
        }
        Ok(LayerIO {
            input,
            output: out,
            cache: Cache::Unfolded(unfolded),
        })
    }

    fn jac_t_mat_prod(&self, io: &LayerIO, m: &Tensor) -> Result<Tensor> {
        let n = io.batch_size();
        let k = check_cols("Conv2d::jac_t_mat_prod", m, n, self.out_dim())?;
        let (cout, rows, pos) = (self.out_channels(), self.geom.patch_len(), self.geom.positions());
        let mut out = Tensor::zeros(&[n, self.in_dim(), k]);
        let mut cols = alloc::buffer(rows * pos * k);
        for s in 0..n {
            gemm(
                1.0,
                self.w().t(),
                MatRef::row_major(m.row(s), cout, pos * k),
                0.0,
                MatMut::row_major(&mut cols, rows, pos * k),
            );
            col2im_add(&cols, &self.geom, k, out.row_mut(s));
        }
        Ok(out)
    }

    fn jac_mat_prod(&self, io: &LayerIO, m: &Tensor) -> Result<Tensor> {
        let n = io.batch_size();
        let k = check_cols("Conv2d::jac_mat_prod", m, n, self.in_dim())?;
        let (cout, rows, pos) = (self.out_channels(), self.geom.patch_len(), self.geom.positions());
        let mut out = Tensor::zeros(&[n, self.out_dim(), k]);
        let mut cols = alloc::buffer(rows * pos * k);
        for s in 0..n {
            im2col_into(m.row(s), &self.geom, k, &mut cols);
            gemm(
                1.0,
                self.w(),
                MatRef::row_major(&cols, rows, pos * k),
                0.0,
                MatMut::row_major(out.row_mut(s), cout, pos * k),
            );
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
        let k = check_cols("Conv2d::param_jac_t_mat_prod", m, n, self.out_dim())?;
        let d = self.block_dim(block);
        let mut scratch = Vec::new();
        if sum_samples {
            let mut out = Tensor::zeros(&[d, k]);
            let mut tmp = alloc::buffer(d * k);
            for s in 0..n {
                if block == WEIGHT {
                    let u = self.unfolded(io, s, &mut scratch);
                    self.weight_jac_t_sample(u, m.row(s), k, &mut tmp);
                } else {
                    self.bias_jac_t_sample(m.row(s), k, &mut tmp);
                }
                for (a, v) in out.data_mut().iter_mut().zip(&tmp) {
                    *a += v;
                }
            }
            Ok(out)
        } else {
            let mut out = Tensor::zeros(&[n, d, k]);
            for s in 0..n {
                if block == WEIGHT {
                    let u = self.unfolded(io, s, &mut scratch);
                    self.weight_jac_t_sample(u, m.row(s), k, out.row_mut(s));
                } else {
                    self.bias_jac_t_sample(m.row(s), k, out.row_mut(s));
                }
            }
            Ok(out)
        }
    }

    fn param_sq_contraction(&self, io: &LayerIO, block: usize, factor: &Tensor) -> Result<Tensor> {
        self.check_block(block)?;
        let n = io.batch_size();
        let k = check_cols("Conv2d::param_sq_contraction", factor, n, self.out_dim())?;
        let d = self.block_dim(block);
        let mut out = Tensor::zeros(&[d]);
        let mut tmp = alloc::buffer(d * k);
        let mut scratch = Vec::new();
        for s in 0..n {
            if block == WEIGHT {
                let u = self.unfolded(io, s, &mut scratch);
                self.weight_jac_t_sample(u, factor.row(s), k, &mut tmp);
            } else {
                self.bias_jac_t_sample(factor.row(s), k, &mut tmp);
            }
            for (a, chunk) in out.data_mut().iter_mut().zip(tmp.chunks(k)) {
                *a += chunk.iter().map(|v| v * v).sum::<f64>();
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
        if grad_out.shape() != [n, self.out_dim()] {
            return Err(Error::shape(
                "Conv2d::for_each_sample_grad",
                grad_out.shape(),
                &[n, self.out_dim()],
            ));
        }
        let mut buf = alloc::buffer(self.block_dim(block));
        let mut scratch = Vec::new();
        for s in 0..n {
            if block == WEIGHT {
                let u = self.unfolded(io, s, &mut scratch);
                self.weight_jac_t_sample(u, grad_out.row(s), 1, &mut buf);
            } else {
                self.bias_jac_t_sample(grad_out.row(s), 1, &mut buf);
            }
            f(s, &buf);
        }
        Ok(())
    }

    /// `Σ_n U_n U_nᵀ / P` over unfolded inputs `U_n [patch_len × P]`.
    fn kron_input_factor(&self, io: &LayerIO) -> Result<Tensor> {
        let (rows, pos) = (self.geom.patch_len(), self.geom.positions());
        let mut out = Tensor::zeros(&[rows, rows]);
        let mut scratch = Vec::new();
        for s in 0..io.batch_size() {
            let u = MatRef::row_major(self.unfolded(io, s, &mut scratch), rows, pos);
            gemm(
                1.0 / pos as f64,
                u,
                u.t(),
                1.0,
                MatMut::row_major(out.data_mut(), rows, rows),
            );
        }
        Ok(out)
    }

    fn kron_output_factor(&self, io: &LayerIO, factor: &Tensor) -> Result<Tensor> {
        let n = io.batch_size();
        let k = check_cols("Conv2d::kron_output_factor", factor, n, self.out_dim())?;
        let cout = self.out_channels();
        let mut out = Tensor::zeros(&[cout, cout]);
        let mut summed = alloc::buffer(cout * k);
        for s in 0..n {
            self.bias_jac_t_sample(factor.row(s), k, &mut summed);
            let r = MatRef::row_major(&summed, cout, k);
            gemm(1.0, r, r.t(), 1.0, MatMut::row_major(out.data_mut(), cout, cout));
        }
        Ok(out)
    }

    fn kron_output_from_matrix(&self, g: &Tensor) -> Result<Tensor> {
        let (cout, pos, dim) = (self.out_channels(), self.geom.positions(), self.out_dim());
        if g.shape() != [dim, dim] {
            return Err(Error::shape("Conv2d::kron_output_from_matrix", g.shape(), &[dim, dim]));
        }
        let mut out = Tensor::zeros(&[cout, cout]);
        let gd = g.data();
        for a in 0..cout {
            for b in 0..cout {
                let mut acc = 0.0;
                for p in 0..pos {
                    let row = &gd[(a * pos + p) * dim + b * pos..(a * pos + p) * dim + (b + 1) * pos];
                    acc += row.iter().sum::<f64>();
                }
                out.data_mut()[a * cout + b] = acc;
            }
        }
        Ok(out)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
