//! Dense row-major `f64` tensors and the kernels the layers are built from.

use crate::alloc;
use crate::error::{Error, Result};

/// Dense n-dimensional array. Element order is row-major lexicographic.
#[derive(Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        alloc::record(self.data.len());
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Max,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("Tensor::new", shape, &[data.len()]));
        }
        alloc::record(data.len());
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: alloc::buffer(len),
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Tensor::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn eye(n: usize) -> Self {
        Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_fn(&[], |_| v)
    }

    /// Builds a 2-D tensor from nested rows. Panics on ragged input; test helper.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::new(&[rows.len(), cols], data).expect("consistent by construction")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterprets the buffer with a new shape of equal size.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Product of all extents after the leading one.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// Contiguous slice of the `n`-th entry along the leading axis.
    pub fn row(&self, n: usize) -> &[f64] {
        let r = self.row_len();
        &self.data[n * r..(n + 1) * r]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        let r = self.row_len();
        &mut self.data[n * r..(n + 1) * r]
    }

    /// Copies the leading-axis entries listed in `rows`, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> Tensor {
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        let r = self.row_len();
        let mut out = Tensor::zeros(&shape);
        for (dst, &src) in rows.iter().enumerate() {
            out.data[dst * r..(dst + 1) * r].copy_from_slice(self.row(src));
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_fn(&self.shape, |i| f(self.data[i]))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// Element-wise combination of two equally shaped tensors.
    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape("zip_with", &self.shape, &other.shape));
        }
        Ok(Tensor::from_fn(&self.shape, |i| f(self.data[i], other.data[i])))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc + v)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.data.len() != other.data.len() {
            return Err(Error::shape("dot", &self.shape, &other.shape));
        }
        Ok(self.data.iter().zip(&other.data).fold(0.0, |a, (x, y)| a + x * y))
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a + v * v)
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(op, &self.shape, &[0, 0])),
        }
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, p) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = Tensor::zeros(&[m, p]);
        gemm(
            1.0,
            MatRef::row_major(&self.data, m, k),
            MatRef::row_major(&other.data, k, p),
            0.0,
            MatMut::row_major(&mut out.data, m, p),
        );
        Ok(out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("transpose")?;
        Ok(Tensor::from_fn(&[c, r], |i| self.data[(i % r) * c + i / r]))
    }

    /// `diag(self)` of a square 2-D tensor.
    pub fn diagonal(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("diagonal")?;
        if r != c {
            return Err(Error::shape("diagonal", &self.shape, &[r, r]));
        }
        Ok(Tensor::from_fn(&[r], |i| self.data[i * r + i]))
    }

    pub fn trace(&self) -> Result<f64> {
        Ok(self.diagonal()?.sum_all())
    }

    /// Kronecker product of two 2-D tensors.
    pub fn kron(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = self.dims2("kron")?;
        let (c, d) = other.dims2("kron")?;
        Ok(Tensor::from_fn(&[a * c, b * d], |idx| {
            let (row, col) = (idx / (b * d), idx % (b * d));
            self.data[(row / c) * b + col / d] * other.data[(row % c) * d + col % d]
        }))
    }

    /// Sums or maximizes over `axes`, which are removed from the result.
    ///
    /// Each output element accumulates its inputs in increasing row-major
    /// order, so a sum over every axis is a plain left-to-right fold.
    pub fn reduce(&self, axes: &[usize], op: ReduceOp) -> Result<Tensor> {
        let nd = self.shape.len();
        let mut reduced = vec![false; nd];
        for &a in axes {
            if a >= nd {
                return Err(Error::Config(format!(
                    "reduce axis {a} out of range for rank {nd}"
                )));
            }
            if reduced[a] {
                return Err(Error::Config(format!("reduce axis {a} listed twice")));
            }
            reduced[a] = true;
        }
        let out_shape: Vec<usize> = (0..nd)
            .filter(|&a| !reduced[a])
            .map(|a| self.shape[a])
            .collect();
        if op == ReduceOp::Max && axes.iter().any(|&a| self.shape[a] == 0) {
            return Err(Error::Config("max over an empty axis".into()));
        }
        let init = match op {
            ReduceOp::Sum => 0.0,
            ReduceOp::Max => f64::NEG_INFINITY,
        };
        let out_len: usize = out_shape.iter().product();
        let mut out = Tensor::zeros(&out_shape);
        out.data.iter_mut().for_each(|v| *v = init);
        debug_assert_eq!(out.data.len(), out_len);

        // Stride of each input axis inside the output, 0 for reduced axes.
        let mut out_strides = vec![0usize; nd];
        let mut s = 1;
        for a in (0..nd).rev() {
            if !reduced[a] {
                out_strides[a] = s;
                s *= self.shape[a];
            }
        }
        let mut idx = vec![0usize; nd];
        for &v in &self.data {
            let o: usize = idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum();
            match op {
                ReduceOp::Sum => out.data[o] += v,
                ReduceOp::Max => {
                    if v > out.data[o] {
                        out.data[o] = v
                    }
                }
            }
            for a in (0..nd).rev() {
                idx[a] += 1;
                if idx[a] < self.shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(out)
    }
}

/// Read-only strided matrix view.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a [f64], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            assert!(
                (rows - 1) * rs + (cols - 1) * cs < data.len(),
                "matrix view out of bounds"
            );
        }
        MatRef {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// Mutable strided matrix view.
#[derive(Debug)]
pub(crate) struct MatMut<'a> {
    pub data: &'a mut [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatMut<'a> {
    pub fn row_major(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a mut [f64], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            assert!(
                (rows - 1) * rs + (cols - 1) * cs < data.len(),
                "matrix view out of bounds"
            );
        }
        MatMut {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }
}

/// `c ← alpha·a·b + beta·c`. With `beta == 0` the previous contents of `c` are ignored.
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let v = &mut c.data[i * c.rs + j * c.cs];
                *v = if beta == 0.0 { 0.0 } else { beta * *v };
            }
        }
        return;
    }
    // SAFETY: all three views were bounds-checked at construction and the
    // dimensions agree, so every index dgemm touches is inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// Geometry of a 2-D convolution or pooling window over a `C×H×W` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        input: [usize; 3],
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let [channels, height, width] = input;
        let extent = |size: usize, k: usize, s: usize, p: usize, axis: &str| -> Result<usize> {
            if k == 0 || s == 0 {
                return Err(Error::Config(format!(
                    "kernel and stride must be positive along {axis}"
                )));
            }
            let span = size + 2 * p;
            if span < k {
                return Err(Error::Config(format!(
                    "kernel {k} larger than padded input {span} along {axis}"
                )));
            }
            if (span - k) % s != 0 {
                return Err(Error::Config(format!(
                    "output extent along {axis} is not an integer: ({size}+2*{p}-{k})/{s}"
                )));
            }
            Ok((span - k) / s + 1)
        };
        let out_h = extent(height, kernel.0, stride.0, padding.0, "height")?;
        let out_w = extent(width, kernel.1, stride.1, padding.1, "width")?;
        if channels == 0 {
            return Err(Error::Config("convolution input has zero channels".into()));
        }
        Ok(ConvGeometry {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_h,
            out_w,
        })
    }

    /// Rows of the unfolded matrix, `C·kh·kw`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel.0 * self.kernel.1
    }

    /// Number of output positions, `out_h·out_w`.
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Input pixel read by patch row `r` at output position `p`, or `None` for padding.
    #[cfg(test)]
    pub(crate) fn source(&self, r: usize, p: usize) -> Option<usize> {
        let (kh, kw) = self.kernel;
        let c = r / (kh * kw);
        let ki = (r / kw) % kh;
        let kj = r % kw;
        let oi = p / self.out_w;
        let oj = p % self.out_w;
        let i = (oi * self.stride.0 + ki) as isize - self.padding.0 as isize;
        let j = (oj * self.stride.1 + kj) as isize - self.padding.1 as isize;
        if i < 0 || j < 0 || i as usize >= self.height || j as usize >= self.width {
            None
        } else {
            Some((c * self.height + i as usize) * self.width + j as usize)
        }
    }
}

/// Calls `f(p, s)` for every output position `p` of patch row `r`, with `s`
/// the input pixel it reads or `None` on padding. Positions come in order.
#[inline]
fn for_row_sources(g: &ConvGeometry, r: usize, mut f: impl FnMut(usize, Option<usize>)) {
    let (kh, kw) = g.kernel;
    let c = r / (kh * kw);
    let (ki, kj) = ((r / kw) % kh, r % kw);
    let (ph, pw) = (g.padding.0 as isize, g.padding.1 as isize);
    let mut p = 0;
    for oi in 0..g.out_h {
        let i = (oi * g.stride.0 + ki) as isize - ph;
        let row_ok = i >= 0 && (i as usize) < g.height;
        let base = (c * g.height + i.max(0) as usize) * g.width;
        for oj in 0..g.out_w {
            let j = (oj * g.stride.1 + kj) as isize - pw;
            if row_ok && j >= 0 && (j as usize) < g.width {
                f(p, Some(base + j as usize));
            } else {
                f(p, None);
            }
            p += 1;
        }
    }
}

/// Unfolds one sample. `x` holds `C·H·W` pixels, each a block of `k` values;
/// `out` receives `[patch_len × positions·k]`.
pub(crate) fn im2col_into(x: &[f64], g: &ConvGeometry, k: usize, out: &mut [f64]) {
    let (rows, positions) = (g.patch_len(), g.positions());
    debug_assert_eq!(x.len(), g.input_len() * k);
    debug_assert_eq!(out.len(), rows * positions * k);
    for r in 0..rows {
        let dst_row = &mut out[r * positions * k..(r + 1) * positions * k];
        if k == 1 {
            for_row_sources(g, r, |p, s| dst_row[p] = s.map_or(0.0, |s| x[s]));
            continue;
        }
        for_row_sources(g, r, |p, s| {
            let dst = &mut dst_row[p * k..(p + 1) * k];
            match s {
                Some(s) => dst.copy_from_slice(&x[s * k..(s + 1) * k]),
                None => dst.iter_mut().for_each(|v| *v = 0.0),
            }
        });
    }
}

/// Adjoint of [`im2col_into`]: scatters-and-adds columns back onto pixels.
pub(crate) fn col2im_add(cols: &[f64], g: &ConvGeometry, k: usize, x: &mut [f64]) {
    let (rows, positions) = (g.patch_len(), g.positions());
    debug_assert_eq!(x.len(), g.input_len() * k);
    debug_assert_eq!(cols.len(), rows * positions * k);
    for r in 0..rows {
        let src_row = &cols[r * positions * k..(r + 1) * positions * k];
        for_row_sources(g, r, |p, s| {
            if let Some(s) = s {
                for (d, v) in x[s * k..(s + 1) * k].iter_mut().zip(&src_row[p * k..(p + 1) * k]) {
                    *d += v;
                }
            }
        });
    }
}

/// Unfolds a `C×H×W` tensor into `[(C·kh·kw) × P]`, one column per output position.
///
/// Rows are ordered channel-major, then kernel row, then kernel column.
/// Entries that fall on padding are zero.
pub fn im2col(
    x: &Tensor,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor> {
    let [c, h, w] = match x.shape()[..] {
        [c, h, w] => [c, h, w],
        _ => return Err(Error::shape("im2col", x.shape(), &[0, 0, 0])),
    };
    let g = ConvGeometry::new([c, h, w], kernel, stride, padding)?;
    let mut out = Tensor::zeros(&[g.patch_len(), g.positions()]);
    im2col_into(x.data(), &g, 1, out.data_mut());
    Ok(out)
}
