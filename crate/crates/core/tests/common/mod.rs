//! Independent oracles: finite differences and dense assembly.
#![allow(dead_code)]

use gradpack_core::{Layer, LossKind, Network, Targets, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries on `[-1, 1)`.
pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

pub fn labels(n: usize, classes: usize, seed: u64) -> Targets {
    let mut r = rng(seed);
    Targets::Labels((0..n).map(|_| r.random_range(0..classes)).collect())
}

pub fn targets_for(net: &Network, n: usize, seed: u64) -> Targets {
    match net.loss() {
        LossKind::CrossEntropy => labels(n, net.classes(), seed),
        LossKind::Mse => Targets::Values(uniform(&[n, net.classes()], seed)),
    }
}

/// Batch of `n` inputs for `net`.
pub fn inputs(net: &Network, n: usize, seed: u64) -> Tensor {
    let mut shape = vec![n];
    shape.extend_from_slice(net.input_shape());
    uniform(&shape, seed)
}

pub fn loss(net: &Network, x: &Tensor, y: &Targets) -> f64 {
    let out = net.forward(x).unwrap();
    net.loss().evaluate(&out, y).unwrap().value
}

/// Central differences of the mean loss over every parameter.
pub fn fd_grad(net: &mut Network, x: &Tensor, y: &Targets, h: f64) -> Vec<f64> {
    let theta = net.params_flat();
    let mut g = vec![0.0; theta.len()];
    let mut t = theta.clone();
    for j in 0..theta.len() {
        t[j] = theta[j] + h;
        net.set_params_flat(&t).unwrap();
        let up = loss(net, x, y);
        t[j] = theta[j] - h;
        net.set_params_flat(&t).unwrap();
        let down = loss(net, x, y);
        t[j] = theta[j];
        g[j] = (up - down) / (2.0 * h);
    }
    net.set_params_flat(&theta).unwrap();
    g
}

/// Second central differences of the mean loss along every parameter axis.
pub fn fd_hessian_diag(net: &mut Network, x: &Tensor, y: &Targets, h: f64) -> Vec<f64> {
    let theta = net.params_flat();
    let base = loss(net, x, y);
    let mut t = theta.clone();
    let mut out = vec![0.0; theta.len()];
    for j in 0..theta.len() {
        t[j] = theta[j] + h;
        net.set_params_flat(&t).unwrap();
        let up = loss(net, x, y);
        t[j] = theta[j] - h;
        net.set_params_flat(&t).unwrap();
        let down = loss(net, x, y);
        t[j] = theta[j];
        out[j] = (up - 2.0 * base + down) / (h * h);
    }
    net.set_params_flat(&theta).unwrap();
    out
}

/// Jacobian of the output of sample `s` with respect to all parameters, `[C × D]`.
pub fn output_param_jacobian(net: &mut Network, x: &Tensor, s: usize, h: f64) -> Vec<Vec<f64>> {
    let xs = x.select_rows(&[s]);
    let theta = net.params_flat();
    let c = net.classes();
    let mut jac = vec![vec![0.0; theta.len()]; c];
    let mut t = theta.clone();
    for j in 0..theta.len() {
        t[j] = theta[j] + h;
        net.set_params_flat(&t).unwrap();
        let up = net.forward(&xs).unwrap();
        t[j] = theta[j] - h;
        net.set_params_flat(&t).unwrap();
        let down = net.forward(&xs).unwrap();
        t[j] = theta[j];
        for o in 0..c {
            jac[o][j] = (up.data()[o] - down.data()[o]) / (2.0 * h);
        }
    }
    net.set_params_flat(&theta).unwrap();
    jac
}

/// Loss Hessian with respect to the output of one sample, written out directly.
pub fn loss_hessian(kind: LossKind, f: &[f64]) -> Vec<Vec<f64>> {
    let c = f.len();
    match kind {
        LossKind::Mse => (0..c)
            .map(|i| (0..c).map(|j| if i == j { 2.0 } else { 0.0 }).collect())
            .collect(),
        LossKind::CrossEntropy => {
            let m = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = f.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let p: Vec<f64> = e.iter().map(|v| v / z).collect();
            (0..c)
                .map(|i| {
                    (0..c)
                        .map(|j| if i == j { p[i] } else { 0.0 } - p[i] * p[j])
                        .collect()
                })
                .collect()
        }
    }
}

/// `(1/N) Σ_n J_nᵀ H_n J_n` over all parameters, dense `[D × D]`.
pub fn dense_ggn(net: &mut Network, x: &Tensor, h: f64) -> Vec<Vec<f64>> {
    let n = x.shape()[0];
    let d = net.num_params();
    let out = net.forward(x).unwrap();
    let mut g = vec![vec![0.0; d]; d];
    for s in 0..n {
        let jac = output_param_jacobian(net, x, s, h);
        let hs = loss_hessian(net.loss(), out.row(s));
        let c = hs.len();
        // H J, then Jᵀ (H J)
        let mut hj = vec![vec![0.0; d]; c];
        for a in 0..c {
            for b in 0..c {
                for j in 0..d {
                    hj[a][j] += hs[a][b] * jac[b][j];
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for a in 0..c {
                    acc += jac[a][i] * hj[a][j];
                }
                g[i][j] += acc / n as f64;
            }
        }
    }
    g
}

/// `(offset, len)` of every parameter block in the flat parameter vector.
pub fn block_ranges(net: &Network) -> Vec<(usize, usize)> {
    let mut off = 0;
    net.param_ids()
        .into_iter()
        .map(|id| {
            let d = net.param(id).len();
            let r = (off, d);
            off += d;
            r
        })
        .collect()
}

/// Input Jacobian of a layer at a single sample `[1 × in]`, `[out × in]`.
pub fn layer_input_jacobian(layer: &dyn Layer, x: &Tensor, h: f64) -> Vec<Vec<f64>> {
    let (din, dout) = (layer.in_dim(), layer.out_dim());
    let mut jac = vec![vec![0.0; din]; dout];
    let mut xp = x.clone();
    for i in 0..din {
        let v = x.data()[i];
        xp.data_mut()[i] = v + h;
        let up = layer.forward(&xp).unwrap();
        xp.data_mut()[i] = v - h;
        let down = layer.forward(&xp).unwrap();
        xp.data_mut()[i] = v;
        for o in 0..dout {
            jac[o][i] = (up.data()[o] - down.data()[o]) / (2.0 * h);
        }
    }
    jac
}

/// Jacobian of a layer's output at one sample with respect to parameter block `block`, `[out × d]`.
pub fn layer_param_jacobian(layer: &mut dyn Layer, block: usize, x: &Tensor, h: f64) -> Vec<Vec<f64>> {
    let dout = layer.out_dim();
    let d = layer.params()[block].dim();
    let mut jac = vec![vec![0.0; d]; dout];
    for j in 0..d {
        let v = layer.params()[block].value.data()[j];
        layer.params_mut()[block].value.data_mut()[j] = v + h;
        let up = layer.forward(x).unwrap();
        layer.params_mut()[block].value.data_mut()[j] = v - h;
        let down = layer.forward(x).unwrap();
        layer.params_mut()[block].value.data_mut()[j] = v;
        for o in 0..dout {
            jac[o][j] = (up.data()[o] - down.data()[o]) / (2.0 * h);
        }
    }
    jac
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
