mod common;

use common::{layer_input_jacobian, layer_param_jacobian, max_abs_diff, rng, uniform};
use gradpack_core::{Activation, Conv2d, Flatten, Layer, Linear, MaxPool2d, Tensor};
use proptest::prelude::*;

fn zoo() -> Vec<Box<dyn Layer>> {
    let mut r = rng(1);
    vec![
        Box::new(Linear::new(4, 3, &mut r)),
        Box::new(Conv2d::new([2, 5, 5], 3, (3, 3), (2, 2), (1, 1), &mut r).unwrap()),
        Box::new(Conv2d::new([1, 4, 5], 2, (2, 3), (1, 1), (0, 1), &mut r).unwrap()),
        Box::new(Activation::relu(&[2, 3])),
        Box::new(Activation::sigmoid(&[5])),
        Box::new(Activation::tanh(&[2, 2, 2])),
        Box::new(MaxPool2d::new([2, 4, 4], (2, 2), (2, 2)).unwrap()),
        Box::new(MaxPool2d::new([1, 4, 4], (3, 3), (1, 1)).unwrap()),
        Box::new(Flatten::new(&[2, 3, 2])),
    ]
}

fn batch(layer: &dyn Layer, n: usize, seed: u64) -> Tensor {
    let mut shape = vec![n];
    shape.extend_from_slice(layer.in_shape());
    uniform(&shape, seed)
}

/// `J v` for a dense `[out × in]` Jacobian and one column of `m`.
fn apply(j: &[Vec<f64>], m: &[f64], k: usize, col: usize) -> Vec<f64> {
    j.iter()
        .map(|row| row.iter().enumerate().map(|(i, a)| a * m[i * k + col]).sum())
        .collect()
}

fn apply_t(j: &[Vec<f64>], m: &[f64], k: usize, col: usize) -> Vec<f64> {
    let cols = j[0].len();
    (0..cols)
        .map(|i| j.iter().enumerate().map(|(o, row)| row[i] * m[o * k + col]).sum())
        .collect()
}

fn column(t: &[f64], k: usize, col: usize) -> Vec<f64> {
    t.iter().skip(col).step_by(k).copied().collect()
}

#[test]
fn input_jacobian_products_match_finite_differences() {
    for layer in zoo() {
        let n = 3;
        let k = 2;
        let x = batch(layer.as_ref(), n, 7);
        let io = layer.forward_io(x.clone()).unwrap();
        let mt = uniform(&[n, layer.out_dim(), k], 8);
        let m = uniform(&[n, layer.in_dim(), k], 9);
        let jt = layer.jac_t_mat_prod(&io, &mt).unwrap();
        let jm = layer.jac_mat_prod(&io, &m).unwrap();
        assert_eq!(jt.shape(), &[n, layer.in_dim(), k]);
        assert_eq!(jm.shape(), &[n, layer.out_dim(), k]);
        for s in 0..n {
            let jac = layer_input_jacobian(layer.as_ref(), &x.select_rows(&[s]), 1e-6);
            for c in 0..k {
                let want = apply_t(&jac, mt.row(s), k, c);
                let d = max_abs_diff(&column(jt.row(s), k, c), &want);
                assert!(d < 1e-6, "{} jac_t: {d}", layer.name());
                let want = apply(&jac, m.row(s), k, c);
                let d = max_abs_diff(&column(jm.row(s), k, c), &want);
                assert!(d < 1e-6, "{} jac: {d}", layer.name());
            }
        }
    }
}

#[test]
fn adjoint_identity() {
    for layer in zoo() {
        let n = 4;
        let x = batch(layer.as_ref(), n, 3);
        let io = layer.forward_io(x).unwrap();
        let v = uniform(&[n, layer.in_dim(), 1], 4);
        let w = uniform(&[n, layer.out_dim(), 1], 5);
        let lhs = layer.jac_mat_prod(&io, &v).unwrap().dot(&w).unwrap();
        let rhs = v.dot(&layer.jac_t_mat_prod(&io, &w).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12, "{}: {lhs} vs {rhs}", layer.name());
    }
}

#[test]
fn parameter_products_match_finite_differences() {
    for mut layer in zoo() {
        if layer.params().is_empty() {
            let io = layer.forward_io(batch(layer.as_ref(), 1, 0)).unwrap();
            let m = Tensor::zeros(&[1, layer.out_dim(), 1]);
            let err = layer.param_jac_t_mat_prod(&io, 0, &m, false).unwrap_err();
            assert!(matches!(err, gradpack_core::Error::Unsupported { .. }));
            continue;
        }
        let n = 3;
        let k = 2;
        let x = batch(layer.as_ref(), n, 21);
        let io = layer.forward_io(x.clone()).unwrap();
        let m = uniform(&[n, layer.out_dim(), k], 22);
        for b in 0..layer.params().len() {
            let d = layer.params()[b].dim();
            let per = layer.param_jac_t_mat_prod(&io, b, &m, false).unwrap();
            let summed = layer.param_jac_t_mat_prod(&io, b, &m, true).unwrap();
            assert_eq!(per.shape(), &[n, d, k]);
            assert_eq!(summed.shape(), &[d, k]);

            // Summing per-sample rows in order reproduces the summed product bitwise.
            let mut rowsum = vec![0.0; d * k];
            for s in 0..n {
                for (a, v) in rowsum.iter_mut().zip(per.row(s)) {
                    *a += v;
                }
            }
            assert_eq!(rowsum, summed.data(), "{} block {b}", layer.name());

            let mut sq = vec![0.0; d];
            for s in 0..n {
                let jac = layer_param_jacobian(layer.as_mut(), b, &x.select_rows(&[s]), 1e-6);
                for c in 0..k {
                    let want = apply_t(&jac, m.row(s), k, c);
                    let got = column(per.row(s), k, c);
                    let diff = max_abs_diff(&got, &want);
                    assert!(diff < 1e-6, "{} block {b}: {diff}", layer.name());
                    for (q, g) in sq.iter_mut().zip(&got) {
                        *q += g * g;
                    }
                }
            }
            let contraction = layer.param_sq_contraction(&io, b, &m).unwrap();
            assert!(max_abs_diff(contraction.data(), &sq) < 1e-12);

            let g1 = uniform(&[n, layer.out_dim()], 23);
            let m1 = g1.clone().reshape(&[n, layer.out_dim(), 1]).unwrap();
            let per1 = layer.param_jac_t_mat_prod(&io, b, &m1, false).unwrap();
            layer
                .for_each_sample_grad(&io, b, &g1, &mut |s, g| {
                    assert!(max_abs_diff(g, per1.row(s)) < 1e-14);
                })
                .unwrap();
        }
    }
}

#[test]
fn forward_io_agrees_with_forward() {
    for layer in zoo() {
        let x = batch(layer.as_ref(), 3, 2);
        let io = layer.forward_io(x.clone()).unwrap();
        assert_eq!(io.output.data(), layer.forward(&x).unwrap().data());
    }
}

#[test]
fn shape_mismatch_is_an_error() {
    for layer in zoo() {
        let bad = uniform(&[2, layer.in_dim() + 1], 0);
        assert!(layer.forward(&bad).is_err(), "{}", layer.name());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn permuting_the_batch_permutes_every_output(seed in 0u64..1000, shift in 1usize..4) {
        let n = 4;
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        for layer in zoo() {
            let x = batch(layer.as_ref(), n, seed);
            let io = layer.forward_io(x.clone()).unwrap();
            let iop = layer.forward_io(x.select_rows(&perm)).unwrap();
            let permuted = io.output.select_rows(&perm);
            prop_assert_eq!(iop.output.data(), permuted.data());
            let m = uniform(&[n, layer.out_dim(), 2], seed + 1);
            let a = layer.jac_t_mat_prod(&io, &m).unwrap().select_rows(&perm);
            let b = layer.jac_t_mat_prod(&iop, &m.select_rows(&perm)).unwrap();
            prop_assert_eq!(a.data(), b.data());
            for blk in 0..layer.params().len() {
                let a = layer.param_jac_t_mat_prod(&io, blk, &m, false).unwrap().select_rows(&perm);
                let b = layer.param_jac_t_mat_prod(&iop, blk, &m.select_rows(&perm), false).unwrap();
                prop_assert_eq!(a.data(), b.data());
            }
        }
    }
}

#[test]
fn linear_examples() {
    let id = Linear::from_params(Tensor::eye(2), Tensor::zeros(&[2])).unwrap();
    let x = Tensor::from_rows(&[&[3.0, -1.0]]);
    assert_eq!(id.forward(&x).unwrap().data(), &[3.0, -1.0]);

    let w = Tensor::from_rows(&[&[2.0, 0.0], &[0.0, 3.0]]);
    let lin = Linear::from_params(w, Tensor::zeros(&[2])).unwrap();
    let io = lin.forward_io(Tensor::from_rows(&[&[0.5, 0.5]])).unwrap();
    let ones = Tensor::new(&[1, 2, 1], vec![1.0, 1.0]).unwrap();
    assert_eq!(lin.jac_t_mat_prod(&io, &ones).unwrap().data(), &[2.0, 3.0]);
    assert_eq!(lin.jac_mat_prod(&io, &ones).unwrap().data(), &[2.0, 3.0]);

    let scalar = Linear::from_params(Tensor::new(&[1, 1], vec![1.0]).unwrap(), Tensor::zeros(&[1])).unwrap();
    let io = scalar.forward_io(Tensor::new(&[1, 1], vec![2.0]).unwrap()).unwrap();
    let m = Tensor::new(&[1, 1, 1], vec![3.0]).unwrap();
    assert_eq!(scalar.param_jac_t_mat_prod(&io, 0, &m, false).unwrap().data(), &[6.0]);

    let io = lin.forward_io(uniform(&[3, 2], 1)).unwrap();
    let m = uniform(&[3, 2, 2], 2);
    assert_eq!(lin.param_jac_t_mat_prod(&io, 1, &m, false).unwrap().data(), m.data());
}

#[test]
fn activation_examples() {
    let relu = Activation::relu(&[2]);
    let io = relu.forward_io(Tensor::from_rows(&[&[-1.0, 2.0]])).unwrap();
    assert_eq!(io.output.data(), &[0.0, 2.0]);
    let m = Tensor::new(&[1, 2, 1], vec![5.0, 7.0]).unwrap();
    assert_eq!(relu.jac_t_mat_prod(&io, &m).unwrap().data(), &[0.0, 7.0]);
    let g = Tensor::from_rows(&[&[1.0, 1.0]]);
    assert!(relu.residual_diag(&io, &g).is_none());

    let sig = Activation::sigmoid(&[1]);
    let io = sig.forward_io(Tensor::from_rows(&[&[0.0]])).unwrap();
    assert_eq!(io.output.data(), &[0.5]);
    let r = sig.residual_diag(&io, &Tensor::from_rows(&[&[1.0]])).unwrap();
    assert_eq!(r.data(), &[0.0]);
}

#[test]
fn tanh_residual_matches_second_difference() {
    let tanh = Activation::tanh(&[1]);
    let (x, g, h) = (0.5, 2.0, 1e-4);
    let io = tanh.forward_io(Tensor::from_rows(&[&[x]])).unwrap();
    let r = tanh.residual_diag(&io, &Tensor::from_rows(&[&[g]])).unwrap();
    let f = |v: f64| v.tanh();
    let fd = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h) * g;
    assert!((r.data()[0] - fd).abs() < 1e-5, "{} vs {fd}", r.data()[0]);
}

#[test]
fn sigmoid_residual_matches_second_difference() {
    let sig = Activation::sigmoid(&[4]);
    let x = uniform(&[1, 4], 3).scale(3.0);
    let g = uniform(&[1, 4], 4);
    let io = sig.forward_io(x.clone()).unwrap();
    let r = sig.residual_diag(&io, &g).unwrap();
    let h = 1e-4;
    for j in 0..4 {
        let f = |v: f64| 1.0 / (1.0 + (-v).exp());
        let v = x.data()[j];
        let fd = (f(v + h) - 2.0 * f(v) + f(v - h)) / (h * h) * g.data()[j];
        assert!((r.data()[j] - fd).abs() < 1e-5);
    }
}

#[test]
fn maxpool_routes_to_argmax() {
    let pool = MaxPool2d::new([1, 2, 2], (2, 2), (2, 2)).unwrap();
    let io = pool.forward_io(Tensor::new(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    assert_eq!(io.output.data(), &[4.0]);
    let back = pool.jac_t_mat_prod(&io, &Tensor::new(&[1, 1, 1], vec![1.0]).unwrap()).unwrap();
    assert_eq!(back.data(), &[0.0, 0.0, 0.0, 1.0]);

    let ties = pool.forward_io(Tensor::new(&[1, 4], vec![2.0, 2.0, 2.0, 2.0]).unwrap()).unwrap();
    let back = pool.jac_t_mat_prod(&ties, &Tensor::new(&[1, 1, 1], vec![1.0]).unwrap()).unwrap();
    assert_eq!(back.data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn flatten_round_trip() {
    let f = Flatten::new(&[2, 3]);
    let x = uniform(&[2, 2, 3], 0);
    let io = f.forward_io(x).unwrap();
    assert_eq!(io.output.shape(), &[2, 6]);
    let v = uniform(&[2, 6, 3], 1);
    let back = f.jac_t_mat_prod(&io, &f.jac_mat_prod(&io, &v).unwrap()).unwrap();
    assert_eq!(back.data(), v.data());
}

/// A convolution whose kernel covers the whole input is a dense layer on the
/// flattened input.
#[test]
fn full_kernel_convolution_is_linear() {
    let (cin, h, w, cout) = (2, 3, 3, 4);
    let weight = uniform(&[cout, cin, h, w], 30);
    let bias = uniform(&[cout], 31);
    let conv = Conv2d::from_params([cin, h, w], weight.clone(), bias.clone(), (1, 1), (0, 0)).unwrap();
    let lin = Linear::from_params(weight.reshape(&[cout, cin * h * w]).unwrap(), bias).unwrap();
    let n = 3;
    let x = uniform(&[n, cin, h, w], 32);
    let xf = x.clone().reshape(&[n, cin * h * w]).unwrap();
    let ioc = conv.forward_io(x).unwrap();
    let iol = lin.forward_io(xf).unwrap();
    assert!(ioc.output.max_abs_diff(&iol.output.clone().reshape(&[n, cout, 1, 1]).unwrap()).unwrap() < 1e-12);

    let m = uniform(&[n, cout, 3], 33);
    let close = |a: &Tensor, b: &Tensor| {
        assert_eq!(a.len(), b.len());
        assert!(max_abs_diff(a.data(), b.data()) < 1e-12);
    };
    close(&conv.jac_t_mat_prod(&ioc, &m).unwrap(), &lin.jac_t_mat_prod(&iol, &m).unwrap());
    let v = uniform(&[n, cin * h * w, 2], 34);
    close(&conv.jac_mat_prod(&ioc, &v).unwrap(), &lin.jac_mat_prod(&iol, &v).unwrap());
    for b in 0..2 {
        for sum in [false, true] {
            close(
                &conv.param_jac_t_mat_prod(&ioc, b, &m, sum).unwrap(),
                &lin.param_jac_t_mat_prod(&iol, b, &m, sum).unwrap(),
            );
        }
        close(
            &conv.param_sq_contraction(&ioc, b, &m).unwrap(),
            &lin.param_sq_contraction(&iol, b, &m).unwrap(),
        );
    }
    close(&conv.kron_input_factor(&ioc).unwrap(), &lin.kron_input_factor(&iol).unwrap());
    close(&conv.kron_output_factor(&ioc, &m).unwrap(), &lin.kron_output_factor(&iol, &m).unwrap());
    let g = uniform(&[cout, cout], 35);
    close(&conv.kron_output_from_matrix(&g).unwrap(), &lin.kron_output_from_matrix(&g).unwrap());
}

#[test]
fn one_by_one_convolution_is_per_pixel_linear() {
    let weight = Tensor::new(&[1, 1, 1, 1], vec![1.5]).unwrap();
    let conv = Conv2d::from_params([1, 2, 3], weight, Tensor::new(&[1], vec![0.25]).unwrap(), (1, 1), (0, 0)).unwrap();
    let x = uniform(&[2, 1, 2, 3], 3);
    let y = conv.forward(&x).unwrap();
    let want = x.map(|v| 1.5 * v + 0.25);
    assert!(y.max_abs_diff(&want).unwrap() < 1e-15);
}

#[test]
fn convolution_rejects_fractional_geometry() {
    let mut r = rng(0);
    assert!(Conv2d::new([1, 4, 4], 1, (3, 3), (2, 2), (0, 0), &mut r).is_err());
}
