//! Forward pass with caching and the single backward sweep that runs every
//! requested extension.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ext::first_order::{self, FirstOrderRequest, FirstOrderResult};
use crate::ext::second_order::{self, Curvature};
use crate::ext::Extension;
use crate::layers::{LossOutput, Targets};
use crate::module::{LayerIO, SqrtFactor};
use crate::network::{Network, ParamId};
use crate::tensor::Tensor;

/// Everything the backward sweep needs from the forward pass.
#[derive(Debug)]
pub struct BackwardState {
    ios: Vec<LayerIO>,
    loss: LossOutput,
}

impl BackwardState {
    pub fn loss(&self) -> &LossOutput {
        &self.loss
    }

    /// Cached input and output of layer `i`.
    pub fn layer_io(&self, i: usize) -> &LayerIO {
        &self.ios[i]
    }

    pub fn batch_size(&self) -> usize {
        self.loss.batch_size()
    }
}

pub fn forward_cached(net: &Network, x: &Tensor, targets: &Targets) -> Result<BackwardState> {
    net.check_input(x)?;
    let n = x.shape()[0];
    if targets.len() != n {
        return Err(Error::shape("targets", &[targets.len()], &[n]));
    }
    let mut ios: Vec<LayerIO> = Vec::with_capacity(net.layers().len());
    let mut z = x.clone();
    for (i, layer) in net.layers().iter().enumerate() {
        let io = layer.forward_io(z).map_err(|e| e.at_layer(i, layer.name()))?;
        z = io.output.clone();
        ios.push(io);
    }
    let c = z.row_len();
    let out = z.reshape(&[n, c])?;
    let loss = net.loss().evaluate(&out, targets)?;
    Ok(BackwardState { ios, loss })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackwardConfig {
    pub extensions: Vec<Extension>,
    /// Columns of the sampled loss factor.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for BackwardConfig {
    fn default() -> Self {
        BackwardConfig {
            extensions: Vec::new(),
            mc_samples: 1,
            seed: 0,
        }
    }
}

impl BackwardConfig {
    pub fn with(extensions: &[Extension]) -> Self {
        BackwardConfig {
            extensions: extensions.to_vec(),
            ..Default::default()
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn mc_samples(mut self, m: usize) -> Self {
        self.mc_samples = m;
        self
    }

    fn has(&self, e: Extension) -> bool {
        self.extensions.contains(&e)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SecondOrderResult {
    pub diag_ggn: Option<Tensor>,
    pub diag_ggn_mc: Option<Tensor>,
    pub diag_hessian: Option<Tensor>,
    pub kfac: Option<Curvature>,
    pub kflr: Option<Curvature>,
    pub kfra: Option<Curvature>,
}

/// Results for one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockOutput {
    pub id: ParamId,
    pub layer_name: &'static str,
    pub name: &'static str,
    /// `∇_θ L`, shaped like the parameter.
    pub grad: Tensor,
    pub first: FirstOrderResult,
    pub second: SecondOrderResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackwardOutput {
    pub loss: f64,
    /// One entry per parameter block, in [`Network::param_ids`] order.
    pub blocks: Vec<BlockOutput>,
    /// `(layer, Ḡ)` at the output of every layer, when KFRA ran.
    pub kfra_gbar: Vec<(usize, Tensor)>,
}

impl BackwardOutput {
    pub fn block(&self, id: ParamId) -> Option<&BlockOutput> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn grads(&self) -> Vec<&Tensor> {
        self.blocks.iter().map(|b| &b.grad).collect()
    }

    /// All gradients concatenated in parameter order.
    pub fn grad_flat(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| b.grad.data().iter().copied())
            .collect()
    }
}

/// Rewrites a layer's unsupported-operation error to name the extension.
fn for_ext(ext: Extension) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Unsupported { layer, op } => Error::Unsupported {
            layer,
            op: format!("{} ({op})", ext.name()),
        },
        other => other,
    }
}

fn tag<T>(i: usize, name: &'static str, ext: Extension, r: Result<T>) -> Result<T> {
    r.map_err(for_ext(ext)).map_err(|e| e.at_layer(i, name))
}

/// Runs the backward sweep. Caches are dropped as soon as their layer is done.
pub fn backward(net: &Network, state: BackwardState, cfg: &BackwardConfig) -> Result<BackwardOutput> {
    let BackwardState { mut ios, loss } = state;
    let n = loss.batch_size();
    let want_exact = cfg.has(Extension::DiagGgn) || cfg.has(Extension::Kflr) || cfg.has(Extension::DiagHessian);
    let want_mc = cfg.has(Extension::DiagGgnMc) || cfg.has(Extension::Kfac);
    let want_hess = cfg.has(Extension::DiagHessian);
    let first_req = FirstOrderRequest {
        batch_grad: cfg.has(Extension::BatchGrad),
        batch_l2: cfg.has(Extension::BatchL2),
        sum_grad_squared: cfg.has(Extension::SumGradSquared),
        variance: cfg.has(Extension::Variance),
    };

    let mut grad_out = loss.grad.clone();
    let mut exact = want_exact.then(|| loss.hess_sqrt());
    let mut mc = if want_mc {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Some(loss.mc_sample(&mut rng, cfg.mc_samples)?)
    } else {
        None
    };
    let mut gbar = cfg.has(Extension::Kfra).then(|| loss.mean_hessian());
    let mut residuals: Vec<SqrtFactor> = Vec::new();
    let mut blocks = Vec::new();
    let mut kfra_gbar = Vec::new();

    for i in (0..net.layers().len()).rev() {
        let layer = net.layers()[i].as_ref();
        let io = ios.pop().expect("one cache per layer");
        let at = |e: Error| e.at_layer(i, layer.name());
        let out_dim = layer.out_dim();
        let grad3 = grad_out.clone().reshape(&[n, out_dim, 1])?;
        if let Some(g) = &gbar {
            kfra_gbar.push((i, g.clone()));
        }

        let mut layer_blocks = Vec::new();
        for (b, p) in layer.params().iter().enumerate() {
            // With BatchGrad the individual gradients are computed once and
            // summed in sample order, which is what the summed product does.
            let per_sample = if first_req.batch_grad {
                Some(first_order::batch_grad(layer, &io, b, &grad_out).map_err(at)?)
            } else {
                None
            };
            let grad = match &per_sample {
                Some(rows) => first_order::sum_rows(rows).reshape(p.value.shape()),
                None => layer
                    .param_jac_t_mat_prod(&io, b, &grad3, true)
                    .and_then(|g| g.reshape(p.value.shape())),
            }
            .map_err(at)?;
            let first = if first_req.any() {
                first_order::compute_with(layer, &io, b, &grad_out, Some(&grad), first_req, per_sample)
                    .map_err(at)?
            } else {
                FirstOrderResult::default()
            };
            let mut second = SecondOrderResult::default();
            if let Some(s) = &exact {
                if cfg.has(Extension::DiagGgn) {
                    second.diag_ggn = Some(tag(i, layer.name(), Extension::DiagGgn, second_order::diag_ggn(layer, &io, b, s))?);
                }
                if cfg.has(Extension::Kflr) {
                    second.kflr = Some(tag(i, layer.name(), Extension::Kflr, second_order::kron_factors(layer, &io, b, s))?);
                }
                if want_hess {
                    let mut all = vec![s];
                    all.extend(residuals.iter());
                    second.diag_hessian =
                        Some(tag(i, layer.name(), Extension::DiagHessian, second_order::diag_hessian(layer, &io, b, &all))?);
                }
            }
            if let Some(s) = &mc {
                if cfg.has(Extension::DiagGgnMc) {
                    second.diag_ggn_mc =
                        Some(tag(i, layer.name(), Extension::DiagGgnMc, second_order::diag_ggn_mc(layer, &io, b, s))?);
                }
                if cfg.has(Extension::Kfac) {
                    second.kfac = Some(tag(i, layer.name(), Extension::Kfac, second_order::kron_factors(layer, &io, b, s))?);
                }
            }
            if let Some(g) = &gbar {
                second.kfra = Some(tag(i, layer.name(), Extension::Kfra, second_order::kfra(layer, &io, b, g))?);
            }
            layer_blocks.push(BlockOutput {
                id: ParamId { layer: i, block: b },
                layer_name: layer.name(),
                name: p.name,
                grad,
                first,
                second,
            });
        }
        blocks.push(layer_blocks);

        if i == 0 {
            break;
        }
        let in_dim = layer.in_dim();
        let new_residuals = if want_hess && layer.has_curvature() {
            let unscaled = grad_out.scale(n as f64);
            second_order::residual_factors(layer, &io, &unscaled)
        } else {
            Vec::new()
        };
        let prop = |f: &SqrtFactor| -> Result<SqrtFactor> {
            Ok(SqrtFactor {
                data: layer.jac_t_mat_prod(&io, &f.data)?,
                sign: f.sign,
            })
        };
        if let Some(s) = exact.as_mut() {
            *s = prop(s).map_err(at)?;
        }
        if let Some(s) = mc.as_mut() {
            *s = prop(s).map_err(at)?;
        }
        for r in residuals.iter_mut() {
            *r = prop(r).map_err(at)?;
        }
        residuals.extend(new_residuals);
        if let Some(g) = gbar.as_mut() {
            *g = second_order::kfra_propagate(layer, &io, g)
                .map_err(for_ext(Extension::Kfra))
                .map_err(at)?;
        }
        grad_out = layer
            .jac_t_mat_prod(&io, &grad3)
            .and_then(|g| g.reshape(&[n, in_dim]))
            .map_err(at)?;
    }

    blocks.reverse();
    kfra_gbar.reverse();
    Ok(BackwardOutput {
        loss: loss.value,
        blocks: blocks.into_iter().flatten().collect(),
        kfra_gbar,
    })
}

/// Forward, then backward with `cfg`.
pub fn run(net: &Network, x: &Tensor, targets: &Targets, cfg: &BackwardConfig) -> Result<BackwardOutput> {
    let state = forward_cached(net, x, targets)?;
    backward(net, state, cfg)
}

/// Reference per-sample gradients from `N` separate size-one passes, each
/// scaled by `1/N`. Returns one `[N × d]` tensor per parameter block.
pub fn for_loop_batch_grad(net: &Network, x: &Tensor, targets: &Targets) -> Result<Vec<Tensor>> {
    net.check_input(x)?;
    let n = x.shape()[0];
    let dims: Vec<usize> = net.param_ids().iter().map(|&id| net.param(id).len()).collect();
    let mut out: Vec<Tensor> = dims.iter().map(|&d| Tensor::zeros(&[n, d])).collect();
    let cfg = BackwardConfig::default();
    let inv_n = 1.0 / n as f64;
    for s in 0..n {
        let res = run(net, &x.select_rows(&[s]), &targets.select(&[s]), &cfg)?;
        for (o, b) in out.iter_mut().zip(&res.blocks) {
            for (d, v) in o.row_mut(s).iter_mut().zip(b.grad.data()) {
                *d = v * inv_n;
            }
        }
    }
    Ok(out)
}
