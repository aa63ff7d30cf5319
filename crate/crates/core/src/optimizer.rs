//! Damped preconditioned gradient steps over diagonal or Kronecker curvature.
//!
//! One step is `θ ← θ − α [G + (λ+η) I]⁻¹ (∇L + η θ)`. Kronecker blocks use
//! the per-factor damping `[A + π√(λ+η) I]⁻¹ ⊗ [B + √(λ+η)/π I]⁻¹` with `π`
//! chosen from the factor traces.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::backprop::{self, BackwardConfig, BackwardOutput};
use crate::error::{Error, Result};
use crate::ext::{Curvature, Extension, KroneckerPair};
use crate::layers::Targets;
use crate::network::Network;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CurvatureKind {
    DiagGgn,
    DiagGgnMc,
    Kfac,
    Kflr,
    Kfra,
}

impl CurvatureKind {
    pub const ALL: [CurvatureKind; 5] = [
        CurvatureKind::DiagGgn,
        CurvatureKind::DiagGgnMc,
        CurvatureKind::Kfac,
        CurvatureKind::Kflr,
        CurvatureKind::Kfra,
    ];

    pub fn extension(self) -> Extension {
        match self {
            CurvatureKind::DiagGgn => Extension::DiagGgn,
            CurvatureKind::DiagGgnMc => Extension::DiagGgnMc,
            CurvatureKind::Kfac => Extension::Kfac,
            CurvatureKind::Kflr => Extension::Kflr,
            CurvatureKind::Kfra => Extension::Kfra,
        }
    }

    pub fn is_diagonal(self) -> bool {
        matches!(self, CurvatureKind::DiagGgn | CurvatureKind::DiagGgnMc)
    }

    pub fn name(self) -> &'static str {
        self.extension().name()
    }
}

impl std::str::FromStr for CurvatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ext: Extension = s.parse()?;
        CurvatureKind::ALL
            .into_iter()
            .find(|c| c.extension() == ext)
            .ok_or_else(|| Error::Config(format!("`{s}` is not a preconditioner curvature")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreconditionerConfig {
    /// Learning rate α.
    pub alpha: f64,
    /// Damping λ.
    pub lambda: f64,
    /// ℓ2 regularization η.
    pub eta: f64,
    pub curvature: CurvatureKind,
}

impl PreconditionerConfig {
    pub fn new(curvature: CurvatureKind, alpha: f64, lambda: f64, eta: f64) -> Result<Self> {
        let cfg = PreconditionerConfig {
            alpha,
            lambda,
            eta,
            curvature,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `α = 0` is accepted and leaves the parameters unchanged.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.eta >= 0.0) {
            return Err(Error::Damping(format!(
                "damping and l2 strength must be non-negative, got λ={} η={}",
                self.lambda, self.eta
            )));
        }
        Ok(())
    }
}

/// `θ_j ← θ_j − α (g_j + η θ_j) / (diag_j + λ + η)`.
pub fn step_diagonal(param: &mut Tensor, grad: &Tensor, diag: &Tensor, cfg: &PreconditionerConfig) -> Result<()> {
    if grad.len() != param.len() || diag.len() != param.len() {
        return Err(Error::shape("step_diagonal", param.shape(), diag.shape()));
    }
    let damp = cfg.lambda + cfg.eta;
    if let Some(j) = diag.data().iter().position(|&c| c + damp <= 0.0) {
        return Err(Error::Damping(format!(
            "non-positive denominator {} at entry {j}",
            diag.data()[j] + damp
        )));
    }
    for ((t, g), c) in param.data_mut().iter_mut().zip(grad.data()).zip(diag.data()) {
        *t -= cfg.alpha * (g + cfg.eta * *t) / (c + damp);
    }
    Ok(())
}

/// Trace-norm balance `π = √(tr(A)·dim(B) / (dim(A)·tr(B)))`.
///
/// Returns `π = 1` and a warning when either trace is not positive.
pub fn trace_pi(a: &Tensor, b: &Tensor) -> Result<(f64, Option<String>)> {
    let (ta, tb) = (a.trace()?, b.trace()?);
    if !(ta > 0.0 && tb > 0.0) {
        return Ok((
            1.0,
            Some(format!("factor traces tr(A)={ta:e}, tr(B)={tb:e} not positive; using π = 1")),
        ));
    }
    let (da, db) = (a.shape()[0] as f64, b.shape()[0] as f64);
    Ok(((ta * db / (da * tb)).sqrt(), None))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KronSolve {
    /// `[p × q]`
    pub result: Tensor,
    pub pi: f64,
    pub warning: Option<String>,
}

/// `(M + shift·I)⁻¹ · rhs` for symmetric `M` via an eigendecomposition.
/// With `right`, computes `rhs · (M + shift·I)⁻¹` instead.
fn damped_solve(m: &Tensor, shift: f64, rhs: &Tensor, right: bool) -> std::result::Result<Tensor, String> {
    let d = m.shape()[0];
    let mat = DMatrix::from_row_slice(d, d, m.data());
    let sym = (&mat + mat.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut inv_vals = Vec::with_capacity(d);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for &v in eig.eigenvalues.iter() {
        let s = v + shift;
        if !(s > scale * 1e-14) || !s.is_finite() {
            return Err(format!("damped factor is singular (eigenvalue {s:e})"));
        }
        inv_vals.push(1.0 / s);
    }
    let q = &eig.eigenvectors;
    let inv = q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(inv_vals)) * q.transpose();
    let &[r, c] = rhs.shape() else {
        return Err(format!("right-hand side must be a matrix, got {:?}", rhs.shape()));
    };
    let b = DMatrix::from_row_slice(r, c, rhs.data());
    let x = if right { b * inv } else { inv * b };
    let mut out = Tensor::zeros(&[x.nrows(), x.ncols()]);
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            out.data_mut()[i * x.ncols() + j] = x[(i, j)];
        }
    }
    Ok(out)
}

/// `(A + π√c I)⁻¹ · G · (B + √c/π I)⁻¹` for `G` of shape `[p × q]` and `c = λ + η > 0`.
pub fn kron_inverse_apply(pair: &KroneckerPair, g: &Tensor, lam_plus_eta: f64) -> Result<KronSolve> {
    let (p, q) = (pair.a.shape()[0], pair.b.shape()[0]);
    if g.shape() != [p, q] {
        return Err(Error::shape("kron_inverse_apply", g.shape(), &[p, q]));
    }
    if !(lam_plus_eta > 0.0) {
        return Err(Error::Damping(format!("λ+η must be positive, got {lam_plus_eta}")));
    }
    let (pi, warning) = trace_pi(&pair.a, &pair.b)?;
    let root = lam_plus_eta.sqrt();
    let solve = |e: String| Error::Damping(e);
    let left = damped_solve(&pair.a, pi * root, g, false).map_err(solve)?;
    let result = damped_solve(&pair.b, root / pi, &left, true).map_err(solve)?;
    Ok(KronSolve { result, pi, warning })
}

/// Preconditioned direction for one block, shaped like the parameter.
/// Returns the direction and an optional π warning.
fn kron_direction(curv: &Curvature, rhs: &Tensor, damp: f64, shape: &[usize]) -> Result<(Tensor, Option<String>)> {
    match curv {
        Curvature::Kronecker(pair) => {
            let (p, q) = (pair.a.shape()[0], pair.b.shape()[0]);
            // The parameter is laid out output-major: [q × p].
            let g = rhs.clone().reshape(&[q, p])?.transpose()?;
            let solved = kron_inverse_apply(pair, &g, damp)?;
            Ok((solved.result.transpose()?.reshape(shape)?, solved.warning))
        }
        Curvature::Dense(m) => {
            if !(damp > 0.0) {
                return Err(Error::Damping(format!("λ+η must be positive, got {damp}")));
            }
            let col = rhs.clone().reshape(&[rhs.len(), 1])?;
            let x = damped_solve(m, damp, &col, false).map_err(Error::Damping)?;
            Ok((x.reshape(shape)?, None))
        }
    }
}

/// `θ ← θ − α · kron_inverse_apply(pair, ∇L + ηθ, λ+η)`; dense (bias) blocks
/// use the exact damped solve. Returns a π warning if one was raised.
pub fn step_kronecker(
    param: &mut Tensor,
    grad: &Tensor,
    curv: &Curvature,
    cfg: &PreconditionerConfig,
) -> Result<Option<String>> {
    if grad.len() != param.len() {
        return Err(Error::shape("step_kronecker", param.shape(), grad.shape()));
    }
    let rhs = grad.zip_with(param, |g, t| g + cfg.eta * t)?;
    let (dir, warn) = kron_direction(curv, &rhs, cfg.lambda + cfg.eta, param.shape())?;
    for (t, d) in param.data_mut().iter_mut().zip(dir.data()) {
        *t -= cfg.alpha * d;
    }
    Ok(warn)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    /// Loss before the update.
    pub loss: f64,
    pub warnings: Vec<String>,
}

/// Recomputes the curvature on every batch and applies one damped step per block.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: PreconditionerConfig,
    pub mc_samples: usize,
    seed: u64,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: PreconditionerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            mc_samples: 1,
            seed,
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, net: &mut Network, x: &Tensor, targets: &Targets) -> Result<StepInfo> {
        let ext = self.config.curvature.extension();
        let bcfg = BackwardConfig {
            extensions: vec![ext],
            mc_samples: self.mc_samples,
            seed: self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.steps),
        };
        let out = backprop::run(net, x, targets, &bcfg)?;
        let warnings = self.apply(net, &out)?;
        self.steps += 1;
        Ok(StepInfo {
            loss: out.loss,
            warnings,
        })
    }

    /// Applies the update from an already computed backward pass.
    pub fn apply(&self, net: &mut Network, out: &BackwardOutput) -> Result<Vec<String>> {
        let cfg = &self.config;
        let mut warnings = Vec::new();
        for b in &out.blocks {
            let layer = b.id.layer;
            let param = net.param_mut(b.id);
            let s = &b.second;
            let res = match cfg.curvature {
                CurvatureKind::DiagGgn | CurvatureKind::DiagGgnMc => {
                    let diag = if cfg.curvature == CurvatureKind::DiagGgn {
                        s.diag_ggn.as_ref()
                    } else {
                        s.diag_ggn_mc.as_ref()
                    };
                    let diag = diag.ok_or_else(|| Error::Config("missing diagonal curvature".into()))?;
                    step_diagonal(param, &b.grad, diag, cfg).map(|_| None)
                }
                kind => {
                    let curv = match kind {
                        CurvatureKind::Kfac => s.kfac.as_ref(),
                        CurvatureKind::Kflr => s.kflr.as_ref(),
                        _ => s.kfra.as_ref(),
                    };
                    let curv = curv.ok_or_else(|| Error::Config("missing Kronecker curvature".into()))?;
                    step_kronecker(param, &b.grad, curv, cfg)
                }
            };
            match res {
                Ok(Some(w)) => warnings.push(format!("layer {layer} {}: {w}", b.name)),
                Ok(None) => {}
                Err(Error::Damping(reason)) if !cfg.curvature.is_diagonal() => {
                    return Err(Error::Solver { layer, reason })
                }
                Err(e) => return Err(e.at_layer(layer, b.layer_name)),
            }
        }
        Ok(warnings)
    }
}
