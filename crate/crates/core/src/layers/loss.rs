//! Losses averaged over the batch, with exact and sampled factorizations of
//! their per-sample Hessians with respect to the network output.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::module::SqrtFactor;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Softmax cross-entropy over integer labels.
    CrossEntropy,
    /// `ℓ_n = Σ_c (f_c − y_c)²`, Hessian `2I`.
    Mse,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    /// `[N × C]` regression targets.
    Values(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels(l) => l.len(),
            Targets::Values(v) => v.shape().first().copied().unwrap_or(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Labels(l) => Targets::Labels(rows.iter().map(|&r| l[r]).collect()),
            Targets::Values(v) => Targets::Values(v.select_rows(rows)),
        }
    }
}

impl LossKind {
    pub fn evaluate(self, output: &Tensor, targets: &Targets) -> Result<LossOutput> {
        match (self, targets) {
            (LossKind::CrossEntropy, Targets::Labels(l)) => cross_entropy(output, l),
            (LossKind::Mse, Targets::Values(v)) => mse(output, v),
            (kind, _) => Err(Error::Config(format!("{kind:?} loss given mismatched targets"))),
        }
    }
}

/// Loss value, output gradient and what is needed to factor the Hessian.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub kind: LossKind,
    /// `(1/N) Σ_n ℓ_n`
    pub value: f64,
    pub per_sample: Vec<f64>,
    /// `∇_f ℓ_n / N`, `[N × C]`.
    pub grad: Tensor,
    /// Network output the loss was evaluated at, `[N × C]`.
    pub output: Tensor,
    /// Softmax probabilities for cross-entropy.
    pub probs: Option<Tensor>,
}

fn check_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [n, c] => Ok((n, c)),
        _ => Err(Error::shape(op, t.shape(), &[0, 0])),
    }
}

/// `ℓ_n = −log softmax(f_n)[y_n]`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<LossOutput> {
    let (n, c) = check_2d("cross_entropy", logits)?;
    if labels.len() != n {
        return Err(Error::shape("cross_entropy labels", &[labels.len()], &[n]));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Label { label, classes: c });
    }
    if n == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let mut probs = Tensor::zeros(&[n, c]);
    let mut per_sample = Vec::with_capacity(n);
    for s in 0..n {
        let f = logits.row(s);
        let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let p = probs.row_mut(s);
        let mut z = 0.0;
        for (pi, fi) in p.iter_mut().zip(f) {
            *pi = (fi - max).exp();
            z += *pi;
        }
        p.iter_mut().for_each(|v| *v /= z);
        per_sample.push(max + z.ln() - f[labels[s]]);
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = probs.clone();
    for s in 0..n {
        let g = grad.row_mut(s);
        g[labels[s]] -= 1.0;
        g.iter_mut().for_each(|v| *v *= inv_n);
    }
    let value = per_sample.iter().fold(0.0, |a, v| a + v) / n as f64;
    Ok(LossOutput {
        kind: LossKind::CrossEntropy,
        value,
        per_sample,
        grad,
        output: logits.clone(),
        probs: Some(probs),
    })
}

/// `ℓ_n = Σ_c (f_nc − y_nc)²`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<LossOutput> {
    let (n, _) = check_2d("mse", pred)?;
    if target.shape() != pred.shape() {
        return Err(Error::shape("mse", pred.shape(), target.shape()));
    }
    if n == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut per_sample = Vec::with_capacity(n);
    for s in 0..n {
        let l = pred
            .row(s)
            .iter()
            .zip(target.row(s))
            .fold(0.0, |a, (p, t)| a + (p - t) * (p - t));
        per_sample.push(l);
    }
    let grad = pred.zip_with(target, |p, t| 2.0 * (p - t) * inv_n)?;
    let value = per_sample.iter().fold(0.0, |a, v| a + v) / n as f64;
    Ok(LossOutput {
        kind: LossKind::Mse,
        value,
        per_sample,
        grad,
        output: pred.clone(),
        probs: None,
    })
}

impl LossOutput {
    pub fn batch_size(&self) -> usize {
        self.output.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.output.shape()[1]
    }

    /// Exact symmetric factor `S_n` with `S_n S_nᵀ = ∇²_f ℓ_n`, `[N × C × C]`.
    ///
    /// Cross-entropy uses `diag(√p)(I − √p √pᵀ)`, which is exact because `‖√p‖ = 1`.
    pub fn hess_sqrt(&self) -> SqrtFactor {
        let (n, c) = (self.batch_size(), self.classes());
        let mut out = Tensor::zeros(&[n, c, c]);
        match self.kind {
            LossKind::CrossEntropy => {
                let probs = self.probs.as_ref().expect("cross-entropy keeps probabilities");
                for s in 0..n {
                    let p = probs.row(s);
                    let o = out.row_mut(s);
                    for i in 0..c {
                        let qi = p[i].sqrt();
                        for j in 0..c {
                            let delta = if i == j { 1.0 } else { 0.0 };
                            o[i * c + j] = qi * (delta - qi * p[j].sqrt());
                        }
                    }
                }
            }
            LossKind::Mse => {
                let r2 = std::f64::consts::SQRT_2;
                for s in 0..n {
                    let o = out.row_mut(s);
                    for i in 0..c {
                        o[i * c + i] = r2;
                    }
                }
            }
        }
        SqrtFactor::positive(out)
    }

    /// Per-sample Hessians `∇²_f ℓ_n`, `[N × C × C]`.
    pub fn hessian(&self) -> Tensor {
        let (n, c) = (self.batch_size(), self.classes());
        match self.kind {
            LossKind::CrossEntropy => {
                let probs = self.probs.as_ref().expect("cross-entropy keeps probabilities");
                let mut out = Tensor::zeros(&[n, c, c]);
                for s in 0..n {
                    let p = probs.row(s);
                    let o = out.row_mut(s);
                    for i in 0..c {
                        for j in 0..c {
                            let diag = if i == j { p[i] } else { 0.0 };
                            o[i * c + j] = diag - p[i] * p[j];
                        }
                    }
                }
                out
            }
            LossKind::Mse => Tensor::from_fn(&[n, c, c], |idx| {
                let (i, j) = ((idx / c) % c, idx % c);
                if i == j {
                    2.0
                } else {
                    0.0
                }
            }),
        }
    }

    /// `(1/N) Σ_n ∇²_f ℓ_n`, `[C × C]`.
    pub fn mean_hessian(&self) -> Tensor {
        let (n, c) = (self.batch_size(), self.classes());
        let h = self.hessian();
        let mut out = Tensor::zeros(&[c, c]);
        for s in 0..n {
            for (a, v) in out.data_mut().iter_mut().zip(h.row(s)) {
                *a += v;
            }
        }
        out.data_mut().iter_mut().for_each(|v| *v /= n as f64);
        out
    }

    /// Rank-`m` Monte-Carlo factor `[N × C × m]` with `E[S̃ S̃ᵀ] = ∇²_f ℓ_n`.
    ///
    /// Column `j` is `∇_f ℓ(f_n, ŷ_j) / √m` for `ŷ_j` drawn from the model's
    /// predictive distribution: categorical over the softmax for
    /// cross-entropy, `N(f_n, I/2)` for the squared error.
    pub fn mc_sample<R: Rng + ?Sized>(&self, rng: &mut R, m: usize) -> Result<SqrtFactor> {
        if m == 0 {
            return Err(Error::Config("Monte-Carlo sample count must be at least 1".into()));
        }
        let (n, c) = (self.batch_size(), self.classes());
        let scale = 1.0 / (m as f64).sqrt();
        let mut out = Tensor::zeros(&[n, c, m]);
        match self.kind {
            LossKind::CrossEntropy => {
                let probs = self.probs.as_ref().expect("cross-entropy keeps probabilities");
                for s in 0..n {
                    let p = probs.row(s);
                    let dist = WeightedIndex::new(p)
                        .map_err(|e| Error::Config(format!("invalid class probabilities: {e}")))?;
                    let o = out.row_mut(s);
                    for j in 0..m {
                        let y = dist.sample(rng);
                        for (i, pi) in p.iter().enumerate() {
                            let onehot = if i == y { 1.0 } else { 0.0 };
                            o[i * m + j] = scale * (pi - onehot);
                        }
                    }
                }
            }
            LossKind::Mse => {
                let sd = std::f64::consts::FRAC_1_SQRT_2;
                for s in 0..n {
                    let f = self.output.row(s);
                    let o = out.row_mut(s);
                    for j in 0..m {
                        for (i, fi) in f.iter().enumerate() {
                            let z: f64 = StandardNormal.sample(rng);
                            let y = fi + sd * z;
                            o[i * m + j] = scale * 2.0 * (fi - y);
                        }
                    }
                }
            }
        }
        Ok(SqrtFactor::positive(out))
    }
}

/// Free-function form of [`LossOutput::mc_sample`].
pub fn mc_sample<R: Rng + ?Sized>(loss: &LossOutput, rng: &mut R, m: usize) -> Result<SqrtFactor> {
    loss.mc_sample(rng, m)
}
