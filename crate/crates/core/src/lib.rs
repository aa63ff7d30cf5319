//! Backpropagation for sequential networks that extracts per-sample gradient
//! statistics and curvature approximations in the same sweep as the gradient.
//!
//! ```
//! use gradpack_core::{backward, forward_cached, BackwardConfig, Extension, LossKind, Network, Targets, Tensor};
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
//! let net = Network::builder(&[3])
//!     .linear(4, &mut rng)
//!     .relu()
//!     .linear(2, &mut rng)
//!     .build(LossKind::CrossEntropy)?;
//! let x = Tensor::from_fn(&[5, 3], |i| (i as f64).sin());
//! let y = Targets::Labels(vec![0, 1, 1, 0, 1]);
//! let state = forward_cached(&net, &x, &y)?;
//! let out = backward(&net, state, &BackwardConfig::with(&[Extension::BatchGrad, Extension::DiagGgn]))?;
//! assert_eq!(out.blocks[0].first.batch_grad.as_ref().unwrap().shape(), &[5, 12]);
//! # Ok::<(), gradpack_core::Error>(())
//! ```

pub mod alloc;
pub mod backprop;
pub mod error;
pub mod ext;
pub mod layers;
pub mod module;
pub mod network;
pub mod optimizer;
pub mod tensor;
pub mod zoo;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scaling.md")]
    mod scaling {}
    #[doc = include_str!("../../../book/src/first-order.md")]
    mod first_order {}
    #[doc = include_str!("../../../book/src/curvature.md")]
    mod curvature {}
    #[doc = include_str!("../../../book/src/kronecker.md")]
    mod kronecker {}
    #[doc = include_str!("../../../book/src/optimizer.md")]
    mod optimizer {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}

pub use backprop::{
    backward, for_loop_batch_grad, forward_cached, run, BackwardConfig, BackwardOutput, BackwardState,
    BlockOutput, SecondOrderResult,
};
pub use error::{Error, Result};
pub use ext::{Curvature, Extension, FirstOrderResult, KroneckerPair};
pub use layers::{Activation, ActivationKind, Conv2d, Flatten, Linear, LossKind, LossOutput, MaxPool2d, Targets};
pub use module::{Layer, LayerIO, ParamBlock, Sign, SqrtFactor};
pub use network::{Network, NetworkBuilder, ParamId};
pub use tensor::{im2col, ReduceOp, Tensor};
