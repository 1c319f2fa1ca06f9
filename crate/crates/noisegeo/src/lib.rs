//! Numerical laboratory for noise injection in generative adversarial
//! networks: differentiable layer stacks, Euclidean and Riemannian noise
//! injection operators, analytic manifolds with exact exponential maps, and
//! the rank/conditioning diagnostics that connect them.

pub mod diagnostics;
pub mod error;
pub mod fdiff;
pub mod gan;
pub mod geometry;
pub mod inject;
pub mod layers;
pub mod linalg;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::RandomSource;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

// The book's code blocks compile and run as doctests, so the guide in
// book/ can never drift from the library. rustdoc sets `cfg(doctest)`
// while collecting them; the modules are invisible otherwise.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors-and-autodiff.md")]
    mod tensors_and_autodiff {}
    #[doc = include_str!("../../../book/src/layers.md")]
    mod layers {}
    #[doc = include_str!("../../../book/src/noise-injection.md")]
    mod noise_injection {}
    #[doc = include_str!("../../../book/src/manifold-geometry.md")]
    mod manifold_geometry {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
