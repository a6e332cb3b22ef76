//! Rectification of low-rank planar textures.
//!
//! A window of an observed scene `D` is warped by an affine transform `τ`
//! until the warped intensities split into a low-rank part `X` and a sparse
//! error `E`. Each outer round linearizes the warp around the current `τ` and
//! solves
//!
//! ```text
//! min ‖X‖* + λ‖E‖₁   s.t.  D∘τ + J·Δτ = X + E
//! ```
//!
//! with one of three ADMM schemes from [`inner`]. The [`outer`] loop updates
//! `τ ← τ + Δτ` until the objective stagnates.
//!
//! ```
//! use lrt::bench::{deform_and_corrupt, gen_texture, CorruptionSpec, TextureKind, TextureSpec};
//! use lrt::outer::{rectify, OuterConfig};
//! use lrt::inner::SolverKind;
//!
//! let texture = gen_texture(&TextureSpec::new(TextureKind::Checkerboard, 24, 24, 2, 1))?;
//! let angle = 8f64.to_radians();
//! let deformed = deform_and_corrupt(&texture, angle, &CorruptionSpec::none(), 10)?;
//! let cfg = OuterConfig { solver: SolverKind::Sgs, ..OuterConfig::default() };
//! let result = rectify(&deformed.scene, &deformed.window, &cfg)?;
//! let recovered = result.tau_final.rotation_angle().to_degrees();
//! assert!((recovered + 8.0).abs() < 1.0, "recovered {recovered}");
//! # Ok::<(), lrt::Error>(())
//! ```

pub mod bench;
pub mod error;
pub mod geometry;
pub mod inner;
pub mod outer;
pub mod prox;

pub use error::{Error, Result};
pub use geometry::{AffineParams, GrayImage, JacobianOperator, Window};
pub use inner::{InnerConfig, InnerProblem, InnerResult, KktResiduals, SolverKind, SolverState};
pub use outer::{rectify, OuterConfig, RectifyResult};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/proximal.md")]
    mod proximal {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/solvers.md")]
    mod solvers {}
    #[doc = include_str!("../../../book/src/outer-loop.md")]
    mod outer_loop {}
    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
