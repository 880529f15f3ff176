//! Ergodic generative flows (EGFs) on flat tori and round spheres.
//!
//! An EGF moves a state by one of finitely many globally defined
//! diffeomorphisms, chosen by a state-dependent softmax policy, and carries a
//! nonnegative outflow density. Because the moves are invertible with known
//! Jacobians, the backward policy and the density of the one-step inflow are
//! available in closed form, which makes flow-matching losses tractable.
//!
//! The crate is `no_std` with `alloc`; the `std` feature (on by default) only
//! switches floating-point intrinsics from `libm` to the platform library.
//! File formats, configuration and the command line live in the companion
//! `egf` crate.
//!
//! Module map:
//! - [`manifold`]: state spaces, wrapping, uniform sampling.
//! - [`transforms`]: toroidal affine maps and spherical rotations.
//! - [`model`]: the two MLP heads, reverse-mode gradients, AdamW.
//! - [`flow`]: star inflow, backward policy, virtual initial/terminal densities.
//! - [`sampler`]: forward and backward Markov chains with stopping.
//! - [`losses`]: stable and divergence FM losses, regularizer, KL-weakFM.
//! - [`training`]: RL and imitation-learning loops with replay buffers.
//! - [`eval`]: NLL, grid TV, flow mass, density filter, mixing diagnostic.
//! - [`data`]: toy generators, datasets and splits.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod linalg;
pub mod losses;
pub mod manifold;
pub mod math;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod training;
pub mod transforms;
pub mod vmf;

pub use error::{Error, Result};
pub use flow::{Density, Egf, InitDensity, LocalFlowState};
pub use manifold::{Manifold, Point};
pub use model::{EgfModel, FlowModel, Link, ModelConfig, ModelOutput};
pub use sampler::{Direction, Trajectory};
pub use transforms::{FamilySpec, Preset, Transform, TransformFamily};
