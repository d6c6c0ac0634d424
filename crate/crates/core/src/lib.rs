//! Exact reachable sets of feedforward ReLU networks with constrained
//! zonotopes, and training under a differentiable non-intersection
//! constraint between the reachable set and unsafe output sets.
//!
//! The pipeline is:
//!
//! * [`conzono`]: the set representation and its exact operations
//!   (affine image, intersection, ReLU split, membership, sampling);
//! * [`lpsolve`]: the emptiness LP and a small dense simplex solver;
//! * [`lpgrad`]: implicit differentiation of the emptiness LP optimum;
//! * [`tape`]: a matrix-level reverse-mode tape linking weights to that optimum;
//! * [`network`]: pointwise evaluation, backprop and set propagation;
//! * [`training`]: the constrained training loop and post-hoc certification;
//! * [`experiment`]: datasets, run directories and plot export used by the CLI.

pub mod conzono;
pub mod error;
pub mod experiment;
pub mod lpgrad;
pub mod lpsolve;
pub mod network;
pub mod tape;
pub mod training;

pub use conzono::{ActivationPattern, ConstrainedZonotope, ReluBranch};
pub use error::{Error, Result};
pub use lpsolve::{EmptinessResult, EmptinessStatus, StandardFormLP};
pub use network::{Layer, Network, ReachOptions, ReachSet};
pub use training::{TrainConfig, TrainReport};
