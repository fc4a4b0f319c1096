//! Particle simulation of the aggregation equation for nonsmooth,
//! λ-convex interaction potentials.
//!
//! The velocity of an atomic measure is the minimal-norm element of the
//! Wasserstein subdifferential of the interaction energy. For atomic
//! measures it is found by a small convex QP over antisymmetric
//! subgradient selections ([`selection::minimal_selection`]); for convex
//! radial kernels it reduces to convolving the pointwise minimal
//! subgradient with the measure.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convex_sets;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod io;
pub mod measures;
pub mod potentials;
pub mod scenarios;
pub mod selection;
pub mod transport;
pub mod vecmath;

pub use convex_sets::ConvexSet;
pub use error::{Error, Result};
pub use measures::ParticleMeasure;
pub use potentials::{Potential, PotentialSpec};
pub use transport::Coupling;
