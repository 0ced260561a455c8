//! Momentum-lattice simulation of a real scalar field driven by white noise,
//! using Gaussian wave-functional kernels.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classical;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod kernel;
pub mod lattice;
pub mod lindblad;
pub mod noise;
pub mod observables;
pub mod quadrature;
pub mod verify;

pub use error::{Error, Result};
pub use kernel::{Dynamics, KernelChoice, KernelEngine, KernelInit, KernelState, Scheme};
pub use lattice::{build_mode_table, LatticeSpec, ModeClass, ModeTable};
pub use noise::{NoiseSlice, NoiseSource, StreamNoise, StreamSpec};
