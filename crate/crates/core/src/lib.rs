//! Fredholm backstepping stabilisation of the weakly degenerate heat equation
//! `u_t = (x^α u_x)_x` on `(0, 1)` with Dirichlet control at `x = 1`.
//!
//! The crate builds the spectral basis of the degenerate operator, the
//! backstepping kernel in modal form, the truncated transformation `T` and the
//! feedback `K`, and simulates the closed loop.

// `!(x > bound)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod closed_loop_sim;
pub mod export;
pub mod fredholm_transform;
pub mod kernel_builder;
pub mod quadrature;
pub mod special_functions;
pub mod spectral_basis;
pub mod verify;
