//! Finite-volume laboratory for the inhomogeneous Dean–Kawasaki equation
//! with correlated, conservative Stratonovich noise.
//!
//! The crate integrates the regularized Itô form
//!
//! ```text
//! dρ = ∇·a∇φ(ρ) dt − ∇·(σ(ρ) s dξ)
//!      + 2θ·⟨ξ⟩₁/2 ∇·(σ'(ρ)² a∇ρ) dt + 2θ·⟨ξ⟩₁/2 ∇·(σ(ρ)σ'(ρ) s(∇·sᵗ)) dt
//! ```
//!
//! on a Neumann box in flux-conservative form, simulates the underlying
//! reflecting particle system, and evaluates the functionals whose bounds
//! characterize the equation (mass, entropy, H⁻¹ distance, log-integrability,
//! kinetic band masses, Hölder quotients in time).
//!
//! Module map:
//! - [`grid`]: box discretization, discrete gradient/divergence, Neumann solve
//! - [`coeffs`]: diffusion matrix `s`, `a = ssᵗ`, nonlinearity `φ`, and the
//!   regularized square-root family `σ_n`
//! - [`noise`]: spatially correlated noise with constant quadratic variation
//! - [`solver`]: Euler–Maruyama (θ-corrected) and Heun (Stratonovich) steps
//! - [`diagnostics`]: functionals recorded along trajectories
//! - [`particles`]: reflecting diffusions and empirical densities
//! - [`harness`]: configuration, ensembles, coupling experiment, persistence
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coeffs;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod harness;
pub mod noise;
pub mod particles;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
