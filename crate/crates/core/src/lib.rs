//! Hessian quotient operators `(σ_k/σ_l)^{1/(k-l)}(λ[τ(Δu)I − ∇²u])` on flat
//! box domains, and a continuity-method Dirichlet solver built on them.
//!
//! Layering, bottom up:
//!
//! * [`symfun`]: elementary symmetric polynomials, Gårding cones, the
//!   quotient `f(λ)` and its derivatives.
//! * [`spectral`]: symmetric eigendecomposition and the matrix operator
//!   `F(U) = f(λ[U])`.
//! * [`expr`]: expressions for `ψ(x, u, p)`, boundary data and subsolutions.
//! * [`grid`]: finite-difference stencils, residual and Jacobian assembly.
//! * [`solver`]: damped Newton stages along the homotopy `t ∈ [0, 1]`.
//! * [`verify`]: independent oracles and solution diagnostics.

pub mod error;
pub mod expr;
pub mod grid;
pub mod linsolve;
pub mod matrix;
pub mod solver;
pub mod spectral;
pub mod symfun;
pub mod verify;

pub use error::AlgebraError;
pub use matrix::SymMatrix;
pub use symfun::{Lambda, QuotientSpec};
