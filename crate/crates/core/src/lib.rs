//! Numerical toolkit for ergodic Hamilton-Jacobi-Bellman problems whose
//! dynamics are control-affine and possibly degenerate (sub-Riemannian).
//!
//! The crate is organized around one question: for a control system
//! `γ' = f(γ, u)` with running cost `L(x, u)`, what is the critical constant
//!
//! ```text
//!   c = lim_{T→∞} V_T(x) / T = lim_{λ→0} λ v_λ(x),
//! ```
//!
//! where `V_T` is the finite-horizon value function and `v_λ` the discounted
//! one, and what do the correctors `χ = lim v_λ` look like?  For Lagrangians
//! with a strict minimum the constant equals `min L`, which gives every grid
//! computation here an exact target to be audited against.
//!
//! Modules, roughly bottom-up:
//!
//! * [`systems`] — control systems (Heisenberg, Grushin, Euclidean, linear,
//!   user-supplied), Lie brackets, bracket-generation (Chow) and Kalman rank
//!   checks.
//! * [`lagrangian`] — running costs, structural-assumption audits, and the
//!   associated Hamiltonian (closed form where available, adaptive mesh
//!   maximization otherwise).
//! * [`trajectory`] — RK4 rollout of controlled trajectories, cost
//!   quadrature, and penalty-method open-loop optimization.
//! * [`srgeometry`] — sub-Riemannian energies, distances, distance fields,
//!   and ball-box exponent audits built on the trajectory optimizer.
//! * [`hjb`] — rectangular grids, multilinear value fields, semi-Lagrangian
//!   solvers for the finite-horizon and discounted problems, and the
//!   Lax-Oleinik semigroup.
//! * [`ergodic`] — estimates of the critical constant from both limits,
//!   Abelian/Tauberian consistency checks, corrector extraction, and
//!   semigroup fixed points.
//! * [`config`] — serde-facing experiment configuration and the built-in
//!   benchmark catalogue.
//!
//! Everything downstream of a seed is deterministic: samplers take explicit
//! seeds, parallel sweeps only ever write disjoint slots, and minima over
//! control meshes break ties by lowest index.

pub mod config;
pub mod ergodic;
mod error;
pub mod expr;
pub mod hjb;
pub mod lagrangian;
pub mod numerics;
pub mod srgeometry;
pub mod systems;
pub mod trajectory;

pub use error::{Error, Result};
