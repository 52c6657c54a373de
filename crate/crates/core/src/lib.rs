//! Solver and verifier for the Lorentzian Callan-Symanzik flow of the local
//! potential `u(φ, k)` on an ultrastatic cylinder `ℝ × S¹`.
//!
//! The crate is organised bottom-up:
//!
//! * [`background`]: spacetime, mode basis, temporal cutoff, regulator and
//!   state kernel.
//! * [`propagators`]: per-mode retarded kernels of `∂ₜ² + ω² + m²χ(t)`,
//!   Møller operators and the normal-ordered coincidence kernel.
//! * [`flowfn`]: the flow function `𝒢(m²)`, the conductivity `σ = 𝒢'` and
//!   `A₂ = 𝒢''`, tabulated with cubic-spline interpolants.
//! * [`graded`]: fields on `X × [a, b]`, graded sup-seminorms, smoothing
//!   operators and the boundary lift.
//! * [`linsolve`]: the linearised flow operator and its inverse.
//! * [`nashmoser`]: the RG operator and the three solvers.
//! * [`suites`] and [`cli`]: verification suites and the batch front end.

pub mod background;
pub mod cli;
pub mod config;
pub mod error;
pub mod flowfn;
pub mod graded;
pub mod io;
pub mod linsolve;
pub mod nashmoser;
pub mod numerics;
pub mod par;
pub mod propagators;
pub mod sampling;
pub mod suites;

pub use background::Background;
pub use config::RunConfig;
pub use error::{Error, Result};
pub use flowfn::FlowTable;
pub use graded::{FlowGrid, GridField, Role};
