//! Numerical laboratory for the zero-noise (vanishing viscosity) selection of
//! solutions to degenerate SDEs
//!
//! ```text
//!     dX_t = b(X_t) dt + sigma(X_t) dW_t
//! ```
//!
//! where `b` and `sigma` are bounded, Hoelder continuous and may vanish at
//! isolated degenerate points.  The library follows the selected solution along
//! two independent routes and cross-checks them:
//!
//! * a Monte Carlo route ([`mc`]) simulating the regularised dynamics with
//!   diffusion `sigma_eps sigma_eps^T = sigma sigma^T + eps I`, and
//! * a PDE route ([`fd`]) solving the associated backward Kolmogorov equation
//!   with a monotone explicit scheme and driving `eps` down a schedule.
//!
//! [`coeffs`] holds the coefficient fields and the checkers for the standing
//! regularity assumptions, [`viscosity`] the comparison/supersolution
//! diagnostics used to argue uniqueness of the limit, and [`experiments`] the
//! problem catalog plus the orchestrated selection experiments consumed by the
//! command line frontend.
//!
//! All numerics are generic over the scalar type through [`scalar::Real`]
//! (`f32` or `f64`); the `*64` aliases at the crate root fix the default
//! double-precision instantiations used by the binaries and tests.

pub mod coeffs;
pub mod domain;
pub mod error;
pub mod fd;
pub mod linalg;
pub mod mc;
pub mod experiments;
pub mod rng;
pub mod scalar;
pub mod viscosity;

pub use error::{CoreError, Result};
pub use scalar::Real;

pub type BoxDomain64 = domain::BoxDomain<f64>;
pub type ProbeWindow64 = domain::ProbeWindow<f64>;
pub type CoefficientField64 = coeffs::CoefficientField<f64>;
pub type PerturbationFamily64 = coeffs::PerturbationFamily<f64>;
pub type Payoff64 = mc::Payoff<f64>;
pub type GridSpec64 = fd::GridSpec<f64>;
pub type LatticeFunction64 = fd::LatticeFunction<f64>;
pub type EpsSweep64 = fd::EpsSweep<f64>;
pub type SmoothCandidate64 = viscosity::SmoothCandidate<f64>;
pub type Problem64 = experiments::Problem<f64>;
