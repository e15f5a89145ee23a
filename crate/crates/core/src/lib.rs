//! Entropy flow and De Bruijn-type identities for channels driven by
//! fractional Brownian motion.
//!
//! Two channel models are supported:
//!
//! * multiplicative, `dX = σ(X) ∘ dB^H` with `X_0 = x0`, solved exactly as
//!   `X_t = φ(B^H_t)` where `φ' = σ(φ)`, `φ(0) = x0`;
//! * additive, `X_t = X_0 + B^H_t` with `X_0` independent of the noise.
//!
//! The crate builds the marginal density of `X_t` for either model
//! ([`channels`]), evaluates information functionals on it ([`infofunc`]),
//! and checks the entropy/KL flow identities, the Fokker-Planck equation,
//! Stein's identity and the entropy-power convexity split ([`identities`]).
//! A Monte Carlo oracle ([`montecarlo`]) samples `X_t` from the endpoint
//! `B^H_t` alone, and [`fbm`] provides exact path samplers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod doss;
mod error;
pub mod fbm;
pub mod identities;
pub mod infofunc;
pub mod montecarlo;
pub mod quad;
pub mod sigma;
pub mod suite;

pub use channels::{Channel, ChannelSpec, ChannelVariant, DensityField, GridLaw, InitialLaw};
pub use doss::{solve_phi, PhiSolution};
pub use error::{Error, Result};
pub use fbm::{covariance, sample_path, FbmPath, FbmSampler, Hurst, SamplingMethod};
pub use identities::{ConvexityProfile, Curvature, IdentityReport};
pub use infofunc::WeightFunction;
pub use montecarlo::{mc_expectation, McEstimate};
pub use quad::QuadratureSpec;
pub use sigma::{SigmaKind, SigmaModel};
