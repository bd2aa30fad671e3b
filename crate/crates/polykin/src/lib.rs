//! Micro-macro simulation of nonhomogeneous dilute polymeric fluids.
//!
//! The fluid is an incompressible solvent with variable density `rho` and a
//! polymeric extra stress obtained from the Kramers moment of a probability
//! density over bead-spring-chain configurations. The solvent satisfies a
//! variable-density Navier-Stokes system; the configuration density satisfies
//! a Fokker-Planck equation over the product of the flow domain and a
//! bounded ball of admissible spring extensions (FENE springs). The two are
//! coupled through the stress, a density-dependent drag coefficient, and a
//! viscosity depending on density and polymer number density.
//!
//! The crate discretizes the coupled system with
//!
//! * exact transport of the density along backward characteristics of the
//!   divergence-free spectral velocity,
//! * divergence-free trigonometric Galerkin modes for the velocity on a
//!   periodic torus, tensor trigonometric-times-configuration modes for the
//!   normalized probability density,
//! * smooth truncation of the stress and drag nonlinearities at a
//!   configurable level,
//! * a damped Picard fixed-point iteration coupling the two linear
//!   Crank-Nicolson subsolves within each time window,
//!
//! and monitors every structural property of the continuous system: the
//! energy budget (kinetic + relative entropy vs. dissipation and forcing
//! work), mass conservation of the fluid and of the configuration density,
//! the density maximum principle, Kramers-stress consistency across its three
//! equivalent forms, and coercivity of the configuration-space diffusion.
//!
//! ```
//! use polykin::model::{fene_potential, FeneChain, RouseSystem};
//!
//! // A single FENE spring with extensibility b = 4 in two dimensions.
//! let chain = FeneChain::new(vec![4.0], 2).unwrap();
//! assert_eq!(chain.springs(), 1);
//!
//! // The spring potential vanishes at rest and blows up at full extension.
//! assert_eq!(fene_potential(0.0, 4.0).unwrap(), 0.0);
//! assert!(fene_potential(1.99, 4.0).unwrap() > 10.0);
//!
//! // The classical Rouse coupling of one spring is the 1x1 matrix [2].
//! let rouse = RouseSystem::classical(1).unwrap();
//! assert_eq!(rouse.coercivity_bounds(), (2.0, 2.0));
//! ```

pub mod cli;
pub mod config;
pub mod confspace;
pub mod diagnostics;
pub mod galerkin;
pub mod model;
pub mod numerics;
pub mod solver;
pub mod transport;
pub mod truncation;

#[cfg(test)]
pub(crate) mod testutil;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Array or matrix dimensions disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A configuration value is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),
    /// A quadrature or basis construction cannot reach its accuracy contract.
    #[error("basis construction failed: {0}")]
    Basis(String),
    /// A field evaluated to a non-finite value.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// The Picard iteration did not converge within the allotted iterations.
    #[error(
        "fixed-point iteration failed to converge after {iterations} iterations \
         (last residual {residual:.3e}); reduce the time step"
    )]
    FixedPoint { iterations: usize, residual: f64 },
    /// A linear solve failed (singular matrix).
    #[error("linear solve failed: {0}")]
    Singular(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
