//! Skew-symmetric perturbation of symmetric posterior approximations.
//!
//! A symmetric approximation `f*` of a posterior `π_n`, centered at `θ̂`, is
//! turned into the skew-symmetric density `q*(θ) = 2 f*(θ) w*(θ)` where
//! `w*(θ) = π_n(θ) / (π_n(θ) + π_n(2θ̂ - θ))`. The perturbation needs no
//! extra optimization, admits exact i.i.d. sampling by reflection, and is
//! never further from `π_n` than `f*` in total variation, KL or any
//! α-divergence.
//!
//! Modules:
//! - [`model`], [`glm`]: target posteriors and their derivatives
//! - [`approx`]: Laplace, Gaussian VB, Gaussian EP and SNP approximations
//! - [`skew`]: the skewness factor, the skew-symmetric density and sampler
//! - [`divergence`]: grid and Monte Carlo divergence estimators
//! - [`mcmc`]: random-walk Metropolis and HMC reference samplers
//! - [`bench`]: error tables and the convergence-rate experiment
//! - [`verify`]: the invariant battery checked by quadrature
//! - [`config`], [`commands`], [`io`]: run configuration and the command-line workflow

pub mod approx;
pub mod bench;
pub mod commands;
pub mod config;
pub mod divergence;
pub mod error;
pub mod glm;
pub mod io;
pub mod math;
pub mod mcmc;
pub mod model;
pub mod models;
pub mod seed;
pub mod skew;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
