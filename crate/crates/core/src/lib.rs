//! Non-parametric identification of continuous-time impulse responses from
//! Lebesgue-sampled (amplitude-quantized, event-triggered) output data.
//!
//! The estimator represents the impulse response as a finite combination of
//! representers of a first-order stable-spline kernel. Weights come from a
//! MAP-EM iteration that treats the unquantized output as a latent variable,
//! and the kernel hyperparameters are tuned by an Empirical-Bayes EM loop
//! whose E-step is a Monte Carlo estimate of the conditional second moment of
//! the output given its amplitude bands.
//!
//! Module map:
//!
//! - [`domain`]: shared data types and the dataset file format.
//! - [`lti_sim`]: state-space plants, ZOH discretization, simulation.
//! - [`lebesgue`]: threshold-crossing detection and band sequences.
//! - [`kernel`]: stable-spline kernel, output Gram matrix, representers.
//! - [`truncgauss`]: band probabilities, truncated-normal moments, Gibbs sampler.
//! - [`weights`]: MAP-EM weight solver and regularized least squares.
//! - [`hyper_eb`]: Empirical-Bayes hyperparameter EM.
//! - [`harness`]: estimators, fit metric, Monte Carlo case study, result files.

pub mod domain;
pub mod error;
pub mod harness;
pub mod hyper_eb;
pub mod kernel;
pub mod lebesgue;
pub mod lti_sim;
pub mod optim;
pub mod rng;
pub mod special;
pub mod truncgauss;
pub mod weights;

pub use domain::{BandSequence, Dataset, Hyperparameters, SamplingConfig, ZohInput};
pub use error::{Error, Result};
pub use harness::{Estimator, ExperimentConfig, ImpulseEstimate, PointSource, RunResult};
pub use hyper_eb::{EbTrace, GramBuilder};
pub use kernel::KernelGram;
pub use lebesgue::CrossingEvent;
pub use lti_sim::{SecondOrderPlant, StateSpace};
pub use truncgauss::{BandConstraint, MomentEstimate, SamplerConfig};
pub use weights::WeightSolution;
