//! Simulation and analysis library for a weak-measurement Bell test on
//! polarization-entangled photon pairs.
//!
//! One arm carries a weak polarization probe (a small Gaussian beam
//! displacement) followed by a strong analyser; the remote arm is measured
//! strongly. Conditional averages of the probe deflection reconstruct
//! weak-valued joint probabilities for incompatible observable pairs, and the
//! Bell combination of those quasiprobabilities reaches the Tsirelson bound
//! on a maximally entangled source.
//!
//! Layers, bottom up:
//! - [`matrix`], [`states`]: dense complex linear algebra, two-qubit states,
//!   dichotomic polarization observables, entanglement measures.
//! - [`weak`]: weak values, one- and two-sided quasiprobability tables, and
//!   the Bell accounting built from them.
//! - [`transient`]: the non-positive conditional operator behind the tables
//!   and its statistical reconstruction.
//! - [`pointer`]: the Gaussian beam-displacement probe, exact readout
//!   distributions, and the deflection-weighted estimators.
//! - [`sim`]: photon-counting Monte Carlo of the full experiment, including
//!   accidentals and state tomography runs.
//! - [`analysis`]: estimation pipeline from raw coincidence counts to tables,
//!   Bell probabilities, fitted calibrations, and tomographic reconstruction.

pub mod analysis;
pub mod error;
pub mod matrix;
pub mod pointer;
pub mod random;
pub mod sim;
pub mod states;
pub mod transient;
pub mod weak;

pub use error::{Error, Result};
