//! Simulation harness: data generators, reference solutions, experiment
//! runners and file formats.

pub mod experiment;
pub mod generate;
pub mod io;
pub mod orthonormal;
pub mod subset;
