//! Adiabatic decision procedure for Diophantine equations on truncated
//! bosonic Fock spaces.

pub mod cli;
pub mod decide;
pub mod evolve;
pub mod fock;
pub mod odeflow;
pub mod ops;
pub mod poly;
pub mod sampler;
pub mod spectral;
