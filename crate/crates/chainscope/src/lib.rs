//! Simulate restricted-access measurements on the first spin of a coupled
//! chain and reconstruct every coupling strength and the anisotropy from
//! the Fourier spectrum of the measured return signal.

pub mod chain;
pub mod dynamics;
pub mod eigensolve;
pub mod oracle;
pub mod pipeline;
pub mod reconstruct;
pub mod spectral;
