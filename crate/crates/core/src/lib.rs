//! Blind audio bandwidth extension by guided reverse diffusion.
//!
//! Given a bandlimited recording and a denoiser carrying a prior over clean
//! audio, [`sampler::babe_sample`] reconstructs the wideband signal while
//! fitting a parametric lowpass filter ([`filter::FilterParams`]) that
//! explains the observed bandwidth loss.

pub mod filter;
pub mod metrics;
pub mod pipeline;
pub mod prior;
pub mod protocol;
pub mod remote;
pub mod sampler;
pub mod signal;
