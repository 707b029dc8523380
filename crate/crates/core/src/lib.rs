//! Frame-level prompt directing and cross-frame attention video sampling.
//!
//! A chat model ([`director`]) expands one abstract prompt into per-frame
//! prompts; a toy latent diffusion sampler ([`diffusion`]) renders them with
//! cross-frame self-attention ([`attention`]) that rotates the frame values
//! are borrowed from; [`pipeline`] ties the two together and writes images,
//! and [`eval`] scores the result.

pub mod attention;
pub mod diffusion;
pub mod director;
pub mod eval;
pub mod pipeline;
