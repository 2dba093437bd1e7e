//! Gaussian beam tracing for outdoor sound propagation.
//!
//! Rays are launched from a point source, traced through a triangle scene with
//! specular reflections, and each ray carries a Gaussian beam. The field at an
//! observer is the weighted sum of the beams evaluated there.

pub mod beamtrace;
pub mod gbs;
pub mod harness;
pub mod oracle;
pub mod parallel;
pub mod scene;
