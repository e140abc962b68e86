//! Numerical verification of Gauss–Bonnet–Chern and its companions.
//!
//! The crate recovers exact topological integers (Euler characteristics,
//! indices, Euler numbers of plane bundles, heat supertraces) from curvature,
//! degree and spectral computations on concretely specified manifolds.

pub mod exterior;
pub mod expr;
pub mod geometry;
pub mod quadrature;
pub mod gbc;
pub mod index;
pub mod library;
pub mod bundles;
pub mod mq;
pub mod heat;
pub mod specfile;
pub mod report;
pub mod cli;
