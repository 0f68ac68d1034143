//! Output regulators with quadratic stability for discrete-time linear
//! switching systems, synthesized with the geometric approach.
//!
//! The pipeline: [`model`] builds the extended plant/exosystem system,
//! [`lmi`] certifies quadratic stability and synthesizes output injections,
//! [`geometry`] computes the maximal robust controlled invariant subspace,
//! solves the switching Francis equations and assembles friend feedbacks,
//! [`regulator`] realizes and certifies the observer-based regulator, and
//! [`simulation`] runs the closed loop.

pub mod cli;
pub mod error;
pub mod fixture;
pub mod geometry;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod oracle;
pub mod regulator;
pub mod report;
pub mod reproduce;
pub mod simulation;
pub mod subspace;
pub mod svg;

pub use error::{Error, Result, Stage};
