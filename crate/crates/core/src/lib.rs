//! Decentralized human-aware coverage control.
//!
//! Robots cover a Gaussian-mixture density inside a polygonal workspace with
//! disc obstacles. Each robot runs a receding-horizon controller whose cost
//! is the coverage functional of its limited-range Voronoi cell and whose
//! constraints keep it clear of obstacles and, probabilistically, of the
//! predicted positions of nearby humans. A Lloyd-plus-repulsion controller is
//! provided for comparison, together with a deterministic simulator and the
//! usual coverage metrics.

// Negated comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod controller;
pub mod density;
pub mod dynamics;
pub mod geometry;
pub mod metrics;
pub mod mpc;
pub mod prediction;
pub mod qp;
pub mod registry;
pub mod sim;

/// Planar point or vector, in meters.
pub type Vec2 = nalgebra::Vector2<f64>;
