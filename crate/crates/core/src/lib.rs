//! Exact-arithmetic toolkit for perturbative Rozansky-Witten computations.
//!
//! The modules build on each other roughly in this order: [`weyl`] for the
//! fiberwise Weyl algebra, [`graph`] for stable graphs, [`weight`] for the
//! vertex-tensor contraction, [`bv`] for the finite-dimensional BV and RG
//! calculus, [`heat`] for the heat-kernel leading terms, and [`assemble`]
//! for the partition sum.

pub mod assemble;
pub mod bv;
pub mod graph;
pub mod heat;
pub mod rational;
pub mod weight;
pub mod weyl;
