//! Scene-graph enrichment engine.
//!
//! Takes a scene graph of objects and directed predicate edges and learns to
//! append one new object per iteration together with the edges and
//! predicates tying it into the scene. The generator (object head, edge
//! detector, predicate head over shared graph convolutions) trains
//! adversarially against a pair of local/global graph discriminators, with
//! optional differentiable frozen stand-ins for a downstream image
//! synthesizer, scene classifier, and image-text aligner supplying auxiliary
//! losses.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod critic;
pub mod enricher;
pub mod eval;
pub mod gcn;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod surrogate;
pub mod tensor;
pub mod train;

pub use tensor::Real;
