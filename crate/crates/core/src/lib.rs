//! Unsupervised scene category discovery.
//!
//! Images are encoded as responses to a dictionary of visual words arranged in
//! a 9-block spatial pyramid, linked in a sparse similarity graph, and
//! partitioned by a Swendsen-Wang cluster sampler that learns a generative
//! word model for every category it proposes. The number of categories is
//! inferred.
//!
//! The numeric core is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, which is what the command-line pipeline uses.

pub mod cli;
pub mod codebook;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod imaging;
pub mod model;
pub mod report;
pub mod representation;
pub mod sampler;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Real = f64;
pub type Image = imaging::GrayImage<Real>;
pub type Dictionary = codebook::Dictionary<Real>;
pub type Representation = representation::ImageRepresentation<Real>;
pub type Graph = graph::SimilarityGraph<Real>;
pub type Model = model::CategoryModel<Real>;
pub type Background = model::BackgroundModel<Real>;
pub type Solution = sampler::Solution<Real>;
