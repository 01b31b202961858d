//! Inspection strategies for Pandora boxes whose costs,
//! reward laws and availability change from round to round, with exact
//! evaluation and brute-force oracles for checking them.

pub mod crs;
pub mod engine;
pub mod error;
pub mod generate;
pub mod hypergraph;
pub mod indices;
pub mod io;
pub mod lp;
pub mod model;
pub mod pipeline;
pub mod rational;
pub mod strategies;
pub mod submodular;

pub use error::{Error, Result};
pub use model::{BoxSpec, DiscountRule, DiscreteDistribution, Instance, Variant};
pub use rational::Rational;
