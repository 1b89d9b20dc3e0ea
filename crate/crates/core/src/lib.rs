//! Equivariant entity-relationship layers.
//!
//! A relational database is modelled as a set of entities, each with a number
//! of instances, and a list of relations whose data live in sparse tensors with
//! one axis per member entity. Shuffling the instances of an entity, using the
//! same shuffle in every tensor that indexes it, leaves the database unchanged.
//! This crate builds the linear layers that commute with exactly those
//! shuffles:
//!
//! - [`partitions`] and [`tying`] describe which weight entries share a value,
//! - [`oracle`] materializes the dense weight and permutation matrices for
//!   exact checks on small schemas,
//! - [`layer`] is the pooling/broadcasting implementation used for training,
//! - [`model`] stacks layers into a factorized auto-encoder,
//! - [`cmtf`] and [`synth`] provide the coupled-factorization baselines and the
//!   synthetic data they are compared on.
//!
//! The crate is `no_std` and only needs `alloc`; text formats, file IO and the
//! command line live in the `eerl` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod cmtf;
pub mod dense;
mod error;
pub mod layer;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod partitions;
pub mod relstore;
pub mod rng;
pub mod schema;
pub mod synth;
pub mod tying;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod fixtures;
pub use layer::{Activation, PoolMode, PoolPlan};
pub use oracle::LegalPerm;
pub use relstore::{DenseInstance, DenseTensor, DenseVec, Mask, RelInstance, SparseRelTensor};
pub use schema::{EntityDecl, EntityId, Relation, Schema, SchemaBuilder};
pub use tying::{BlockSpec, TiedWeights};
