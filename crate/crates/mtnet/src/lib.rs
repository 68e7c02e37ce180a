//! Mobility-tree next point-of-interest recommendation.
//!
//! The crate turns LBSN check-in logs into per-user trajectories, arranges
//! each trajectory prefix into a mobility tree (day nodes over time-period
//! nodes over raw check-in leaves), and trains a tree-structured neural
//! network over it: sibling groups exchange information through multi-head
//! self-attention, children feed their parents through an N-ary Tree-LSTM,
//! and prediction heads over the POI / geo-cluster / category vocabularies
//! are combined by an uncertainty-weighted multitask loss. Ranked
//! recommendations fuse the day-, period- and check-in-level POI scores.
//!
//! The numeric core (tensors, reverse-mode differentiation, the model, the
//! optimizer) is generic over the floating-point type via [`scalar::Scalar`];
//! `f64` is the default lane, `f32` an opt-in.

pub mod autodiff;
pub mod config;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod scalar;
pub mod synth;
pub mod train;
pub mod tree;
pub mod types;

pub use scalar::Scalar;

/// Concrete tensor aliases for the two supported lanes.
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type ParamStore32 = model::ParamStore<f32>;
pub type ParamStore64 = model::ParamStore<f64>;

use thiserror::Error;

/// Crate-wide error type; every module contributes a variant.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] autodiff::AdError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Tree(#[from] tree::TreeError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("config: {0}")]
    Config(#[from] config::ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<V> = std::result::Result<V, Error>;
