//! Diffusion convolutional recurrent networks for spatiotemporal forecasting
//! on weighted directed graphs.
//!
//! The crate is layered bottom-up: [`sparse`] linear algebra, [`graph`]
//! construction and transition operators, a small reverse-mode
//! [`autodiff`] engine, the [`dconv`] diffusion convolution, the
//! [`dcgru`] recurrent cell, and the [`seq2seq`] forecaster with its
//! training loop. [`data`] and [`metrics`] handle series I/O, windowing,
//! normalization and masked scoring.

pub mod autodiff;
pub mod data;
pub mod dcgru;
pub mod dconv;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod seq2seq;
pub mod sparse;

pub use data::{ForecastSample, SpeedSeries, ZScore};
pub use dconv::{ConvMode, Supports};
pub use error::{Error, Result};
pub use graph::WeightedDigraph;
pub use seq2seq::{Model, ModelConfig, TrainConfig, TrainReport};
pub use sparse::{DenseMatrix, SparseMatrix};
