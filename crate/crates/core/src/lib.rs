//! Latent factor analysis on sparse rating matrices with a block-diagonal
//! Hessian-free optimizer.
//!
//! The optimizer keeps only the per-user and per-item `f x f` blocks of the
//! Gauss-Newton curvature, solves each damped block system by conjugate
//! gradient, and runs the independent blocks concurrently. Full-batch SGD,
//! Adam, and Yogi baselines share the same training driver.
//!
//! Module map:
//! - [`data`]: parsing, adjacency, seeded splits
//! - [`model`]: factor state, predictions, loss, gradient, metrics
//! - [`curvature`]: per-block Jacobian and damped Gauss-Newton products
//! - [`cg`]: per-block conjugate gradient
//! - [`train`]: training loops and early stopping
//! - [`parallel`] and [`scaling`]: worker execution and thread benchmarks
//! - [`oracle`] and [`verify`]: dense references for verification

pub mod cg;
pub mod curvature;
pub mod data;
pub mod error;
pub mod model;
pub mod oracle;
pub mod parallel;
pub mod scaling;
pub mod seed;
pub mod synth;
pub mod train;
pub mod verify;

pub use cg::{solve_all, solve_block, CgOutcome, CgSettings};
pub use curvature::{full_gnvp, gnvp_block, jvp_block, BlockOperatorContext};
pub use data::{parse_ratings, split_dataset, Delimiter, HdiDataset, RatingTriple};
pub use error::{Error, Result};
pub use model::{evaluate, gradient, init_factors, loss, predict, BlockVector, Entity, FactorState, Layout, Metrics};
pub use parallel::{Executor, WorkPartition};
pub use scaling::{bench_threads, SpeedupReport};
pub use train::{train, train_first_order, train_mini_hes, Metric, OptimizerConfig, OptimizerKind, TrainReport};
