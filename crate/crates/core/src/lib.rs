//! Hazard-aware navigation: language-derived hazard reports become
//! anxiety-scored Gaussian cost fields, fused with a geometric obstacle map
//! and consumed by an incremental planner and a sampling-based controller.
//! A deterministic 2D simulator closes the loop for scripted scenarios.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod costmap;
pub mod error;
pub mod export;
pub mod grid;
pub mod harness;
pub mod hazard;
pub mod perception;
pub mod planner;
pub mod sim;
pub mod stack;

pub use costmap::{
    apply_hazard_update, fuse, gaussian_cost_at, propagate_costs, update_sigma, Anxiety, AnxietyScoreMap,
    GaussianCostMap, GaussianParams, ObstacleMap, Truncation,
};
pub use error::MapError;
pub use grid::{Cell, Grid, GridSpec};
pub use perception::Pose2D;
