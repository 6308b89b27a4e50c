//! Hyperparameter inference, prediction and implied covariance functions.

pub mod fit;
pub mod nelder_mead;
pub mod predict;

pub use fit::{default_init, fit, FitResult, FitSettings};
pub use predict::{aggregate, implied_covariance, predict_areal, predict_points, Area, PredictSettings, PredictionSet, Scale};
