//! Regularized mean-variance portfolio allocation for automated rebalancing.
//!
//! The crate is organized by concern:
//!
//! * [`market_data`] — return panels, weighted moments, eigen-diagnostics, condition numbers;
//! * [`mvo_core`] — the risk-tolerance (γ) problem, target calibration, Sharpe bound,
//!   implied returns, hedging-portfolio decomposition and constraint-implied shrinkage;
//! * [`regularizers`] — Tikhonov/ridge closed forms, shrunk correlations, spectral filters;
//! * [`prox_ops`] — proximal operators and Euclidean projections;
//! * [`admm_engine`] — scaled ADMM with adaptive penalty and its specializations;
//! * [`qp_solver`] — dense active-set QP and the augmented L1 reformulation;
//! * [`calibration`] — PRESS, GCV, k-fold cross-validation and tracking-error rules;
//! * [`views_bl`] — Black–Litterman blending and grade-based views;
//! * [`robo_pipeline`] — the full rebalancing program and regularization paths.
//!
//! All inputs and outputs are decimals (0.01 = 1%).

pub mod admm_engine;
pub mod calibration;
pub mod error;
pub mod linalg;
pub mod market_data;
pub mod mvo_core;
pub mod prox_ops;
pub mod qp_solver;
pub mod regularizers;
pub mod report;
pub mod robo_pipeline;
pub mod views_bl;

pub use error::{AllocError, Result};
pub use report::{Duals, SolveReport, SolveStatus};
