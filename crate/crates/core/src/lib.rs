//! Toolkit for measuring and predicting the per-cycle energy of mobile AI
//! applications.
//!
//! The crate covers the full pipeline:
//!
//! * [`trace`] turns raw power-monitor captures and application latency logs
//!   into per-cycle energy figures (clock alignment, base-power subtraction,
//!   trapezoidal integration).
//! * [`dataset`] loads cycle records, one-hot encodes categorical features,
//!   standardizes numeric ones, and produces reproducible splits.
//! * [`gpr`] is an exact Gaussian-process regressor with an ARD squared
//!   exponential kernel, trained by maximizing the log marginal likelihood.
//! * [`hyperopt`] is the quasi-Newton ascent routine used for that training.
//! * [`synthetic`] generates calibrated synthetic records, power traces and
//!   GP prior draws so the pipeline can be exercised without hardware.
//! * [`eval`] computes accuracy and calibration metrics for trained models.

pub mod dataset;
pub mod eval;
pub mod gpr;
pub mod hyperopt;
pub mod linalg;
pub mod synthetic;
pub mod trace;
