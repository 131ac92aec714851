//! Evaluation protocols, configuration, reports and the CLI.
//!
//! This is the only layer with ground-truth access: success checks, band
//! sampling, calibration and edge audits all consult
//! [`crate::env::oracle`]. Learners never see it.

pub mod calibration;
pub mod cli;
pub mod config;
pub mod edges;
pub mod eval;
pub mod svg;

pub use calibration::{distance_calibration_report, CalibrationInputs, CalibrationReport, CalibrationRow};
pub use config::Config;
pub use edges::{false_edge_count, EdgeCount};
pub use eval::{eval_pairs, eval_success_curve, sample_eval_pairs, wilson_interval, BandMetric, EvalConfig, OraclePolicy, Report};
