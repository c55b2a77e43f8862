//! Online recovery of sparse, acyclic linear structure from streaming data.
//!
//! The crate tracks a weighted directed acyclic graph over the coordinates of
//! a multivariate stream: each incoming batch refines a sparse weight-matrix
//! estimate (least squares + L1 + a temporal smoothness anchor, under a smooth
//! acyclicity constraint), a CUSUM statistic on one-step-ahead residuals
//! watches for structural breaks, and per-edge regression tests confirm which
//! edges appeared or disappeared.  Closed-form detection-delay bounds and a
//! Monte Carlo sweep harness round out the experiment side.
//!
//! Entry points, roughly bottom-up:
//!
//! - [`graph`]: weight matrices, the smooth acyclicity penalty and its
//!   gradient, thresholded adjacency, structural diffs.
//! - [`sim`]: random DAG generation, structural change injection, and
//!   streaming linear-SEM data (contemporaneous or lagged).
//! - [`solver`]: the per-batch proximal/augmented-Lagrangian weight estimator
//!   with warm starts.
//! - [`detect`]: residual CUSUM, per-edge appearance/disappearance tests, and
//!   the sequential detection loop tying everything together.
//! - [`bounds`]: closed-form lower/upper bounds on expected detection delay.
//! - [`harness`]: seeded trials, parameter sweeps, and CSV/JSON/SVG output.
//!
//! The `examples/` directory exercises each capability end to end; the
//! `dagwatch` binary exposes the same flows as subcommands (`trial`, `sweep`,
//! `bounds`, `calibrate`, `replay`).

pub mod bounds;
pub mod detect;
pub mod error;
pub mod expm;
pub mod graph;
pub mod harness;
pub mod sim;
pub mod solver;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
