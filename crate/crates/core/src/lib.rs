//! Boundary-conditional diffusion for discrete data.
//!
//! A discrete datum is embedded in continuous space and a deterministic
//! forward trajectory `x_t = u_t x0 + v_t eps` is drawn toward Gaussian noise.
//! The [`boundary`] module finds, per element, the time `t0` at which that
//! trajectory leaves the region that still rounds to the datum. The
//! [`trajectory`] module restarts the trajectory at that boundary through the
//! rescaled time `tau = r*t0 + t*(T - r*t0)/T`. [`training`] fits an
//! x0-predicting [`denoiser`] on the rescaled process and [`sampling`] runs the
//! matching deterministic (or Gaussian) reverse process.
//!
//! [`oracle`] holds slow brute-force references used by the test suites.

pub mod boundary;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod oracle;
pub mod sampling;
pub mod schedules;
pub mod space;
pub mod training;
pub mod trajectory;

pub use boundary::{BoundaryEstimate, BoundaryFraction, Q_SENTINEL};
pub use denoiser::{DenoiserNet, GradientTape, NetConfig};
pub use error::{Error, Result};
pub use schedules::{Schedule, ScheduleKind};
pub use space::{BinaryCode, DiscreteDatum, EmbeddingTable};
pub use trajectory::RescaledPoint;
