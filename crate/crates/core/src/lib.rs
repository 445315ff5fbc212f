//! Maximum consensus LiDAR localization.
//!
//! A scan is registered against a prior map by exhaustively scoring a grid of
//! candidate poses around an initial guess. Two objectives are provided: the
//! classic match count, and a Helmert point-error score that rewards
//! correspondences which constrain the pose in every horizontal direction.

pub mod error;
pub mod geometry;
pub mod icp;
pub mod index;
pub mod io;
pub mod metrics;
pub mod objectives;
pub mod search;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{GridIndex, MapCloud, MatchMode, Point3, Pose2, ScanCloud, SearchSpec, UnitNormal3};
pub use objectives::{Accumulator, Grid, Objective};
pub use search::{brute_force_oracle, maximum_consensus, LocalizationResult};
