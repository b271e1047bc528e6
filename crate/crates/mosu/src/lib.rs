//! Long-range outdoor robot navigation stack with a deterministic 2D simulator.
//!
//! The pipeline mirrors a three-stage architecture: GPS routing produces
//! evenly spaced subgoals, a trajectory generator proposes candidate arcs
//! which are scored on geometric confidence, semantic traversability,
//! social ranking and goal distance, and a Dynamic Window Approach planner
//! tracks the winning trajectory under Normal/Slow/Stop velocity caps.

pub mod georoute;
pub mod harness;
pub mod planner;
pub mod ranker;
pub mod scoring;
pub mod sim;
pub mod trajgen;

pub use georoute::{GeoPoint, LocalPoint, RoutePlan};
pub use sim::{Label, RangeScan, RobotState, SemanticGrid, WorldState};
pub use trajgen::{CandidateSet, Pose, Trajectory};
