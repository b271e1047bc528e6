//! Candidate trajectory generation: a fan of constant-curvature arcs over
//! the forward sector, truncated at the first scan-implied obstacle, each
//! carrying a clearance-derived confidence score.
//!
//! The generator is a pluggable interface; a learned model can replace the
//! arc sampler without touching the downstream scoring pipeline, which
//! depends only on (trajectories, confidences).

use thiserror::Error;

use crate::georoute::LocalPoint;
use crate::sim::RangeScan;

/// Default number of candidates per frame.
pub const DEFAULT_N: usize = 6;
/// Default curvature fan half-width, 1/m.
pub const DEFAULT_KAPPA_MAX: f64 = 0.5;
/// Clearance at which confidence saturates to 1.
pub const DEFAULT_D_SAFE_M: f64 = 2.0;
/// Default waypoint count per trajectory; grows when needed to keep
/// consecutive waypoints within 2 m.
pub const DEFAULT_WAYPOINTS: usize = 20;
/// Maximum spacing between consecutive waypoints.
pub const MAX_WAYPOINT_SPACING_M: f64 = 2.0;
/// Arc samples closer than this to an obstacle point truncate the arc.
const TRUNCATION_RADIUS_M: f64 = 0.3;
const ARC_WALK_STEP_M: f64 = 0.1;
const MIN_ARC_LENGTH_M: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum TrajGenError {
    #[error("trajectory generation needs at least one range scan")]
    NoScan,
    #[error("candidate count {0} outside [2, 16]")]
    BadCount(usize),
}

/// 2D pose (position + heading) in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta }
    }

    /// Map a point from this pose's frame into the world frame.
    pub fn to_world(&self, p: LocalPoint) -> LocalPoint {
        let (s, c) = self.theta.sin_cos();
        LocalPoint::new(
            self.x + c * p.east - s * p.north,
            self.y + s * p.east + c * p.north,
        )
    }

    /// Map a world point into this pose's frame.
    pub fn to_frame(&self, p: LocalPoint) -> LocalPoint {
        let (s, c) = self.theta.sin_cos();
        let dx = p.east - self.x;
        let dy = p.north - self.y;
        LocalPoint::new(c * dx + s * dy, -s * dx + c * dy)
    }
}

/// Waypoint polyline in the robot frame at generation time (x forward,
/// y left), with a confidence score in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<LocalPoint>,
    pub confidence: f64,
}

impl Trajectory {
    pub fn end(&self) -> LocalPoint {
        *self.waypoints.last().expect("trajectory has waypoints")
    }

    pub fn arc_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|p| p[0].distance(&p[1]))
            .sum()
    }
}

/// Frame-stamped set of candidate trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub trajectories: Vec<Trajectory>,
    pub frame_pose: Pose,
    pub timestamp: f64,
}

/// Bounded history of (v, w) commands with strictly increasing timestamps.
#[derive(Debug, Clone, Default)]
pub struct VelocityHistory {
    samples: Vec<(f64, f64, f64)>, // (t, v, w)
    capacity: usize,
}

impl VelocityHistory {
    pub fn new(capacity: usize) -> Self {
        VelocityHistory {
            samples: Vec::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, t: f64, v: f64, w: f64) {
        if let Some(&(last, _, _)) = self.samples.last() {
            assert!(t > last, "velocity timestamps must strictly increase");
        }
        self.samples.push((t, v, w));
        if self.samples.len() > self.capacity {
            self.samples.remove(0);
        }
    }

    pub fn latest(&self) -> Option<(f64, f64, f64)> {
        self.samples.last().copied()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Generator contract: sensor context in, N candidates with confidences out.
pub trait TrajectoryGenerator: Send + Sync {
    fn generate(
        &self,
        scan_history: &[RangeScan],
        vel: &VelocityHistory,
        n: usize,
        frame_pose: Pose,
        timestamp: f64,
    ) -> Result<CandidateSet, TrajGenError>;
}

/// Deterministic arc-fan generator: `n` constant-curvature arcs with
/// curvature uniformly spaced in [-kappa_max, kappa_max] (endpoints
/// included), truncated at the first obstacle along the arc.
#[derive(Debug, Clone)]
pub struct ArcSampler {
    pub kappa_max: f64,
    pub d_safe_m: f64,
    pub waypoints: usize,
}

impl Default for ArcSampler {
    fn default() -> Self {
        ArcSampler {
            kappa_max: DEFAULT_KAPPA_MAX,
            d_safe_m: DEFAULT_D_SAFE_M,
            waypoints: DEFAULT_WAYPOINTS,
        }
    }
}

fn arc_point(kappa: f64, s: f64) -> LocalPoint {
    if kappa.abs() < 1e-9 {
        LocalPoint::new(s, 0.0)
    } else {
        LocalPoint::new((kappa * s).sin() / kappa, (1.0 - (kappa * s).cos()) / kappa)
    }
}

impl ArcSampler {
    /// Arc length until the arc comes within the truncation radius of any
    /// obstacle point, capped at `max_len`.
    fn clear_length(&self, kappa: f64, max_len: f64, obstacles: &[LocalPoint]) -> f64 {
        if obstacles.is_empty() {
            return max_len;
        }
        let mut s = ARC_WALK_STEP_M;
        while s <= max_len {
            let p = arc_point(kappa, s);
            let near = obstacles
                .iter()
                .map(|o| o.distance(&p))
                .fold(f64::INFINITY, f64::min);
            if near <= TRUNCATION_RADIUS_M {
                return (s - ARC_WALK_STEP_M).max(MIN_ARC_LENGTH_M);
            }
            s += ARC_WALK_STEP_M;
        }
        max_len
    }

    fn sample_arc(&self, kappa: f64, len: f64) -> Vec<LocalPoint> {
        // keep consecutive waypoints within the 2 m spacing cap
        let needed = (len / MAX_WAYPOINT_SPACING_M).ceil() as usize + 1;
        let count = self.waypoints.max(needed).max(2);
        (0..count)
            .map(|i| arc_point(kappa, len * (i + 1) as f64 / count as f64))
            .collect()
    }
}

impl TrajectoryGenerator for ArcSampler {
    fn generate(
        &self,
        scan_history: &[RangeScan],
        _vel: &VelocityHistory,
        n: usize,
        frame_pose: Pose,
        timestamp: f64,
    ) -> Result<CandidateSet, TrajGenError> {
        let scan = scan_history.last().ok_or(TrajGenError::NoScan)?;
        if !(2..=16).contains(&n) {
            return Err(TrajGenError::BadCount(n));
        }
        let obstacles = scan.obstacle_points();
        let trajectories = (0..n)
            .map(|i| {
                let kappa = -self.kappa_max
                    + 2.0 * self.kappa_max * i as f64 / (n - 1) as f64;
                let len = self.clear_length(kappa, scan.max_range, &obstacles);
                let waypoints = self.sample_arc(kappa, len);
                let traj = Trajectory {
                    waypoints,
                    confidence: 0.0,
                };
                let confidence = confidence_from_clearance(&traj, scan, self.d_safe_m);
                Trajectory {
                    confidence,
                    ..traj
                }
            })
            .collect();
        Ok(CandidateSet {
            trajectories,
            frame_pose,
            timestamp,
        })
    }
}

/// Generate `n` candidates with the default arc sampler.
pub fn generate_candidates(
    scan_history: &[RangeScan],
    vel: &VelocityHistory,
    n: usize,
) -> Result<CandidateSet, TrajGenError> {
    ArcSampler::default().generate(scan_history, vel, n, Pose::new(0.0, 0.0, 0.0), 0.0)
}

/// Confidence from obstacle clearance: the smallest waypoint-to-obstacle
/// distance divided by `d_safe`, clamped to [0, 1]. No visible obstacle
/// means full confidence.
pub fn confidence_from_clearance(traj: &Trajectory, scan: &RangeScan, d_safe: f64) -> f64 {
    assert!(d_safe > 0.0);
    let obstacles = scan.obstacle_points();
    if obstacles.is_empty() {
        return 1.0;
    }
    let min_clear = traj
        .waypoints
        .iter()
        .map(|wp| {
            obstacles
                .iter()
                .map(|o| o.distance(wp))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min);
    (min_clear / d_safe).clamp(0.0, 1.0)
}

/// Re-express all waypoints of a set, generated in `from_pose`'s frame, in
/// `to_pose`'s frame. Confidences are unchanged.
pub fn transform_candidates(set: &CandidateSet, from_pose: Pose, to_pose: Pose) -> CandidateSet {
    let trajectories = set
        .trajectories
        .iter()
        .map(|t| Trajectory {
            waypoints: t
                .waypoints
                .iter()
                .map(|p| to_pose.to_frame(from_pose.to_world(*p)))
                .collect(),
            confidence: t.confidence,
        })
        .collect();
    CandidateSet {
        trajectories,
        frame_pose: to_pose,
        timestamp: set.timestamp,
    }
}
