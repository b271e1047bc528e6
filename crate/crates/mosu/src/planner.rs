//! Dynamic Window Approach local planner tracking the selected trajectory
//! under Normal/Slow/Stop velocity caps.
//!
//! Admissibility is geometric only: rollouts are checked against the latest
//! range scan; terrain semantics already shaped trajectory selection
//! upstream.

use crate::georoute::LocalPoint;
use crate::ranker::RobotMode;
use crate::sim::{normalize_angle, RangeScan, RobotState, ROBOT_RADIUS};
use crate::trajgen::Trajectory;

/// DWA tuning. All fields positive; sample counts at least 3.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DwaConfig {
    pub accel_v: f64,
    pub accel_w: f64,
    pub v_samples: usize,
    pub w_samples: usize,
    pub horizon_s: f64,
    pub rollout_dt: f64,
    /// Command interval the dynamic window spans.
    pub control_dt: f64,
    pub heading_weight: f64,
    pub clearance_weight: f64,
    pub velocity_weight: f64,
    pub lookahead_m: f64,
    pub w_max: f64,
}

impl Default for DwaConfig {
    fn default() -> Self {
        DwaConfig {
            accel_v: 0.5,
            accel_w: 1.5,
            v_samples: 7,
            w_samples: 11,
            horizon_s: 2.0,
            rollout_dt: 0.1,
            control_dt: 0.1,
            heading_weight: 0.6,
            clearance_weight: 0.3,
            velocity_weight: 0.1,
            lookahead_m: 2.0,
            w_max: 1.0,
        }
    }
}

impl DwaConfig {
    pub fn validate(&self) {
        assert!(self.accel_v > 0.0 && self.accel_w > 0.0);
        assert!(self.v_samples >= 3 && self.w_samples >= 3);
        assert!(self.horizon_s > 0.0 && self.rollout_dt > 0.0 && self.control_dt > 0.0);
        assert!(self.heading_weight > 0.0 && self.clearance_weight > 0.0 && self.velocity_weight > 0.0);
        assert!(self.lookahead_m > 0.0 && self.w_max > 0.0);
    }
}

/// Mode-dependent forward speed cap.
pub fn mode_cap(mode: RobotMode) -> f64 {
    match mode {
        RobotMode::Normal => 1.0,
        RobotMode::Slow => 0.5,
        RobotMode::Stop => 0.0,
    }
}

/// First waypoint at arc length >= `d` past the robot's closest point on
/// the trajectory; the final waypoint if the remainder is shorter.
pub fn lookahead_waypoint(target: &Trajectory, robot: &RobotState, d: f64) -> LocalPoint {
    assert!(d > 0.0);
    let wps = &target.waypoints;
    assert!(!wps.is_empty(), "target trajectory is empty");
    if wps.len() == 1 {
        return wps[0];
    }
    let pos = robot.position();

    // closest point over all segments: (segment index, param, distance)
    let mut best = (0usize, 0.0f64, f64::INFINITY);
    for (i, pair) in wps.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let ex = b.east - a.east;
        let ny = b.north - a.north;
        let len2 = ex * ex + ny * ny;
        let t = if len2 > 0.0 {
            (((pos.east - a.east) * ex + (pos.north - a.north) * ny) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let p = LocalPoint::new(a.east + t * ex, a.north + t * ny);
        let dist = p.distance(&pos);
        if dist < best.2 {
            best = (i, t, dist);
        }
    }

    // walk arc length d forward from the closest point
    let (seg, t, _) = best;
    let mut remaining = d;
    let mut cur = {
        let (a, b) = (wps[seg], wps[seg + 1]);
        LocalPoint::new(
            a.east + t * (b.east - a.east),
            a.north + t * (b.north - a.north),
        )
    };
    let mut i = seg;
    loop {
        let next = wps[i + 1];
        let step = cur.distance(&next);
        if step >= remaining && step > 0.0 {
            let f = remaining / step;
            return LocalPoint::new(
                cur.east + f * (next.east - cur.east),
                cur.north + f * (next.north - cur.north),
            );
        }
        remaining -= step;
        cur = next;
        i += 1;
        if i + 1 >= wps.len() {
            return *wps.last().unwrap();
        }
    }
}

fn rollout_pose(robot: &RobotState, v: f64, w: f64, t: f64) -> (f64, f64, f64) {
    let th = robot.heading;
    if w.abs() > 1e-6 {
        (
            robot.x + v / w * ((th + w * t).sin() - th.sin()),
            robot.y - v / w * ((th + w * t).cos() - th.cos()),
            th + w * t,
        )
    } else {
        (robot.x + v * t * th.cos(), robot.y + v * t * th.sin(), th)
    }
}

/// Pick a (v, w) command inside the dynamic window maximizing a weighted
/// sum of heading alignment, rollout clearance, and forward speed. Stop
/// mode short-circuits to (0, 0). If every forward rollout collides, the
/// planner brakes and rotates in place toward the lookahead bearing.
pub fn dwa_plan(
    robot: &RobotState,
    target: &Trajectory,
    scan: &RangeScan,
    mode: RobotMode,
    cfg: &DwaConfig,
) -> (f64, f64) {
    cfg.validate();
    if mode == RobotMode::Stop {
        return (0.0, 0.0);
    }
    let cap = mode_cap(mode);
    let goal = lookahead_waypoint(target, robot, cfg.lookahead_m);

    // world-frame obstacle points from the robot-frame scan
    let (sh, ch) = robot.heading.sin_cos();
    let obstacles: Vec<LocalPoint> = scan
        .obstacle_points()
        .iter()
        .map(|p| LocalPoint::new(
            robot.x + ch * p.east - sh * p.north,
            robot.y + sh * p.east + ch * p.north,
        ))
        .collect();

    let v_hi = (robot.v + cfg.accel_v * cfg.control_dt).min(cap);
    // clamping to v_hi keeps the window inside the mode cap even when a
    // mode downgrade leaves the current speed above it
    let v_lo = (robot.v - cfg.accel_v * cfg.control_dt).max(0.0).min(v_hi);
    let w_lo = (robot.w - cfg.accel_w * cfg.control_dt).max(-cfg.w_max);
    let w_hi = (robot.w + cfg.accel_w * cfg.control_dt).min(cfg.w_max);

    let steps = (cfg.horizon_s / cfg.rollout_dt).round() as usize;
    let clear_norm = 3.0f64; // clearance saturates in the objective at 3 m

    let mut best: Option<(f64, f64, f64)> = None; // (score, v, w)
    for vi in 0..cfg.v_samples {
        let v = if cfg.v_samples == 1 {
            v_lo
        } else {
            v_lo + (v_hi - v_lo) * vi as f64 / (cfg.v_samples - 1) as f64
        };
        for wi in 0..cfg.w_samples {
            let w = if cfg.w_samples == 1 {
                w_lo
            } else {
                w_lo + (w_hi - w_lo) * wi as f64 / (cfg.w_samples - 1) as f64
            };

            let mut min_clear = f64::INFINITY;
            let mut collided = false;
            let mut end = (robot.x, robot.y, robot.heading);
            for k in 1..=steps {
                let t = k as f64 * cfg.rollout_dt;
                let (x, y, th) = rollout_pose(robot, v, w, t);
                end = (x, y, th);
                let here = LocalPoint::new(x, y);
                for o in &obstacles {
                    let d = o.distance(&here) - ROBOT_RADIUS;
                    if d < min_clear {
                        min_clear = d;
                    }
                }
                if min_clear <= 0.0 {
                    collided = true;
                    break;
                }
            }
            if collided {
                continue;
            }
            let clearance = if obstacles.is_empty() {
                1.0
            } else {
                (min_clear / clear_norm).clamp(0.0, 1.0)
            };
            let bearing = (goal.north - end.1).atan2(goal.east - end.0);
            let heading = 1.0 - normalize_angle(bearing - end.2).abs() / std::f64::consts::PI;
            let speed = if cap > 0.0 { v / cap } else { 0.0 };
            let score = cfg.heading_weight * heading
                + cfg.clearance_weight * clearance
                + cfg.velocity_weight * speed;
            // strictly-greater keeps the lowest-index sample on ties
            if best.map_or(true, |(s, _, _)| score > s) {
                best = Some((score, v, w));
            }
        }
    }

    match best {
        Some((_, v, w)) => (v, w),
        None => {
            // recovery: maximum braking plus in-place rotation toward the goal
            let v = v_lo;
            let bearing = (goal.north - robot.y).atan2(goal.east - robot.x);
            let err = normalize_angle(bearing - robot.heading);
            let mag = (cfg.accel_w * cfg.control_dt).min(cfg.w_max).max(1e-3);
            let w = if err >= 0.0 { mag } else { -mag };
            (v, w.clamp(w_lo.min(w), w_hi.max(w)))
        }
    }
}
