//! GPS routing: polyline resampling into evenly spaced subgoals, local
//! tangent-plane conversion, and subgoal progression.
//!
//! The local frame is an equirectangular tangent plane anchored at a declared
//! origin. Meters per degree of latitude uses a spherical Earth with
//! R = 6,371,000 m, giving `M_PER_DEG_LAT` = 111,194.9 m; longitude scales by
//! cos(origin latitude). Error against true geodesics is far below typical
//! GPS noise (~5 m) at the sub-kilometer ranges handled here.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::trajgen::Trajectory;

/// Meters per degree of latitude on a sphere of radius 6,371,000 m.
pub const M_PER_DEG_LAT: f64 = 111_194.9;

/// Local tangent-plane validity radius for geo/local conversion.
pub const VALIDITY_RADIUS_M: f64 = 100_000.0;

/// Default subgoal spacing along the route polyline.
pub const DEFAULT_SPACING_M: f64 = 50.0;

/// Default subgoal advancement proximity threshold.
pub const DEFAULT_THRESHOLD_M: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("route needs at least 2 points, got {0}")]
    EmptyRoute(usize),
    #[error("route polyline has zero total length")]
    DegenerateRoute,
    #[error("point is {0:.0} m from origin, beyond tangent-plane validity ({VALIDITY_RADIUS_M:.0} m)")]
    OutOfRange(f64),
    #[error("trajectory has no waypoints")]
    EmptyTrajectory,
    #[error("route file line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("failed to read route file: {0}")]
    Io(String),
}

/// WGS84 geographic coordinate in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        debug_assert!((-90.0..=90.0).contains(&lat), "latitude out of range");
        debug_assert!((-180.0..=180.0).contains(&lon), "longitude out of range");
        GeoPoint { lat, lon }
    }
}

/// Metric point in the local tangent plane (or any local metric frame).
///
/// In the world frame `east`/`north` are literal; robot-frame uses of the
/// same type read `east` as forward-x and `north` as left-y.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LocalPoint {
    pub east: f64,
    pub north: f64,
}

impl LocalPoint {
    pub fn new(east: f64, north: f64) -> Self {
        LocalPoint { east, north }
    }

    pub fn distance(&self, other: &LocalPoint) -> f64 {
        (self.east - other.east).hypot(self.north - other.north)
    }

    pub fn norm(&self) -> f64 {
        self.east.hypot(self.north)
    }
}

/// Resampled route: ordered subgoals with a progression cursor.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutePlan {
    pub subgoals: Vec<GeoPoint>,
    pub spacing_m: f64,
    pub active_index: usize,
    /// Tangent-plane origin: the first point of the source polyline.
    pub origin: GeoPoint,
    pub goal_reached: bool,
}

impl RoutePlan {
    pub fn active_subgoal(&self) -> GeoPoint {
        self.subgoals[self.active_index]
    }

    pub fn active_subgoal_local(&self) -> Result<LocalPoint, RouteError> {
        geo_to_local(self.origin, self.active_subgoal())
    }

    pub fn is_last(&self) -> bool {
        self.active_index + 1 == self.subgoals.len()
    }
}

fn meters_per_deg_lon(origin_lat_deg: f64) -> f64 {
    M_PER_DEG_LAT * origin_lat_deg.to_radians().cos()
}

/// Equirectangular projection onto the tangent plane at `origin`.
pub fn geo_to_local(origin: GeoPoint, p: GeoPoint) -> Result<LocalPoint, RouteError> {
    let north = (p.lat - origin.lat) * M_PER_DEG_LAT;
    let east = (p.lon - origin.lon) * meters_per_deg_lon(origin.lat);
    let d = east.hypot(north);
    if d >= VALIDITY_RADIUS_M {
        return Err(RouteError::OutOfRange(d));
    }
    Ok(LocalPoint::new(east, north))
}

/// Exact inverse of [`geo_to_local`] under the same projection.
pub fn local_to_geo(origin: GeoPoint, p: LocalPoint) -> Result<GeoPoint, RouteError> {
    let d = p.norm();
    if d >= VALIDITY_RADIUS_M {
        return Err(RouteError::OutOfRange(d));
    }
    Ok(GeoPoint {
        lat: origin.lat + p.north / M_PER_DEG_LAT,
        lon: origin.lon + p.east / meters_per_deg_lon(origin.lat),
    })
}

/// Walk the polyline by arc length and emit subgoals every `spacing_m`,
/// always including the final point.
pub fn resample_route(polyline: &[GeoPoint], spacing_m: f64) -> Result<RoutePlan, RouteError> {
    if polyline.len() < 2 {
        return Err(RouteError::EmptyRoute(polyline.len()));
    }
    assert!(spacing_m > 0.0, "spacing must be positive");
    let origin = polyline[0];
    let local: Vec<LocalPoint> = polyline
        .iter()
        .map(|p| geo_to_local(origin, *p))
        .collect::<Result<_, _>>()?;

    let mut cumulative = vec![0.0f64];
    for pair in local.windows(2) {
        let d = pair[0].distance(&pair[1]);
        cumulative.push(cumulative.last().unwrap() + d);
    }
    let total = *cumulative.last().unwrap();
    if total <= 0.0 {
        return Err(RouteError::DegenerateRoute);
    }

    let mut subgoals = Vec::new();
    let mut target = 0.0f64;
    let mut seg = 0usize;
    // sample at arc lengths 0, s, 2s, ... strictly before the end
    while target < total - 1e-9 {
        while cumulative[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cumulative[seg + 1] - cumulative[seg];
        let t = if seg_len > 0.0 {
            (target - cumulative[seg]) / seg_len
        } else {
            0.0
        };
        let p = LocalPoint::new(
            local[seg].east + t * (local[seg + 1].east - local[seg].east),
            local[seg].north + t * (local[seg + 1].north - local[seg].north),
        );
        subgoals.push(local_to_geo(origin, p)?);
        target += spacing_m;
    }
    subgoals.push(*polyline.last().unwrap());

    Ok(RoutePlan {
        subgoals,
        spacing_m,
        active_index: 0,
        origin,
        goal_reached: false,
    })
}

/// Advance to the next subgoal when the robot is within `threshold_m` of the
/// active one. Increments by at most one index per call; at the final subgoal
/// it sets `goal_reached` instead.
pub fn advance_subgoal(
    plan: &RoutePlan,
    robot: LocalPoint,
    threshold_m: f64,
) -> Result<RoutePlan, RouteError> {
    assert!(threshold_m > 0.0, "threshold must be positive");
    let mut next = plan.clone();
    let active = plan.active_subgoal_local()?;
    if robot.distance(&active) < threshold_m {
        if plan.is_last() {
            next.goal_reached = true;
        } else {
            next.active_index += 1;
        }
    }
    Ok(next)
}

/// Goal distance score g: 1 at the subgoal, linearly falling to 0 at
/// `range_m` from it, measured at the trajectory's final waypoint.
pub fn goal_distance_score(
    traj: &Trajectory,
    subgoal: LocalPoint,
    range_m: f64,
) -> Result<f64, RouteError> {
    assert!(range_m > 0.0, "range must be positive");
    let end = traj.waypoints.last().ok_or(RouteError::EmptyTrajectory)?;
    let d_end = end.distance(&subgoal);
    Ok(1.0 - d_end.min(range_m) / range_m)
}

/// Parse a route file: one `lat,lon` pair per line, decimal degrees,
/// `#` comments and blank lines allowed.
pub fn parse_route(text: &str) -> Result<Vec<GeoPoint>, RouteError> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let lat: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| RouteError::ParseError {
                line: i + 1,
                msg: format!("expected `lat,lon`, got `{raw}`"),
            })?;
        let lon: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| RouteError::ParseError {
                line: i + 1,
                msg: format!("expected `lat,lon`, got `{raw}`"),
            })?;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(RouteError::ParseError {
                line: i + 1,
                msg: format!("coordinate out of range: {lat},{lon}"),
            });
        }
        points.push(GeoPoint { lat, lon });
    }
    Ok(points)
}

pub fn load_route(path: &Path) -> Result<Vec<GeoPoint>, RouteError> {
    let text = fs::read_to_string(path).map_err(|e| RouteError::Io(e.to_string()))?;
    parse_route(&text)
}
