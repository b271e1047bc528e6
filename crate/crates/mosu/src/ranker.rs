//! Trajectory ranking: right-to-left numbering in the camera view, labeled
//! overlay rendering, prompt construction, response parsing with repair, a
//! deterministic heuristic ranker, and a pluggable external backend with
//! mandatory fallback.

use std::io::Write as IoWrite;
use std::time::Duration;

use regex::Regex;
use thiserror::Error;

use crate::georoute::LocalPoint;
use crate::sim::{Label, SemanticGrid, SignKind};
use crate::trajgen::CandidateSet;

/// Default external-backend deadline.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3);
/// A trajectory whose heuristic score falls at or below this is considered
/// blocked; if none scores above it the robot stops.
pub const STOP_SCORE_THRESHOLD: f64 = -1.5;

#[derive(Debug, Error, PartialEq)]
pub enum RankerError {
    #[error("trajectory {0} last waypoint projects behind the camera")]
    UnprojectableTrajectory(usize),
    #[error("response contains neither a mode token nor an integer list")]
    Unparseable,
    #[error("external ranker failed: {0}")]
    External(String),
}

/// Pinhole camera mounted on the robot, looking forward with a downward
/// pitch. Defaults are pinned for golden tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub height_m: f64,
    pub pitch_rad: f64,
    pub focal_px: f64,
    pub width_px: usize,
    pub height_px: usize,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            height_m: 0.8,
            pitch_rad: 0.26,
            focal_px: 500.0,
            width_px: 640,
            height_px: 480,
            cx: 320.0,
            cy: 240.0,
        }
    }
}

/// Result of projecting a ground point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel { u: f64, v: f64 },
    Behind,
}

/// Project a robot-frame ground-plane point (x forward, y left, z = 0)
/// through the camera.
pub fn project_point(cam: &CameraModel, p: LocalPoint) -> Projection {
    let (sp, cp) = cam.pitch_rad.sin_cos();
    // camera at (0, 0, h); basis in (forward, left, up):
    //   optical axis z = (cos p, 0, -sin p), right x = (0, -1, 0),
    //   down y = (-sin p, 0, -cos p)
    let fwd = p.east;
    let left = p.north;
    let up = -cam.height_m;
    let z_c = fwd * cp - up * sp;
    if z_c <= 1e-9 {
        return Projection::Behind;
    }
    let x_c = -left;
    let y_c = -fwd * sp + up * -cp;
    Projection::Pixel {
        u: cam.cx + cam.focal_px * x_c / z_c,
        v: cam.cy + cam.focal_px * y_c / z_c,
    }
}

/// Goal direction sector (60-degree sectors centered on Front).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalDirection {
    Front,
    FrontLeft,
    FrontRight,
    Left,
    Right,
    Back,
}

impl GoalDirection {
    pub fn text(self) -> &'static str {
        match self {
            GoalDirection::Front => "Front",
            GoalDirection::FrontLeft => "Front Left",
            GoalDirection::FrontRight => "Front Right",
            GoalDirection::Left => "Left",
            GoalDirection::Right => "Right",
            GoalDirection::Back => "Back",
        }
    }

    /// Discretize a robot-frame goal bearing (radians, left positive).
    pub fn from_bearing(theta: f64) -> GoalDirection {
        let deg = theta.to_degrees();
        if deg.abs() < 30.0 {
            GoalDirection::Front
        } else if deg.abs() > 150.0 {
            GoalDirection::Back
        } else if deg >= 30.0 && deg <= 90.0 {
            GoalDirection::FrontLeft
        } else if deg > 90.0 {
            GoalDirection::Left
        } else if deg <= -30.0 && deg >= -90.0 {
            GoalDirection::FrontRight
        } else {
            GoalDirection::Right
        }
    }
}

/// Variables substituted into the ranking prompt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptSpec {
    pub n: usize,
    pub goal_distance_m: u32,
    pub goal_direction: GoalDirection,
}

/// Robot velocity mode issued by the ranker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RobotMode {
    Normal,
    Slow,
    Stop,
}

impl RobotMode {
    pub fn text(self) -> &'static str {
        match self {
            RobotMode::Normal => "Normal",
            RobotMode::Slow => "Slow",
            RobotMode::Stop => "Stop",
        }
    }
}

/// Parsed ranker output: mode, a complete permutation of [0, n-1], and the
/// free-text reason.
#[derive(Debug, Clone, PartialEq)]
pub struct RankResponse {
    pub mode: RobotMode,
    pub ranking: Vec<usize>,
    pub reason: String,
}

impl RankResponse {
    /// Canonical serialization matching the requested output format.
    pub fn to_canonical(&self) -> String {
        let nums: Vec<String> = self.ranking.iter().map(|r| r.to_string()).collect();
        format!("{}, [{}], {}", self.mode.text(), nums.join(", "), self.reason)
    }
}

/// Per-trajectory and global scene facts feeding the heuristic ranker.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFacts {
    pub per_trajectory: Vec<TrajectoryFacts>,
    /// Distance from the robot to the nearest pedestrian; infinity if none.
    pub min_ped_distance_m: f64,
    /// Any pedestrian within 4 m whose velocity points toward the robot.
    pub ped_approaching_within_4m: bool,
    pub sign_in_view: SignKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryFacts {
    /// Some pedestrian comes within 2 m of the trajectory path.
    pub ped_within_2m_of_path: bool,
    /// Fraction of the rasterized path off allowed terrain, in [0, 1].
    pub off_road_fraction: f64,
    /// The path enters road cells.
    pub crosses_road: bool,
    /// Most of the path's road cells are crosswalk-marked.
    pub on_crosswalk: bool,
    /// Angular misalignment between path end bearing and the goal bearing,
    /// normalized to [0, 1].
    pub goal_misalignment: f64,
}

// ---------------------------------------------------------------------------
// Numbering and overlay
// ---------------------------------------------------------------------------

/// Assign labels 0..N-1 right to left by last-waypoint pixel column
/// (rightmost = 0); ties broken by lower pixel row (farther first).
/// Returns `labels[i]` = label of trajectory i.
pub fn number_right_to_left(
    candidates: &CandidateSet,
    cam: &CameraModel,
) -> Result<Vec<usize>, RankerError> {
    let mut pixels = Vec::with_capacity(candidates.trajectories.len());
    for (i, t) in candidates.trajectories.iter().enumerate() {
        match project_point(cam, t.end()) {
            Projection::Pixel { u, v } => pixels.push((i, u, v)),
            Projection::Behind => return Err(RankerError::UnprojectableTrajectory(i)),
        }
    }
    let mut order: Vec<usize> = (0..pixels.len()).collect();
    order.sort_by(|&a, &b| {
        pixels[b]
            .1
            .partial_cmp(&pixels[a].1)
            .unwrap()
            .then(pixels[a].2.partial_cmp(&pixels[b].2).unwrap())
            .then(a.cmp(&b))
    });
    let mut labels = vec![0usize; pixels.len()];
    for (label, &slot) in order.iter().enumerate() {
        labels[pixels[slot].0] = label;
    }
    Ok(labels)
}

/// Simple RGB image buffer written as binary PPM (P6).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        ImageBuffer {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn set(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [u8; 3]) {
        for (x, y) in crate::scoring::bresenham(x0, y0, x1, y1) {
            self.set(x, y, rgb);
            self.set(x + 1, y, rgb); // 2 px wide for visibility
        }
    }

    pub fn write_ppm<W: IoWrite>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }
}

fn label_color(label: Label) -> [u8; 3] {
    match label {
        Label::Road => [120, 120, 120],
        Label::Sidewalk => [200, 180, 140],
        Label::Vegetation => [60, 140, 60],
        Label::Building => [90, 60, 50],
        Label::Other => [40, 40, 40],
    }
}

fn trajectory_color(label: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [255, 60, 60],
        [60, 120, 255],
        [255, 200, 40],
        [40, 220, 220],
        [230, 80, 230],
        [120, 255, 80],
        [255, 140, 40],
        [180, 180, 255],
    ];
    PALETTE[label % PALETTE.len()]
}

// 3x5 digit glyph bitmaps, row-major, 1 = lit
const DIGIT_GLYPHS: [[u8; 15]; 10] = [
    [1, 1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 1], // 0
    [0, 1, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 1], // 1
    [1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1], // 2
    [1, 1, 1, 0, 0, 1, 0, 1, 1, 0, 0, 1, 1, 1, 1], // 3
    [1, 0, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 0, 0, 1], // 4
    [1, 1, 1, 1, 0, 0, 1, 1, 1, 0, 0, 1, 1, 1, 1], // 5
    [1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 0, 1, 1, 1, 1], // 6
    [1, 1, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 0, 1, 0], // 7
    [1, 1, 1, 1, 0, 1, 1, 1, 1, 1, 0, 1, 1, 1, 1], // 8
    [1, 1, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1], // 9
];

const GLYPH_SCALE: i64 = 2;

fn draw_label(img: &mut ImageBuffer, center_u: i64, center_v: i64, label: usize, rgb: [u8; 3]) {
    let digits: Vec<usize> = label
        .to_string()
        .bytes()
        .map(|b| (b - b'0') as usize)
        .collect();
    let glyph_w = 3 * GLYPH_SCALE;
    let glyph_h = 5 * GLYPH_SCALE;
    let total_w = digits.len() as i64 * glyph_w + (digits.len() as i64 - 1);
    let mut x = center_u - total_w / 2;
    let top = center_v - glyph_h / 2;
    for d in digits {
        for row in 0..5i64 {
            for col in 0..3i64 {
                if DIGIT_GLYPHS[d][(row * 3 + col) as usize] == 1 {
                    for dy in 0..GLYPH_SCALE {
                        for dx in 0..GLYPH_SCALE {
                            img.set(x + col * GLYPH_SCALE + dx, top + row * GLYPH_SCALE + dy, rgb);
                        }
                    }
                }
            }
        }
        x += glyph_w + 1;
    }
}

/// Render the ground-plane semantic crop in perspective with trajectories
/// drawn as colored polylines and numeric labels at their last waypoints.
/// Deterministic for fixed inputs. Candidates are robot-frame; the crop is
/// world-aligned, so the robot's world pose ties the two together.
pub fn render_overlay(
    crop: &SemanticGrid,
    robot_pose: crate::trajgen::Pose,
    candidates: &CandidateSet,
    labels: &[usize],
    cam: &CameraModel,
) -> ImageBuffer {
    assert_eq!(labels.len(), candidates.trajectories.len());
    let mut img = ImageBuffer::new(cam.width_px, cam.height_px);
    let sky = [150, 190, 230];
    let (sp, cp) = cam.pitch_rad.sin_cos();
    for v in 0..cam.height_px {
        for u in 0..cam.width_px {
            let x_c = (u as f64 - cam.cx) / cam.focal_px;
            let y_c = (v as f64 - cam.cy) / cam.focal_px;
            // ray direction in (fwd, left, up)
            let fwd = cp - y_c * -sp;
            let left = -x_c;
            let up = -sp - y_c * cp;
            let color = if up >= -1e-6 {
                sky
            } else {
                let t = cam.height_m / -up;
                let ground = LocalPoint::new(t * fwd, t * left);
                if ground.norm() > 80.0 {
                    sky
                } else {
                    let world = robot_pose.to_world(ground);
                    let mut c = label_color(crop.label_at(world));
                    if crop.crosswalk_at(world) {
                        c = [230, 230, 230];
                    }
                    c
                }
            };
            img.set(u as i64, v as i64, color);
        }
    }

    for (i, traj) in candidates.trajectories.iter().enumerate() {
        let rgb = trajectory_color(labels[i]);
        let mut prev: Option<(i64, i64)> = None;
        for wp in &traj.waypoints {
            match project_point(cam, *wp) {
                Projection::Pixel { u, v } => {
                    let cur = (u.round() as i64, v.round() as i64);
                    if let Some(p) = prev {
                        img.line(p.0, p.1, cur.0, cur.1, rgb);
                    }
                    prev = Some(cur);
                }
                Projection::Behind => prev = None,
            }
        }
        if let Projection::Pixel { u, v } = project_point(cam, traj.end()) {
            draw_label(
                &mut img,
                u.round() as i64,
                v.round() as i64,
                labels[i],
                [255, 255, 255],
            );
        }
    }
    img
}

// ---------------------------------------------------------------------------
// Prompt
// ---------------------------------------------------------------------------

/// Build the ranking prompt with N, the label range, K and the goal
/// direction substituted. Byte-stable across runs.
pub fn build_prompt(spec: &PromptSpec) -> String {
    assert!(spec.n >= 1 && spec.goal_distance_m > 0);
    let dir = spec.goal_direction.text();
    format!(
        "The {n} trajectories are labeled with numbers [0-{top}] from right to left in sequence. \
The goal is {k} meters at [{dir}]. Rank trajectories for social navigation.\n\
\n\
1. keep away from the groups of pedestrians. The robot has three mode, Normal, Slow, and Stop. \
If the people are approaching, the robot needs to Slow. If people are too close or there is no \
open space, the robots Stops.\n\
\n\
2. follow the traffic rules, and if going across the street, the robot should keep in crosswalks.\n\
\n\
3. recognize the traffic signs and behave accordingly.\n\
\n\
4. avoid off-road terrain for small wheeled robots.\n\
\n\
Given the picture, the target is at {k} meters {dir}. Rank the trajectories by the criteria. \
output the format: [robot mode], [ranked numbers], reason\n",
        n = spec.n,
        top = spec.n - 1,
        k = spec.goal_distance_m,
    )
}

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

/// Parse a ranker response into mode, permutation and reason, repairing
/// duplicate/missing labels. Unknown mode falls back to Slow.
pub fn parse_response(text: &str, n: usize) -> Result<RankResponse, RankerError> {
    let mode_re = Regex::new(r"(?i)\b(normal|slow|stop)\b").unwrap();
    let list_re = Regex::new(r"\[([^\]]*)\]").unwrap();

    let mode_match = mode_re.find(text);
    let mode = match mode_match.map(|m| m.as_str().to_ascii_lowercase()) {
        Some(s) if s == "normal" => Some(RobotMode::Normal),
        Some(s) if s == "slow" => Some(RobotMode::Slow),
        Some(s) if s == "stop" => Some(RobotMode::Stop),
        _ => None,
    };

    // first bracketed group containing at least one integer
    let mut raw_labels: Vec<i64> = Vec::new();
    let mut list_end = None;
    for cap in list_re.captures_iter(text) {
        let inner = cap.get(1).unwrap().as_str();
        let ints: Vec<i64> = inner
            .split(|c: char| !c.is_ascii_digit() && c != '-')
            .filter_map(|s| s.parse::<i64>().ok())
            .collect();
        if !ints.is_empty() {
            raw_labels = ints;
            list_end = Some(cap.get(0).unwrap().end());
            break;
        }
    }

    if mode.is_none() && raw_labels.is_empty() {
        return Err(RankerError::Unparseable);
    }

    // repair: in-range only, first occurrence wins, missing appended ascending
    let mut ranking = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for l in raw_labels {
        if l >= 0 && (l as usize) < n && !seen[l as usize] {
            seen[l as usize] = true;
            ranking.push(l as usize);
        }
    }
    for l in 0..n {
        if !seen[l] {
            ranking.push(l);
        }
    }

    let reason = match list_end {
        Some(end) => text[end..].trim_start_matches([',', ' ']).trim().to_string(),
        None => String::new(),
    };

    Ok(RankResponse {
        mode: mode.unwrap_or(RobotMode::Slow),
        ranking,
        reason,
    })
}

// ---------------------------------------------------------------------------
// Heuristic ranker
// ---------------------------------------------------------------------------

/// Deterministic stand-in ranker enforcing the four prompt rules.
pub fn heuristic_rank(facts: &SceneFacts, spec: &PromptSpec) -> RankResponse {
    assert_eq!(facts.per_trajectory.len(), spec.n, "facts must cover all trajectories");
    let scores: Vec<f64> = facts
        .per_trajectory
        .iter()
        .map(|f| {
            let mut s = 0.0;
            if f.ped_within_2m_of_path {
                s -= 2.0;
            }
            s -= f.off_road_fraction;
            if f.crosses_road && f.on_crosswalk {
                s += 0.5;
            }
            s -= f.goal_misalignment;
            s
        })
        .collect();

    let mut ranking: Vec<usize> = (0..spec.n).collect();
    ranking.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mode = if facts.min_ped_distance_m < 0.5 || best <= STOP_SCORE_THRESHOLD {
        RobotMode::Stop
    } else if facts.ped_approaching_within_4m {
        RobotMode::Slow
    } else {
        RobotMode::Normal
    };

    let reason = match mode {
        RobotMode::Stop => "path blocked or pedestrian too close".to_string(),
        RobotMode::Slow => "pedestrian approaching nearby".to_string(),
        RobotMode::Normal => format!(
            "trajectory {} stays on allowed terrain toward the goal",
            ranking[0]
        ),
    };

    RankResponse {
        mode,
        ranking,
        reason,
    }
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

/// Transport used by the external ranker backend.
pub trait ExternalClient: Send + Sync {
    fn request(&self, prompt: &str, timeout: Duration) -> Result<String, RankerError>;
}

/// HTTP client posting the prompt to an endpoint read from the
/// `MOSU_RANKER_ENDPOINT` env var, with a bearer token from
/// `MOSU_RANKER_TOKEN`. The response body is the raw ranker text.
pub struct HttpClient {
    pub endpoint: String,
    pub token: Option<String>,
}

impl HttpClient {
    pub fn from_env() -> Result<Self, RankerError> {
        let endpoint = std::env::var("MOSU_RANKER_ENDPOINT")
            .map_err(|_| RankerError::External("MOSU_RANKER_ENDPOINT not set".into()))?;
        Ok(HttpClient {
            endpoint,
            token: std::env::var("MOSU_RANKER_TOKEN").ok(),
        })
    }
}

impl ExternalClient for HttpClient {
    fn request(&self, prompt: &str, timeout: Duration) -> Result<String, RankerError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| RankerError::External(e.to_string()))?;
        let mut req = client.post(&self.endpoint).body(prompt.to_string());
        if let Some(tok) = &self.token {
            req = req.bearer_auth(tok);
        }
        let resp = req
            .send()
            .map_err(|e| RankerError::External(e.to_string()))?;
        resp.text().map_err(|e| RankerError::External(e.to_string()))
    }
}

/// Ranker backend selection.
pub enum RankerBackend {
    Heuristic,
    External {
        client: Box<dyn ExternalClient>,
        timeout: Duration,
    },
}

impl RankerBackend {
    /// Obtain a rank response. The external path falls back to the
    /// heuristic on transport failure or an unparseable reply, so the
    /// pipeline always proceeds.
    pub fn rank(&self, facts: &SceneFacts, spec: &PromptSpec) -> RankResponse {
        match self {
            RankerBackend::Heuristic => heuristic_rank(facts, spec),
            RankerBackend::External { client, timeout } => {
                let prompt = build_prompt(spec);
                match client
                    .request(&prompt, *timeout)
                    .and_then(|text| parse_response(&text, spec.n))
                {
                    Ok(resp) => resp,
                    Err(_) => heuristic_rank(facts, spec),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajgen::{Pose, Trajectory};

    fn spec(n: usize) -> PromptSpec {
        PromptSpec {
            n,
            goal_distance_m: 20,
            goal_direction: GoalDirection::FrontLeft,
        }
    }

    fn set_from_ends(ends: &[(f64, f64)]) -> CandidateSet {
        CandidateSet {
            trajectories: ends
                .iter()
                .map(|&(x, y)| Trajectory {
                    waypoints: vec![LocalPoint::new(x / 2.0, y / 2.0), LocalPoint::new(x, y)],
                    confidence: 1.0,
                })
                .collect(),
            frame_pose: Pose::new(0.0, 0.0, 0.0),
            timestamp: 0.0,
        }
    }

    #[test]
    fn project_optical_axis_hits_principal_column() {
        let cam = CameraModel::default();
        let x = cam.height_m / cam.pitch_rad.tan();
        match project_point(&cam, LocalPoint::new(x, 0.0)) {
            Projection::Pixel { u, v } => {
                assert!((u - cam.cx).abs() < 1e-9);
                assert!((v - cam.cy).abs() < 1e-6);
            }
            Projection::Behind => panic!("unexpected Behind"),
        }
    }

    #[test]
    fn project_behind_camera() {
        let cam = CameraModel::default();
        assert_eq!(
            project_point(&cam, LocalPoint::new(-5.0, 0.0)),
            Projection::Behind
        );
    }

    #[test]
    fn project_matches_homogeneous_matrix_oracle() {
        let cam = CameraModel {
            height_m: 1.0,
            pitch_rad: 0.2,
            focal_px: 500.0,
            width_px: 640,
            height_px: 480,
            cx: 320.0,
            cy: 240.0,
        };
        let p = LocalPoint::new(10.0, 0.7);
        // oracle: full 3x4 projection matrix K [R | t] applied to the
        // homogeneous world point, built independently
        let (spch, cpch) = (cam.pitch_rad.sin(), cam.pitch_rad.cos());
        // world (fwd, left, up) -> camera (right, down, fwd) rotation rows
        let r = [
            [0.0, -1.0, 0.0],
            [-spch, 0.0, -cpch],
            [cpch, 0.0, -spch],
        ];
        let cam_center = [0.0, 0.0, cam.height_m];
        let w = [p.east, p.north, 0.0];
        let rel = [
            w[0] - cam_center[0],
            w[1] - cam_center[1],
            w[2] - cam_center[2],
        ];
        let xc: Vec<f64> = r
            .iter()
            .map(|row| row[0] * rel[0] + row[1] * rel[1] + row[2] * rel[2])
            .collect();
        let u_o = cam.cx + cam.focal_px * xc[0] / xc[2];
        let v_o = cam.cy + cam.focal_px * xc[1] / xc[2];
        match project_point(&cam, p) {
            Projection::Pixel { u, v } => {
                assert!((u - u_o).abs() < 0.5, "u {u} vs {u_o}");
                assert!((v - v_o).abs() < 0.5, "v {v} vs {v_o}");
            }
            Projection::Behind => panic!("unexpected Behind"),
        }
    }

    #[test]
    fn numbering_right_to_left() {
        let cam = CameraModel::default();
        // ends at left (+y), center, right (-y): pixel u decreasing with y
        let set = set_from_ends(&[(10.0, -3.0), (10.0, 0.0), (10.0, 3.0)]);
        let labels = number_right_to_left(&set, &cam).unwrap();
        assert_eq!(labels, vec![0, 1, 2]);

        let single = set_from_ends(&[(8.0, 1.0)]);
        assert_eq!(number_right_to_left(&single, &cam).unwrap(), vec![0]);
    }

    #[test]
    fn numbering_is_bijection_and_matches_sort_oracle() {
        let cam = CameraModel::default();
        let ends = [(12.0, -4.0), (11.0, 2.5), (13.0, 0.3), (9.0, -1.2), (10.0, 4.4)];
        let set = set_from_ends(&ends);
        let labels = number_right_to_left(&set, &cam).unwrap();
        let mut seen = vec![false; 5];
        for &l in &labels {
            assert!(!seen[l]);
            seen[l] = true;
        }
        // oracle: sort indices by projected u descending
        let us: Vec<f64> = set
            .trajectories
            .iter()
            .map(|t| match project_point(&cam, t.end()) {
                Projection::Pixel { u, .. } => u,
                Projection::Behind => panic!(),
            })
            .collect();
        let mut order: Vec<usize> = (0..5).collect();
        order.sort_by(|&a, &b| us[b].partial_cmp(&us[a]).unwrap());
        for (rank, &idx) in order.iter().enumerate() {
            assert_eq!(labels[idx], rank);
        }
    }

    #[test]
    fn numbering_mirror_reverses_labels() {
        let cam = CameraModel::default();
        let ends = [(12.0, -4.0), (11.0, 2.5), (13.0, 0.3), (9.0, -1.2)];
        let set = set_from_ends(&ends);
        let mirrored = set_from_ends(
            &ends.iter().map(|&(x, y)| (x, -y)).collect::<Vec<_>>(),
        );
        let a = number_right_to_left(&set, &cam).unwrap();
        let b = number_right_to_left(&mirrored, &cam).unwrap();
        let n = ends.len();
        for i in 0..n {
            assert_eq!(b[i], n - 1 - a[i]);
        }
    }

    #[test]
    fn numbering_behind_errors() {
        let cam = CameraModel::default();
        let set = set_from_ends(&[(10.0, 0.0), (-4.0, 1.0)]);
        assert_eq!(
            number_right_to_left(&set, &cam),
            Err(RankerError::UnprojectableTrajectory(1))
        );
    }

    #[test]
    fn prompt_contains_fixed_sentences_and_substitutions() {
        let p = build_prompt(&spec(5));
        assert!(p.contains("The 5 trajectories are labeled with numbers [0-4]"));
        assert!(p.contains("The goal is 20 meters at [Front Left]."));
        assert!(p.contains("Rank trajectories for social navigation."));
        assert!(p.contains("keep in crosswalks"));
        assert!(p.contains("recognize the traffic signs"));
        assert!(p.contains("avoid off-road terrain for small wheeled robots"));
        assert!(p.contains("the target is at 20 meters Front Left."));
        assert!(p.contains("output the format: [robot mode], [ranked numbers], reason"));
    }

    #[test]
    fn prompt_degenerate_and_locality() {
        let p1 = build_prompt(&PromptSpec {
            n: 1,
            goal_distance_m: 20,
            goal_direction: GoalDirection::Front,
        });
        assert!(p1.contains("[0-0]"));

        let a = build_prompt(&spec(5));
        let b = build_prompt(&PromptSpec {
            goal_distance_m: 35,
            ..spec(5)
        });
        // differs only where K appears
        let diffs: Vec<(usize, (&str, &str))> = a
            .split(' ')
            .zip(b.split(' '))
            .enumerate()
            .filter(|(_, (x, y))| x != y)
            .map(|(i, p)| (i, p))
            .collect();
        assert_eq!(diffs.len(), 2);
        assert!(diffs.iter().all(|(_, (x, y))| *x == "20" && *y == "35"));
    }

    #[test]
    fn prompt_injective_and_stable() {
        use std::collections::HashSet;
        let mut seen = HashSet::new();
        for n in [1usize, 2, 5, 9] {
            for k in [5u32, 20, 100] {
                for dir in [
                    GoalDirection::Front,
                    GoalDirection::FrontLeft,
                    GoalDirection::Right,
                    GoalDirection::Back,
                ] {
                    let s = PromptSpec {
                        n,
                        goal_distance_m: k,
                        goal_direction: dir,
                    };
                    let p = build_prompt(&s);
                    assert_eq!(p, build_prompt(&s));
                    assert!(seen.insert(p), "collision at n={n} k={k}");
                }
            }
        }
    }

    #[test]
    fn parse_canonical_five_way() {
        let r = parse_response("Normal, [3, 0, 1, 2, 4], path 3 avoids the group", 5).unwrap();
        assert_eq!(r.mode, RobotMode::Normal);
        assert_eq!(r.ranking, vec![3, 0, 1, 2, 4]);
        assert_eq!(r.reason, "path 3 avoids the group");
    }

    #[test]
    fn parse_single_and_repair() {
        let r = parse_response("Slow, [0], busy", 1).unwrap();
        assert_eq!(r.ranking, vec![0]);
        assert_eq!(r.mode, RobotMode::Slow);

        let r = parse_response("Normal, [2, 2, 0]", 4).unwrap();
        assert_eq!(r.ranking, vec![2, 0, 1, 3]);
    }

    #[test]
    fn parse_unknown_mode_defaults_slow() {
        let r = parse_response("Hurry, [1, 0]", 2).unwrap();
        assert_eq!(r.mode, RobotMode::Slow);
        assert_eq!(r.ranking, vec![1, 0]);
    }

    #[test]
    fn parse_unparseable() {
        assert_eq!(
            parse_response("the weather is nice", 3),
            Err(RankerError::Unparseable)
        );
    }

    #[test]
    fn parse_round_trips_canonical() {
        let r = RankResponse {
            mode: RobotMode::Normal,
            ranking: vec![3, 0, 1, 2, 4],
            reason: "clear path on the right".to_string(),
        };
        let back = parse_response(&r.to_canonical(), 5).unwrap();
        assert_eq!(back, r);
    }

    fn open_facts(n: usize) -> SceneFacts {
        SceneFacts {
            per_trajectory: (0..n)
                .map(|i| TrajectoryFacts {
                    ped_within_2m_of_path: false,
                    off_road_fraction: 0.0,
                    crosses_road: false,
                    on_crosswalk: false,
                    goal_misalignment: i as f64 / n as f64,
                })
                .collect(),
            min_ped_distance_m: f64::INFINITY,
            ped_approaching_within_4m: false,
            sign_in_view: SignKind::None,
        }
    }

    #[test]
    fn heuristic_normal_ranks_by_alignment() {
        let facts = open_facts(4);
        let r = heuristic_rank(&facts, &spec(4));
        assert_eq!(r.mode, RobotMode::Normal);
        assert_eq!(r.ranking, vec![0, 1, 2, 3]);
    }

    #[test]
    fn heuristic_stops_for_close_pedestrian() {
        let mut facts = open_facts(3);
        facts.min_ped_distance_m = 0.3;
        let r = heuristic_rank(&facts, &spec(3));
        assert_eq!(r.mode, RobotMode::Stop);
    }

    #[test]
    fn heuristic_stops_when_no_open_space() {
        let mut facts = open_facts(2);
        for f in &mut facts.per_trajectory {
            f.ped_within_2m_of_path = true;
            f.off_road_fraction = 1.0;
        }
        let r = heuristic_rank(&facts, &spec(2));
        assert_eq!(r.mode, RobotMode::Stop);
    }

    #[test]
    fn heuristic_slows_for_approaching_pedestrian() {
        let mut facts = open_facts(3);
        facts.ped_approaching_within_4m = true;
        facts.min_ped_distance_m = 3.0;
        let r = heuristic_rank(&facts, &spec(3));
        assert_eq!(r.mode, RobotMode::Slow);
    }

    #[test]
    fn heuristic_tie_prefers_lower_label() {
        let mut facts = open_facts(3);
        for f in &mut facts.per_trajectory {
            f.goal_misalignment = 0.2;
        }
        let r = heuristic_rank(&facts, &spec(3));
        assert_eq!(r.ranking, vec![0, 1, 2]);
    }

    #[test]
    fn crosswalk_bonus_prefers_marked_crossing() {
        let mut facts = open_facts(2);
        facts.per_trajectory[0].crosses_road = true;
        facts.per_trajectory[0].on_crosswalk = false;
        facts.per_trajectory[0].goal_misalignment = 0.0;
        facts.per_trajectory[1].crosses_road = true;
        facts.per_trajectory[1].on_crosswalk = true;
        facts.per_trajectory[1].goal_misalignment = 0.0;
        let r = heuristic_rank(&facts, &spec(2));
        assert_eq!(r.ranking[0], 1);
    }

    struct CannedClient(Option<String>);
    impl ExternalClient for CannedClient {
        fn request(&self, _prompt: &str, _timeout: Duration) -> Result<String, RankerError> {
            self.0
                .clone()
                .ok_or_else(|| RankerError::External("timeout".into()))
        }
    }

    #[test]
    fn external_backend_parses_reply() {
        let backend = RankerBackend::External {
            client: Box::new(CannedClient(Some("Normal, [1, 0, 2], open".into()))),
            timeout: DEFAULT_TIMEOUT,
        };
        let r = backend.rank(&open_facts(3), &spec(3));
        assert_eq!(r.ranking, vec![1, 0, 2]);
        assert_eq!(r.mode, RobotMode::Normal);
    }

    #[test]
    fn external_backend_falls_back_on_timeout_and_garbage() {
        for canned in [None, Some("??!".to_string())] {
            let backend = RankerBackend::External {
                client: Box::new(CannedClient(canned)),
                timeout: DEFAULT_TIMEOUT,
            };
            let r = backend.rank(&open_facts(3), &spec(3));
            let expect = heuristic_rank(&open_facts(3), &spec(3));
            assert_eq!(r, expect);
        }
    }

    #[test]
    fn render_overlay_deterministic_and_label_placement() {
        let cam = CameraModel::default();
        let crop = SemanticGrid::filled(
            41,
            41,
            0.5,
            LocalPoint::new(-10.25, -10.25),
            Label::Road,
        );
        let set = set_from_ends(&[(8.0, -2.0), (8.0, 2.0)]);
        let labels = number_right_to_left(&set, &cam).unwrap();
        let pose = Pose::new(0.0, 0.0, 0.0);
        let a = render_overlay(&crop, pose, &set, &labels, &cam);
        let b = render_overlay(&crop, pose, &set, &labels, &cam);
        assert_eq!(a, b);

        // label glyph lit pixels centered near the projected last waypoint
        for (i, traj) in set.trajectories.iter().enumerate() {
            let (u, v) = match project_point(&cam, traj.end()) {
                Projection::Pixel { u, v } => (u.round() as i64, v.round() as i64),
                Projection::Behind => panic!(),
            };
            let mut lit = Vec::new();
            for dy in -8i64..=8 {
                for dx in -8i64..=8 {
                    let (x, y) = (u + dx, v + dy);
                    if x >= 0 && y >= 0 && (x as usize) < a.width && (y as usize) < a.height
                        && a.get(x as usize, y as usize) == [255, 255, 255]
                    {
                        lit.push((x, y));
                    }
                }
            }
            assert!(!lit.is_empty(), "label {i} glyph not found");
            let cx = lit.iter().map(|p| p.0).sum::<i64>() as f64 / lit.len() as f64;
            let cy = lit.iter().map(|p| p.1).sum::<i64>() as f64 / lit.len() as f64;
            assert!((cx - u as f64).abs() <= 2.0, "glyph center u {cx} vs {u}");
            assert!((cy - v as f64).abs() <= 2.0, "glyph center v {cy} vs {v}");
        }
    }

    #[test]
    fn render_overlay_empty_set_is_plain_scene() {
        let cam = CameraModel::default();
        let crop = SemanticGrid::filled(21, 21, 0.5, LocalPoint::new(-5.25, -5.25), Label::Road);
        let empty = CandidateSet {
            trajectories: vec![],
            frame_pose: Pose::new(0.0, 0.0, 0.0),
            timestamp: 0.0,
        };
        let img = render_overlay(&crop, Pose::new(0.0, 0.0, 0.0), &empty, &[], &cam);
        assert_eq!(img.width, 640);
        assert_eq!(img.height, 480);
        // top row is sky
        assert_eq!(img.get(320, 0), [150, 190, 230]);
    }

    #[test]
    fn ppm_header() {
        let img = ImageBuffer::new(4, 2);
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P6\n4 2\n255\n"));
        assert_eq!(buf.len(), 11 + 4 * 2 * 3);
    }

    #[test]
    fn direction_sectors() {
        use GoalDirection::*;
        assert_eq!(GoalDirection::from_bearing(0.0), Front);
        assert_eq!(GoalDirection::from_bearing(0.4), Front);
        assert_eq!(GoalDirection::from_bearing(1.0), FrontLeft);
        assert_eq!(GoalDirection::from_bearing(-1.0), FrontRight);
        assert_eq!(GoalDirection::from_bearing(2.0), Left);
        assert_eq!(GoalDirection::from_bearing(-2.0), Right);
        assert_eq!(GoalDirection::from_bearing(3.1), Back);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn repaired_ranking_is_valid_permutation(
                text in "[A-Za-z ,\\[\\]0-9]{0,60}",
                n in 1usize..10,
            ) {
                match parse_response(&text, n) {
                    Ok(r) => {
                        prop_assert_eq!(r.ranking.len(), n);
                        let mut seen = vec![false; n];
                        for l in r.ranking {
                            prop_assert!(l < n);
                            prop_assert!(!seen[l]);
                            seen[l] = true;
                        }
                    }
                    Err(RankerError::Unparseable) => {}
                    Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
                }
            }

            #[test]
            fn canonical_round_trip(
                n in 1usize..10,
                seed in 0u64..500,
                mode_pick in 0u8..3,
            ) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let mut ranking: Vec<usize> = (0..n).collect();
                ranking.shuffle(&mut rng);
                let r = RankResponse {
                    mode: match mode_pick { 0 => RobotMode::Normal, 1 => RobotMode::Slow, _ => RobotMode::Stop },
                    ranking,
                    reason: "keep to the path".to_string(),
                };
                prop_assert_eq!(parse_response(&r.to_canonical(), n).unwrap(), r);
            }
        }
    }
}
