//! Trajectory scoring and selection: Bresenham rasterization onto the
//! semantic grid, the traversable-pixel ratio, ranking scores, weighted-sum
//! selection, and multi-frame candidate aggregation.

use std::collections::HashSet;

use thiserror::Error;

use crate::sim::{Label, SemanticGrid};
use crate::trajgen::{transform_candidates, CandidateSet, Pose, Trajectory};

/// Age decay applied to older frames during aggregation.
pub const DEFAULT_GAMMA: f64 = 0.8;
/// Default aggregation window in frames.
pub const DEFAULT_WINDOW: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("trajectory rasterized to zero cells")]
    EmptyRasterization,
    #[error("rank {p} out of range for {n} candidates")]
    RankOutOfRange { p: usize, n: usize },
    #[error("score table does not cover every candidate exactly once")]
    MissingScore,
    #[error("frame history is empty")]
    EmptyHistory,
}

/// Weights for the four score components (confidence, traversability,
/// ranking, goal distance).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoreWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        // semantic score weighted highest; see config docs
        ScoreWeights {
            beta1: 0.25,
            beta2: 0.35,
            beta3: 0.25,
            beta4: 0.15,
        }
    }
}

impl ScoreWeights {
    pub fn new(beta1: f64, beta2: f64, beta3: f64, beta4: f64) -> Self {
        let w = ScoreWeights {
            beta1,
            beta2,
            beta3,
            beta4,
        };
        assert!(
            w.beta1 >= 0.0 && w.beta2 >= 0.0 && w.beta3 >= 0.0 && w.beta4 >= 0.0,
            "weights must be non-negative"
        );
        assert!(
            w.beta1 + w.beta2 + w.beta3 + w.beta4 > 0.0,
            "weights must not all be zero"
        );
        w
    }
}

/// Per-trajectory component scores and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoredCandidate {
    pub index: usize,
    pub c: f64,
    pub t: f64,
    pub r: f64,
    pub g: f64,
    pub total: f64,
}

impl ScoredCandidate {
    pub fn new(index: usize, c: f64, t: f64, r: f64, g: f64, w: &ScoreWeights) -> Self {
        debug_assert!([c, t, r, g].iter().all(|s| (0.0..=1.0).contains(s)));
        ScoredCandidate {
            index,
            c,
            t,
            r,
            g,
            total: w.beta1 * c + w.beta2 * t + w.beta3 * r + w.beta4 * g,
        }
    }
}

/// Terrain categories a platform may drive on.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversableSet {
    allowed: HashSet<Label>,
}

impl TraversableSet {
    pub fn new(labels: impl IntoIterator<Item = Label>) -> Self {
        let allowed: HashSet<Label> = labels.into_iter().collect();
        assert!(!allowed.is_empty(), "traversable set must be non-empty");
        TraversableSet { allowed }
    }

    /// Wheeled-robot default: road and sidewalk only.
    pub fn wheeled() -> Self {
        TraversableSet::new([Label::Road, Label::Sidewalk])
    }

    pub fn contains(&self, label: Label) -> bool {
        self.allowed.contains(&label)
    }

    pub fn parse(csv: &str) -> Option<Self> {
        let labels: Option<Vec<Label>> = csv.split(',').map(Label::parse_name).collect();
        labels.map(TraversableSet::new)
    }
}

/// Grid cell touched by a rasterized trajectory; off-grid cells are kept
/// and flagged out of bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RasterCell {
    pub col: i64,
    pub row: i64,
    pub in_bounds: bool,
}

/// Classic 8-connected Bresenham between integer cells, inclusive.
pub fn bresenham(mut x0: i64, mut y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut cells = Vec::new();
    loop {
        cells.push((x0, y0));
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
    cells
}

/// Convert the trajectory's waypoint segments into connected grid cells,
/// dropping consecutive duplicates at segment joins.
pub fn rasterize_trajectory(traj: &Trajectory, grid: &SemanticGrid) -> Vec<RasterCell> {
    let cells_of = |p: &crate::georoute::LocalPoint| grid.cell_of_unclamped(*p);
    let mut out: Vec<RasterCell> = Vec::new();
    let mut push = |col: i64, row: i64| {
        let in_bounds =
            col >= 0 && row >= 0 && (col as usize) < grid.width && (row as usize) < grid.height;
        let cell = RasterCell {
            col,
            row,
            in_bounds,
        };
        if out.last() != Some(&cell) {
            out.push(cell);
        }
    };
    match traj.waypoints.len() {
        0 => {}
        1 => {
            let (c, r) = cells_of(&traj.waypoints[0]);
            push(c, r);
        }
        _ => {
            for pair in traj.waypoints.windows(2) {
                let (c0, r0) = cells_of(&pair[0]);
                let (c1, r1) = cells_of(&pair[1]);
                for (c, r) in bresenham(c0, r0, c1, r1) {
                    push(c, r);
                }
            }
        }
    }
    out
}

/// Ratio of rasterized cells with an allowed label; out-of-bounds cells
/// count as non-traversable.
pub fn semantic_traversability(
    traj: &Trajectory,
    grid: &SemanticGrid,
    allowed: &TraversableSet,
) -> Result<f64, ScoringError> {
    let cells = rasterize_trajectory(traj, grid);
    if cells.is_empty() {
        return Err(ScoringError::EmptyRasterization);
    }
    let good = cells
        .iter()
        .filter(|c| c.in_bounds && allowed.contains(grid.label_at_cell(c.col as usize, c.row as usize)))
        .count();
    Ok(good as f64 / cells.len() as f64)
}

/// Ranking score r = (n - p) / n for a 0-indexed rank position.
pub fn ranking_score(p: usize, n: usize) -> Result<f64, ScoringError> {
    if p >= n {
        return Err(ScoringError::RankOutOfRange { p, n });
    }
    Ok((n - p) as f64 / n as f64)
}

/// Weighted-sum argmax with lowest-index tie-breaking. `scores` must cover
/// candidate indices 0..N exactly once, in any order.
pub fn select_trajectory(
    candidates: &CandidateSet,
    scores: &[ScoredCandidate],
    _weights: &ScoreWeights,
) -> Result<usize, ScoringError> {
    let n = candidates.trajectories.len();
    if scores.len() != n {
        return Err(ScoringError::MissingScore);
    }
    let mut seen = vec![false; n];
    for s in scores {
        if s.index >= n || seen[s.index] {
            return Err(ScoringError::MissingScore);
        }
        seen[s.index] = true;
    }
    let mut best = None::<(usize, f64)>;
    let mut ordered: Vec<&ScoredCandidate> = scores.iter().collect();
    ordered.sort_by_key(|s| s.index);
    for s in ordered {
        match best {
            Some((_, t)) if s.total <= t => {}
            _ => best = Some((s.index, s.total)),
        }
    }
    Ok(best.expect("non-empty scores").0)
}

/// Transform the most recent `window` frames into the current robot frame,
/// decay older confidences by `gamma^age`, and concatenate (newest first)
/// with contiguous re-indexing.
pub fn aggregate_frames(
    history: &[CandidateSet],
    current_pose: Pose,
    window: usize,
    gamma: f64,
) -> Result<CandidateSet, ScoringError> {
    assert!(window >= 1, "window must be at least 1");
    assert!((0.0..=1.0).contains(&gamma));
    if history.is_empty() {
        return Err(ScoringError::EmptyHistory);
    }
    let take = window.min(history.len());
    let recent = &history[history.len() - take..];
    let mut trajectories = Vec::new();
    for (age, set) in recent.iter().rev().enumerate() {
        let moved = transform_candidates(set, set.frame_pose, current_pose);
        let decay = gamma.powi(age as i32);
        for t in moved.trajectories {
            trajectories.push(Trajectory {
                confidence: (t.confidence * decay).clamp(0.0, 1.0),
                ..t
            });
        }
    }
    Ok(CandidateSet {
        trajectories,
        frame_pose: current_pose,
        timestamp: recent.last().unwrap().timestamp,
    })
}

/// Number of current-frame (age 0) trajectories at the head of an
/// aggregated set; only these receive fresh ranking scores.
pub fn current_frame_count(history: &[CandidateSet]) -> usize {
    history
        .last()
        .map(|s| s.trajectories.len())
        .unwrap_or(0)
}
