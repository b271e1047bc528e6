//! Episode runner, metrics, configuration and logging: composes routing,
//! candidate generation, scoring, ranking and DWA planning into one control
//! loop over the simulator, and evaluates the result.

use std::collections::BinaryHeap;
use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::georoute::{
    self, advance_subgoal, geo_to_local, goal_distance_score, LocalPoint, RoutePlan,
};
use crate::planner::{dwa_plan, DwaConfig};
use crate::ranker::{
    self, build_prompt, number_right_to_left, render_overlay, CameraModel, GoalDirection,
    PromptSpec, RankResponse, RankerBackend, RobotMode, SceneFacts, TrajectoryFacts,
};
use crate::scoring::{
    aggregate_frames, rasterize_trajectory, ranking_score, select_trajectory,
    semantic_traversability, ScoreWeights, ScoredCandidate, TraversableSet,
};
use crate::sim::{
    self, sense_range, sense_semantics, Label, SemanticGrid, SignKind, WorldState,
};
use crate::trajgen::{ArcSampler, CandidateSet, Pose, Trajectory, TrajectoryGenerator, VelocityHistory};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("path has no waypoints")]
    EmptyPath,
    #[error("trajectory length must be positive")]
    ZeroLength,
    #[error("ablation comparison needs at least 2 settings, got {0}")]
    TooFewAblations(usize),
    #[error(transparent)]
    Route(#[from] georoute::RouteError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    TrajGen(#[from] crate::trajgen::TrajGenError),
    #[error(transparent)]
    Scoring(#[from] crate::scoring::ScoringError),
    #[error("io error: {0}")]
    Io(String),
    #[error("log parse error at line {line}: {msg}")]
    LogParse { line: usize, msg: String },
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RoutingConfig {
    pub spacing_m: f64,
    pub threshold_m: f64,
    pub gps_noise_sigma_m: f64,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            spacing_m: 50.0,
            threshold_m: 10.0,
            gps_noise_sigma_m: 0.0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub scan_beams: usize,
    pub scan_max_range: f64,
    /// Scan history length kept for the generator.
    pub history: usize,
    pub semantic_window_m: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.1,
            scan_beams: 72,
            scan_max_range: 50.0,
            history: 3,
            semantic_window_m: 30.0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrajgenConfig {
    pub n: usize,
    pub kappa_max: f64,
    pub d_safe_m: f64,
    pub waypoints: usize,
}

impl Default for TrajgenConfig {
    fn default() -> Self {
        TrajgenConfig {
            n: 6,
            kappa_max: 0.5,
            d_safe_m: 2.0,
            waypoints: 20,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
    pub window: usize,
    pub gamma: f64,
    /// Comma-separated allowed categories, e.g. `road,sidewalk`.
    pub traversable: String,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        let w = ScoreWeights::default();
        ScoringConfig {
            beta1: w.beta1,
            beta2: w.beta2,
            beta3: w.beta3,
            beta4: w.beta4,
            window: 3,
            gamma: 0.8,
            traversable: "road,sidewalk".to_string(),
        }
    }
}

impl ScoringConfig {
    pub fn weights(&self) -> ScoreWeights {
        ScoreWeights::new(self.beta1, self.beta2, self.beta3, self.beta4)
    }

    pub fn traversable_set(&self) -> Result<TraversableSet, HarnessError> {
        TraversableSet::parse(&self.traversable).ok_or_else(|| {
            HarnessError::Config(format!("bad traversable categories `{}`", self.traversable))
        })
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RankerConfig {
    /// `heuristic` or `external`.
    pub backend: String,
    /// Invoke the ranker every k control cycles; the last response is
    /// reused in between.
    pub every_k: usize,
    pub timeout_s: f64,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            backend: "heuristic".to_string(),
            every_k: 5,
            timeout_s: 3.0,
        }
    }
}

/// Full episode configuration, loadable from a TOML key-value file.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub scenario: PathBuf,
    pub route: PathBuf,
    pub seed: u64,
    pub max_steps: usize,
    pub routing: RoutingConfig,
    pub sim: SimConfig,
    pub trajgen: TrajgenConfig,
    pub scoring: ScoringConfig,
    pub ranker: RankerConfig,
    pub dwa: DwaConfig,
}

impl EpisodeConfig {
    pub fn load(path: &Path) -> Result<EpisodeConfig, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: EpisodeConfig =
            toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if cfg.max_steps == 0 {
            cfg.max_steps = 2000;
        }
        // relative paths resolve against the config file location
        if let Some(dir) = path.parent() {
            if cfg.scenario.is_relative() {
                cfg.scenario = dir.join(&cfg.scenario);
            }
            if cfg.route.is_relative() {
                cfg.route = dir.join(&cfg.route);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !self.scenario.exists() {
            return Err(HarnessError::Config(format!(
                "scenario file not found: {}",
                self.scenario.display()
            )));
        }
        if !self.route.exists() {
            return Err(HarnessError::Config(format!(
                "route file not found: {}",
                self.route.display()
            )));
        }
        if self.max_steps == 0 {
            return Err(HarnessError::Config("max_steps must be positive".into()));
        }
        self.scoring.traversable_set()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Logging and metrics types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    GoalReached,
    Collision,
    Timeout,
}

impl TerminalStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            TerminalStatus::GoalReached => 0,
            TerminalStatus::Timeout => 2,
            TerminalStatus::Collision => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub subgoal_index: usize,
    pub subgoal_east: f64,
    pub subgoal_north: f64,
    pub subgoal_distance_m: f64,
    pub scores: Vec<ScoredCandidate>,
    pub selected: usize,
    pub mode: RobotMode,
    pub cmd_v: f64,
    pub cmd_w: f64,
    pub on_traversable: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TerminalRecord {
    pub status: TerminalStatus,
    pub d_opt_m: f64,
    pub final_goal_distance_m: f64,
    pub path_length_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub records: Vec<StepRecord>,
    pub terminal: TerminalRecord,
}

impl EpisodeLog {
    /// One JSON object per line; the last line is the terminal record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.terminal).expect("terminal serializes"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<EpisodeLog, HarnessError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.is_empty() {
            return Err(HarnessError::LogParse {
                line: 0,
                msg: "empty log".into(),
            });
        }
        let mut records = Vec::new();
        for (i, line) in lines[..lines.len() - 1].iter().enumerate() {
            records.push(serde_json::from_str(line).map_err(|e| HarnessError::LogParse {
                line: i + 1,
                msg: e.to_string(),
            })?);
        }
        let terminal = serde_json::from_str(lines[lines.len() - 1]).map_err(|e| {
            HarnessError::LogParse {
                line: lines.len(),
                msg: e.to_string(),
            }
        })?;
        Ok(EpisodeLog { records, terminal })
    }

    pub fn path(&self) -> Vec<LocalPoint> {
        self.records
            .iter()
            .map(|r| LocalPoint::new(r.x, r.y))
            .collect()
    }
}

/// Mean wall-clock seconds spent per pipeline stage.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct StageLatencies {
    pub sense_s: f64,
    pub trajgen_s: f64,
    pub scoring_s: f64,
    pub ranker_s: f64,
    pub planner_s: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub traversability_pct: f64,
    pub distance_to_target_pct: f64,
    pub latency: StageLatencies,
    pub path_length_m: f64,
    pub status: TerminalStatus,
}

// ---------------------------------------------------------------------------
// Metric formulas
// ---------------------------------------------------------------------------

/// Percentage of path waypoints whose containing cell has an allowed label.
pub fn traversability_metric(
    path: &[LocalPoint],
    grid: &SemanticGrid,
    allowed: &TraversableSet,
) -> Result<f64, HarnessError> {
    if path.is_empty() {
        return Err(HarnessError::EmptyPath);
    }
    let good = path
        .iter()
        .filter(|p| allowed.contains(grid.label_at(**p)))
        .count();
    Ok(100.0 * good as f64 / path.len() as f64)
}

/// 1 - (d_traj - d_opt) / traj_len, clamped to [0, 1] for reporting.
pub fn distance_to_target_metric(
    d_traj: f64,
    d_opt: f64,
    traj_len: f64,
) -> Result<f64, HarnessError> {
    if traj_len <= 0.0 {
        return Err(HarnessError::ZeroLength);
    }
    assert!(d_traj >= 0.0 && d_opt >= 0.0);
    Ok((1.0 - (d_traj - d_opt) / traj_len).clamp(0.0, 1.0))
}

pub fn path_length(path: &[LocalPoint]) -> f64 {
    path.windows(2).map(|p| p[0].distance(&p[1])).sum()
}

/// Authoring helper: uniform-cost search over allowed cells from the robot
/// start toward the goal point. Returns the residual distance from the
/// closest reachable cell to the goal (the ground-truth optimal trajectory's
/// distance to target).
pub fn compute_d_opt(
    grid: &SemanticGrid,
    start: LocalPoint,
    goal: LocalPoint,
    allowed: &TraversableSet,
) -> f64 {
    #[derive(PartialEq)]
    struct Node(f64, usize, usize);
    impl Eq for Node {}
    impl Ord for Node {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            other.0.partial_cmp(&self.0).unwrap()
        }
    }
    impl PartialOrd for Node {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }

    let Some((sc, sr)) = grid.cell_of(start) else {
        return start.distance(&goal);
    };
    let mut dist = vec![f64::INFINITY; grid.width * grid.height];
    let mut heap = BinaryHeap::new();
    dist[grid.idx(sc, sr)] = 0.0;
    heap.push(Node(0.0, sc, sr));
    let cell_center = |c: usize, r: usize| {
        LocalPoint::new(
            grid.origin.east + (c as f64 + 0.5) * grid.resolution,
            grid.origin.north + (r as f64 + 0.5) * grid.resolution,
        )
    };
    let mut best = start.distance(&goal);
    while let Some(Node(d, c, r)) = heap.pop() {
        if d > dist[grid.idx(c, r)] {
            continue;
        }
        let residual = cell_center(c, r).distance(&goal);
        if residual < best {
            best = residual;
        }
        for dc in -1i64..=1 {
            for dr in -1i64..=1 {
                if dc == 0 && dr == 0 {
                    continue;
                }
                let (nc, nr) = (c as i64 + dc, r as i64 + dr);
                if nc < 0 || nr < 0 || nc as usize >= grid.width || nr as usize >= grid.height {
                    continue;
                }
                let (nc, nr) = (nc as usize, nr as usize);
                if !allowed.contains(grid.label_at_cell(nc, nr)) {
                    continue;
                }
                let step = grid.resolution * ((dc * dc + dr * dr) as f64).sqrt();
                let nd = d + step;
                if nd < dist[grid.idx(nc, nr)] {
                    dist[grid.idx(nc, nr)] = nd;
                    heap.push(Node(nd, nc, nr));
                }
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Scene facts
// ---------------------------------------------------------------------------

/// Derive ranker inputs from the world and the current-frame candidates
/// (world-frame trajectories).
pub fn scene_facts(
    world: &WorldState,
    world_trajs: &[Trajectory],
    subgoal: LocalPoint,
    allowed: &TraversableSet,
) -> SceneFacts {
    let robot = world.robot.position();
    let per_trajectory = world_trajs
        .iter()
        .map(|traj| {
            let ped_within_2m_of_path = world.pedestrians.iter().any(|ped| {
                traj.waypoints
                    .iter()
                    .any(|wp| wp.distance(&ped.position) < 2.0)
            });
            let cells = rasterize_trajectory(traj, &world.grid);
            let total = cells.len().max(1);
            let on_allowed = cells
                .iter()
                .filter(|c| {
                    c.in_bounds
                        && allowed.contains(world.grid.label_at_cell(c.col as usize, c.row as usize))
                })
                .count();
            let road_cells: Vec<_> = cells
                .iter()
                .filter(|c| {
                    c.in_bounds
                        && world.grid.label_at_cell(c.col as usize, c.row as usize) == Label::Road
                })
                .collect();
            let crosswalked = road_cells
                .iter()
                .filter(|c| world.grid.crosswalk[world.grid.idx(c.col as usize, c.row as usize)])
                .count();
            let end = traj.end();
            let bearing_end = (end.north - robot.north).atan2(end.east - robot.east);
            let bearing_goal = (subgoal.north - robot.north).atan2(subgoal.east - robot.east);
            let goal_misalignment =
                sim::normalize_angle(bearing_end - bearing_goal).abs() / std::f64::consts::PI;
            TrajectoryFacts {
                ped_within_2m_of_path,
                off_road_fraction: 1.0 - on_allowed as f64 / total as f64,
                crosses_road: !road_cells.is_empty(),
                on_crosswalk: !road_cells.is_empty() && 2 * crosswalked > road_cells.len(),
                goal_misalignment,
            }
        })
        .collect();

    let min_ped_distance_m = world
        .pedestrians
        .iter()
        .map(|p| p.position.distance(&robot))
        .fold(f64::INFINITY, f64::min);
    let ped_approaching_within_4m = world.pedestrians.iter().any(|p| {
        let d = p.position.distance(&robot);
        let toward = (robot.east - p.position.east) * p.velocity.0
            + (robot.north - p.position.north) * p.velocity.1;
        d < 4.0 && toward > 0.0
    });
    let sign_in_view = world
        .signs
        .iter()
        .filter(|(pos, _)| {
            let rel = Pose::new(world.robot.x, world.robot.y, world.robot.heading).to_frame(*pos);
            rel.east > 0.0 && rel.norm() < 20.0
        })
        .map(|(_, kind)| *kind)
        .next()
        .unwrap_or(SignKind::None);

    SceneFacts {
        per_trajectory,
        min_ped_distance_m,
        ped_approaching_within_4m,
        sign_in_view,
    }
}

// ---------------------------------------------------------------------------
// Episode runner
// ---------------------------------------------------------------------------

fn robot_frame_to_world(traj: &Trajectory, pose: Pose) -> Trajectory {
    Trajectory {
        waypoints: traj.waypoints.iter().map(|p| pose.to_world(*p)).collect(),
        confidence: traj.confidence,
    }
}

fn make_backend(cfg: &RankerConfig) -> Result<RankerBackend, HarnessError> {
    match cfg.backend.as_str() {
        "heuristic" => Ok(RankerBackend::Heuristic),
        "external" => {
            let client = ranker::HttpClient::from_env()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            Ok(RankerBackend::External {
                client: Box::new(client),
                timeout: Duration::from_secs_f64(cfg.timeout_s),
            })
        }
        other => Err(HarnessError::Config(format!("unknown ranker backend `{other}`"))),
    }
}

/// Run one episode from files named in the config.
pub fn run_episode(
    cfg: &EpisodeConfig,
    overlay_dir: Option<&Path>,
) -> Result<(EpisodeLog, MetricsReport), HarnessError> {
    cfg.validate()?;
    let world = sim::load_scenario(&cfg.scenario)?;
    let polyline = georoute::load_route(&cfg.route)?;
    let plan = georoute::resample_route(&polyline, cfg.routing.spacing_m)?;
    let backend = make_backend(&cfg.ranker)?;
    run_episode_parts(world, plan, cfg, &backend, overlay_dir)
}

/// Run one episode on an already-loaded world and route plan. Deterministic
/// given config, seed and the heuristic backend.
pub fn run_episode_parts(
    mut world: WorldState,
    mut plan: RoutePlan,
    cfg: &EpisodeConfig,
    backend: &RankerBackend,
    overlay_dir: Option<&Path>,
) -> Result<(EpisodeLog, MetricsReport), HarnessError> {
    let allowed = cfg.scoring.traversable_set()?;
    let weights = cfg.scoring.weights();
    let generator = ArcSampler {
        kappa_max: cfg.trajgen.kappa_max,
        d_safe_m: cfg.trajgen.d_safe_m,
        waypoints: cfg.trajgen.waypoints,
    };
    let mut dwa_cfg = cfg.dwa;
    dwa_cfg.control_dt = cfg.sim.dt;
    let cam = CameraModel::default();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let gps_noise = if cfg.routing.gps_noise_sigma_m > 0.0 {
        Some(Normal::new(0.0, cfg.routing.gps_noise_sigma_m).unwrap())
    } else {
        None
    };

    let mut scan_history: Vec<crate::sim::RangeScan> = Vec::new();
    let mut cand_history: Vec<CandidateSet> = Vec::new();
    let mut vel = VelocityHistory::new(cfg.sim.history.max(1) * 4);
    let mut last_rank: Option<RankResponse> = None;
    let mut records = Vec::new();
    let mut lat = StageLatencies::default();
    let mut status = TerminalStatus::Timeout;

    let goal_geo = *plan.subgoals.last().unwrap();
    let goal_local = geo_to_local(plan.origin, goal_geo)?;

    for step_i in 0..cfg.max_steps {
        // --- sense ---
        let t0 = Instant::now();
        let scan = sense_range(&world, cfg.sim.scan_beams, cfg.sim.scan_max_range);
        scan_history.push(scan.clone());
        if scan_history.len() > cfg.sim.history.max(1) {
            scan_history.remove(0);
        }
        lat.sense_s += t0.elapsed().as_secs_f64();

        // --- routing ---
        let mut gps = world.robot.position();
        if let Some(noise) = &gps_noise {
            gps.east += noise.sample(&mut rng);
            gps.north += noise.sample(&mut rng);
        }
        plan = advance_subgoal(&plan, gps, cfg.routing.threshold_m)?;
        if plan.goal_reached {
            status = TerminalStatus::GoalReached;
            break;
        }
        let subgoal = plan.active_subgoal_local()?;

        // --- generate candidates ---
        let t0 = Instant::now();
        let pose = Pose::new(world.robot.x, world.robot.y, world.robot.heading);
        let set = generator.generate(&scan_history, &vel, cfg.trajgen.n, pose, world.time)?;
        cand_history.push(set.clone());
        if cand_history.len() > cfg.scoring.window.max(1) {
            cand_history.remove(0);
        }
        let agg = aggregate_frames(&cand_history, pose, cfg.scoring.window, cfg.scoring.gamma)?;
        lat.trajgen_s += t0.elapsed().as_secs_f64();

        // --- ranking (every k cycles; last response reused in between) ---
        let t0 = Instant::now();
        let n = set.trajectories.len();
        let labels = number_right_to_left(&set, &cam)
            .unwrap_or_else(|_| (0..n).collect());
        if step_i % cfg.ranker.every_k.max(1) == 0 {
            let world_trajs: Vec<Trajectory> = set
                .trajectories
                .iter()
                .map(|t| robot_frame_to_world(t, pose))
                .collect();
            let facts = scene_facts(&world, &world_trajs, subgoal, &allowed);
            let goal_rel = pose.to_frame(subgoal);
            let spec = PromptSpec {
                n,
                goal_distance_m: (goal_rel.norm().round() as u32).max(1),
                goal_direction: GoalDirection::from_bearing(goal_rel.north.atan2(goal_rel.east)),
            };
            let _prompt = build_prompt(&spec); // logged via overlay dump path
            let resp = backend.rank(&facts, &spec);
            if let Some(dir) = overlay_dir {
                let crop = sense_semantics(&world, cfg.sim.semantic_window_m);
                let img = render_overlay(&crop, pose, &set, &labels, &cam);
                let ppm = dir.join(format!("overlay_{step_i:05}.ppm"));
                let f = fs::File::create(&ppm).map_err(|e| HarnessError::Io(e.to_string()))?;
                img.write_ppm(f).map_err(|e| HarnessError::Io(e.to_string()))?;
                let prompt_path = dir.join(format!("prompt_{step_i:05}.txt"));
                fs::write(prompt_path, &_prompt).map_err(|e| HarnessError::Io(e.to_string()))?;
            }
            last_rank = Some(resp);
        }
        let rank = last_rank.as_ref().expect("ranked on cycle 0");
        let mode = rank.mode;
        // label -> rank position
        let mut position = vec![0usize; n];
        for (p, &label) in rank.ranking.iter().enumerate() {
            if label < n {
                position[label] = p;
            }
        }
        lat.ranker_s += t0.elapsed().as_secs_f64();

        // --- scoring ---
        let t0 = Instant::now();
        let mut scores = Vec::with_capacity(agg.trajectories.len());
        for (i, traj) in agg.trajectories.iter().enumerate() {
            let world_traj = robot_frame_to_world(traj, pose);
            let t = semantic_traversability(&world_traj, &world.grid, &allowed)?;
            // only current-frame candidates (head of the aggregate) carry a
            // fresh ranking; aged copies score r = 0
            let r = if i < n {
                ranking_score(position[labels[i]], n).unwrap_or(0.0)
            } else {
                0.0
            };
            // a subgoal is never farther than spacing + threshold once active
            let g_range = cfg.routing.spacing_m + cfg.routing.threshold_m;
            let g = goal_distance_score(&world_traj, subgoal, g_range)?;
            scores.push(ScoredCandidate::new(i, traj.confidence, t, r, g, &weights));
        }
        let selected = select_trajectory(&agg, &scores, &weights)?;
        let target = robot_frame_to_world(&agg.trajectories[selected], pose);
        lat.scoring_s += t0.elapsed().as_secs_f64();

        // --- plan & step ---
        let t0 = Instant::now();
        let scan_ref = scan_history.last().unwrap();
        let (cmd_v, cmd_w) = dwa_plan(&world.robot, &target, scan_ref, mode, &dwa_cfg);
        lat.planner_s += t0.elapsed().as_secs_f64();

        let pos = world.robot.position();
        records.push(StepRecord {
            step: step_i,
            time: world.time,
            x: pos.east,
            y: pos.north,
            heading: world.robot.heading,
            subgoal_index: plan.active_index,
            subgoal_east: subgoal.east,
            subgoal_north: subgoal.north,
            subgoal_distance_m: pos.distance(&subgoal),
            scores,
            selected,
            mode,
            cmd_v,
            cmd_w,
            on_traversable: allowed.contains(world.grid.label_at(pos)),
        });

        world = sim::step(&world, (cmd_v, cmd_w), cfg.sim.dt)?;
        vel.push(world.time, cmd_v, cmd_w);
        if world.collision {
            status = TerminalStatus::Collision;
            break;
        }
    }

    let path: Vec<LocalPoint> = records
        .iter()
        .map(|r| LocalPoint::new(r.x, r.y))
        .chain(std::iter::once(world.robot.position()))
        .collect();
    let len = path_length(&path).max(1e-9);
    let d_traj = world.robot.position().distance(&goal_local);
    let d_opt = world.d_opt_m.unwrap_or_else(|| {
        compute_d_opt(
            &world.grid,
            path.first().copied().unwrap_or(world.robot.position()),
            goal_local,
            &allowed,
        )
    });

    let steps = records.len().max(1) as f64;
    let rank_calls = (records.len() / cfg.ranker.every_k.max(1)).max(1) as f64;
    let latency = StageLatencies {
        sense_s: lat.sense_s / steps,
        trajgen_s: lat.trajgen_s / steps,
        scoring_s: lat.scoring_s / steps,
        ranker_s: lat.ranker_s / rank_calls,
        planner_s: lat.planner_s / steps,
    };

    let terminal = TerminalRecord {
        status,
        d_opt_m: d_opt,
        final_goal_distance_m: d_traj,
        path_length_m: path_length(&path),
    };
    let report = MetricsReport {
        traversability_pct: traversability_metric(&path, &world.grid, &allowed)?,
        distance_to_target_pct: 100.0 * distance_to_target_metric(d_traj, d_opt.min(d_traj), len)?,
        latency,
        path_length_m: terminal.path_length_m,
        status,
    };
    let log = EpisodeLog { records, terminal };
    Ok((log, report))
}

/// Recompute metrics from a saved episode log (no scenario needed).
pub fn metrics_from_log(log: &EpisodeLog) -> MetricsReport {
    let n = log.records.len().max(1);
    let good = log.records.iter().filter(|r| r.on_traversable).count();
    let t = log.terminal.clone();
    let len = t.path_length_m.max(1e-9);
    MetricsReport {
        traversability_pct: 100.0 * good as f64 / n as f64,
        distance_to_target_pct: 100.0
            * distance_to_target_metric(t.final_goal_distance_m, t.d_opt_m.min(t.final_goal_distance_m), len)
                .unwrap_or(0.0),
        latency: StageLatencies::default(),
        path_length_m: t.path_length_m,
        status: t.status,
    }
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationRow {
    pub name: String,
    pub traversability_pct: f64,
    pub distance_to_target_pct: f64,
    pub path_length_m: f64,
    pub status: TerminalStatus,
}

/// Parse an ablations file: one `name beta1 beta2 beta3 beta4` per line,
/// `#` comments allowed.
pub fn parse_ablations(text: &str) -> Result<Vec<(String, ScoreWeights)>, HarnessError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 {
            return Err(HarnessError::Config(format!(
                "ablations line {}: want `name b1 b2 b3 b4`",
                i + 1
            )));
        }
        let betas: Vec<f64> = parts[1..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| HarnessError::Config(format!("ablations line {}: bad number", i + 1)))
            })
            .collect::<Result<_, _>>()?;
        out.push((
            parts[0].to_string(),
            ScoreWeights::new(betas[0], betas[1], betas[2], betas[3]),
        ));
    }
    Ok(out)
}

/// Run each weight setting on the same scenario, route and seed.
pub fn compare_ablations(
    cfg: &EpisodeConfig,
    ablations: &[(String, ScoreWeights)],
) -> Result<Vec<AblationRow>, HarnessError> {
    if ablations.len() < 2 {
        return Err(HarnessError::TooFewAblations(ablations.len()));
    }
    let mut rows = Vec::new();
    for (name, w) in ablations {
        let mut c = cfg.clone();
        c.scoring.beta1 = w.beta1;
        c.scoring.beta2 = w.beta2;
        c.scoring.beta3 = w.beta3;
        c.scoring.beta4 = w.beta4;
        let (_, report) = run_episode(&c, None)?;
        rows.push(AblationRow {
            name: name.clone(),
            traversability_pct: report.traversability_pct,
            distance_to_target_pct: report.distance_to_target_pct,
            path_length_m: report.path_length_m,
            status: report.status,
        });
    }
    Ok(rows)
}

pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    out.push_str("name                     trav%    dtt%    path_m  status\n");
    for r in rows {
        out.push_str(&format!(
            "{:<24} {:>6.1} {:>7.1} {:>9.1}  {:?}\n",
            r.name, r.traversability_pct, r.distance_to_target_pct, r.path_length_m, r.status
        ));
    }
    out
}

pub fn write_log(log: &EpisodeLog, path: &Path) -> Result<(), HarnessError> {
    let mut f = fs::File::create(path).map_err(|e| HarnessError::Io(e.to_string()))?;
    f.write_all(log.to_jsonl().as_bytes())
        .map_err(|e| HarnessError::Io(e.to_string()))
}

pub fn read_log(path: &Path) -> Result<EpisodeLog, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(e.to_string()))?;
    EpisodeLog::from_jsonl(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn road_grid(side: usize) -> SemanticGrid {
        SemanticGrid::filled(side, side, 1.0, LocalPoint::new(0.0, 0.0), Label::Road)
    }

    #[test]
    fn traversability_metric_extremes() {
        let grid = road_grid(10);
        let path: Vec<LocalPoint> = (0..10).map(|i| LocalPoint::new(i as f64 + 0.5, 0.5)).collect();
        let allowed = TraversableSet::wheeled();
        assert_eq!(traversability_metric(&path, &grid, &allowed).unwrap(), 100.0);

        let mut bad = road_grid(10);
        for c in 0..10 {
            for r in 0..10 {
                bad.set_label(c, r, Label::Building);
            }
        }
        assert_eq!(traversability_metric(&path, &bad, &allowed).unwrap(), 0.0);
        assert!(matches!(
            traversability_metric(&[], &grid, &allowed),
            Err(HarnessError::EmptyPath)
        ));
    }

    #[test]
    fn traversability_metric_partial() {
        let mut grid = road_grid(10);
        // 3 of 10 path cells vegetation, rest sidewalk
        for c in 0..10 {
            grid.set_label(c, 0, if c < 3 { Label::Vegetation } else { Label::Sidewalk });
        }
        let path: Vec<LocalPoint> = (0..10).map(|i| LocalPoint::new(i as f64 + 0.5, 0.5)).collect();
        let pct = traversability_metric(&path, &grid, &TraversableSet::wheeled()).unwrap();
        assert_eq!(pct, 70.0);
    }

    #[test]
    fn distance_metric_formula() {
        assert_eq!(distance_to_target_metric(10.0, 10.0, 20.0).unwrap(), 1.0);
        assert_eq!(distance_to_target_metric(30.0, 10.0, 20.0).unwrap(), 0.0);
        assert!((distance_to_target_metric(12.0, 10.0, 20.0).unwrap() - 0.9).abs() < 1e-12);
        assert!(matches!(
            distance_to_target_metric(1.0, 1.0, 0.0),
            Err(HarnessError::ZeroLength)
        ));
    }

    #[test]
    fn d_opt_open_grid_reaches_goal() {
        let grid = road_grid(20);
        let d = compute_d_opt(
            &grid,
            LocalPoint::new(1.0, 1.0),
            LocalPoint::new(18.5, 18.5),
            &TraversableSet::wheeled(),
        );
        assert!(d < 1.0, "residual {d}");
    }

    #[test]
    fn d_opt_walled_goal_keeps_residual() {
        let mut grid = road_grid(20);
        // wall across the middle
        for c in 0..20 {
            grid.set_label(c, 10, Label::Building);
        }
        let d = compute_d_opt(
            &grid,
            LocalPoint::new(1.0, 1.0),
            LocalPoint::new(10.0, 18.0),
            &TraversableSet::wheeled(),
        );
        assert!(d > 5.0, "residual {d}");
    }

    #[test]
    fn config_defaults_and_toml() {
        let cfg: EpisodeConfig = toml::from_str(
            r#"
scenario = "/dev/null"
route = "/dev/null"
seed = 7
max_steps = 100
routing.spacing_m = 40.0
scoring.beta2 = 0.5
ranker.backend = "heuristic"
dwa.v_samples = 9
"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.routing.spacing_m, 40.0);
        assert_eq!(cfg.routing.threshold_m, 10.0);
        assert_eq!(cfg.scoring.beta2, 0.5);
        assert_eq!(cfg.scoring.beta1, 0.25);
        assert_eq!(cfg.dwa.v_samples, 9);
        assert_eq!(cfg.sim.dt, 0.1);
    }

    #[test]
    fn log_round_trip() {
        let log = EpisodeLog {
            records: vec![StepRecord {
                step: 0,
                time: 0.0,
                x: 1.0,
                y: 2.0,
                heading: 0.1,
                subgoal_index: 0,
                subgoal_east: 10.0,
                subgoal_north: 0.0,
                subgoal_distance_m: 9.2,
                scores: vec![],
                selected: 0,
                mode: RobotMode::Normal,
                cmd_v: 0.5,
                cmd_w: 0.0,
                on_traversable: true,
            }],
            terminal: TerminalRecord {
                status: TerminalStatus::GoalReached,
                d_opt_m: 0.5,
                final_goal_distance_m: 0.8,
                path_length_m: 12.0,
            },
        };
        let text = log.to_jsonl();
        let back = EpisodeLog::from_jsonl(&text).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn ablations_parse_and_count_guard() {
        let abl = parse_ablations("full 0.25 0.35 0.25 0.15\ngeom 0.5 0 0 0.5\n").unwrap();
        assert_eq!(abl.len(), 2);
        assert_eq!(abl[1].0, "geom");
        assert_eq!(abl[1].1.beta2, 0.0);
        assert!(parse_ablations("x 1 2 3").is_err());

        let cfg = EpisodeConfig::default();
        let one = vec![("only".to_string(), ScoreWeights::default())];
        assert!(matches!(
            compare_ablations(&cfg, &one),
            Err(HarnessError::TooFewAblations(1))
        ));
    }

    #[test]
    fn scene_facts_flags() {
        let mut world = WorldState {
            grid: road_grid(40),
            robot: RobotState {
                x: 5.0,
                y: 5.0,
                heading: 0.0,
                v: 0.0,
                w: 0.0,
            },
            pedestrians: vec![],
            signs: vec![],
            time: 0.0,
            collision: false,
            d_opt_m: None,
        };
        use crate::sim::{Pedestrian, RobotState};
        world.pedestrians.push(Pedestrian {
            position: LocalPoint::new(8.0, 5.0),
            velocity: (-0.5, 0.0), // walking toward the robot
            group_id: 0,
        });
        world.signs.push((LocalPoint::new(10.0, 5.0), SignKind::Stop));
        let traj = Trajectory {
            waypoints: vec![LocalPoint::new(6.0, 5.0), LocalPoint::new(9.0, 5.0)],
            confidence: 1.0,
        };
        let facts = scene_facts(
            &world,
            &[traj],
            LocalPoint::new(20.0, 5.0),
            &TraversableSet::wheeled(),
        );
        assert!(facts.per_trajectory[0].ped_within_2m_of_path);
        assert_eq!(facts.per_trajectory[0].off_road_fraction, 0.0);
        assert!(facts.per_trajectory[0].crosses_road);
        assert!(facts.ped_approaching_within_4m);
        assert_eq!(facts.sign_in_view, SignKind::Stop);
        assert!((facts.min_ped_distance_m - 3.0).abs() < 1e-9);
    }
}
