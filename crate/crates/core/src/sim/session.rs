//! Closed-loop episode: render, map, decide, act.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::geometry::{Intrinsics, Point3, Pose};
use crate::mapper::{FrameStats, Mapper, MapperConfig, Observation};
use crate::navigator::{path_action, Action, NavConfig, NavState, Navigator, Phase};
use crate::obslog::LogWriter;
use crate::obstacle::{ObstacleConfig, ObstacleGrid};
use crate::planner::{plan_world, Occupancy};
use crate::vocab::LabelGroup;

use super::agent::{step as agent_step, AgentConfig, AgentState};
use super::metrics::{check_success, label_group};
use super::render::Scene;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
    /// Intrinsics at 640x480, scaled to `width x height`.
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            fx: 320.0,
            fy: 320.0,
            cx: 320.0,
            cy: 240.0,
        }
    }
}

impl RenderConfig {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::new(self.fx, self.fy, self.cx, self.cy, 640, 480)?.scaled(self.width, self.height)
    }
}

/// Gaussian noise on the pose handed to the mapper (ground truth drives
/// rendering and motion).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseNoise {
    pub xy_sigma: f64,
    pub heading_sigma_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub render: RenderConfig,
    pub agent: AgentConfig,
    pub nav: NavConfig,
    pub mapper: MapperConfig,
    pub obstacle: ObstacleConfig,
    pub pose_noise: Option<PoseNoise>,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let agent = AgentConfig::default();
        let nav = NavConfig::default();
        Self {
            obstacle: ObstacleConfig {
                inflation_radius: agent.radius + 0.08,
                ..Default::default()
            },
            render: RenderConfig::default(),
            mapper: MapperConfig::default(),
            agent,
            nav,
            pose_noise: None,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgoalOutcome {
    pub query: String,
    pub group: Option<LabelGroup>,
    pub success: bool,
    /// Actions taken for this subgoal, including the final stop.
    pub steps: u32,
    pub path_length: f64,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub world: String,
    pub queries: Vec<String>,
    pub spawn: [f64; 3],
    /// All subgoals reached.
    pub success: bool,
    pub steps: u32,
    pub path_length: f64,
    pub subgoals: Vec<SubgoalOutcome>,
    pub failure: Option<String>,
}

/// What one call to [`Session::step`] did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub action: Action,
    pub phase: Phase,
    pub frame: FrameStats,
    pub retrieval_ms: f64,
    /// Set when this step finished a subgoal.
    pub subgoal: Option<SubgoalOutcome>,
    pub finished: bool,
}

pub struct Session {
    scene: Arc<Scene>,
    cfg: SessionConfig,
    spawn: AgentState,
    agent: AgentState,
    mapper: Mapper,
    grid: ObstacleGrid,
    nav: Navigator,
    intrinsics: Intrinsics,
    frame: u32,
    queue: VecDeque<String>,
    queries: Vec<String>,
    current: Option<String>,
    subgoals: Vec<SubgoalOutcome>,
    subgoal_start: (u32, f64),
    steps: u32,
    path_length: f64,
    trajectory: Vec<[f64; 2]>,
    log: Option<LogWriter>,
    rng: ChaCha8Rng,
    finished: bool,
}

impl Session {
    pub fn new(
        scene: Arc<Scene>,
        provider: Arc<dyn EmbeddingProvider>,
        cfg: SessionConfig,
        spawn: AgentState,
    ) -> Result<Self> {
        let mapper = Mapper::new(provider, cfg.mapper.clone())?;
        Self::with_mapper(scene, mapper, cfg, spawn)
    }

    /// Starts from an existing mapper (and its map).
    pub fn with_mapper(scene: Arc<Scene>, mapper: Mapper, cfg: SessionConfig, spawn: AgentState) -> Result<Self> {
        let intrinsics = cfg.render.intrinsics()?;
        let grid = ObstacleGrid::new(cfg.obstacle.clone(), [spawn.x, spawn.y])?;
        let nav = Navigator::new(cfg.nav.clone())?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        if super::agent::collides(&scene, &cfg.agent, spawn.x, spawn.y) {
            return Err(Error::Config(format!(
                "spawn ({}, {}) collides with the world",
                spawn.x, spawn.y
            )));
        }
        Ok(Self {
            scene,
            spawn,
            agent: spawn,
            mapper,
            grid,
            nav,
            intrinsics,
            frame: 0,
            queue: VecDeque::new(),
            queries: Vec::new(),
            current: None,
            subgoals: Vec::new(),
            subgoal_start: (0, 0.0),
            steps: 0,
            path_length: 0.0,
            trajectory: vec![[spawn.x, spawn.y]],
            log: None,
            rng,
            finished: false,
            cfg,
        })
    }

    /// Records every observed frame into a log directory.
    pub fn record_to(&mut self, writer: LogWriter) {
        self.log = Some(writer);
    }

    pub fn take_log(&mut self) -> Option<LogWriter> {
        self.log.take()
    }

    /// Appends queries to the queue; the first becomes active at the next
    /// step if none is active.
    pub fn push_queries(&mut self, queries: &[String]) -> Result<()> {
        for q in queries {
            if q.trim().is_empty() {
                return Err(Error::Input("empty query".into()));
            }
            self.queue.push_back(q.trim().to_string());
        }
        self.finished = false;
        Ok(())
    }

    /// Replaces the active query immediately (operator override).
    pub fn set_query(&mut self, text: &str) -> Result<()> {
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::Input("empty query".into()));
        }
        let f = self.mapper.provider().embed_text(text)?;
        self.nav.set_query(text, f)?;
        self.nav.reset_steps();
        self.nav.refresh_goals(self.mapper.map(), &self.grid)?;
        self.current = Some(text.to_string());
        self.queries.push(text.to_string());
        self.subgoal_start = (self.steps, self.path_length);
        self.finished = false;
        Ok(())
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn agent(&self) -> &AgentState {
        &self.agent
    }

    pub fn map(&self) -> &FeatureMap {
        self.mapper.map()
    }

    pub fn mapper(&self) -> &Mapper {
        &self.mapper
    }

    pub fn grid(&self) -> &ObstacleGrid {
        &self.grid
    }

    pub fn nav_state(&self) -> &NavState {
        self.nav.state()
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn frames(&self) -> u32 {
        self.frame
    }

    pub fn trajectory(&self) -> &[[f64; 2]] {
        &self.trajectory
    }

    pub fn path_length(&self) -> f64 {
        self.path_length
    }

    pub fn current_query(&self) -> Option<&str> {
        self.current.as_deref()
    }

    /// Queries waiting behind the active one.
    pub fn pending_queries(&self) -> usize {
        self.queue.len()
    }

    pub fn subgoals(&self) -> &[SubgoalOutcome] {
        &self.subgoals
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    fn mapping_pose(&mut self) -> Pose {
        let truth = self.agent.pose(&self.cfg.agent);
        let Some(noise) = &self.cfg.pose_noise else {
            return truth;
        };
        let n = |s: f64, rng: &mut ChaCha8Rng| {
            if s > 0.0 {
                Normal::new(0.0, s).expect("finite sigma").sample(rng)
            } else {
                0.0
            }
        };
        let (xs, hs) = (noise.xy_sigma, noise.heading_sigma_deg);
        let dx = n(xs, &mut self.rng);
        let dy = n(xs, &mut self.rng);
        let dh = n(hs, &mut self.rng);
        Pose::upright_camera(
            Point3::new(self.agent.x + dx, self.agent.y + dy, self.cfg.agent.eye_height),
            (self.agent.heading_deg + dh).to_radians(),
        )
    }

    /// Renders the current view and integrates it into both maps.
    pub fn observe(&mut self) -> Result<FrameStats> {
        let truth = self.agent.pose(&self.cfg.agent);
        let view = self.scene.render(&truth, &self.intrinsics);
        let pose = self.mapping_pose();
        let frame = self.frame;
        self.frame += 1;
        if let Some(log) = &mut self.log {
            log.append(frame, &pose, &self.intrinsics, &view.depth, &view.labels)?;
        }
        let obs = Observation::with_labels(frame, &pose, &self.intrinsics, &view.depth, &view.labels);
        self.mapper.process(&obs, Some(&mut self.grid))
    }

    fn activate_next(&mut self) -> Result<bool> {
        match self.queue.pop_front() {
            Some(q) => {
                self.set_query(&q)?;
                self.queries.pop();
                self.queries.push(q);
                Ok(true)
            }
            None => Ok(false),
        }
    }

    fn finish_subgoal(&mut self, success: bool, failure: Option<String>) -> SubgoalOutcome {
        let query = self.current.take().unwrap_or_default();
        let out = SubgoalOutcome {
            group: label_group(&self.scene, &query),
            query,
            success,
            steps: self.steps - self.subgoal_start.0,
            path_length: self.path_length - self.subgoal_start.1,
            failure,
        };
        self.subgoals.push(out.clone());
        out
    }

    /// One closed-loop step: observe, decide, act.
    pub fn step(&mut self) -> Result<StepReport> {
        if self.finished {
            return Err(Error::Input("episode already finished".into()));
        }
        if self.current.is_none() && !self.activate_next()? {
            self.finished = true;
            return Err(Error::Input("no query to pursue".into()));
        }
        let frame = self.observe()?;
        let pose = self.agent.pose(&self.cfg.agent);
        let decision = self.nav.decide(self.mapper.map(), &self.grid, &pose)?;
        let mut report = StepReport {
            action: decision.action,
            phase: decision.phase,
            frame,
            retrieval_ms: decision.retrieval_ms,
            subgoal: None,
            finished: false,
        };
        match decision.action {
            Action::Stop => {
                // A stop issued only to report failure does not count as an
                // action when the budget is already spent.
                if decision.phase != Phase::Failed || self.nav.state().steps < self.cfg.nav.step_budget {
                    self.steps += 1;
                }
                let (success, failure) = match decision.phase {
                    Phase::Done => {
                        let q = self.current.clone().unwrap_or_default();
                        let ok = check_success(
                            &self.scene,
                            &self.agent,
                            &self.cfg.agent,
                            &q,
                            self.cfg.nav.success_radius,
                        );
                        (ok, (!ok).then(|| "stopped outside the success region".to_string()))
                    }
                    _ => (false, self.nav.state().failure.clone()),
                };
                report.subgoal = Some(self.finish_subgoal(success, failure));
                if !(success && self.activate_next()?) {
                    self.finished = true;
                    report.finished = true;
                }
            }
            action => {
                self.steps += 1;
                let next = agent_step(&self.scene, &self.cfg.agent, &self.agent, action);
                let moved = (next.x - self.agent.x).hypot(next.y - self.agent.y);
                if moved > 0.0 {
                    self.path_length += moved;
                    self.trajectory.push([next.x, next.y]);
                }
                self.agent = next;
            }
        }
        Ok(report)
    }

    /// Runs until every queued query has ended.
    pub fn run(&mut self) -> Result<EpisodeResult> {
        while !self.finished {
            self.step()?;
        }
        Ok(self.result())
    }

    pub fn result(&self) -> EpisodeResult {
        let success = !self.subgoals.is_empty()
            && self.subgoals.iter().all(|s| s.success)
            && self.queue.is_empty();
        EpisodeResult {
            world: self.scene.world.name.clone(),
            queries: self.queries.iter().chain(self.queue.iter()).cloned().collect(),
            spawn: [self.spawn.x, self.spawn.y, self.spawn.heading_deg],
            success,
            steps: self.steps,
            path_length: self.path_length,
            failure: self.subgoals.iter().find_map(|s| s.failure.clone()),
            subgoals: self.subgoals.clone(),
        }
    }

    /// Exploration without a query: visits the distant targets in turn,
    /// moving to the next one when the current target becomes unreachable,
    /// until all are exhausted or `budget` steps are spent. Returns the
    /// number of steps taken.
    pub fn explore(&mut self, targets: &[[f64; 2]], budget: u32) -> Result<u32> {
        let mut idx = 0;
        let mut taken = 0;
        let nav = self.cfg.nav.clone();
        let mut stalled = 0u32;
        while taken < budget && idx < targets.len() {
            self.observe()?;
            let pose = self.agent.pose(&self.cfg.agent);
            let spec = *self.grid.spec();
            let occ = Occupancy::new(&spec, self.grid.blocked())?;
            let here = [self.agent.x, self.agent.y];
            let Some(wp) = plan_world(&occ, here, &[targets[idx]], &nav.planner)? else {
                idx += 1;
                stalled = 0;
                continue;
            };
            if wp.plan.cost <= nav.forward_step {
                idx += 1;
                continue;
            }
            let action = path_action(&self.grid, &pose, &wp.plan.waypoints, &nav);
            let next = agent_step(&self.scene, &self.cfg.agent, &self.agent, action);
            let moved = (next.x - self.agent.x).hypot(next.y - self.agent.y);
            if action == Action::MoveForward && moved == 0.0 {
                stalled += 1;
                if stalled > 8 {
                    idx += 1;
                    stalled = 0;
                }
            } else if moved > 0.0 {
                stalled = 0;
                self.path_length += moved;
                self.trajectory.push([next.x, next.y]);
            }
            self.agent = next;
            self.steps += 1;
            taken += 1;
        }
        Ok(taken)
    }

    /// Turns in place through a full circle, observing every heading.
    pub fn look_around(&mut self) -> Result<()> {
        let n = (360.0 / self.cfg.agent.turn_step_deg).round() as u32;
        for _ in 0..n {
            self.observe()?;
            self.agent = agent_step(&self.scene, &self.cfg.agent, &self.agent, Action::TurnLeft);
            self.steps += 1;
        }
        Ok(())
    }
}

/// Default targets for exploration runs: four far-away corners.
pub const EXPLORE_CORNERS: [[f64; 2]; 4] = [[-50.0, -50.0], [50.0, -50.0], [50.0, 50.0], [-50.0, 50.0]];
