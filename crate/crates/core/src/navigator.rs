//! Retrieval-driven object-goal controller.
//!
//! Every step the controller retrieves the map points whose similarity to
//! the query exceeds the current threshold and plans to the nearest one. With
//! no match, or no reachable match, it plans toward a distant pseudo-goal
//! outside the mapped area, which drives the agent into unexplored space.
//! When even that is unreachable the threshold is lowered in fixed steps
//! until some reachable point qualifies.

use serde::{Deserialize, Serialize};

use crate::embedding::FeatureVector;
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::geometry::Pose;
use crate::obstacle::{CellState, ObstacleGrid};
use crate::planner::{nearest_free, plan_world, reachable, Occupancy, PlannerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    MoveForward,
    TurnLeft,
    TurnRight,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    SeekGoal,
    Explore,
    DecaySearch,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavConfig {
    pub initial_theta: f64,
    pub decay_step: f64,
    pub theta_floor: f64,
    /// Pseudo-goal used for exploration, world meters.
    pub distant_goal: [f64; 2],
    pub success_radius: f64,
    pub step_budget: u32,
    pub stop_distance: f64,
    pub forward_step: f64,
    pub turn_step_deg: f64,
    /// Heading error above which the controller turns instead of moving.
    pub heading_tolerance_deg: f64,
    /// Path points closer than this are skipped when picking the next
    /// waypoint.
    pub lookahead: f64,
    /// Body radius used by the forward-motion guard, meters.
    pub robot_radius: f64,
    pub planner: PlannerConfig,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            initial_theta: 0.27,
            decay_step: 0.001,
            theta_floor: -1.0,
            distant_goal: [-50.0, -50.0],
            success_radius: 2.0,
            step_budget: 1000,
            stop_distance: 1.0,
            forward_step: 0.25,
            turn_step_deg: 15.0,
            heading_tolerance_deg: 10.0,
            lookahead: 0.25,
            robot_radius: 0.17,
            planner: PlannerConfig::default(),
        }
    }
}

impl NavConfig {
    /// Defaults for a smaller embedding model, which scores matches higher.
    pub fn small_provider() -> Self {
        Self {
            initial_theta: 0.30,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay_step > 0.0) {
            return Err(Error::Config("decay step must be positive".into()));
        }
        if !(self.theta_floor >= -1.0) {
            return Err(Error::Config("theta floor must be >= -1".into()));
        }
        if !(self.initial_theta >= self.theta_floor && self.initial_theta <= 1.0) {
            return Err(Error::Config("initial theta must lie in [floor, 1]".into()));
        }
        if self.step_budget == 0 {
            return Err(Error::Config("step budget must be positive".into()));
        }
        if !(self.forward_step > 0.0
            && self.turn_step_deg > 0.0
            && self.stop_distance >= 0.0
            && self.robot_radius >= 0.0)
        {
            return Err(Error::Config("motion parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Mutable controller state, also the payload shown to operators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub query: Option<String>,
    pub theta: f64,
    /// Number of decay iterations applied since the query was set.
    pub decay_count: u64,
    /// Retrieved goal positions (one per grid cell), world XY.
    pub goals: Vec<[f64; 2]>,
    /// Current planned path, world XY.
    pub path: Vec<[f64; 2]>,
    pub steps: u32,
    pub phase: Phase,
    /// Thresholds visited by the most recent decay loop, in order.
    pub decay_trace: Vec<f64>,
    pub failure: Option<String>,
}

/// One controller output.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub phase: Phase,
    /// Retrieved goal nearest the agent when stopping.
    pub stop_goal: Option<[f64; 3]>,
    /// Time spent scoring the map against the query, milliseconds.
    pub retrieval_ms: f64,
}

pub struct Navigator {
    config: NavConfig,
    state: NavState,
    feature: Option<FeatureVector>,
}

impl Navigator {
    pub fn new(config: NavConfig) -> Result<Self> {
        config.validate()?;
        let state = NavState {
            query: None,
            theta: config.initial_theta,
            decay_count: 0,
            goals: Vec::new(),
            path: Vec::new(),
            steps: 0,
            phase: Phase::SeekGoal,
            decay_trace: Vec::new(),
            failure: None,
        };
        Ok(Self {
            config,
            state,
            feature: None,
        })
    }

    pub fn config(&self) -> &NavConfig {
        &self.config
    }

    pub fn state(&self) -> &NavState {
        &self.state
    }

    /// Threshold after `k` decay iterations.
    pub fn theta_at(&self, k: u64) -> f64 {
        self.config.initial_theta - k as f64 * self.config.decay_step
    }

    /// Sets a new query. The threshold returns to its initial value; the
    /// step counter is kept so a multi-goal episode shares one budget.
    pub fn set_query(&mut self, text: &str, feature: FeatureVector) -> Result<()> {
        if text.trim().is_empty() {
            return Err(Error::Input("empty query".into()));
        }
        self.state.query = Some(text.trim().to_string());
        self.feature = Some(feature);
        self.state.theta = self.config.initial_theta;
        self.state.decay_count = 0;
        self.state.goals.clear();
        self.state.path.clear();
        self.state.decay_trace.clear();
        self.state.failure = None;
        self.state.phase = Phase::SeekGoal;
        Ok(())
    }

    /// Re-runs retrieval at the current threshold and stores the goal cells
    /// without taking a step. Lets observers see a new query's goals before
    /// the next decision.
    pub fn refresh_goals(&mut self, map: &FeatureMap, grid: &ObstacleGrid) -> Result<()> {
        let Some(feature) = self.feature.as_ref() else {
            return Ok(());
        };
        if map.is_empty() {
            self.state.goals.clear();
            return Ok(());
        }
        let sims = map.similarities(feature)?;
        let goals = self.goals_above(map, &sims, self.state.theta);
        let spec = grid.spec();
        self.state.goals = dedup_cells(&goals, spec.cell, spec.origin);
        Ok(())
    }

    pub fn reset_steps(&mut self) {
        self.state.steps = 0;
    }

    fn fail(&mut self, cause: &str) -> Decision {
        self.state.phase = Phase::Failed;
        self.state.failure = Some(cause.to_string());
        self.state.path.clear();
        Decision {
            action: Action::Stop,
            phase: Phase::Failed,
            stop_goal: None,
            retrieval_ms: 0.0,
        }
    }

    /// One control step: returns the next action for the agent at `pose`.
    pub fn decide(&mut self, map: &FeatureMap, grid: &ObstacleGrid, pose: &Pose) -> Result<Decision> {
        let feature = self
            .feature
            .clone()
            .ok_or_else(|| Error::Input("no query set".into()))?;
        if matches!(self.state.phase, Phase::Done | Phase::Failed) {
            return Ok(Decision {
                action: Action::Stop,
                phase: self.state.phase,
                stop_goal: None,
                retrieval_ms: 0.0,
            });
        }
        if self.state.steps >= self.config.step_budget {
            return Ok(self.fail("step budget exhausted"));
        }
        let timer = std::time::Instant::now();
        let sims = if map.is_empty() {
            Vec::new()
        } else {
            map.similarities(&feature)?
        };
        let retrieval_ms = timer.elapsed().as_secs_f64() * 1e3;
        let t = pose.translation();
        let here = [t.x, t.y];
        let spec = *grid.spec();
        let occ = Occupancy::new(&spec, grid.blocked())?;
        self.state.decay_trace.clear();

        // (1)-(2): retrieve at the current threshold and plan to the goals.
        let mut goals = self.goals_above(map, &sims, self.state.theta);
        let mut plan = if goals.is_empty() {
            None
        } else {
            let xy: Vec<[f64; 2]> = goals.iter().map(|g| [g[0], g[1]]).collect();
            plan_world(&occ, here, &xy, &self.config.planner)?
        };
        let mut phase = Phase::SeekGoal;
        // (3): explore toward the distant goal.
        if plan.is_none() {
            plan = plan_world(&occ, here, &[self.config.distant_goal], &self.config.planner)?;
            phase = Phase::Explore;
        }
        // (4): lower the threshold until a reachable point qualifies.
        if plan.is_none() {
            phase = Phase::DecaySearch;
            match self.decay(map, &sims, &occ, here) {
                Some(k) => {
                    goals = self.goals_above(map, &sims, self.state.theta);
                    let xy: Vec<[f64; 2]> = goals.iter().map(|g| [g[0], g[1]]).collect();
                    plan = plan_world(&occ, here, &xy, &self.config.planner)?;
                    debug_assert!(plan.is_some(), "decay stopped at k={k} without a plan");
                }
                None => {
                    self.state.goals.clear();
                    return Ok(self.fail("threshold fell below the floor"));
                }
            }
        }
        self.state.goals = dedup_cells(&goals, spec.cell, spec.origin);
        let Some(wp) = plan else {
            return Ok(self.fail("no plan after threshold decay"));
        };
        self.state.path = wp.plan.waypoints.clone();

        // (6): stop near a retrieved goal, or on arrival at the path's end.
        if phase != Phase::Explore {
            let nearest = goals
                .iter()
                .map(|g| (((g[0] - here[0]).powi(2) + (g[1] - here[1]).powi(2)).sqrt(), *g))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            // Within one forward step of the path end counts as arrival, since
            // discrete moves rarely land on the goal cell itself.
            let arrived = wp.plan.cost <= self.config.forward_step;
            if let Some((d, g)) = nearest {
                if d <= self.config.stop_distance || arrived {
                    self.state.phase = Phase::Done;
                    self.state.steps += 1;
                    return Ok(Decision {
                        action: Action::Stop,
                        phase: Phase::Done,
                        stop_goal: Some(g),
                        retrieval_ms,
                    });
                }
            }
        }

        // (5): follow the path, never stepping onto an obstacle.
        let action = path_action(grid, pose, &wp.plan.waypoints, &self.config);
        self.state.phase = phase;
        self.state.steps += 1;
        Ok(Decision {
            action,
            phase,
            stop_goal: None,
            retrieval_ms,
        })
    }

    fn goals_above(&self, map: &FeatureMap, sims: &[f32], theta: f64) -> Vec<[f64; 3]> {
        sims.iter()
            .enumerate()
            .filter(|(_, &s)| s as f64 > theta)
            .map(|(i, _)| {
                let p = map.entry(i).expect("in range").position;
                [p[0] as f64, p[1] as f64, p[2] as f64]
            })
            .collect()
    }

    /// Lowers the threshold one step at a time until some entry above it has
    /// a reachable goal cell. Returns the number of iterations, or `None`
    /// when the floor is crossed first.
    fn decay(&mut self, map: &FeatureMap, sims: &[f32], occ: &Occupancy<'_>, here: [f64; 2]) -> Option<u64> {
        let spec = occ.spec;
        let cfg = &self.config.planner;
        let sc = spec.clamp(spec.cell_of(here[0], here[1]));
        let start = nearest_free(occ, (sc.0 as i64, sc.1 as i64), cfg.start_snap_radius / spec.cell);
        let reach = start.map(|s| reachable(occ, s));
        // Best score among entries whose snapped goal cell is reachable.
        let mut best: Option<f64> = None;
        if let Some(reach) = &reach {
            let mut order: Vec<usize> = (0..sims.len()).collect();
            order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
            let snap = cfg.goal_snap_radius / spec.cell;
            for i in order {
                let p = map.entry(i).expect("in range").position;
                let c = spec.clamp(spec.cell_of(p[0] as f64, p[1] as f64));
                if let Some(f) = nearest_free(occ, (c.0 as i64, c.1 as i64), snap) {
                    if reach[spec.index(f.0, f.1)] {
                        best = Some(sims[i] as f64);
                        break;
                    }
                }
            }
        }
        let mut k = self.state.decay_count;
        let mut iterations = 0;
        loop {
            k += 1;
            iterations += 1;
            let theta = self.theta_at(k);
            self.state.decay_trace.push(theta);
            if theta < self.config.theta_floor {
                self.state.decay_count = k;
                self.state.theta = theta;
                return None;
            }
            if best.is_some_and(|s| s > theta) {
                self.state.decay_count = k;
                self.state.theta = theta;
                return Some(iterations);
            }
        }
    }
}

fn dedup_cells(goals: &[[f64; 3]], cell: f64, origin: [f64; 2]) -> Vec<[f64; 2]> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for g in goals {
        let c = (
            ((g[0] - origin[0]) / cell).floor() as i64,
            ((g[1] - origin[1]) / cell).floor() as i64,
        );
        if seen.insert(c) {
            out.push([g[0], g[1]]);
        }
    }
    out
}

fn wrap_deg(mut a: f64) -> f64 {
    a %= 360.0;
    if a > 180.0 {
        a -= 360.0;
    } else if a <= -180.0 {
        a += 360.0;
    }
    a
}

/// Next waypoint: the first path point at least `lookahead` away, or the
/// last point.
fn carrot(pose: &Pose, path: &[[f64; 2]], lookahead: f64) -> Option<[f64; 2]> {
    let t = pose.translation();
    path.iter()
        .find(|p| ((p[0] - t.x).powi(2) + (p[1] - t.y).powi(2)).sqrt() >= lookahead)
        .or(path.last())
        .copied()
}

/// Signed heading error to the waypoint, degrees in `(-180, 180]`.
fn heading_error(pose: &Pose, target: [f64; 2]) -> Option<f64> {
    let t = pose.translation();
    let (dx, dy) = (target[0] - t.x, target[1] - t.y);
    if dx.hypot(dy) < 1e-9 {
        return None;
    }
    let want = dy.atan2(dx).to_degrees();
    Some(wrap_deg(want - pose.heading().to_degrees()))
}

pub fn turn_toward(pose: &Pose, path: &[[f64; 2]], cfg: &NavConfig) -> Option<Action> {
    let target = carrot(pose, path, cfg.lookahead)?;
    let err = heading_error(pose, target)?;
    // 180 degrees counts as a left turn.
    Some(if err >= 0.0 { Action::TurnLeft } else { Action::TurnRight })
}

/// Path-following action: turn toward the next waypoint when the heading
/// error exceeds the tolerance, otherwise move forward. Waypoints within half
/// a cell of the agent are considered reached.
pub fn follow_path(pose: &Pose, path: &[[f64; 2]], cfg: &NavConfig) -> Action {
    let Some(target) = carrot(pose, path, cfg.lookahead) else {
        return Action::Stop;
    };
    let Some(err) = heading_error(pose, target) else {
        return Action::MoveForward;
    };
    if err.abs() > cfg.heading_tolerance_deg {
        if err >= 0.0 {
            Action::TurnLeft
        } else {
            Action::TurnRight
        }
    } else {
        Action::MoveForward
    }
}

/// [`follow_path`] with the forward guard applied: a forward move that
/// would bring the body onto an occupied cell becomes a turn toward the
/// waypoint.
pub fn path_action(grid: &ObstacleGrid, pose: &Pose, path: &[[f64; 2]], cfg: &NavConfig) -> Action {
    let action = follow_path(pose, path, cfg);
    if action == Action::MoveForward && !forward_is_safe(grid, pose, cfg.forward_step, cfg.robot_radius) {
        return turn_toward(pose, path, cfg).unwrap_or(Action::TurnLeft);
    }
    action
}

/// False when a disc of `radius` swept over the next `step` meters would
/// touch an occupied cell.
pub fn forward_is_safe(grid: &ObstacleGrid, pose: &Pose, step: f64, radius: f64) -> bool {
    let t = pose.translation();
    let (s, c) = pose.heading().sin_cos();
    let spec = grid.spec();
    let r = (radius / spec.cell).ceil() as i64;
    let n = ((step / (spec.cell * 0.5)).ceil() as usize).max(1);
    for k in 1..=n {
        let d = step * k as f64 / n as f64;
        let (x, y) = (t.x + d * c, t.y + d * s);
        let (cx, cy) = spec.cell_of(x, y);
        for dy in -r..=r {
            for dx in -r..=r {
                let cell = (cx + dx, cy + dy);
                if !spec.contains(cell) {
                    continue;
                }
                let ctr = spec.center(cell.0, cell.1);
                // Distance from the disc center to the nearest point of the cell.
                let ex = ((ctr[0] - x).abs() - 0.5 * spec.cell).max(0.0);
                let ey = ((ctr[1] - y).abs() - 0.5 * spec.cell).max(0.0);
                if ex * ex + ey * ey < radius * radius
                    && grid.state(cell.0 as u32, cell.1 as u32) == CellState::Occupied
                {
                    return false;
                }
            }
        }
    }
    true
}
