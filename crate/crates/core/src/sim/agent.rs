//! Disc-shaped agent with discrete actions.

use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, Pose};
use crate::navigator::Action;

use super::render::Scene;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    /// Degrees counter-clockwise from +x. Kept in degrees so repeated
    /// turns stay exact.
    pub heading_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub radius: f64,
    pub eye_height: f64,
    pub forward_step: f64,
    pub turn_step_deg: f64,
    /// Solids starting above this height do not collide with the agent.
    pub body_height: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            radius: 0.17,
            eye_height: 0.6,
            forward_step: 0.25,
            turn_step_deg: 15.0,
            body_height: 1.2,
        }
    }
}

impl AgentState {
    pub fn new(x: f64, y: f64, heading_deg: f64) -> Self {
        Self { x, y, heading_deg }
    }

    pub fn heading(&self) -> f64 {
        self.heading_deg.to_radians()
    }

    pub fn eye(&self, cfg: &AgentConfig) -> Point3 {
        Point3::new(self.x, self.y, cfg.eye_height)
    }

    pub fn pose(&self, cfg: &AgentConfig) -> Pose {
        Pose::upright_camera(self.eye(cfg), self.heading())
    }
}

fn wrap_deg(a: f64) -> f64 {
    let r = a % 360.0;
    if r < 0.0 {
        r + 360.0
    } else {
        r
    }
}

/// True when the disc at `(x, y)` overlaps a solid or leaves the extents.
pub fn collides(scene: &Scene, cfg: &AgentConfig, x: f64, y: f64) -> bool {
    let e = &scene.world.extents;
    let r = cfg.radius;
    if x - r < e.min[0] || x + r > e.max[0] || y - r < e.min[1] || y + r > e.max[1] {
        return true;
    }
    scene.solids.iter().any(|s| {
        if s.min[2] > cfg.body_height {
            return false;
        }
        let dx = (s.min[0] - x).max(0.0).max(x - s.max[0]);
        let dy = (s.min[1] - y).max(0.0).max(y - s.max[1]);
        dx * dx + dy * dy < r * r
    })
}

/// Applies one action. A forward move whose swept disc would touch an
/// obstacle leaves the agent where it is.
pub fn step(scene: &Scene, cfg: &AgentConfig, agent: &AgentState, action: Action) -> AgentState {
    match action {
        Action::TurnLeft => AgentState {
            heading_deg: wrap_deg(agent.heading_deg + cfg.turn_step_deg),
            ..*agent
        },
        Action::TurnRight => AgentState {
            heading_deg: wrap_deg(agent.heading_deg - cfg.turn_step_deg),
            ..*agent
        },
        Action::Stop => *agent,
        Action::MoveForward => {
            let (s, c) = agent.heading().sin_cos();
            // Sample the sweep finer than the radius so no wall is skipped.
            let n = ((cfg.forward_step / (cfg.radius * 0.25)).ceil() as usize).max(1);
            for k in 1..=n {
                let d = cfg.forward_step * k as f64 / n as f64;
                if collides(scene, cfg, agent.x + d * c, agent.y + d * s) {
                    return *agent;
                }
            }
            AgentState {
                x: agent.x + cfg.forward_step * c,
                y: agent.y + cfg.forward_step * s,
                ..*agent
            }
        }
    }
}
