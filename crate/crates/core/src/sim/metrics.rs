//! Success and retrieval-precision metrics against world ground truth.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::vocab::LabelGroup;

use super::agent::{AgentConfig, AgentState};
use super::render::Scene;
use super::world::{closest_on_polygon, distance_to_box, distance_to_polygon, point_in_polygon};

/// Height of the point targeted when checking line of sight into a room.
const ROOM_SIGHT_HEIGHT: f64 = 0.3;

/// Distance from the agent to the nearest instance of `label`: box centers
/// for objects, region polygons for rooms.
pub fn distance_to_target(scene: &Scene, agent: &AgentState, label: &str) -> Option<f64> {
    let p = [agent.x, agent.y];
    match label_group(scene, label)? {
        LabelGroup::Object => scene
            .world
            .instances(label)
            .map(|b| {
                let c = b.center();
                (c[0] - p[0]).hypot(c[1] - p[1])
            })
            .min_by(f64::total_cmp),
        LabelGroup::Room => scene
            .world
            .regions(label)
            .map(|r| distance_to_polygon(p, &r.polygon))
            .min_by(f64::total_cmp),
        LabelGroup::Reserved => None,
    }
}

pub fn label_group(scene: &Scene, label: &str) -> Option<LabelGroup> {
    scene.vocab.id(label).map(|id| scene.vocab.group(id))
}

/// Whether the agent stands within `radius` of an instance of `label` that
/// it can see from eye height after turning in place.
pub fn check_success(scene: &Scene, agent: &AgentState, cfg: &AgentConfig, label: &str, radius: f64) -> bool {
    let eye = agent.eye(cfg).to_array();
    let p = [agent.x, agent.y];
    match label_group(scene, label) {
        Some(LabelGroup::Object) => scene
            .world
            .boxes
            .iter()
            .enumerate()
            .filter(|(_, b)| b.label.eq_ignore_ascii_case(label))
            .any(|(i, b)| {
                let c = b.center();
                if (c[0] - p[0]).hypot(c[1] - p[1]) > radius {
                    return false;
                }
                box_samples(b.min, b.max)
                    .iter()
                    .any(|s| scene.segment_clear(eye, *s, Some(scene.first_box + i)))
            }),
        Some(LabelGroup::Room) => scene.world.regions(label).any(|r| {
            if point_in_polygon(p, &r.polygon) {
                return true;
            }
            let (q, d) = closest_on_polygon(p, &r.polygon);
            if d > radius {
                return false;
            }
            // Aim slightly past the boundary, into the room.
            let (dx, dy) = ((q[0] - p[0]) / d, (q[1] - p[1]) / d);
            let target = [q[0] + 0.05 * dx, q[1] + 0.05 * dy, ROOM_SIGHT_HEIGHT];
            scene.segment_clear(eye, target, None)
        }),
        _ => false,
    }
}

fn box_samples(min: [f64; 3], max: [f64; 3]) -> Vec<[f64; 3]> {
    let c = [
        0.5 * (min[0] + max[0]),
        0.5 * (min[1] + max[1]),
        0.5 * (min[2] + max[2]),
    ];
    let mut out = vec![c, [c[0], c[1], max[2] - 0.01]];
    for &sx in &[-1.0, 1.0] {
        for &sy in &[-1.0, 1.0] {
            for &sz in &[-1.0, 1.0] {
                out.push([
                    c[0] + sx * 0.4 * (max[0] - min[0]),
                    c[1] + sy * 0.4 * (max[1] - min[1]),
                    c[2] + sz * 0.4 * (max[2] - min[2]),
                ]);
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub label: String,
    pub group: LabelGroup,
    pub position: [f32; 3],
    pub score: f64,
    /// Distance from the top-1 point to the nearest instance.
    pub distance: f64,
    pub hit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEval {
    pub rows: Vec<RetrievalRow>,
    pub precision_at_1: f64,
    pub object_precision_at_1: Option<f64>,
    pub room_precision_at_1: Option<f64>,
}

/// Distance from a map point to the nearest instance of `label`: 3D
/// point-to-box for objects, 2D point-to-region for rooms.
pub fn instance_distance(scene: &Scene, label: &str, p: [f64; 3]) -> Option<f64> {
    match label_group(scene, label)? {
        LabelGroup::Object => scene
            .world
            .instances(label)
            .map(|b| distance_to_box(p, b.min, b.max))
            .min_by(f64::total_cmp),
        LabelGroup::Room => scene
            .world
            .regions(label)
            .map(|r| distance_to_polygon([p[0], p[1]], &r.polygon))
            .min_by(f64::total_cmp),
        LabelGroup::Reserved => None,
    }
}

/// Precision@1 over every vocabulary label with at least one instance in
/// the scene: the top-1 map point is a hit when it lies within `radius` of
/// an instance.
pub fn evaluate_retrieval(
    scene: &Scene,
    map: &FeatureMap,
    provider: &dyn EmbeddingProvider,
    radius: f64,
) -> Result<RetrievalEval> {
    if map.is_empty() {
        return Err(Error::Input("cannot evaluate retrieval on an empty map".into()));
    }
    let mut rows = Vec::new();
    for label in scene.vocab.labels() {
        if label.group == LabelGroup::Reserved {
            continue;
        }
        let has = match label.group {
            LabelGroup::Object => scene.world.instances(&label.name).next().is_some(),
            _ => scene.world.regions(&label.name).next().is_some(),
        };
        if !has {
            continue;
        }
        let q = provider.embed_text(&label.name)?;
        let top = map.top_k(&q, 1)?;
        let hit = top[0];
        let p = [
            hit.position[0] as f64,
            hit.position[1] as f64,
            hit.position[2] as f64,
        ];
        let distance = instance_distance(scene, &label.name, p).unwrap_or(f64::INFINITY);
        rows.push(RetrievalRow {
            label: label.name.clone(),
            group: label.group,
            position: hit.position,
            score: hit.score,
            distance,
            hit: distance <= radius,
        });
    }
    let rate = |g: Option<LabelGroup>| {
        let sel: Vec<&RetrievalRow> = rows.iter().filter(|r| g.is_none_or(|g| r.group == g)).collect();
        (!sel.is_empty()).then(|| sel.iter().filter(|r| r.hit).count() as f64 / sel.len() as f64)
    };
    Ok(RetrievalEval {
        precision_at_1: rate(None).unwrap_or(0.0),
        object_precision_at_1: rate(Some(LabelGroup::Object)),
        room_precision_at_1: rate(Some(LabelGroup::Room)),
        rows,
    })
}
