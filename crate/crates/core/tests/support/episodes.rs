//! Scripted episodes shared by the simulator tests and the acceptance run.
//! Unlike the rest of `support`, these drive the code under test; the
//! reference distances still come from the oracles in the parent module.

use std::collections::VecDeque;
use std::sync::Arc;

use semmap::navigator::Phase;
use semmap::obstacle::ObstacleGrid;
use semmap::sim::metrics::instance_distance;
use semmap::sim::run::RunConfig;
use semmap::sim::{AgentState, Scene, Session, World};
use semmap::vocab::{LabelGroup, LabelVocabulary};

#[derive(Debug, Clone)]
pub struct Leg {
    pub query: String,
    pub success: bool,
    pub path_length: f64,
    /// Grid geodesic from the leg's start to its stop position, meters.
    pub geodesic: f64,
    pub explored: bool,
}

/// Nearest unblocked cell by breadth-first search.
fn snap(blocked: &[bool], w: usize, h: usize, c: (usize, usize)) -> (usize, usize) {
    let mut seen = vec![false; w * h];
    let mut q = VecDeque::from([c]);
    seen[c.1 * w + c.0] = true;
    while let Some((x, y)) = q.pop_front() {
        if !blocked[y * w + x] {
            return (x, y);
        }
        for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && !seen[ny as usize * w + nx as usize] {
                seen[ny as usize * w + nx as usize] = true;
                q.push_back((nx as usize, ny as usize));
            }
        }
    }
    c
}

/// Dijkstra geodesic between two world points on the grid's blocked mask.
pub fn grid_geodesic(grid: &ObstacleGrid, a: [f64; 2], b: [f64; 2]) -> f64 {
    let spec = grid.spec();
    let (w, h) = (spec.width as usize, spec.height as usize);
    let cell = |p: [f64; 2]| {
        let c = spec.clamp(spec.cell_of(p[0], p[1]));
        snap(grid.blocked(), w, h, (c.0 as usize, c.1 as usize))
    };
    let field = super::distance_field(grid.blocked(), w, h, &[cell(b)]);
    let (sx, sy) = cell(a);
    field[sy * w + sx] * spec.cell
}

pub fn standard_session(world: &str, spawn: usize) -> (Session, Arc<Scene>) {
    let cfg = RunConfig::standard();
    let vocab = LabelVocabulary::standard();
    let provider = cfg.provider.build(&vocab).unwrap();
    let scene = Arc::new(Scene::new(World::standard(world).unwrap(), vocab).unwrap());
    let s = scene.world.spawn_points[spawn];
    let session = Session::new(scene.clone(), provider, cfg.session_config().unwrap(), AgentState::new(s[0], s[1], s[2])).unwrap();
    (session, scene)
}

/// Runs the queued queries to the end, one leg per subgoal.
fn run_legs(session: &mut Session) -> Vec<Leg> {
    let mut legs = Vec::new();
    let mut start = [session.agent().x, session.agent().y];
    let mut explored = false;
    while !session.is_finished() {
        let r = session.step().unwrap();
        explored |= r.phase == Phase::Explore;
        if let Some(sub) = r.subgoal {
            let stop = [session.agent().x, session.agent().y];
            legs.push(Leg {
                query: sub.query,
                success: sub.success,
                path_length: sub.path_length,
                geodesic: grid_geodesic(session.grid(), start, stop),
                explored,
            });
            start = stop;
            explored = false;
        }
    }
    legs
}

/// Four-subgoal episode: `first` are found by exploring; the next two are
/// objects whose top-1 map point is already on an instance and above the
/// navigation threshold when the second subgoal ends. Geodesics are
/// recomputed on the final grid.
pub fn memory_episode(world: &str, first: [&str; 2]) -> Vec<Leg> {
    let (mut session, scene) = standard_session(world, 0);
    let objects: Vec<String> = scene
        .world
        .default_queries()
        .into_iter()
        .filter(|q| scene.vocab.id(q).map(|id| scene.vocab.group(id)) == Some(LabelGroup::Object))
        .filter(|q| !first.contains(&q.as_str()))
        .collect();
    session.push_queries(&first.map(String::from)).unwrap();
    let mut legs = run_legs(&mut session);
    assert!(legs.iter().all(|l| l.success), "exploration legs failed: {legs:?}");

    let theta = session.config().nav.initial_theta;
    let provider = session.mapper().provider().clone();
    let mapped: Vec<String> = objects
        .iter()
        .filter(|q| {
            let f = provider.embed_text(q).unwrap();
            let top = session.map().top_k(&f, 1).unwrap();
            top.first().is_some_and(|h| {
                let p = [h.position[0] as f64, h.position[1] as f64, h.position[2] as f64];
                h.score > theta && instance_distance(&scene, q, p).is_some_and(|d| d <= 0.5)
            })
        })
        .take(2)
        .cloned()
        .collect();
    assert_eq!(mapped.len(), 2, "fewer than two objects mapped after two subgoals");
    session.push_queries(&mapped).unwrap();
    let again = run_legs(&mut session);
    legs.extend(again);
    legs
}
