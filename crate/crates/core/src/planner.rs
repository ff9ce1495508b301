//! Multi-goal A* on an 8-connected occupancy grid.
//!
//! Straight steps cost one cell, diagonal steps `sqrt(2)` cells, and a
//! diagonal step is allowed only when both adjacent side cells are free. The
//! heuristic is the straight-line distance to the nearest goal (or to the
//! goals' bounding box when there are many goals), which is admissible and
//! consistent, so the first goal popped lies on a shortest path.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obstacle::GridSpec;

/// Read-only view of a blocked mask over a grid.
#[derive(Clone, Copy, Debug)]
pub struct Occupancy<'a> {
    pub spec: &'a GridSpec,
    pub blocked: &'a [bool],
}

impl<'a> Occupancy<'a> {
    pub fn new(spec: &'a GridSpec, blocked: &'a [bool]) -> Result<Self> {
        if blocked.len() != spec.len() {
            return Err(Error::Config(format!(
                "blocked mask has {} cells but the grid has {}",
                blocked.len(),
                spec.len()
            )));
        }
        Ok(Self { spec, blocked })
    }

    #[inline]
    pub fn free(&self, x: i64, y: i64) -> bool {
        self.spec.contains((x, y)) && !self.blocked[self.spec.index(x as u32, y as u32)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Blocked goals move to the nearest free cell within this distance, or
    /// are dropped.
    pub goal_snap_radius: f64,
    /// A blocked start moves to the nearest free cell within this distance.
    pub start_snap_radius: f64,
    /// Above this many goals the heuristic uses the goals' bounding box.
    pub exact_heuristic_goals: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            goal_snap_radius: 2.0,
            start_snap_radius: 0.5,
            exact_heuristic_goals: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    /// Cells from start to goal, inclusive.
    pub cells: Vec<(u32, u32)>,
    /// Cell centers of `cells`, world meters.
    pub waypoints: Vec<[f64; 2]>,
    /// Path length in meters.
    pub cost: f64,
    /// Reached goal cell.
    pub goal: (u32, u32),
    /// Index of the reached goal in the caller's goal list (first one that
    /// maps to the reached cell).
    pub goal_index: usize,
    pub expanded: usize,
}

const NEIGHBORS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

#[derive(Clone, Copy, Debug)]
struct Node {
    f: f64,
    h: f64,
    order: u64,
    index: u32,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Reversed for a min-heap on (f, h, insertion order).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(other.h.total_cmp(&self.h))
            .then(other.order.cmp(&self.order))
    }
}

enum Heuristic {
    Points(Vec<[f64; 2]>),
    Box([f64; 2], [f64; 2]),
}

impl Heuristic {
    fn new(goals: &[(u32, u32)], limit: usize) -> Self {
        let pts: Vec<[f64; 2]> = goals.iter().map(|&(x, y)| [x as f64, y as f64]).collect();
        if pts.len() <= limit {
            return Heuristic::Points(pts);
        }
        let mut lo = pts[0];
        let mut hi = pts[0];
        for p in &pts {
            lo = [lo[0].min(p[0]), lo[1].min(p[1])];
            hi = [hi[0].max(p[0]), hi[1].max(p[1])];
        }
        Heuristic::Box(lo, hi)
    }

    /// Distance in cells.
    fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Heuristic::Points(pts) => pts
                .iter()
                .map(|p| ((p[0] - x).powi(2) + (p[1] - y).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min),
            Heuristic::Box(lo, hi) => {
                let dx = (lo[0] - x).max(0.0).max(x - hi[0]);
                let dy = (lo[1] - y).max(0.0).max(y - hi[1]);
                (dx * dx + dy * dy).sqrt()
            }
        }
    }
}

/// A* from `start` to the nearest of `goals` on cell coordinates. Blocked
/// goals are ignored; a blocked start yields `None`.
pub fn plan_cells(
    occ: &Occupancy<'_>,
    start: (u32, u32),
    goals: &[(u32, u32)],
    exact_heuristic_goals: usize,
) -> Option<Plan> {
    let spec = occ.spec;
    if !occ.free(start.0 as i64, start.1 as i64) {
        return None;
    }
    let mut goal_cells: Vec<(u32, u32)> = goals
        .iter()
        .copied()
        .filter(|&(x, y)| occ.free(x as i64, y as i64))
        .collect();
    goal_cells.sort_unstable();
    goal_cells.dedup();
    if goal_cells.is_empty() {
        return None;
    }
    let n = spec.len();
    let mut is_goal = vec![false; n];
    for &(x, y) in &goal_cells {
        is_goal[spec.index(x, y)] = true;
    }
    let heuristic = Heuristic::new(&goal_cells, exact_heuristic_goals);
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![u32::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let w = spec.width as usize;
    let si = spec.index(start.0, start.1);
    g[si] = 0.0;
    let h0 = heuristic.eval(start.0 as f64, start.1 as f64);
    let mut order = 0u64;
    heap.push(Node {
        f: h0,
        h: h0,
        order,
        index: si as u32,
    });
    let mut expanded = 0usize;
    while let Some(node) = heap.pop() {
        let i = node.index as usize;
        if closed[i] {
            continue;
        }
        closed[i] = true;
        expanded += 1;
        if is_goal[i] {
            let mut cells = Vec::new();
            let mut c = i;
            loop {
                cells.push(((c % w) as u32, (c / w) as u32));
                if parent[c] == u32::MAX {
                    break;
                }
                c = parent[c] as usize;
            }
            cells.reverse();
            let goal = *cells.last().expect("non-empty");
            let goal_index = goals.iter().position(|&gc| gc == goal).unwrap_or(0);
            let waypoints = cells
                .iter()
                .map(|&(x, y)| spec.center(x as i64, y as i64))
                .collect();
            return Some(Plan {
                cells,
                waypoints,
                cost: g[i] * spec.cell,
                goal,
                goal_index,
                expanded,
            });
        }
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for &(dx, dy) in &NEIGHBORS {
            let (nx, ny) = (x + dx, y + dy);
            if !occ.free(nx, ny) {
                continue;
            }
            let diagonal = dx != 0 && dy != 0;
            if diagonal && !(occ.free(x + dx, y) && occ.free(x, y + dy)) {
                continue;
            }
            let j = spec.index(nx as u32, ny as u32);
            if closed[j] {
                continue;
            }
            let step = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 };
            let cand = g[i] + step;
            if cand < g[j] {
                g[j] = cand;
                parent[j] = i as u32;
                let h = heuristic.eval(nx as f64, ny as f64);
                order += 1;
                heap.push(Node {
                    f: cand + h,
                    h,
                    order,
                    index: j as u32,
                });
            }
        }
    }
    None
}

/// Free cells reachable from `start` under the same move rules as the
/// planner, row-major.
pub fn reachable(occ: &Occupancy<'_>, start: (u32, u32)) -> Vec<bool> {
    let spec = occ.spec;
    let mut seen = vec![false; spec.len()];
    if !occ.free(start.0 as i64, start.1 as i64) {
        return seen;
    }
    let w = spec.width as usize;
    let mut stack = vec![spec.index(start.0, start.1)];
    seen[stack[0]] = true;
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for &(dx, dy) in &NEIGHBORS {
            let (nx, ny) = (x + dx, y + dy);
            if !occ.free(nx, ny) {
                continue;
            }
            if dx != 0 && dy != 0 && !(occ.free(x + dx, y) && occ.free(x, y + dy)) {
                continue;
            }
            let j = spec.index(nx as u32, ny as u32);
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// Nearest free cell to `c` within `radius` cells (Euclidean), preferring
/// lower `(dy, dx)` offsets on ties.
pub fn nearest_free(occ: &Occupancy<'_>, c: (i64, i64), radius: f64) -> Option<(u32, u32)> {
    if occ.free(c.0, c.1) {
        return Some((c.0 as u32, c.1 as u32));
    }
    let r = radius.floor() as i64;
    let mut best: Option<((i64, i64), i64)> = None;
    // Rings in increasing Chebyshev distance; once the ring distance exceeds
    // the best Euclidean distance found, nothing closer remains.
    for ring in 1..=r {
        if let Some((_, d2)) = best {
            if ring * ring > d2 {
                break;
            }
        }
        for dy in -ring..=ring {
            for dx in -ring..=ring {
                if dx.abs() != ring && dy.abs() != ring {
                    continue;
                }
                let d2 = dx * dx + dy * dy;
                if (d2 as f64) > radius * radius {
                    continue;
                }
                if best.is_some_and(|(_, b)| d2 >= b) {
                    continue;
                }
                if occ.free(c.0 + dx, c.1 + dy) {
                    best = Some(((c.0 + dx, c.1 + dy), d2));
                }
            }
        }
    }
    best.map(|((x, y), _)| (x as u32, y as u32))
}

/// Outcome of [`plan_world`] with the goal bookkeeping the navigator needs.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldPlan {
    pub plan: Plan,
    /// World goal index whose snapped cell was reached.
    pub goal_index: usize,
}

/// Plans from a world position to the nearest of several world goals.
///
/// Goals outside the grid are clamped to its border, blocked goals are
/// snapped to the nearest free cell within the snap radius (or dropped), and
/// a blocked start is snapped within the start radius. Returns `Ok(None)`
/// when no goal is reachable.
pub fn plan_world(
    occ: &Occupancy<'_>,
    start: [f64; 2],
    goals: &[[f64; 2]],
    cfg: &PlannerConfig,
) -> Result<Option<WorldPlan>> {
    if goals.is_empty() {
        return Err(Error::Input("no goals to plan to".into()));
    }
    let spec = occ.spec;
    let sc = spec.clamp(spec.cell_of(start[0], start[1]));
    let Some(s) = nearest_free(occ, (sc.0 as i64, sc.1 as i64), cfg.start_snap_radius / spec.cell)
    else {
        return Ok(None);
    };
    let snap = cfg.goal_snap_radius / spec.cell;
    // (snapped cell, first world goal index)
    let mut raw: Vec<((u32, u32), usize)> = Vec::with_capacity(goals.len());
    let mut seen_raw = std::collections::HashSet::new();
    for (k, g) in goals.iter().enumerate() {
        let c = spec.clamp(spec.cell_of(g[0], g[1]));
        if seen_raw.insert(c) {
            raw.push((c, k));
        }
    }
    let mut snapped: Vec<(u32, u32)> = Vec::with_capacity(raw.len());
    let mut owner: Vec<usize> = Vec::with_capacity(raw.len());
    for (c, k) in raw {
        if let Some(f) = nearest_free(occ, (c.0 as i64, c.1 as i64), snap) {
            snapped.push(f);
            owner.push(k);
        }
    }
    if snapped.is_empty() {
        return Ok(None);
    }
    let Some(plan) = plan_cells(occ, s, &snapped, cfg.exact_heuristic_goals) else {
        return Ok(None);
    };
    let goal_index = owner[plan.goal_index];
    Ok(Some(WorldPlan { plan, goal_index }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(w: u32, h: u32) -> (GridSpec, Vec<bool>) {
        (GridSpec::new([0.0, 0.0], 1.0, w, h).unwrap(), vec![false; (w * h) as usize])
    }

    #[test]
    fn straight_and_diagonal_costs() {
        let (spec, blocked) = open(10, 10);
        let occ = Occupancy::new(&spec, &blocked).unwrap();
        let p = plan_cells(&occ, (0, 0), &[(5, 0)], 256).unwrap();
        assert!((p.cost - 5.0).abs() < 1e-12);
        let p = plan_cells(&occ, (0, 0), &[(3, 3)], 256).unwrap();
        assert!((p.cost - 3.0 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(p.cells.len(), 4);
    }

    #[test]
    fn no_corner_cutting() {
        let (spec, mut blocked) = open(3, 3);
        blocked[spec.index(1, 0)] = true;
        let occ = Occupancy::new(&spec, &blocked).unwrap();
        let p = plan_cells(&occ, (0, 0), &[(1, 1)], 256).unwrap();
        // diagonal (0,0)->(1,1) would cut the corner of (1,0)
        assert_eq!(p.cells, vec![(0, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn picks_nearest_goal_and_reports_unreachable() {
        let (spec, mut blocked) = open(10, 3);
        for y in 0..3 {
            blocked[spec.index(5, y)] = true;
        }
        let occ = Occupancy::new(&spec, &blocked).unwrap();
        let p = plan_cells(&occ, (0, 1), &[(9, 1), (3, 1)], 256).unwrap();
        assert_eq!(p.goal, (3, 1));
        assert_eq!(p.goal_index, 1);
        assert!(plan_cells(&occ, (0, 1), &[(9, 1)], 256).is_none());
        let seen = reachable(&occ, (0, 1));
        assert!(seen[spec.index(4, 2)] && !seen[spec.index(6, 0)]);
    }

    #[test]
    fn world_goals_snap_clamp_and_drop() {
        let spec = GridSpec::new([0.0, 0.0], 0.5, 20, 20).unwrap();
        let mut blocked = vec![false; spec.len()];
        for y in 8..12 {
            for x in 8..12 {
                blocked[spec.index(x, y)] = true;
            }
        }
        let occ = Occupancy::new(&spec, &blocked).unwrap();
        let cfg = PlannerConfig::default();
        // goal inside the blocked square snaps to its border
        let wp = plan_world(&occ, [0.2, 0.2], &[[5.0, 5.0]], &cfg).unwrap().unwrap();
        let g = wp.plan.goal;
        assert!(!blocked[spec.index(g.0, g.1)]);
        // goal far outside the grid is clamped to the border
        let wp = plan_world(&occ, [0.2, 0.2], &[[50.0, 0.2]], &cfg).unwrap().unwrap();
        assert_eq!(wp.plan.goal, (19, 0));
        // a goal with no free cell within the snap radius is dropped
        let tight = PlannerConfig {
            goal_snap_radius: 0.4,
            ..cfg
        };
        assert!(plan_world(&occ, [0.2, 0.2], &[[5.0, 5.0]], &tight).unwrap().is_none());
        assert!(plan_world(&occ, [0.2, 0.2], &[], &cfg).is_err());
    }

    #[test]
    fn bbox_heuristic_still_optimal() {
        let (spec, blocked) = open(30, 30);
        let occ = Occupancy::new(&spec, &blocked).unwrap();
        let goals = [(29, 29), (20, 5), (10, 25)];
        let exact = plan_cells(&occ, (0, 0), &goals, 256).unwrap();
        let boxed = plan_cells(&occ, (0, 0), &goals, 1).unwrap();
        assert!((exact.cost - boxed.cost).abs() < 1e-9);
    }
}
