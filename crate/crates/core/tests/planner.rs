mod support;

use std::time::Instant;

use proptest::prelude::*;
use rand::Rng;

use semmap::obstacle::{bresenham, GridSpec};
use semmap::planner::{plan_cells, plan_world, Occupancy, PlannerConfig};

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn check_path(blocked: &[bool], w: usize, cells: &[(u32, u32)]) -> f64 {
    let mut cost = 0.0;
    for pair in cells.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (dx, dy) = (b.0 as i64 - a.0 as i64, b.1 as i64 - a.1 as i64);
        assert!(dx.abs() <= 1 && dy.abs() <= 1 && (dx, dy) != (0, 0), "not a grid step");
        assert!(!blocked[b.1 as usize * w + b.0 as usize], "path enters a blocked cell");
        if dx != 0 && dy != 0 {
            assert!(!blocked[a.1 as usize * w + b.0 as usize] && !blocked[b.1 as usize * w + a.0 as usize]);
            cost += SQRT2;
        } else {
            cost += 1.0;
        }
    }
    cost
}

/// Multi-goal A* cost equals the multi-source Dijkstra distance.
#[test]
fn astar_matches_multi_source_dijkstra() {
    let mut r = support::rng(3);
    let (w, h) = (50usize, 50usize);
    let spec = GridSpec::new([0.0, 0.0], 1.0, w as u32, h as u32).unwrap();
    let mut times = Vec::new();
    let mut reachable = 0;
    for _ in 0..100 {
        let density = r.random_range(0.1..0.35);
        let mut blocked = support::random_blocked(&mut r, w, h, density);
        let start = (r.random_range(0..w), r.random_range(0..h));
        blocked[start.1 * w + start.0] = false;
        let n = r.random_range(1..=5);
        let goals: Vec<(usize, usize)> = (0..n)
            .map(|_| {
                let g = (r.random_range(0..w), r.random_range(0..h));
                blocked[g.1 * w + g.0] = false;
                g
            })
            .collect();
        let occ = Occupancy::new(&spec, &blocked).unwrap();
        let gcells: Vec<(u32, u32)> = goals.iter().map(|&(x, y)| (x as u32, y as u32)).collect();
        let t = Instant::now();
        let plan = plan_cells(&occ, (start.0 as u32, start.1 as u32), &gcells, 32);
        times.push(t.elapsed().as_secs_f64() * 1e3);
        let oracle = support::multi_source_dijkstra(&blocked, w, h, start, &goals);
        match (plan, oracle) {
            (Some(p), Some(d)) => {
                reachable += 1;
                assert!((p.cost - d).abs() < 1e-9, "A* {} vs Dijkstra {d}", p.cost);
                assert_eq!(p.cells[0], (start.0 as u32, start.1 as u32));
                assert!(gcells.contains(p.cells.last().unwrap()));
                assert!((check_path(&blocked, w, &p.cells) - p.cost).abs() < 1e-9);
            }
            (None, None) => {}
            (p, d) => panic!("reachability differs: plan {:?}, oracle {d:?}", p.map(|p| p.cost)),
        }
    }
    assert!(reachable > 50);
    let med = support::median(&mut times);
    assert!(med < 10.0, "median plan time {med} ms");
}

#[test]
fn bounding_box_heuristic_stays_optimal() {
    let mut r = support::rng(9);
    let (w, h) = (40usize, 40usize);
    let spec = GridSpec::new([0.0, 0.0], 1.0, w as u32, h as u32).unwrap();
    for _ in 0..30 {
        let blocked = support::random_blocked(&mut r, w, h, 0.2);
        let free: Vec<(usize, usize)> = (0..w * h).filter(|&i| !blocked[i]).map(|i| (i % w, i / w)).collect();
        let start = free[r.random_range(0..free.len())];
        let goals: Vec<(usize, usize)> = (0..60).map(|_| free[r.random_range(0..free.len())]).collect();
        let occ = Occupancy::new(&spec, &blocked).unwrap();
        let gcells: Vec<(u32, u32)> = goals.iter().map(|&(x, y)| (x as u32, y as u32)).collect();
        let plan = plan_cells(&occ, (start.0 as u32, start.1 as u32), &gcells, 4);
        let oracle = support::multi_source_dijkstra(&blocked, w, h, start, &goals);
        assert_eq!(plan.is_some(), oracle.is_some());
        if let (Some(p), Some(d)) = (plan, oracle) {
            assert!((p.cost - d).abs() < 1e-9);
        }
    }
}

#[test]
fn world_goals_snap_and_report_owner() {
    let spec = GridSpec::new([0.0, 0.0], 0.5, 20, 20).unwrap();
    let mut blocked = vec![false; spec.len()];
    // a blocked goal cell at (10, 10) snaps to a free neighbor
    blocked[spec.index(10, 10)] = true;
    let occ = Occupancy::new(&spec, &blocked).unwrap();
    let cfg = PlannerConfig::default();
    let wp = plan_world(&occ, [0.25, 0.25], &[[9.0, 9.0], [5.25, 5.25]], &cfg).unwrap().unwrap();
    assert_eq!(wp.goal_index, 1);
    assert!(!blocked[spec.index(wp.plan.goal.0, wp.plan.goal.1)]);
    assert!(plan_world(&occ, [0.25, 0.25], &[], &cfg).is_err());
}

fn has_tie(a: (i64, i64), b: (i64, i64)) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let n = dx.abs().max(dy.abs());
    (0..=n).any(|i| {
        let frac = |d: i64| ((i * d).rem_euclid(n.max(1)) * 2) == n;
        n > 0 && (frac(dx) || frac(dy))
    })
}

proptest! {
    #[test]
    fn bresenham_is_a_connected_line(ax in -40i64..40, ay in -40i64..40, bx in -40i64..40, by in -40i64..40) {
        let mut cells = Vec::new();
        bresenham((ax, ay), (bx, by), |x, y| cells.push((x, y)));
        prop_assert_eq!(cells[0], (ax, ay));
        prop_assert_eq!(*cells.last().unwrap(), (bx, by));
        prop_assert_eq!(cells.len() as i64, (bx - ax).abs().max((by - ay).abs()) + 1);
        for p in cells.windows(2) {
            prop_assert!((p[1].0 - p[0].0).abs() <= 1 && (p[1].1 - p[0].1).abs() <= 1);
        }
        if !has_tie((ax, ay), (bx, by)) {
            prop_assert_eq!(cells, support::dda_cells((ax, ay), (bx, by)));
        }
    }
}
