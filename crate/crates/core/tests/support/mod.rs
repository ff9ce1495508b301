//! Independent reference implementations used by the integration tests and
//! the acceptance run. Nothing in this file calls into the code under test
//! except for plain data accessors.
#![allow(dead_code)]

pub mod episodes;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semmap::feature_map::FeatureMap;
use semmap::geometry::Intrinsics;
use semmap::sim::World;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- rays

/// Classic slab test with reciprocal directions. Returns the entry
/// parameter `t > 0`, or the exit parameter when the origin is inside.
pub fn ray_box(o: [f64; 3], d: [f64; 3], min: [f64; 3], max: [f64; 3]) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < min[a] || o[a] > max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let mut t1 = (min[a] - o[a]) * inv;
        let mut t2 = (max[a] - o[a]) * inv;
        if t1 > t2 {
            std::mem::swap(&mut t1, &mut t2);
        }
        t_near = t_near.max(t1);
        t_far = t_far.min(t2);
    }
    if t_near > t_far || t_far <= 0.0 {
        return None;
    }
    Some(if t_near > 0.0 { t_near } else { t_far })
}

/// Expected depth image: for every pixel, the nearest wall, box or floor
/// hit within 10 m measured along the camera z axis; 0 for no hit.
/// Returns `(depth, hit box index)` per pixel.
pub fn render_oracle(
    world: &World,
    rotation: &[[f64; 3]; 3],
    eye: [f64; 3],
    k: &Intrinsics,
) -> Vec<(f64, Option<usize>)> {
    let mut solids: Vec<([f64; 3], [f64; 3], Option<usize>)> = world
        .walls
        .iter()
        .map(|w| ([w.min[0], w.min[1], 0.0], [w.max[0], w.max[1], world.wall_height], None))
        .collect();
    for (i, b) in world.boxes.iter().enumerate() {
        solids.push((b.min, b.max, Some(i)));
    }
    let e = &world.extents;
    let mut out = Vec::with_capacity(k.pixel_count());
    for v in 0..k.height {
        for u in 0..k.width {
            let c = [(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0];
            let d = [
                rotation[0][0] * c[0] + rotation[0][1] * c[1] + rotation[0][2] * c[2],
                rotation[1][0] * c[0] + rotation[1][1] * c[1] + rotation[1][2] * c[2],
                rotation[2][0] * c[0] + rotation[2][1] * c[1] + rotation[2][2] * c[2],
            ];
            let mut best = (10.0, None, false);
            for (min, max, id) in &solids {
                if let Some(t) = ray_box(eye, d, *min, *max) {
                    // Only entries count: a camera inside a box sees nothing of it.
                    let inside = (0..3).all(|a| eye[a] >= min[a] && eye[a] <= max[a]);
                    if !inside && t < best.0 {
                        best = (t, *id, true);
                    }
                }
            }
            if d[2] < 0.0 {
                let t = -eye[2] / d[2];
                let (x, y) = (eye[0] + t * d[0], eye[1] + t * d[1]);
                if t < best.0 && x >= e.min[0] && x <= e.max[0] && y >= e.min[1] && y <= e.max[1] {
                    best = (t, None, true);
                }
            }
            // The camera-frame z of o + t d is t, since d has camera z = 1.
            out.push(if best.2 { (best.0, best.1) } else { (0.0, None) });
        }
    }
    out
}

// ---------------------------------------------------------------- grids

/// Shortest 8-connected distance (cells) from any goal to `start`, by
/// Dijkstra seeded with every goal. Diagonal moves need both side cells
/// free. `None` when unreachable.
pub fn multi_source_dijkstra(
    blocked: &[bool],
    w: usize,
    h: usize,
    start: (usize, usize),
    goals: &[(usize, usize)],
) -> Option<f64> {
    let dist = distance_field(blocked, w, h, goals);
    let d = dist[start.1 * w + start.0];
    d.is_finite().then_some(d)
}

/// Dijkstra distance field from a set of sources, `INFINITY` where unreachable.
pub fn distance_field(blocked: &[bool], w: usize, h: usize, sources: &[(usize, usize)]) -> Vec<f64> {
    let free = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && !blocked[y as usize * w + x as usize];
    let mut dist = vec![f64::INFINITY; w * h];
    // Scaled integer-free key: order by f64 bits, valid for non-negative floats.
    let mut heap = BinaryHeap::new();
    for &(x, y) in sources {
        if free(x as i64, y as i64) {
            dist[y * w + x] = 0.0;
            heap.push(Reverse((0u64, x, y)));
        }
    }
    while let Some(Reverse((bits, x, y))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[y * w + x] {
            continue;
        }
        for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if !free(nx, ny) {
                continue;
            }
            let diagonal = dx != 0 && dy != 0;
            if diagonal && !(free(x as i64 + dx, y as i64) && free(x as i64, y as i64 + dy)) {
                continue;
            }
            let nd = d + if diagonal { std::f64::consts::SQRT_2 } else { 1.0 };
            let i = ny as usize * w + nx as usize;
            if nd < dist[i] {
                dist[i] = nd;
                heap.push(Reverse((nd.to_bits(), nx as usize, ny as usize)));
            }
        }
    }
    dist
}

/// Random blocked mask with the given density.
pub fn random_blocked(r: &mut impl Rng, w: usize, h: usize, density: f64) -> Vec<bool> {
    (0..w * h).map(|_| r.random_bool(density)).collect()
}

/// Every cell of the integer line from `a` to `b` under the symmetric
/// "closest cell to the true line" rule, for comparison with Bresenham on
/// lines whose slope avoids exact half-cell ties.
pub fn dda_cells(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let n = dx.abs().max(dy.abs());
    (0..=n)
        .map(|i| {
            if n == 0 {
                return a;
            }
            let t = i as f64 / n as f64;
            (
                (a.0 as f64 + t * dx as f64).round() as i64,
                (a.1 as f64 + t * dy as f64).round() as i64,
            )
        })
        .collect()
}

// ---------------------------------------------------------------- features

pub fn random_unit(r: &mut impl Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

/// Cosine in double precision.
pub fn cosine64(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Brute-force scores of every stored entry against `q`.
pub fn brute_scores(map: &FeatureMap, q: &[f32]) -> Vec<f64> {
    (0..map.len()).map(|i| cosine64(map.feature(i).expect("in range"), q)).collect()
}

/// Brute-force ranking: best first, ties to the earlier entry.
pub fn brute_rank(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

// ---------------------------------------------------------------- stats

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}
