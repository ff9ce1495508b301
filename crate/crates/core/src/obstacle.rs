//! Top-down obstacle grid built from world-frame depth points.
//!
//! Points inside the obstacle height band mark their cell occupied; points
//! below it mark floor. Every observed cell also frees the cells on the 2D
//! ray from the camera to it. Occupied cells stay occupied, and cells within
//! the inflation radius of any occupied cell are not traversable. Unknown
//! cells are traversable so plans may lead into unexplored space.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_map::write_pgm;
use crate::geometry::{Point3, PointImage};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
}

const UNKNOWN: u8 = 0;
const FREE: u8 = 1;
const OCCUPIED: u8 = 2;

/// Wire codes used by grid deltas.
pub const CODE_UNKNOWN: u8 = 0;
pub const CODE_FREE: u8 = 1;
pub const CODE_OCCUPIED: u8 = 2;
pub const CODE_INFLATED: u8 = 3;

/// Cell `(cx, cy)` covers `[origin + c * cell, origin + (c + 1) * cell)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub cell: f64,
    pub width: u32,
    pub height: u32,
}

impl GridSpec {
    pub fn new(origin: [f64; 2], cell: f64, width: u32, height: u32) -> Result<Self> {
        if !(cell > 0.0) || width == 0 || height == 0 {
            return Err(Error::Config("grid needs a positive cell size and extent".into()));
        }
        Ok(Self {
            origin,
            cell,
            width,
            height,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unbounded integer cell containing `(x, y)`.
    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin[0]) / self.cell).floor() as i64,
            ((y - self.origin[1]) / self.cell).floor() as i64,
        )
    }

    #[inline]
    pub fn contains(&self, c: (i64, i64)) -> bool {
        c.0 >= 0 && c.1 >= 0 && c.0 < self.width as i64 && c.1 < self.height as i64
    }

    #[inline]
    pub fn index(&self, cx: u32, cy: u32) -> usize {
        cy as usize * self.width as usize + cx as usize
    }

    #[inline]
    pub fn center(&self, cx: i64, cy: i64) -> [f64; 2] {
        [
            self.origin[0] + (cx as f64 + 0.5) * self.cell,
            self.origin[1] + (cy as f64 + 0.5) * self.cell,
        ]
    }

    /// Nearest in-bounds cell.
    pub fn clamp(&self, c: (i64, i64)) -> (u32, u32) {
        (
            c.0.clamp(0, self.width as i64 - 1) as u32,
            c.1.clamp(0, self.height as i64 - 1) as u32,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObstacleConfig {
    pub cell: f64,
    /// Points with `z` in `[band_min, band_max]` are obstacles.
    pub band_min: f64,
    pub band_max: f64,
    /// Radius around occupied cells that the robot center may not enter.
    pub inflation_radius: f64,
    /// Side of the initial square grid, meters.
    pub initial_size: f64,
    /// Points farther than this from the camera (2D) are ignored.
    pub max_range: f64,
}

impl Default for ObstacleConfig {
    fn default() -> Self {
        Self {
            cell: 0.05,
            band_min: 0.10,
            band_max: 1.50,
            inflation_radius: 0.25,
            initial_size: 24.0,
            max_range: 10.0,
        }
    }
}

impl ObstacleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell > 0.0) {
            return Err(Error::Config("grid cell size must be positive".into()));
        }
        if !(self.band_min < self.band_max) {
            return Err(Error::Config("obstacle band must satisfy min < max".into()));
        }
        if !(self.inflation_radius >= 0.0) || !(self.initial_size > 0.0) || !(self.max_range > 0.0) {
            return Err(Error::Config("grid radii and sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Row-level change since a sequence number, run-length encoded as
/// `[code, run]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub row: u32,
    pub runs: Vec<[u32; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDelta {
    pub seq: u64,
    /// True when every row is included (first request or after a resize).
    pub full: bool,
    pub spec: GridSpec,
    pub rows: Vec<GridRow>,
}

#[derive(Clone, Debug)]
pub struct ObstacleGrid {
    config: ObstacleConfig,
    spec: GridSpec,
    state: Vec<u8>,
    inflated: Vec<bool>,
    blocked: Vec<bool>,
    disc: Vec<(i64, i64)>,
    seq: u64,
    row_seq: Vec<u64>,
    resized_at: u64,
}

impl ObstacleGrid {
    /// Empty grid of `initial_size` meters centered on `center`.
    pub fn new(config: ObstacleConfig, center: [f64; 2]) -> Result<Self> {
        config.validate()?;
        let n = ((config.initial_size / config.cell).ceil() as u32).max(1);
        let half = n as f64 * config.cell / 2.0;
        let spec = GridSpec::new([center[0] - half, center[1] - half], config.cell, n, n)?;
        Ok(Self::with_spec(config, spec))
    }

    pub fn with_spec(config: ObstacleConfig, spec: GridSpec) -> Self {
        let r = config.inflation_radius / spec.cell;
        let ri = r.floor() as i64;
        let mut disc = Vec::new();
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if ((dx * dx + dy * dy) as f64) <= r * r + 1e-9 {
                    disc.push((dx, dy));
                }
            }
        }
        Self {
            config,
            spec,
            state: vec![UNKNOWN; spec.len()],
            inflated: vec![false; spec.len()],
            blocked: vec![false; spec.len()],
            disc,
            seq: 0,
            row_seq: vec![0; spec.height as usize],
            resized_at: 0,
        }
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn config(&self) -> &ObstacleConfig {
        &self.config
    }

    /// Current change sequence number.
    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn state(&self, cx: u32, cy: u32) -> CellState {
        match self.state[self.spec.index(cx, cy)] {
            FREE => CellState::Free,
            OCCUPIED => CellState::Occupied,
            _ => CellState::Unknown,
        }
    }

    pub fn is_inflated(&self, cx: u32, cy: u32) -> bool {
        self.inflated[self.spec.index(cx, cy)]
    }

    /// Occupied or within the inflation radius of an occupied cell.
    #[inline]
    pub fn is_blocked(&self, cx: u32, cy: u32) -> bool {
        self.blocked[self.spec.index(cx, cy)]
    }

    /// Row-major blocked mask, for the planner.
    pub fn blocked(&self) -> &[bool] {
        &self.blocked
    }

    /// Blocked status of the cell containing a world point; points outside
    /// the grid are unknown and therefore not blocked.
    pub fn is_blocked_at(&self, x: f64, y: f64) -> bool {
        let c = self.spec.cell_of(x, y);
        self.spec.contains(c) && self.blocked[self.spec.index(c.0 as u32, c.1 as u32)]
    }

    pub fn count(&self, s: CellState) -> usize {
        let code = match s {
            CellState::Unknown => UNKNOWN,
            CellState::Free => FREE,
            CellState::Occupied => OCCUPIED,
        };
        self.state.iter().filter(|&&c| c == code).count()
    }

    fn touch_row(&mut self, cy: u32) {
        self.row_seq[cy as usize] = self.seq;
    }

    fn set_free(&mut self, cx: u32, cy: u32) {
        let i = self.spec.index(cx, cy);
        if self.state[i] == UNKNOWN {
            self.state[i] = FREE;
            self.touch_row(cy);
        }
    }

    fn set_occupied(&mut self, cx: u32, cy: u32) {
        let i = self.spec.index(cx, cy);
        if self.state[i] == OCCUPIED {
            return;
        }
        self.state[i] = OCCUPIED;
        self.blocked[i] = true;
        self.touch_row(cy);
        self.inflate_around(cx as i64, cy as i64);
    }

    fn inflate_around(&mut self, cx: i64, cy: i64) {
        for k in 0..self.disc.len() {
            let (dx, dy) = self.disc[k];
            let c = (cx + dx, cy + dy);
            if self.spec.contains(c) {
                let j = self.spec.index(c.0 as u32, c.1 as u32);
                if !self.inflated[j] {
                    self.inflated[j] = true;
                    self.blocked[j] = true;
                    self.touch_row(c.1 as u32);
                }
            }
        }
    }

    /// Grows the grid, doubling toward each side that needs it, until it
    /// contains the cell box `lo..=hi`. Returns the cell offset applied to
    /// existing coordinates.
    fn ensure_contains(&mut self, lo: (i64, i64), hi: (i64, i64)) -> (i64, i64) {
        if self.spec.contains(lo) && self.spec.contains(hi) {
            return (0, 0);
        }
        let (mut left, mut right, mut down, mut up) = (0i64, 0i64, 0i64, 0i64);
        let (w, h) = (self.spec.width as i64, self.spec.height as i64);
        while lo.0 < -left {
            left += w + left + right;
        }
        while hi.0 >= w + right {
            right += w + left + right;
        }
        while lo.1 < -down {
            down += h + down + up;
        }
        while hi.1 >= h + up {
            up += h + down + up;
        }
        let new_w = (w + left + right) as u32;
        let new_h = (h + down + up) as u32;
        let new_spec = GridSpec {
            origin: [
                self.spec.origin[0] - left as f64 * self.spec.cell,
                self.spec.origin[1] - down as f64 * self.spec.cell,
            ],
            cell: self.spec.cell,
            width: new_w,
            height: new_h,
        };
        let mut state = vec![UNKNOWN; new_spec.len()];
        for y in 0..h {
            let src = (y * w) as usize;
            let dst = ((y + down) * new_w as i64 + left) as usize;
            state[dst..dst + w as usize].copy_from_slice(&self.state[src..src + w as usize]);
        }
        log::debug!(
            "obstacle grid grew from {}x{} to {}x{}",
            self.spec.width,
            self.spec.height,
            new_w,
            new_h
        );
        self.spec = new_spec;
        self.state = state;
        self.inflated = vec![false; new_spec.len()];
        self.blocked = vec![false; new_spec.len()];
        self.row_seq = vec![self.seq; new_h as usize];
        self.resized_at = self.seq;
        for cy in 0..new_h {
            for cx in 0..new_w {
                let i = new_spec.index(cx, cy);
                if self.state[i] == OCCUPIED {
                    self.blocked[i] = true;
                    self.inflate_around(cx as i64, cy as i64);
                }
            }
        }
        (left, down)
    }

    /// Integrates one frame of world points observed from `camera`.
    pub fn integrate<T: Scalar>(&mut self, points: &PointImage<T>, camera: &Point3<T>) {
        self.integrate_points(points.valid_points().map(|p| p.cast::<f64>()), camera.cast())
    }

    /// Integrates arbitrary world points observed from `camera`.
    pub fn integrate_points(&mut self, points: impl Iterator<Item = Point3<f64>>, camera: Point3<f64>) {
        self.seq += 1;
        // Class per distinct target cell: true when any point is an obstacle.
        let mut targets: HashMap<(i64, i64), bool> = HashMap::new();
        let r2 = self.config.max_range * self.config.max_range;
        for p in points {
            if p.z > self.config.band_max {
                continue;
            }
            let (dx, dy) = (p.x - camera.x, p.y - camera.y);
            if dx * dx + dy * dy > r2 {
                continue;
            }
            let obstacle = p.z >= self.config.band_min;
            let c = self.spec.cell_of(p.x, p.y);
            let e = targets.entry(c).or_insert(false);
            *e |= obstacle;
        }
        if targets.is_empty() {
            return;
        }
        let cam = self.spec.cell_of(camera.x, camera.y);
        let (mut lo, mut hi) = (cam, cam);
        for c in targets.keys() {
            lo = (lo.0.min(c.0), lo.1.min(c.1));
            hi = (hi.0.max(c.0), hi.1.max(c.1));
        }
        let (ox, oy) = self.ensure_contains(lo, hi);
        let cam = (cam.0 + ox, cam.1 + oy);
        let mut keys: Vec<((i64, i64), bool)> = targets
            .into_iter()
            .map(|(c, o)| ((c.0 + ox, c.1 + oy), o))
            .collect();
        keys.sort_unstable();
        for &(c, _) in &keys {
            let mut free_cells = Vec::new();
            bresenham(cam, c, |x, y| {
                if (x, y) != c {
                    free_cells.push((x, y));
                }
            });
            for (x, y) in free_cells {
                if self.spec.contains((x, y)) {
                    self.set_free(x as u32, y as u32);
                }
            }
        }
        for &(c, obstacle) in &keys {
            if !self.spec.contains(c) {
                continue;
            }
            if obstacle {
                self.set_occupied(c.0 as u32, c.1 as u32);
            } else {
                self.set_free(c.0 as u32, c.1 as u32);
            }
        }
    }

    /// Rows changed after `since`. Requests older than the last resize, or
    /// with `since == 0`, get every row.
    pub fn delta_since(&self, since: u64) -> GridDelta {
        let full = since == 0 || since < self.resized_at;
        let rows = (0..self.spec.height)
            .filter(|&r| full || self.row_seq[r as usize] > since)
            .map(|r| GridRow {
                row: r,
                runs: self.row_runs(r),
            })
            .collect();
        GridDelta {
            seq: self.seq,
            full,
            spec: self.spec,
            rows,
        }
    }

    /// Wire code of one cell.
    pub fn code(&self, cx: u32, cy: u32) -> u8 {
        let i = self.spec.index(cx, cy);
        match self.state[i] {
            OCCUPIED => CODE_OCCUPIED,
            _ if self.inflated[i] => CODE_INFLATED,
            FREE => CODE_FREE,
            _ => CODE_UNKNOWN,
        }
    }

    fn row_runs(&self, r: u32) -> Vec<[u32; 2]> {
        let mut runs: Vec<[u32; 2]> = Vec::new();
        for cx in 0..self.spec.width {
            let c = self.code(cx, r) as u32;
            match runs.last_mut() {
                Some(last) if last[0] == c => last[1] += 1,
                _ => runs.push([c, 1]),
            }
        }
        runs
    }

    /// Gray levels with the first image row at the largest y: unknown 128,
    /// free 255, occupied 0.
    pub fn to_gray(&self) -> Vec<u8> {
        let (w, h) = (self.spec.width as usize, self.spec.height as usize);
        let mut out = Vec::with_capacity(w * h);
        for row in (0..h).rev() {
            for &s in &self.state[row * w..(row + 1) * w] {
                out.push(match s {
                    FREE => 255,
                    OCCUPIED => 0,
                    _ => 128,
                });
            }
        }
        out
    }

    /// Writes `<path>` as PGM and `<path>.json` with the grid geometry.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        write_pgm(path, self.spec.width, self.spec.height, &self.to_gray())?;
        let mut side = path.as_os_str().to_owned();
        side.push(".json");
        let side = std::path::PathBuf::from(side);
        let text = serde_json::to_string_pretty(&serde_json::json!({
            "origin": self.spec.origin,
            "cell": self.spec.cell,
            "width": self.spec.width,
            "height": self.spec.height,
            "values": {"unknown": 128, "free": 255, "occupied": 0},
            "first_row": "max_y",
        }))
        .map_err(|e| Error::json(side.display().to_string(), e))?;
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }
}

/// Visits every cell of the integer line from `a` to `b`, both included.
pub fn bresenham(a: (i64, i64), b: (i64, i64), mut visit: impl FnMut(i64, i64)) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        visit(x, y);
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> ObstacleGrid {
        ObstacleGrid::new(
            ObstacleConfig {
                initial_size: 4.0,
                inflation_radius: 0.1,
                ..Default::default()
            },
            [0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn band_point_occupies_and_ray_frees() {
        let mut g = grid();
        let cam = Point3::new(0.01, 0.01, 0.6);
        g.integrate_points([Point3::new(1.01, 0.01, 0.5)].into_iter(), cam);
        let s = *g.spec();
        let occ = s.cell_of(1.01, 0.01);
        assert_eq!(g.state(occ.0 as u32, occ.1 as u32), CellState::Occupied);
        let mid = s.cell_of(0.5, 0.01);
        assert_eq!(g.state(mid.0 as u32, mid.1 as u32), CellState::Free);
        let cam_c = s.cell_of(0.01, 0.01);
        assert_eq!(g.state(cam_c.0 as u32, cam_c.1 as u32), CellState::Free);
        // inflation of 0.1 m = 2 cells
        let near = s.cell_of(0.92, 0.01);
        assert!(g.is_blocked(near.0 as u32, near.1 as u32));
        assert!(!g.is_blocked(mid.0 as u32, mid.1 as u32));
    }

    #[test]
    fn floor_and_ceiling_points() {
        let mut g = grid();
        let cam = Point3::new(0.01, 0.01, 0.6);
        g.integrate_points(
            [Point3::new(0.51, 0.51, 0.0), Point3::new(-0.49, 0.01, 2.0)].into_iter(),
            cam,
        );
        let f = g.spec().cell_of(0.51, 0.51);
        assert_eq!(g.state(f.0 as u32, f.1 as u32), CellState::Free);
        let c = g.spec().cell_of(-0.49, 0.01);
        assert_eq!(g.state(c.0 as u32, c.1 as u32), CellState::Unknown);
    }

    #[test]
    fn occupied_is_sticky() {
        let mut g = grid();
        let cam = Point3::new(0.01, 0.01, 0.6);
        g.integrate_points([Point3::new(0.51, 0.01, 0.5)].into_iter(), cam);
        g.integrate_points([Point3::new(1.51, 0.01, 0.0)].into_iter(), cam);
        let c = g.spec().cell_of(0.51, 0.01);
        assert_eq!(g.state(c.0 as u32, c.1 as u32), CellState::Occupied);
    }

    #[test]
    fn grows_to_fit_far_points() {
        let mut g = grid();
        let cam = Point3::new(0.01, 0.01, 0.6);
        g.integrate_points([Point3::new(0.51, 0.01, 0.5)].into_iter(), cam);
        g.integrate_points([Point3::new(-5.0, 3.0, 0.5)].into_iter(), cam);
        let s = *g.spec();
        assert!(s.width > 80 && s.height > 80);
        let old = s.cell_of(0.51, 0.01);
        assert_eq!(g.state(old.0 as u32, old.1 as u32), CellState::Occupied);
        let far = s.cell_of(-5.0, 3.0);
        assert_eq!(g.state(far.0 as u32, far.1 as u32), CellState::Occupied);
        assert!(g.delta_since(1).full);
    }

    #[test]
    fn deltas_report_changed_rows_only() {
        let mut g = grid();
        let cam = Point3::new(0.01, 0.01, 0.6);
        g.integrate_points([Point3::new(0.51, 0.01, 0.5)].into_iter(), cam);
        let first = g.delta_since(0);
        assert!(first.full);
        assert_eq!(first.rows.len(), g.spec().height as usize);
        let seq = first.seq;
        g.integrate_points([Point3::new(0.01, 1.51, 0.0)].into_iter(), cam);
        let d = g.delta_since(seq);
        assert!(!d.full);
        assert!(!d.rows.is_empty() && d.rows.len() < 40);
        for r in &d.rows {
            assert_eq!(r.runs.iter().map(|x| x[1]).sum::<u32>(), g.spec().width);
        }
        assert!(g.delta_since(d.seq).rows.is_empty());
    }

    #[test]
    fn bresenham_endpoints_and_connectivity() {
        let mut cells = Vec::new();
        bresenham((0, 0), (5, -3), |x, y| cells.push((x, y)));
        assert_eq!(cells.first(), Some(&(0, 0)));
        assert_eq!(cells.last(), Some(&(5, -3)));
        for w in cells.windows(2) {
            assert!((w[0].0 - w[1].0).abs() <= 1 && (w[0].1 - w[1].1).abs() <= 1);
        }
    }
}
