//! Ray-cast depth and label rendering of a [`Scene`].

use crate::geometry::{DepthImage, Intrinsics, Point3, Pose};
use crate::image::LabelImage;
use crate::vocab::LabelVocabulary;
use crate::error::Result;

use super::world::{point_in_polygon, World};

/// Farthest rendered depth, meters.
pub const MAX_RANGE: f64 = 10.0;

/// Wall hits are labeled by the room just in front of the wall surface.
const WALL_NUDGE: f64 = 0.01;

/// Axis-aligned solid. `label == None` marks a wall.
#[derive(Clone, Debug, PartialEq)]
pub struct Solid {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub label: Option<u16>,
}

/// A world compiled against a vocabulary, ready for rendering and collision
/// queries.
#[derive(Clone, Debug)]
pub struct Scene {
    pub world: World,
    pub vocab: LabelVocabulary,
    pub solids: Vec<Solid>,
    /// Index of the first box in `solids` (walls come first).
    pub first_box: usize,
    regions: Vec<(u16, Vec<[f64; 2]>)>,
}

/// One rendered view.
#[derive(Clone, Debug)]
pub struct Frame {
    pub depth: DepthImage,
    pub labels: LabelImage,
}

impl Scene {
    pub fn new(world: World, vocab: LabelVocabulary) -> Result<Self> {
        world.validate(&vocab)?;
        let mut solids: Vec<Solid> = world
            .walls
            .iter()
            .map(|w| Solid {
                min: [w.min[0], w.min[1], 0.0],
                max: [w.max[0], w.max[1], world.wall_height],
                label: None,
            })
            .collect();
        let first_box = solids.len();
        for b in &world.boxes {
            solids.push(Solid {
                min: b.min,
                max: b.max,
                label: Some(vocab.require(&b.label)?),
            });
        }
        let regions = world
            .floor_regions
            .iter()
            .map(|r| Ok((vocab.require(&r.room_label)?, r.polygon.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            world,
            vocab,
            solids,
            first_box,
            regions,
        })
    }

    /// Room label at a floor position, or background.
    pub fn room_at(&self, x: f64, y: f64) -> u16 {
        self.regions
            .iter()
            .find(|(_, poly)| point_in_polygon([x, y], poly))
            .map_or(self.vocab.background(), |(id, _)| *id)
    }

    /// Nearest solid hit along `o + t d` for `t` in `(t_min, t_max)`.
    pub fn raycast(&self, o: [f64; 3], d: [f64; 3], t_max: f64) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, s) in self.solids.iter().enumerate() {
            if let Some(t) = slab(o, d, s.min, s.max) {
                if t < t_max && best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    /// True when the open segment `a -> b` crosses no solid other than
    /// `ignore`.
    pub fn segment_clear(&self, a: [f64; 3], b: [f64; 3], ignore: Option<usize>) -> bool {
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        for (i, s) in self.solids.iter().enumerate() {
            if Some(i) == ignore {
                continue;
            }
            if let Some(t) = slab(a, d, s.min, s.max) {
                if t < 1.0 - 1e-9 {
                    return false;
                }
            }
        }
        true
    }

    fn in_extents(&self, x: f64, y: f64) -> bool {
        let e = &self.world.extents;
        x >= e.min[0] && x <= e.max[0] && y >= e.min[1] && y <= e.max[1]
    }

    /// Renders depth (camera z, 0 for no hit within range) and labels.
    pub fn render(&self, pose: &Pose, k: &Intrinsics) -> Frame {
        let (w, h) = (k.width, k.height);
        let mut depth = vec![0.0f32; w as usize * h as usize];
        let mut labels = vec![self.vocab.background(); w as usize * h as usize];
        let o = pose.translation().to_array();
        let upright = pose.is_upright();
        let mut cands: Vec<(f64, f64, usize)> = Vec::with_capacity(self.solids.len());
        for u in 0..w {
            let xn = (u as f64 - k.cx) / k.fx;
            if upright {
                // Every pixel of a column shares one horizontal direction.
                let d = pose.rotate(&Point3::new(xn, 0.0, 1.0));
                self.column_candidates(o, [d.x, d.y], &mut cands);
            }
            for v in 0..h {
                let yn = (v as f64 - k.cy) / k.fy;
                let d = pose.rotate(&Point3::new(xn, yn, 1.0)).to_array();
                if !upright {
                    self.column_candidates(o, [d[0], d[1]], &mut cands);
                }
                let mut best_t = MAX_RANGE;
                let mut best: Option<usize> = None;
                for &(t0, t1, i) in &cands {
                    if t0 >= best_t {
                        break;
                    }
                    let s = &self.solids[i];
                    let (mut lo, mut hi) = (t0, t1);
                    if d[2].abs() < 1e-15 {
                        if o[2] < s.min[2] || o[2] > s.max[2] {
                            continue;
                        }
                    } else {
                        let a = (s.min[2] - o[2]) / d[2];
                        let b = (s.max[2] - o[2]) / d[2];
                        lo = lo.max(a.min(b));
                        hi = hi.min(a.max(b));
                    }
                    if lo <= hi && lo > 0.0 && lo < best_t {
                        best_t = lo;
                        best = Some(i);
                    }
                }
                let mut label = None;
                if let Some(i) = best {
                    label = Some(match self.solids[i].label {
                        Some(l) => l,
                        None => {
                            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                            let back = best_t - WALL_NUDGE / n;
                            self.room_at(o[0] + back * d[0], o[1] + back * d[1])
                        }
                    });
                }
                if d[2] < 0.0 {
                    let tf = -o[2] / d[2];
                    if tf < best_t {
                        let (x, y) = (o[0] + tf * d[0], o[1] + tf * d[1]);
                        if self.in_extents(x, y) {
                            best_t = tf;
                            label = Some(self.room_at(x, y));
                        }
                    }
                }
                if let Some(l) = label {
                    let idx = v as usize * w as usize + u as usize;
                    depth[idx] = best_t as f32;
                    labels[idx] = l;
                }
            }
        }
        Frame {
            depth: DepthImage::new(w, h, depth).expect("rendered depth is valid"),
            labels: LabelImage::new(w, h, labels).expect("rendered labels match size"),
        }
    }

    /// Solids whose XY footprint the horizontal ray crosses, as
    /// `(t_enter, t_exit, index)` sorted by entry.
    fn column_candidates(&self, o: [f64; 3], dxy: [f64; 2], out: &mut Vec<(f64, f64, usize)>) {
        out.clear();
        for (i, s) in self.solids.iter().enumerate() {
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut hit = true;
            for a in 0..2 {
                if dxy[a].abs() < 1e-15 {
                    if o[a] < s.min[a] || o[a] > s.max[a] {
                        hit = false;
                        break;
                    }
                } else {
                    let t0 = (s.min[a] - o[a]) / dxy[a];
                    let t1 = (s.max[a] - o[a]) / dxy[a];
                    lo = lo.max(t0.min(t1));
                    hi = hi.min(t0.max(t1));
                }
            }
            if hit && lo <= hi && hi > 0.0 {
                out.push((lo.max(0.0), hi, i));
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
}

/// Slab-method entry parameter of `o + t d` into a box, for `t > 0`.
pub fn slab(o: [f64; 3], d: [f64; 3], min: [f64; 3], max: [f64; 3]) -> Option<f64> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < min[a] || o[a] > max[a] {
                return None;
            }
        } else {
            let t0 = (min[a] - o[a]) / d[a];
            let t1 = (max[a] - o[a]) / d[a];
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
        }
    }
    (lo <= hi && lo > 0.0).then_some(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::world::{Extents, FloorRegion, LabeledBox, Wall};

    fn scene() -> Scene {
        let world = World {
            name: "t".into(),
            extents: Extents {
                min: [0.0, 0.0],
                max: [6.0, 4.0],
            },
            wall_height: 2.5,
            walls: vec![Wall {
                min: [5.0, 0.0],
                max: [5.1, 4.0],
            }],
            boxes: vec![LabeledBox {
                label: "sofa".into(),
                min: [2.0, 1.5, 0.0],
                max: [2.5, 2.5, 0.8],
            }],
            floor_regions: vec![FloorRegion {
                room_label: "kitchen".into(),
                polygon: vec![[0.0, 0.0], [6.0, 0.0], [6.0, 4.0], [0.0, 4.0]],
            }],
            spawn_points: vec![[1.0, 2.0, 0.0]],
            queries: None,
        };
        Scene::new(world, LabelVocabulary::standard()).unwrap()
    }

    fn k() -> Intrinsics {
        Intrinsics::new(80.0, 80.0, 80.0, 60.0, 160, 120).unwrap()
    }

    #[test]
    fn wall_depth_and_room_label() {
        let s = scene();
        // Facing +y toward the open side: wall at x=5 is 1 m ahead when facing +x from x=4.
        let pose = Pose::upright_camera(Point3::new(4.0, 0.5, 0.6), 0.0);
        let f = s.render(&pose, &k());
        assert!((f.depth.get(80, 60) - 1.0).abs() < 1e-6);
        assert_eq!(s.vocab.name(f.labels.get(80, 60)), "kitchen");
    }

    #[test]
    fn box_in_view() {
        let s = scene();
        let pose = Pose::upright_camera(Point3::new(1.0, 2.0, 0.6), 0.0);
        let f = s.render(&pose, &k());
        assert_eq!(s.vocab.name(f.labels.get(80, 60)), "sofa");
        assert!((f.depth.get(80, 60) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sky_is_invalid() {
        let s = scene();
        let pose = Pose::upright_camera(Point3::new(1.0, 2.0, 0.6), std::f64::consts::PI);
        let f = s.render(&pose, &k());
        // looking toward -x past the extents: upper rows see nothing
        assert_eq!(f.depth.get(80, 0), 0.0);
        assert_eq!(f.labels.get(80, 0), s.vocab.background());
    }
}
