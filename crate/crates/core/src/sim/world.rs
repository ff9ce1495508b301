//! World description: walls, labeled boxes and room floor regions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{LabelGroup, LabelVocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extents {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

/// Full-height wall segment, as a 2D footprint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub label: String,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl LabeledBox {
    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorRegion {
    pub room_label: String,
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub name: String,
    pub extents: Extents,
    #[serde(default = "default_wall_height")]
    pub wall_height: f64,
    #[serde(default)]
    pub walls: Vec<Wall>,
    #[serde(default)]
    pub boxes: Vec<LabeledBox>,
    #[serde(default)]
    pub floor_regions: Vec<FloorRegion>,
    /// `[x, y, heading_deg]`.
    #[serde(default)]
    pub spawn_points: Vec<[f64; 3]>,
    /// Default queries for episodes in this world; when absent, every object
    /// label and room label present in the world.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<Vec<String>>,
}

fn default_wall_height() -> f64 {
    2.5
}

const STANDARD: [(&str, &str); 4] = [
    ("house1_floor1", include_str!("../../worlds/house1_floor1.json")),
    ("house1_floor2", include_str!("../../worlds/house1_floor2.json")),
    ("house2_floor1", include_str!("../../worlds/house2_floor1.json")),
    ("house2_floor2", include_str!("../../worlds/house2_floor2.json")),
];

impl World {
    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json(context, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Names of the bundled worlds.
    pub fn standard_names() -> Vec<&'static str> {
        STANDARD.iter().map(|(n, _)| *n).collect()
    }

    pub fn standard(name: &str) -> Result<Self> {
        let (_, text) = STANDARD
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("no standard world named {name:?}")))?;
        Self::from_json(text, name)
    }

    /// All four bundled worlds.
    pub fn standard_all() -> Vec<Self> {
        STANDARD
            .iter()
            .map(|(n, t)| Self::from_json(t, n).expect("bundled world parses"))
            .collect()
    }

    /// Resolves `standard:<name>` or a file path.
    pub fn resolve(spec: &str, base: Option<&std::path::Path>) -> Result<Self> {
        if let Some(name) = spec.strip_prefix("standard:") {
            return Self::standard(name);
        }
        let p = std::path::Path::new(spec);
        let path = match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        };
        Self::load(&path)
    }

    /// Distinct object labels in box order, then room labels in region order.
    pub fn present_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut push = |l: &str| {
            if !out.iter().any(|o| o.eq_ignore_ascii_case(l)) {
                out.push(l.to_string());
            }
        };
        for b in &self.boxes {
            push(&b.label);
        }
        for r in &self.floor_regions {
            push(&r.room_label);
        }
        out
    }

    pub fn default_queries(&self) -> Vec<String> {
        self.queries.clone().unwrap_or_else(|| self.present_labels())
    }

    pub fn instances<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a LabeledBox> + 'a {
        self.boxes.iter().filter(move |b| b.label.eq_ignore_ascii_case(label))
    }

    pub fn regions<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a FloorRegion> + 'a {
        self.floor_regions
            .iter()
            .filter(move |r| r.room_label.eq_ignore_ascii_case(label))
    }

    pub fn validate(&self, vocab: &LabelVocabulary) -> Result<()> {
        let e = &self.extents;
        if !(e.min[0] < e.max[0] && e.min[1] < e.max[1]) {
            return Err(Error::Config(format!("world {}: empty extents", self.name)));
        }
        if !(self.wall_height > 0.0) {
            return Err(Error::Config(format!("world {}: wall height must be positive", self.name)));
        }
        let inside = |p: [f64; 2]| {
            p[0] >= e.min[0] - 1e-9 && p[0] <= e.max[0] + 1e-9 && p[1] >= e.min[1] - 1e-9 && p[1] <= e.max[1] + 1e-9
        };
        for w in &self.walls {
            if !(w.min[0] < w.max[0] && w.min[1] < w.max[1]) || !inside(w.min) || !inside(w.max) {
                return Err(Error::Config(format!("world {}: bad wall {w:?}", self.name)));
            }
        }
        for b in &self.boxes {
            if !(0..3).all(|a| b.min[a] < b.max[a]) || b.min[2] < 0.0 {
                return Err(Error::Config(format!("world {}: degenerate box {b:?}", self.name)));
            }
            if !inside([b.min[0], b.min[1]]) || !inside([b.max[0], b.max[1]]) {
                return Err(Error::Config(format!(
                    "world {}: box {:?} outside the extents",
                    self.name, b.label
                )));
            }
            match vocab.id(&b.label).map(|id| vocab.group(id)) {
                Some(LabelGroup::Object) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "world {}: box label {:?} is not an object label of the vocabulary",
                        self.name, b.label
                    )))
                }
            }
        }
        for r in &self.floor_regions {
            if r.polygon.len() < 3 {
                return Err(Error::Config(format!(
                    "world {}: region {:?} needs at least 3 vertices",
                    self.name, r.room_label
                )));
            }
            match vocab.id(&r.room_label).map(|id| vocab.group(id)) {
                Some(LabelGroup::Room) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "world {}: region label {:?} is not a room label of the vocabulary",
                        self.name, r.room_label
                    )))
                }
            }
        }
        for s in &self.spawn_points {
            if !inside([s[0], s[1]]) {
                return Err(Error::Config(format!("world {}: spawn {s:?} outside extents", self.name)));
            }
        }
        for q in self.default_queries() {
            if vocab.id(&q).is_none() {
                return Err(Error::Config(format!(
                    "world {}: query {q:?} is not in the vocabulary",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Distance from a point to a polygon region (0 inside).
pub fn distance_to_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> f64 {
    if point_in_polygon(p, poly) {
        return 0.0;
    }
    closest_on_polygon(p, poly).1
}

/// Closest boundary point and its distance.
pub fn closest_on_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> ([f64; 2], f64) {
    let mut best = (poly[0], f64::INFINITY);
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let ab = [b[0] - a[0], b[1] - a[1]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        let t = if len2 > 0.0 {
            (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
        let d = (p[0] - q[0]).hypot(p[1] - q[1]);
        if d < best.1 {
            best = (q, d);
        }
    }
    best
}

/// Distance from a point to an axis-aligned box (0 inside).
pub fn distance_to_box(p: [f64; 3], min: [f64; 3], max: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        let d = (min[a] - p[a]).max(0.0).max(p[a] - max[a]);
        s += d * d;
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_helpers() {
        let sq = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]];
        assert!(point_in_polygon([1.0, 1.0], &sq));
        assert!(!point_in_polygon([3.0, 1.0], &sq));
        assert_eq!(distance_to_polygon([1.0, 1.0], &sq), 0.0);
        assert!((distance_to_polygon([3.0, 1.0], &sq) - 1.0).abs() < 1e-12);
        assert!((distance_to_polygon([3.0, 3.0], &sq) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn box_distance() {
        assert_eq!(distance_to_box([0.5; 3], [0.0; 3], [1.0; 3]), 0.0);
        assert!((distance_to_box([2.0, 0.5, 0.5], [0.0; 3], [1.0; 3]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standard_worlds_validate() {
        let vocab = LabelVocabulary::standard();
        let worlds = World::standard_all();
        assert_eq!(worlds.len(), 4);
        for w in &worlds {
            w.validate(&vocab).unwrap();
            assert_eq!(w.default_queries().len(), 12, "{}", w.name);
            assert!(!w.spawn_points.is_empty());
        }
    }
}
