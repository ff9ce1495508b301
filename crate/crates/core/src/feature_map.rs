//! Append-only store of `(position, feature)` entries with cosine retrieval.
//!
//! Entries live in fixed-size blocks behind `Arc`, so cloning a map is cheap
//! and gives an immutable snapshot; only the tail block is copied when a
//! shared map grows.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{FeatureVector, ProviderConfig, ProviderInfo};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::scalar::Scalar;
use crate::vocab::LabelVocabulary;

const BLOCK: usize = 4096;

/// Value written to heatmap cells that contain no entry.
pub const HEATMAP_EMPTY: f32 = -2.0;

const MAGIC: &[u8; 4] = b"FMAP";
const VERSION: u8 = 1;
const HEADER_LEN: u64 = 4 + 1 + 4 + 8;

/// Cosine similarity `<a, b> / (|a| |b|)`; 0 when either vector is zero.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let (mut ab, mut aa, mut bb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    let den = (aa * bb).sqrt();
    if den > T::zero() {
        ab / den
    } else {
        T::zero()
    }
}

/// Dot product with eight independent accumulators.
#[inline]
pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (x, y) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

#[derive(Clone, Debug, Default)]
struct Block {
    positions: Vec<[f32; 3]>,
    frames: Vec<u32>,
    scales: Vec<i32>,
    features: Vec<f32>,
    norms: Vec<f32>,
}

/// Metadata of one stored entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryInfo {
    pub index: usize,
    pub position: [f32; 3],
    pub frame: u32,
    pub scale: i32,
}

/// A retrieval result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub index: usize,
    pub position: [f32; 3],
    pub score: f64,
    pub frame: u32,
    pub scale: i32,
}

#[derive(Clone, Debug)]
pub struct FeatureMap {
    dim: usize,
    len: usize,
    blocks: Vec<Arc<Block>>,
    frames: usize,
    last_frame: Option<u32>,
}

impl FeatureMap {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            len: 0,
            blocks: Vec::new(),
            frames: 0,
            last_frame: None,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of distinct frame ids seen (consecutive inserts with the same
    /// frame id count once).
    pub fn frame_count(&self) -> usize {
        self.frames
    }

    /// Appends one entry. The feature need not be unit length but must be
    /// non-zero and finite.
    pub fn insert<T: Scalar>(
        &mut self,
        position: Point3<T>,
        frame: u32,
        scale: i32,
        feature: &[f32],
    ) -> Result<usize> {
        if feature.len() != self.dim {
            return Err(Error::Config(format!(
                "feature has dimension {} but the map stores {}",
                feature.len(),
                self.dim
            )));
        }
        if !position.is_finite() {
            return Err(Error::Input("entry position is not finite".into()));
        }
        let norm = feature.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Input("entry feature is zero or not finite".into()));
        }
        if self.len % BLOCK == 0 {
            self.blocks.push(Arc::new(Block::default()));
        }
        let block = Arc::make_mut(self.blocks.last_mut().expect("tail block"));
        block.positions.push([
            position.x.as_f64() as f32,
            position.y.as_f64() as f32,
            position.z.as_f64() as f32,
        ]);
        block.frames.push(frame);
        block.scales.push(scale);
        block.features.extend_from_slice(feature);
        block.norms.push(norm as f32);
        if self.last_frame != Some(frame) {
            self.frames += 1;
            self.last_frame = Some(frame);
        }
        self.len += 1;
        Ok(self.len - 1)
    }

    pub fn entry(&self, index: usize) -> Option<EntryInfo> {
        if index >= self.len {
            return None;
        }
        let b = &self.blocks[index / BLOCK];
        let i = index % BLOCK;
        Some(EntryInfo {
            index,
            position: b.positions[i],
            frame: b.frames[i],
            scale: b.scales[i],
        })
    }

    pub fn feature(&self, index: usize) -> Option<&[f32]> {
        if index >= self.len {
            return None;
        }
        let b = &self.blocks[index / BLOCK];
        let i = index % BLOCK;
        Some(&b.features[i * self.dim..(i + 1) * self.dim])
    }

    pub fn entries(&self) -> impl Iterator<Item = EntryInfo> + '_ {
        (0..self.len).map(|i| self.entry(i).expect("in range"))
    }

    fn check_query(&self, query: &[f32]) -> Result<f32> {
        if query.len() != self.dim {
            return Err(Error::Config(format!(
                "query has dimension {} but the map stores {}",
                query.len(),
                self.dim
            )));
        }
        let n = query.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::Input("query feature is zero or not finite".into()));
        }
        Ok(n as f32)
    }

    /// Cosine similarity of every entry to `query`, in insertion order.
    pub fn similarities(&self, query: &[f32]) -> Result<Vec<f32>> {
        let qn = self.check_query(query)?;
        let mut out = Vec::with_capacity(self.len);
        for b in &self.blocks {
            for (f, &n) in b.features.chunks_exact(self.dim).zip(&b.norms) {
                out.push(dot_f32(query, f) / (qn * n));
            }
        }
        Ok(out)
    }

    fn hit(&self, index: usize, score: f32) -> Hit {
        let e = self.entry(index).expect("in range");
        Hit {
            index,
            position: e.position,
            score: score as f64,
            frame: e.frame,
            scale: e.scale,
        }
    }

    /// Entries whose similarity is strictly above `theta`, in insertion order.
    pub fn retrieve(&self, query: &[f32], theta: f64) -> Result<Vec<Hit>> {
        let sims = self.similarities(query)?;
        Ok(sims
            .iter()
            .enumerate()
            .filter(|(_, &s)| s as f64 > theta)
            .map(|(i, &s)| self.hit(i, s))
            .collect())
    }

    /// The `k` most similar entries, best first; ties go to the earlier entry.
    pub fn top_k(&self, query: &[f32], k: usize) -> Result<Vec<Hit>> {
        let sims = self.similarities(query)?;
        let mut idx: Vec<usize> = (0..sims.len()).collect();
        let cmp = |a: &usize, b: &usize| sims[*b].total_cmp(&sims[*a]).then(a.cmp(b));
        if k < idx.len() {
            idx.select_nth_unstable_by(k, cmp);
            idx.truncate(k);
        }
        idx.sort_by(cmp);
        Ok(idx.into_iter().map(|i| self.hit(i, sims[i])).collect())
    }

    /// Axis-aligned XY bounds of all entries, `None` when empty.
    pub fn xy_bounds(&self) -> Option<([f64; 2], [f64; 2])> {
        let mut it = self.entries();
        let first = it.next()?;
        let mut lo = [first.position[0] as f64, first.position[1] as f64];
        let mut hi = lo;
        for e in it {
            for a in 0..2 {
                lo[a] = lo[a].min(e.position[a] as f64);
                hi[a] = hi[a].max(e.position[a] as f64);
            }
        }
        Some((lo, hi))
    }

    /// Per-cell maximum similarity on a top-down grid.
    pub fn heatmap(&self, query: &[f32], spec: &HeatmapSpec) -> Result<Heatmap> {
        spec.validate()?;
        let sims = self.similarities(query)?;
        let mut values = vec![HEATMAP_EMPTY; spec.width as usize * spec.height as usize];
        for (i, &s) in sims.iter().enumerate() {
            let p = self.entry(i).expect("in range").position;
            if let Some((cx, cy)) = spec.cell_of(p[0] as f64, p[1] as f64) {
                let v = &mut values[cy * spec.width as usize + cx];
                if s > *v {
                    *v = s;
                }
            }
        }
        Ok(Heatmap {
            spec: *spec,
            values,
        })
    }

    /// Writes `x,y,z,frame,scale,score` rows for every entry.
    pub fn export_csv(&self, query: &[f32], path: &Path) -> Result<()> {
        let sims = self.similarities(query)?;
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let res = (|| -> std::io::Result<()> {
            writeln!(w, "x,y,z,frame,scale,score")?;
            for (e, s) in self.entries().zip(&sims) {
                let p = e.position;
                writeln!(w, "{},{},{},{},{},{}", p[0], p[1], p[2], e.frame, e.scale, s)?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }

    /// Averages entries that share a voxel and a scale: mean position and
    /// renormalized mean feature, keeping the latest frame id.
    pub fn voxel_pool(&self, voxel: f64) -> Result<FeatureMap> {
        if !(voxel > 0.0) {
            return Err(Error::Config("voxel size must be positive".into()));
        }
        let mut slots: std::collections::HashMap<(i64, i64, i64, i32), usize> = Default::default();
        let mut acc: Vec<([f64; 3], Vec<f64>, u32, i32, usize)> = Vec::new();
        for e in self.entries() {
            let key = (
                (e.position[0] as f64 / voxel).floor() as i64,
                (e.position[1] as f64 / voxel).floor() as i64,
                (e.position[2] as f64 / voxel).floor() as i64,
                e.scale,
            );
            let slot = *slots.entry(key).or_insert_with(|| {
                acc.push(([0.0; 3], vec![0.0; self.dim], e.frame, e.scale, 0));
                acc.len() - 1
            });
            let a = &mut acc[slot];
            for k in 0..3 {
                a.0[k] += e.position[k] as f64;
            }
            let f = self.feature(e.index).expect("in range");
            let n = self.blocks[e.index / BLOCK].norms[e.index % BLOCK] as f64;
            for (s, &v) in a.1.iter_mut().zip(f) {
                *s += v as f64 / n;
            }
            a.2 = a.2.max(e.frame);
            a.4 += 1;
        }
        let mut out = FeatureMap::new(self.dim)?;
        for (p, f, frame, scale, n) in acc {
            let c = Point3::new(p[0] / n as f64, p[1] / n as f64, p[2] / n as f64);
            let f = FeatureVector::normalize(&f)?;
            out.insert(c, frame, scale, f.as_slice())?;
        }
        Ok(out)
    }

    /// Saves the binary map and, when given, a JSON sidecar at
    /// `<path>.meta.json`.
    pub fn save(&self, path: &Path, meta: Option<&MapMeta>) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let res = (|| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_all(&[VERSION])?;
            w.write_all(&(self.dim as u32).to_le_bytes())?;
            w.write_all(&(self.len as u64).to_le_bytes())?;
            for b in &self.blocks {
                for (i, p) in b.positions.iter().enumerate() {
                    for c in p {
                        w.write_all(&c.to_le_bytes())?;
                    }
                    w.write_all(&b.frames[i].to_le_bytes())?;
                    w.write_all(&b.scales[i].to_le_bytes())?;
                    for v in &b.features[i * self.dim..(i + 1) * self.dim] {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))?;
        if let Some(meta) = meta {
            let mp = meta_path(path);
            let text = serde_json::to_string_pretty(meta)
                .map_err(|e| Error::json(mp.display().to_string(), e))?;
            std::fs::write(&mp, text).map_err(|e| Error::io(&mp, e))?;
        }
        Ok(())
    }

    /// Loads a map saved by [`FeatureMap::save`]. The sidecar is optional.
    pub fn load(path: &Path) -> Result<(FeatureMap, Option<MapMeta>)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let map = Self::read_from(&mut BufReader::new(file), Some(file_len))?;
        let mp = meta_path(path);
        let meta = if mp.exists() {
            let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
            let meta: MapMeta =
                serde_json::from_str(&text).map_err(|e| Error::json(mp.display().to_string(), e))?;
            if meta.provider.dim != map.dim {
                return Err(Error::Config(format!(
                    "map sidecar declares dimension {} but the map stores {}",
                    meta.provider.dim, map.dim
                )));
            }
            Some(meta)
        } else {
            None
        };
        Ok((map, meta))
    }

    /// Parses the binary format from any reader. `total_len`, when known,
    /// is checked against the header before reading records.
    pub fn read_from(r: &mut impl Read, total_len: Option<u64>) -> Result<FeatureMap> {
        let mut offset = 0u64;
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, &mut offset, "magic")?;
        if &magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: format!("bad magic {magic:?}, expected \"FMAP\""),
            });
        }
        let mut ver = [0u8; 1];
        read_exact(r, &mut ver, &mut offset, "version")?;
        if ver[0] != VERSION {
            return Err(Error::Format {
                offset: 4,
                reason: format!("unsupported version {}", ver[0]),
            });
        }
        let mut b4 = [0u8; 4];
        read_exact(r, &mut b4, &mut offset, "dimension")?;
        let dim = u32::from_le_bytes(b4) as usize;
        if dim == 0 {
            return Err(Error::Format {
                offset: 5,
                reason: "dimension is zero".into(),
            });
        }
        let mut b8 = [0u8; 8];
        read_exact(r, &mut b8, &mut offset, "entry count")?;
        let count = u64::from_le_bytes(b8);
        let record = 20 + 4 * dim as u64;
        if let Some(total) = total_len {
            let expected = count
                .checked_mul(record)
                .and_then(|n| n.checked_add(HEADER_LEN))
                .ok_or_else(|| Error::Format {
                    offset: 9,
                    reason: format!("entry count {count} overflows"),
                })?;
            if total != expected {
                return Err(Error::Format {
                    offset: total.min(expected),
                    reason: format!(
                        "file holds {total} bytes but {count} records of dimension {dim} need {expected}"
                    ),
                });
            }
        }
        let mut map = FeatureMap::new(dim)?;
        let mut buf = vec![0u8; record as usize];
        let mut feat = vec![0f32; dim];
        for i in 0..count {
            let start = offset;
            read_exact(r, &mut buf, &mut offset, "record")?;
            let f = |k: usize| f32::from_le_bytes(buf[k * 4..k * 4 + 4].try_into().expect("4 bytes"));
            let pos = Point3::new(f(0), f(1), f(2));
            let frame = u32::from_le_bytes(buf[12..16].try_into().expect("4 bytes"));
            let scale = i32::from_le_bytes(buf[16..20].try_into().expect("4 bytes"));
            for (k, v) in feat.iter_mut().enumerate() {
                *v = f(5 + k);
            }
            map.insert(pos, frame, scale, &feat).map_err(|e| Error::Format {
                offset: start,
                reason: format!("record {i}: {e}"),
            })?;
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(|e| Error::Format {
            offset,
            reason: e.to_string(),
        })? != 0
        {
            return Err(Error::Format {
                offset,
                reason: "trailing bytes after the last record".into(),
            });
        }
        Ok(map)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], offset: &mut u64, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Format {
        offset: *offset,
        reason: format!("truncated {what}: {e}"),
    })?;
    *offset += buf.len() as u64;
    Ok(())
}

/// Sidecar path `<path>.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Provider and vocabulary information stored beside a map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub provider: ProviderInfo,
    /// Settings that rebuild the provider, for embedding queries later.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_config: Option<ProviderConfig>,
    #[serde(default)]
    pub scales: Vec<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<LabelVocabulary>,
    #[serde(default)]
    pub frames: usize,
}

/// Top-down raster geometry: cell `(cx, cy)` covers
/// `[origin + c * cell, origin + (c + 1) * cell)` on each axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub origin: [f64; 2],
    pub cell: f64,
    pub width: u32,
    pub height: u32,
}

impl HeatmapSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::Config("heatmap needs a positive cell size and extent".into()));
        }
        Ok(())
    }

    /// Grid covering `lo..=hi` with a one-cell margin.
    pub fn covering(lo: [f64; 2], hi: [f64; 2], cell: f64) -> Self {
        let origin = [lo[0] - cell, lo[1] - cell];
        let width = (((hi[0] - origin[0]) / cell).floor() as u32 + 2).max(1);
        let height = (((hi[1] - origin[1]) / cell).floor() as u32 + 2).max(1);
        Self {
            origin,
            cell,
            width,
            height,
        }
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let cx = ((x - self.origin[0]) / self.cell).floor();
        let cy = ((y - self.origin[1]) / self.cell).floor();
        if cx < 0.0 || cy < 0.0 || cx >= self.width as f64 || cy >= self.height as f64 {
            return None;
        }
        Some((cx as usize, cy as usize))
    }
}

/// Max similarity per cell, row-major with row 0 at the smallest y.
/// Empty cells hold [`HEATMAP_EMPTY`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub spec: HeatmapSpec,
    pub values: Vec<f32>,
}

impl Heatmap {
    pub fn get(&self, cx: usize, cy: usize) -> f32 {
        self.values[cy * self.spec.width as usize + cx]
    }

    /// 8-bit gray levels: `(s + 1) / 2 * 255`, empty cells 0. The first
    /// image row is the largest y so north is up.
    pub fn to_gray(&self) -> Vec<u8> {
        let (w, h) = (self.spec.width as usize, self.spec.height as usize);
        let mut out = Vec::with_capacity(w * h);
        for row in (0..h).rev() {
            for &s in &self.values[row * w..(row + 1) * w] {
                out.push(if s == HEATMAP_EMPTY {
                    0
                } else {
                    (((s.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8
                });
            }
        }
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        write_pgm(path, self.spec.width, self.spec.height, &self.to_gray())
    }
}

/// Binary PGM (P5), 8-bit.
pub fn write_pgm(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<()> {
    let mut data = format!("P5\n{width} {height}\n255\n").into_bytes();
    data.extend_from_slice(pixels);
    std::fs::write(path, data).map_err(|e| Error::io(path, e))
}
