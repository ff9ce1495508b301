//! Per-frame mapping: depth to world points, obstacle update, multi-scale
//! patch embedding and feature-map insertion.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingProvider, PatchContent, PatchSource};
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::geometry::{DepthImage, Intrinsics, PointImage, Pose};
use crate::image::{LabelImage, RgbImage};
use crate::obstacle::ObstacleGrid;
use crate::patching::{patch_centroid, patch_grid, CentroidOptions, PatchLayout};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapperConfig {
    /// Scale indices, strictly decreasing.
    pub scales: Vec<i32>,
    /// Base patch side; `None` uses the provider's input size.
    pub base_size: Option<u32>,
    pub centroid: CentroidOptions,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            scales: vec![1, 0, -1],
            base_size: None,
            centroid: CentroidOptions::default(),
        }
    }
}

/// One frame of input.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub frame: u32,
    pub pose: &'a Pose,
    pub intrinsics: &'a Intrinsics,
    pub depth: &'a DepthImage,
    pub source: PatchSource<'a>,
}

impl<'a> Observation<'a> {
    pub fn with_labels(
        frame: u32,
        pose: &'a Pose,
        intrinsics: &'a Intrinsics,
        depth: &'a DepthImage,
        labels: &'a LabelImage,
    ) -> Self {
        Self {
            frame,
            pose,
            intrinsics,
            depth,
            source: PatchSource::Labels(labels),
        }
    }

    pub fn with_rgb(
        frame: u32,
        pose: &'a Pose,
        intrinsics: &'a Intrinsics,
        depth: &'a DepthImage,
        rgb: &'a RgbImage,
    ) -> Self {
        Self {
            frame,
            pose,
            intrinsics,
            depth,
            source: PatchSource::Rgb(rgb),
        }
    }
}

/// Per-frame counters and timings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub patches: usize,
    pub inserted: usize,
    /// Back-projection, patching, embedding and insertion, milliseconds.
    pub mapping_ms: f64,
    /// Obstacle grid update, milliseconds.
    pub obstacle_ms: f64,
}

pub struct Mapper {
    provider: Arc<dyn EmbeddingProvider>,
    config: MapperConfig,
    map: FeatureMap,
    layout: Option<PatchLayout>,
}

impl Mapper {
    pub fn new(provider: Arc<dyn EmbeddingProvider>, config: MapperConfig) -> Result<Self> {
        let map = FeatureMap::new(provider.dim())?;
        Self::with_map(provider, config, map)
    }

    /// Continues an existing map.
    pub fn with_map(
        provider: Arc<dyn EmbeddingProvider>,
        config: MapperConfig,
        map: FeatureMap,
    ) -> Result<Self> {
        if map.dim() != provider.dim() {
            return Err(Error::Config(format!(
                "map dimension {} differs from provider dimension {}",
                map.dim(),
                provider.dim()
            )));
        }
        if config.scales.is_empty() {
            return Err(Error::Config("at least one scale is required".into()));
        }
        Ok(Self {
            provider,
            config,
            map,
            layout: None,
        })
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn into_map(self) -> FeatureMap {
        self.map
    }

    pub fn provider(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.provider
    }

    pub fn config(&self) -> &MapperConfig {
        &self.config
    }

    pub fn base_size(&self) -> u32 {
        self.config.base_size.unwrap_or_else(|| self.provider.image_size())
    }

    fn layout_for(&mut self, width: u32, height: u32) -> Result<PatchLayout> {
        if let Some(l) = &self.layout {
            if l.width == width && l.height == height {
                return Ok(l.clone());
            }
        }
        let l = patch_grid(width, height, self.base_size(), &self.config.scales)?;
        self.layout = Some(l.clone());
        Ok(l)
    }

    /// Integrates one frame. The obstacle grid, when given, is updated from
    /// the same world points. All accepted patches are embedded in a single
    /// provider call; frames without any accepted patch make no call.
    pub fn process(&mut self, obs: &Observation<'_>, grid: Option<&mut ObstacleGrid>) -> Result<FrameStats> {
        let start = Instant::now();
        let (w, h) = (obs.depth.width(), obs.depth.height());
        let (sw, sh) = match obs.source {
            PatchSource::Labels(l) => (l.width(), l.height()),
            PatchSource::Rgb(r) => (r.width(), r.height()),
        };
        if (sw, sh) != (w, h) {
            return Err(Error::Input(format!(
                "frame {}: image is {sw}x{sh} but depth is {w}x{h}",
                obs.frame
            )));
        }
        let points = PointImage::from_depth(obs.depth, obs.intrinsics, obs.pose)?;
        let mut obstacle_ms = 0.0;
        if let Some(grid) = grid {
            let t = Instant::now();
            grid.integrate(&points, &obs.pose.translation());
            obstacle_ms = t.elapsed().as_secs_f64() * 1e3;
        }
        let layout = self.layout_for(w, h)?;
        let mut accepted = Vec::with_capacity(layout.total());
        for p in &layout.patches {
            if let Some(c) = patch_centroid(&p.rect, &points, &self.config.centroid) {
                accepted.push((p, c));
            }
        }
        if !accepted.is_empty() {
            let batch: Vec<PatchContent<'_>> = accepted
                .iter()
                .map(|(p, _)| PatchContent {
                    rect: p.rect,
                    source: obs.source,
                })
                .collect();
            let features = self.provider.embed_patches(&batch)?;
            for ((p, c), f) in accepted.iter().zip(&features) {
                self.map.insert(*c, obs.frame, p.scale, f.as_slice())?;
            }
        }
        let total_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(FrameStats {
            patches: layout.total(),
            inserted: accepted.len(),
            mapping_ms: total_ms - obstacle_ms,
            obstacle_ms,
        })
    }
}
