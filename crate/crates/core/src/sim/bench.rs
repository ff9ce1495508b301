//! Timing harness: per-frame mapping cost against retrieval cost.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{FeatureVector, SyntheticConfig, SyntheticProvider};
use crate::error::{Error, Result};
use crate::feature_map::FeatureMap;
use crate::geometry::{Intrinsics, Point3};
use crate::mapper::{Mapper, MapperConfig, Observation};
use crate::obstacle::{ObstacleConfig, ObstacleGrid};
use crate::vocab::LabelVocabulary;

use super::agent::{AgentConfig, AgentState};
use super::render::Scene;
use super::run::Percentiles;
use super::world::World;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Entries in the retrieval map.
    pub entries: usize,
    pub dim: usize,
    /// Frames pushed through the mapper.
    pub frames: usize,
    /// Retrieval repetitions.
    pub queries: usize,
    pub theta: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            entries: 100_000,
            dim: 512,
            frames: 20,
            queries: 20,
            theta: 0.27,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub patches_per_frame: usize,
    /// Whole mapping step per frame, obstacle update included.
    pub mapping_ms: Percentiles,
    /// Threshold retrieval over `entries` features.
    pub retrieval_ms: Percentiles,
    pub top1_ms: Percentiles,
}

impl BenchReport {
    pub fn table(&self) -> String {
        let row = |name: &str, p: &Percentiles| {
            format!("{name:<22} {:>10.3} {:>10.3} {:>10.3}\n", p.p50, p.p90, p.max)
        };
        let mut s = format!(
            "dim {}  entries {}  frames {}  patches/frame {}\n",
            self.config.dim, self.config.entries, self.config.frames, self.patches_per_frame
        );
        s.push_str(&format!("{:<22} {:>10} {:>10} {:>10}\n", "stage (ms)", "p50", "p90", "max"));
        s.push_str(&row("mapping / frame", &self.mapping_ms));
        s.push_str(&row("retrieval (threshold)", &self.retrieval_ms));
        s.push_str(&row("retrieval (top-1)", &self.top1_ms));
        s
    }
}

/// A map of `n` random unit features scattered over a 10 m x 10 m floor.
pub fn random_map(n: usize, dim: usize, seed: u64) -> Result<FeatureMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = FeatureMap::new(dim)?;
    let mut v = vec![0.0f64; dim];
    for i in 0..n {
        for x in v.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        let f = FeatureVector::normalize(&v)?;
        let p = Point3::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..2.0));
        map.insert(p, (i / 25) as u32, 0, f.as_slice())?;
    }
    Ok(map)
}

/// Mapping at 640x480 with scales [1, 0, -1] (25 patches per frame) in a
/// standard world, then retrieval over a random map of the requested size.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.dim == 0 || cfg.frames == 0 || cfg.entries == 0 || cfg.queries == 0 {
        return Err(Error::Config("bench sizes must be positive".into()));
    }
    let vocab = LabelVocabulary::standard();
    let provider = Arc::new(SyntheticProvider::new(
        SyntheticConfig {
            dim: cfg.dim,
            seed: cfg.seed,
            ..Default::default()
        },
        vocab.clone(),
    )?);
    let world = World::standard("house1_floor1")?;
    let spawn = world.spawn_points[0];
    let scene = Scene::new(world, vocab)?;
    let k = Intrinsics::new(320.0, 320.0, 320.0, 240.0, 640, 480)?;
    let agent_cfg = AgentConfig::default();
    let mut mapper = Mapper::new(provider.clone(), MapperConfig::default())?;
    let mut grid = ObstacleGrid::new(ObstacleConfig::default(), [spawn[0], spawn[1]])?;
    let mut mapping = Vec::with_capacity(cfg.frames);
    let mut patches = 0;
    for i in 0..cfg.frames {
        let agent = AgentState::new(spawn[0], spawn[1], spawn[2] + 15.0 * i as f64);
        let pose = agent.pose(&agent_cfg);
        let view = scene.render(&pose, &k);
        let obs = Observation::with_labels(i as u32, &pose, &k, &view.depth, &view.labels);
        let t = Instant::now();
        let stats = mapper.process(&obs, Some(&mut grid))?;
        mapping.push(t.elapsed().as_secs_f64() * 1e3);
        patches = stats.patches;
    }

    let map = random_map(cfg.entries, cfg.dim, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut retrieval = Vec::with_capacity(cfg.queries);
    let mut top1 = Vec::with_capacity(cfg.queries);
    let mut q = vec![0.0f64; cfg.dim];
    for _ in 0..cfg.queries {
        for x in q.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        let f = FeatureVector::normalize(&q)?;
        let t = Instant::now();
        let hits = map.retrieve(&f, cfg.theta)?;
        retrieval.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(hits);
        let t = Instant::now();
        let best = map.top_k(&f, 1)?;
        top1.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(best);
    }
    Ok(BenchReport {
        config: cfg.clone(),
        patches_per_frame: patches,
        mapping_ms: Percentiles::of(&mapping),
        retrieval_ms: Percentiles::of(&retrieval),
        top1_ms: Percentiles::of(&top1),
    })
}
