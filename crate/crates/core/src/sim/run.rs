//! Batch runs over worlds and queries, and their reports.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::ProviderConfig;
use crate::error::{Error, Result};
use crate::feature_map::MapMeta;
use crate::navigator::NavConfig;
use crate::obslog::{LogSettings, LogWriter};
use crate::obstacle::ObstacleConfig;
use crate::vocab::{LabelGroup, LabelVocabulary};

use super::agent::{AgentConfig, AgentState};
use super::metrics::{evaluate_retrieval, RetrievalEval};
use super::render::Scene;
use super::session::{EpisodeResult, RenderConfig, Session, SessionConfig};
use super::world::{point_in_polygon, World};

/// Name of the live map saved next to each recorded episode log.
pub const LIVE_MAP_FILE: &str = "live.map";

/// Threshold profile: the larger encoder scores matches lower.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Large,
    Small,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One episode per query, each from a fresh map.
    #[default]
    Single,
    /// One episode per world, queries pursued in sequence on one map.
    Multi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldEntry {
    /// `standard:<name>` or a world file path (relative to the config).
    pub world: String,
    /// Defaults to the world's own query list.
    #[serde(default)]
    pub queries: Option<Vec<String>>,
    /// Spawn `[x, y, heading_deg]`; defaults to cycling the world's spawn
    /// points.
    #[serde(default)]
    pub spawn: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub worlds: Vec<WorldEntry>,
    pub provider: ProviderConfig,
    pub profile: Profile,
    /// Field overrides applied on top of the profile's navigator defaults.
    pub nav: serde_json::Value,
    pub scales: Vec<i32>,
    pub seed: u64,
    pub mode: Mode,
    pub render: RenderConfig,
    pub agent: AgentConfig,
    pub obstacle: Option<ObstacleConfig>,
    /// Writes each episode's observation log under `<out>/logs`.
    pub record_logs: bool,
    /// Runs one exploration episode per world and scores retrieval on it.
    pub evaluate_retrieval: bool,
    /// Step budget of each exploration episode.
    pub explore_budget: u32,
    /// Hit radius for retrieval scoring, meters.
    pub retrieval_radius: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            worlds: Vec::new(),
            provider: ProviderConfig::default(),
            profile: Profile::Large,
            nav: serde_json::Value::Null,
            scales: vec![1, 0, -1],
            seed: 7,
            mode: Mode::Single,
            render: RenderConfig::default(),
            agent: AgentConfig::default(),
            obstacle: None,
            record_logs: false,
            evaluate_retrieval: false,
            explore_budget: 1500,
            retrieval_radius: 0.5,
        }
    }
}

fn merge(base: &mut serde_json::Value, over: &serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// One resolved world with its episode list.
#[derive(Clone, Debug)]
pub struct ResolvedWorld {
    pub scene: Arc<Scene>,
    pub queries: Vec<String>,
    pub spawn: Option<[f64; 3]>,
}

impl RunConfig {
    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::json(context, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// The four standard worlds with their default queries.
    pub fn standard() -> Self {
        Self {
            worlds: World::standard_names()
                .into_iter()
                .map(|n| WorldEntry {
                    world: format!("standard:{n}"),
                    queries: None,
                    spawn: None,
                })
                .collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.worlds.is_empty() {
            return Err(Error::Config("no worlds configured".into()));
        }
        for w in &self.worlds {
            if let Some(q) = &w.queries {
                if q.is_empty() {
                    return Err(Error::Config(format!("empty query list for world {:?}", w.world)));
                }
                if q.iter().any(|s| s.trim().is_empty()) {
                    return Err(Error::Config(format!("blank query for world {:?}", w.world)));
                }
            }
        }
        if self.scales.is_empty() {
            return Err(Error::Config("at least one scale is required".into()));
        }
        if !(self.retrieval_radius > 0.0) {
            return Err(Error::Config("retrieval_radius must be positive".into()));
        }
        self.nav_config()?;
        Ok(())
    }

    pub fn nav_config(&self) -> Result<NavConfig> {
        let base = match self.profile {
            Profile::Large => NavConfig::default(),
            Profile::Small => NavConfig::small_provider(),
        };
        if self.nav.is_null() {
            return Ok(base);
        }
        if !self.nav.is_object() {
            return Err(Error::Config("nav overrides must be a JSON object".into()));
        }
        let mut v = serde_json::to_value(&base).map_err(|e| Error::json("nav", e))?;
        merge(&mut v, &self.nav);
        let nav: NavConfig = serde_json::from_value(v).map_err(|e| Error::json("nav", e))?;
        nav.validate()?;
        Ok(nav)
    }

    pub fn session_config(&self) -> Result<SessionConfig> {
        let mut s = SessionConfig {
            render: self.render.clone(),
            agent: self.agent.clone(),
            nav: self.nav_config()?,
            seed: self.seed,
            ..Default::default()
        };
        s.mapper.scales = self.scales.clone();
        s.nav.forward_step = s.agent.forward_step;
        s.nav.turn_step_deg = s.agent.turn_step_deg;
        s.nav.robot_radius = s.agent.radius;
        s.obstacle = self.obstacle.clone().unwrap_or(ObstacleConfig {
            inflation_radius: s.agent.radius + 0.08,
            ..Default::default()
        });
        Ok(s)
    }

    /// Loads every world and checks its queries against the vocabulary.
    pub fn resolve_worlds(&self, base: Option<&Path>, vocab: &LabelVocabulary) -> Result<Vec<ResolvedWorld>> {
        let mut out = Vec::new();
        for entry in &self.worlds {
            let world = World::resolve(&entry.world, base)?;
            let queries = entry.queries.clone().unwrap_or_else(|| world.default_queries());
            if queries.is_empty() {
                return Err(Error::Config(format!("world {:?} has no queries", world.name)));
            }
            for q in &queries {
                let present = world.instances(q).next().is_some() || world.regions(q).next().is_some();
                if vocab.id(q).is_none() || !present {
                    return Err(Error::Config(format!(
                        "query {q:?} has no instance in world {:?}",
                        world.name
                    )));
                }
            }
            if entry.spawn.is_none() && world.spawn_points.is_empty() {
                return Err(Error::Config(format!("world {:?} has no spawn points", world.name)));
            }
            out.push(ResolvedWorld {
                scene: Arc::new(Scene::new(world, vocab.clone())?),
                queries,
                spawn: entry.spawn,
            });
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub count: usize,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Percentiles {
    /// Nearest-rank percentiles.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |p: f64| {
            let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
            v[rank.clamp(1, v.len()) - 1]
        };
        Self {
            count: v.len(),
            p50: at(50.0),
            p90: at(90.0),
            p99: at(99.0),
            max: v[v.len() - 1],
        }
    }
}

/// Mapping vs retrieval time, milliseconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mapping_ms: Percentiles,
    pub obstacle_ms: Percentiles,
    pub retrieval_ms: Percentiles,
    pub wall_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub world: String,
    /// Group of each query, in order.
    pub groups: Vec<LabelGroup>,
    pub result: EpisodeResult,
}

impl RunRow {
    /// Success of the `i`-th query; queries never attempted count as failed.
    pub fn query_success(&self, i: usize) -> bool {
        self.result.subgoals.get(i).is_some_and(|s| s.success)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRate {
    pub group: LabelGroup,
    pub successes: usize,
    pub total: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldRetrieval {
    pub world: String,
    pub eval: RetrievalEval,
    pub map_entries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionSummary {
    pub worlds: Vec<WorldRetrieval>,
    pub precision_at_1: f64,
    pub object_precision_at_1: Option<f64>,
    pub room_precision_at_1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<RunRow>,
    pub success_rate: f64,
    pub group_success: Vec<GroupRate>,
    pub precision: Option<PrecisionSummary>,
    pub timing: Timing,
}

impl RunReport {
    /// Builds the aggregates from rows.
    pub fn from_rows(rows: Vec<RunRow>, precision: Option<PrecisionSummary>, timing: Timing) -> Self {
        let success_rate = if rows.is_empty() {
            0.0
        } else {
            rows.iter().filter(|r| r.result.success).count() as f64 / rows.len() as f64
        };
        let mut group_success = Vec::new();
        for g in [LabelGroup::Object, LabelGroup::Room] {
            let mut total = 0;
            let mut successes = 0;
            for r in &rows {
                for (i, rg) in r.groups.iter().enumerate() {
                    if *rg == g {
                        total += 1;
                        successes += r.query_success(i) as usize;
                    }
                }
            }
            if total > 0 {
                group_success.push(GroupRate {
                    group: g,
                    successes,
                    total,
                    rate: successes as f64 / total as f64,
                });
            }
        }
        Self {
            rows,
            success_rate,
            group_success,
            precision,
            timing,
        }
    }

    pub fn group_rate(&self, g: LabelGroup) -> Option<f64> {
        self.group_success.iter().find(|r| r.group == g).map(|r| r.rate)
    }

    /// Plain-text summary table.
    pub fn table(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:<28} {:>7} {:>6} {:>8}  failure",
            "world", "query", "success", "steps", "path_m"
        );
        for r in &self.rows {
            let q = r.result.queries.join(" > ");
            let _ = writeln!(
                s,
                "{:<16} {:<28} {:>7} {:>6} {:>8.2}  {}",
                r.world,
                q,
                if r.result.success { "yes" } else { "no" },
                r.result.steps,
                r.result.path_length,
                r.result.failure.as_deref().unwrap_or("")
            );
        }
        let _ = writeln!(s, "\nSR {:.3} over {} episodes", self.success_rate, self.rows.len());
        for g in &self.group_success {
            let _ = writeln!(s, "SR {:?}: {:.3} ({}/{})", g.group, g.rate, g.successes, g.total);
        }
        if let Some(p) = &self.precision {
            let _ = writeln!(s, "precision@1 {:.3}", p.precision_at_1);
            if let Some(o) = p.object_precision_at_1 {
                let _ = writeln!(s, "precision@1 objects {o:.3}");
            }
            if let Some(r) = p.room_precision_at_1 {
                let _ = writeln!(s, "precision@1 rooms {r:.3}");
            }
        }
        let t = &self.timing;
        let _ = writeln!(
            s,
            "mapping ms p50 {:.2} p90 {:.2} | retrieval ms p50 {:.3} p90 {:.3} | wall {:.1} s",
            t.mapping_ms.p50, t.mapping_ms.p90, t.retrieval_ms.p50, t.retrieval_ms.p90, t.wall_s
        );
        s
    }
}

/// Representative interior point of a polygon: the vertex mean when it lies
/// inside, else the midpoint of the longest horizontal chord through the
/// polygon's middle row.
fn interior_point(poly: &[[f64; 2]]) -> [f64; 2] {
    let n = poly.len() as f64;
    let m = [
        poly.iter().map(|p| p[0]).sum::<f64>() / n,
        poly.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    if point_in_polygon(m, poly) {
        return m;
    }
    let y = m[1];
    let mut xs: Vec<f64> = Vec::new();
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        if (a[1] > y) != (b[1] > y) {
            xs.push(a[0] + (y - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
        }
    }
    xs.sort_by(f64::total_cmp);
    xs.chunks_exact(2)
        .max_by(|a, b| (a[1] - a[0]).total_cmp(&(b[1] - b[0])))
        .map(|c| [0.5 * (c[0] + c[1]), y])
        .unwrap_or(m)
}

/// Scripted exploration tour: spin in place, then visit every floor region
/// in file order and spin again on arrival. Returns the steps used.
pub fn explore_tour(session: &mut Session, budget: u32) -> Result<u32> {
    let start = session.steps();
    session.look_around()?;
    let targets: Vec<[f64; 2]> = session
        .scene()
        .world
        .floor_regions
        .iter()
        .map(|r| interior_point(&r.polygon))
        .collect();
    for t in targets {
        let used = session.steps() - start;
        if used >= budget {
            break;
        }
        session.explore(&[t], budget - used)?;
        if session.steps() - start < budget {
            session.look_around()?;
        }
    }
    Ok(session.steps() - start)
}

fn spawn_for(world: &ResolvedWorld, i: usize) -> AgentState {
    let s = world
        .spawn
        .unwrap_or_else(|| world.scene.world.spawn_points[i % world.scene.world.spawn_points.len()]);
    AgentState::new(s[0], s[1], s[2])
}

/// Runs every configured episode. `out`, when given, receives observation
/// logs if the config asks for them.
pub fn run_suite(cfg: &RunConfig, base: Option<&Path>, out: Option<&Path>) -> Result<RunReport> {
    cfg.validate()?;
    let wall = std::time::Instant::now();
    let vocab = LabelVocabulary::standard();
    let provider = cfg.provider.build(&vocab)?;
    let worlds = cfg.resolve_worlds(base, &vocab)?;
    let scfg = cfg.session_config()?;
    let mut rows = Vec::new();
    let mut mapping = Vec::new();
    let mut obstacle = Vec::new();
    let mut retrieval = Vec::new();
    let mut episode = 0usize;
    let start_log = |session: &mut Session, tag: &str| -> Result<()> {
        if let (true, Some(out)) = (cfg.record_logs, out) {
            let dir: PathBuf = out.join("logs").join(tag);
            let w = LogWriter::create(&dir, &vocab)?;
            w.write_settings(&LogSettings {
                provider: cfg.provider.clone(),
                scales: cfg.scales.clone(),
            })?;
            session.record_to(w);
        }
        Ok(())
    };
    for world in &worlds {
        let groups = |qs: &[String]| -> Vec<LabelGroup> {
            qs.iter()
                .map(|q| world.scene.vocab.group(world.scene.vocab.id(q).expect("checked")))
                .collect()
        };
        let batches: Vec<Vec<String>> = match cfg.mode {
            Mode::Single => world.queries.iter().map(|q| vec![q.clone()]).collect(),
            Mode::Multi => vec![world.queries.clone()],
        };
        for (i, qs) in batches.iter().enumerate() {
            let mut session = Session::new(world.scene.clone(), provider.clone(), scfg.clone(), spawn_for(world, i))?;
            start_log(&mut session, &format!("{:03}_{}", episode, world.scene.world.name))?;
            session.push_queries(qs)?;
            while !session.is_finished() {
                let r = session.step()?;
                mapping.push(r.frame.mapping_ms);
                obstacle.push(r.frame.obstacle_ms);
                retrieval.push(r.retrieval_ms);
            }
            if let Some(w) = session.take_log() {
                let dir = w.dir().to_path_buf();
                w.finish()?;
                let meta = MapMeta {
                    provider: provider.info(),
                    provider_config: Some(cfg.provider.clone()),
                    scales: cfg.scales.clone(),
                    vocabulary: Some(vocab.clone()),
                    frames: session.frames() as usize,
                };
                session.map().save(&dir.join(LIVE_MAP_FILE), Some(&meta))?;
            }
            log::info!(
                "{} {:?}: {}",
                world.scene.world.name,
                qs,
                if session.result().success { "success" } else { "failure" }
            );
            rows.push(RunRow {
                world: world.scene.world.name.clone(),
                groups: groups(qs),
                result: session.result(),
            });
            episode += 1;
        }
    }
    let precision = if cfg.evaluate_retrieval {
        let mut per = Vec::new();
        for world in &worlds {
            let mut session = Session::new(world.scene.clone(), provider.clone(), scfg.clone(), spawn_for(world, 0))?;
            explore_tour(&mut session, cfg.explore_budget)?;
            let eval = evaluate_retrieval(&world.scene, session.map(), provider.as_ref(), cfg.retrieval_radius)?;
            per.push(WorldRetrieval {
                world: world.scene.world.name.clone(),
                map_entries: session.map().len(),
                eval,
            });
        }
        Some(pool_precision(per))
    } else {
        None
    };
    let timing = Timing {
        mapping_ms: Percentiles::of(&mapping),
        obstacle_ms: Percentiles::of(&obstacle),
        retrieval_ms: Percentiles::of(&retrieval),
        wall_s: wall.elapsed().as_secs_f64(),
    };
    Ok(RunReport::from_rows(rows, precision, timing))
}

/// Pools per-world retrieval rows into overall rates.
pub fn pool_precision(worlds: Vec<WorldRetrieval>) -> PrecisionSummary {
    let rows: Vec<_> = worlds.iter().flat_map(|w| w.eval.rows.iter()).collect();
    let rate = |g: Option<LabelGroup>| {
        let sel: Vec<_> = rows.iter().filter(|r| g.is_none_or(|g| r.group == g)).collect();
        (!sel.is_empty()).then(|| sel.iter().filter(|r| r.hit).count() as f64 / sel.len() as f64)
    };
    PrecisionSummary {
        precision_at_1: rate(None).unwrap_or(0.0),
        object_precision_at_1: rate(Some(LabelGroup::Object)),
        room_precision_at_1: rate(Some(LabelGroup::Room)),
        worlds,
    }
}
