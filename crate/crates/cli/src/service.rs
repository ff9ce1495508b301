//! Live control service. A simulation thread is the only writer of the
//! session; HTTP handlers read it under a shared lock and send commands to
//! the simulation thread over a channel.

use std::path::Path;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use anyhow::Context;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use semmap::feature_map::{HeatmapSpec, HEATMAP_EMPTY};
use semmap::sim::agent::AgentState;
use semmap::sim::run::ResolvedWorld;
use semmap::sim::{RunConfig, Session, SessionConfig};
use semmap::vocab::LabelVocabulary;

use crate::{CliResult, Failure, EXIT_CONFIG, EXIT_PORT_BUSY};

/// Everything needed to (re)create the session.
struct Blueprint {
    world: ResolvedWorld,
    provider: Arc<dyn semmap::embedding::EmbeddingProvider>,
    session: SessionConfig,
    spawn: AgentState,
    /// Queries queued at start, when the config lists them explicitly.
    queries: Vec<String>,
}

impl Blueprint {
    fn session(&self) -> semmap::Result<Session> {
        let mut s = Session::new(
            self.world.scene.clone(),
            self.provider.clone(),
            self.session.clone(),
            self.spawn,
        )?;
        if !self.queries.is_empty() {
            s.push_queries(&self.queries)?;
        }
        Ok(s)
    }
}

struct Live {
    session: Session,
    started: bool,
    running: bool,
    seq: u64,
    error: Option<String>,
}

impl Live {
    fn has_work(&self) -> bool {
        !self.session.is_finished()
            && (self.session.current_query().is_some() || self.session.pending_queries() > 0)
    }
}

type Shared = Arc<RwLock<Live>>;

#[derive(Debug)]
enum Command {
    Query(String),
    Start,
    Pause,
    Step,
    Reset,
}

type Reply = Result<(), (StatusCode, String)>;

#[derive(Clone)]
struct AppState {
    live: Shared,
    commands: mpsc::Sender<(Command, oneshot::Sender<Reply>)>,
}

fn load_blueprint(config: &Path, world_index: usize) -> CliResult<Blueprint> {
    let cfg = RunConfig::load(config).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let vocab = LabelVocabulary::standard();
    let mut worlds = cfg
        .resolve_worlds(config.parent(), &vocab)
        .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    if world_index >= worlds.len() {
        return Err(Failure::new(
            EXIT_CONFIG,
            anyhow::anyhow!("world index {world_index} out of range ({} configured)", worlds.len()),
        ));
    }
    let entry = &cfg.worlds[world_index];
    let world = worlds.swap_remove(world_index);
    let s = entry.spawn.unwrap_or(world.scene.world.spawn_points[0]);
    let provider = cfg.provider.build(&vocab)?;
    let session = cfg.session_config().map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    Ok(Blueprint {
        queries: entry.queries.clone().unwrap_or_default(),
        world,
        provider,
        session,
        spawn: AgentState::new(s[0], s[1], s[2]),
    })
}

pub fn serve(config: &Path, host: &str, port: u16, interval_ms: u64, world: usize) -> CliResult {
    let blueprint = load_blueprint(config, world)?;
    let listener = std::net::TcpListener::bind((host, port))
        .with_context(|| format!("binding {host}:{port}"))
        .map_err(|e| Failure::new(EXIT_PORT_BUSY, e))?;
    listener.set_nonblocking(true).context("configuring listener")?;
    let addr = listener.local_addr().context("reading bound address")?;

    let live = Arc::new(RwLock::new(Live {
        session: blueprint.session().map_err(|e| Failure::new(EXIT_CONFIG, e))?,
        started: false,
        running: false,
        seq: 0,
        error: None,
    }));
    let (tx, rx) = mpsc::channel();
    let sim_live = live.clone();
    let interval = Duration::from_millis(interval_ms);
    std::thread::Builder::new()
        .name("simulation".into())
        .spawn(move || simulation_loop(sim_live, rx, blueprint, interval))
        .context("spawning simulation thread")?;

    let app = router(AppState { live, commands: tx });
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_io()
        .build()
        .context("starting runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        println!("listening on http://{addr}");
        use std::io::Write;
        std::io::stdout().flush()?;
        axum::serve(listener, app).await
    })
    .context("serving")?;
    Ok(())
}

fn write(live: &Shared) -> std::sync::RwLockWriteGuard<'_, Live> {
    live.write().unwrap_or_else(|e| e.into_inner())
}

fn read(live: &Shared) -> std::sync::RwLockReadGuard<'_, Live> {
    live.read().unwrap_or_else(|e| e.into_inner())
}

/// One simulation step under the write lock; 409 when there is nothing to
/// pursue.
fn step_once(live: &Shared) -> Reply {
    let mut g = write(live);
    if !g.has_work() {
        return Err((StatusCode::CONFLICT, "no active query or episode finished".into()));
    }
    g.started = true;
    match g.session.step() {
        Ok(r) => {
            if r.finished {
                g.running = false;
            }
            g.seq += 1;
            Ok(())
        }
        Err(e) => {
            g.running = false;
            g.error = Some(e.to_string());
            g.seq += 1;
            Err((StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
        }
    }
}

fn apply(live: &Shared, blueprint: &Blueprint, cmd: Command) -> Reply {
    match cmd {
        Command::Query(text) => {
            let mut g = write(live);
            g.session
                .set_query(&text)
                .map_err(|e| (StatusCode::BAD_REQUEST, e.to_string()))?;
            g.seq += 1;
            Ok(())
        }
        Command::Start => {
            let mut g = write(live);
            g.started = true;
            g.running = true;
            g.seq += 1;
            Ok(())
        }
        Command::Pause => {
            let mut g = write(live);
            g.running = false;
            g.seq += 1;
            Ok(())
        }
        Command::Step => step_once(live),
        Command::Reset => {
            let session = blueprint
                .session()
                .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            let mut g = write(live);
            g.session = session;
            g.started = false;
            g.running = false;
            g.error = None;
            g.seq += 1;
            Ok(())
        }
    }
}

fn simulation_loop(
    live: Shared,
    rx: mpsc::Receiver<(Command, oneshot::Sender<Reply>)>,
    blueprint: Blueprint,
    interval: Duration,
) {
    let mut next = Instant::now();
    loop {
        let active = {
            let g = read(&live);
            g.running && g.has_work()
        };
        let msg = if active {
            rx.recv_timeout(next.saturating_duration_since(Instant::now()))
        } else {
            rx.recv().map_err(|_| RecvTimeoutError::Disconnected)
        };
        match msg {
            Ok((cmd, reply)) => {
                log::debug!("command {cmd:?}");
                let was_active = active;
                let r = apply(&live, &blueprint, cmd);
                let _ = reply.send(r);
                if !was_active {
                    next = Instant::now() + interval;
                }
            }
            Err(RecvTimeoutError::Timeout) => {
                if let Err((_, e)) = step_once(&live) {
                    log::warn!("step failed: {e}");
                }
                next += interval;
                let now = Instant::now();
                if next < now {
                    next = now;
                }
            }
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/state", get(get_state))
        .route("/v1/grid", get(get_grid))
        .route("/v1/heatmap", get(get_heatmap))
        .route("/v1/map/summary", get(get_summary))
        .route("/v1/query", post(post_query))
        .route("/v1/control", post(post_control))
        .with_state(state)
}

#[derive(Serialize)]
struct PoseOut {
    x: f64,
    y: f64,
    /// Radians in (-pi, pi], counter-clockwise from +x.
    heading: f64,
}

#[derive(Serialize)]
struct StateOut {
    phase: String,
    step: u32,
    theta: f64,
    pose: PoseOut,
    query: Option<String>,
    goals: Vec<[f64; 2]>,
    path: Vec<[f64; 2]>,
    seq: u64,
    running: bool,
    frames: u32,
    trajectory: Vec<[f64; 2]>,
    subgoals: Vec<semmap::sim::SubgoalOutcome>,
    finished: bool,
    error: Option<String>,
}

fn state_of(g: &Live) -> StateOut {
    let nav = g.session.nav_state();
    let phase = if g.started {
        serde_json::to_value(nav.phase)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    } else {
        "IDLE".to_string()
    };
    let a = g.session.agent();
    StateOut {
        phase,
        step: g.session.steps(),
        theta: nav.theta,
        pose: PoseOut {
            x: a.x,
            y: a.y,
            heading: a.heading().sin().atan2(a.heading().cos()),
        },
        query: g.session.current_query().map(str::to_string),
        goals: nav.goals.clone(),
        path: nav.path.clone(),
        seq: g.seq,
        running: g.running,
        frames: g.session.frames(),
        trajectory: g.session.trajectory().to_vec(),
        subgoals: g.session.subgoals().to_vec(),
        finished: g.session.is_finished(),
        error: g.error.clone(),
    }
}

async fn get_state(State(s): State<AppState>) -> Json<StateOut> {
    Json(state_of(&read(&s.live)))
}

#[derive(Deserialize)]
struct GridParams {
    #[serde(default)]
    since: u64,
}

async fn get_grid(State(s): State<AppState>, Query(p): Query<GridParams>) -> Response {
    let g = read(&s.live);
    let delta = g.session.grid().delta_since(p.since);
    Json(serde_json::json!({
        "seq": delta.seq,
        "full": delta.full,
        "spec": delta.spec,
        "rows": delta.rows,
        "codes": {"unknown": 0, "free": 1, "occupied": 2, "inflated": 3},
    }))
    .into_response()
}

#[derive(Deserialize)]
struct HeatmapParams {
    text: String,
    cell: Option<f64>,
}

async fn get_heatmap(State(s): State<AppState>, Query(p): Query<HeatmapParams>) -> Response {
    let text = p.text.trim();
    if text.is_empty() {
        return (StatusCode::BAD_REQUEST, "text is required").into_response();
    }
    let g = read(&s.live);
    let grid = g.session.grid().spec();
    let cell = p.cell.unwrap_or(grid.cell);
    if !(cell > 0.0) {
        return (StatusCode::BAD_REQUEST, "cell must be positive").into_response();
    }
    let spec = HeatmapSpec {
        origin: grid.origin,
        cell,
        width: ((grid.width as f64 * grid.cell / cell).ceil() as u32).max(1),
        height: ((grid.height as f64 * grid.cell / cell).ceil() as u32).max(1),
    };
    let map = g.session.map();
    let values = if map.is_empty() {
        vec![HEATMAP_EMPTY; spec.width as usize * spec.height as usize]
    } else {
        let q = match g.session.mapper().provider().embed_text(text) {
            Ok(q) => q,
            Err(e) => return (StatusCode::BAD_GATEWAY, e.to_string()).into_response(),
        };
        match map.heatmap(&q, &spec) {
            Ok(h) => h.values,
            Err(e) => return (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
        }
    };
    Json(serde_json::json!({
        "text": text,
        "spec": spec,
        "sentinel": HEATMAP_EMPTY,
        "values": values,
    }))
    .into_response()
}

async fn get_summary(State(s): State<AppState>) -> Response {
    let g = read(&s.live);
    let m = g.session.map();
    Json(serde_json::json!({"entries": m.len(), "dim": m.dim(), "frames": m.frame_count()})).into_response()
}

async fn send(s: &AppState, cmd: Command) -> Response {
    let (tx, rx) = oneshot::channel();
    if s.commands.send((cmd, tx)).is_err() {
        return (StatusCode::SERVICE_UNAVAILABLE, "simulation stopped").into_response();
    }
    match rx.await {
        Ok(Ok(())) => Json(serde_json::json!({"ok": true, "seq": read(&s.live).seq})).into_response(),
        Ok(Err((code, msg))) => (code, Json(serde_json::json!({"ok": false, "error": msg}))).into_response(),
        Err(_) => (StatusCode::SERVICE_UNAVAILABLE, "simulation stopped").into_response(),
    }
}

#[derive(Deserialize)]
struct QueryBody {
    text: String,
}

async fn post_query(State(s): State<AppState>, Json(b): Json<QueryBody>) -> Response {
    if b.text.trim().is_empty() {
        return (StatusCode::BAD_REQUEST, "text must not be blank").into_response();
    }
    send(&s, Command::Query(b.text)).await
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum ControlCmd {
    Start,
    Pause,
    Step,
    Reset,
}

#[derive(Deserialize)]
struct ControlBody {
    cmd: ControlCmd,
}

async fn post_control(State(s): State<AppState>, Json(b): Json<ControlBody>) -> Response {
    let cmd = match b.cmd {
        ControlCmd::Start => Command::Start,
        ControlCmd::Pause => Command::Pause,
        ControlCmd::Step => Command::Step,
        ControlCmd::Reset => Command::Reset,
    };
    send(&s, cmd).await
}
