//! Synthetic test worlds: rendering, agent motion, episodes and metrics.

pub mod agent;
pub mod bench;
pub mod metrics;
pub mod render;
pub mod run;
pub mod session;
pub mod world;

pub use agent::{AgentConfig, AgentState};
pub use bench::{run_bench, BenchConfig, BenchReport};
pub use metrics::{check_success, evaluate_retrieval, RetrievalEval};
pub use render::{Frame, Scene};
pub use run::{run_suite, RunConfig, RunReport};
pub use session::{EpisodeResult, Session, SessionConfig, SubgoalOutcome};
pub use world::World;
