//! Cost-aware sequential routing over a bank of embedding experts.
//!
//! A small reinforcement-learning router looks at the embedding of a cheap
//! expert, then either commits to a label or pays to activate a stronger
//! expert. The crate provides the environment, dueling double DQN and PPO
//! agents, a synthetic expert bank, an exact solver for a quantized version
//! of the problem, and evaluation/export helpers.

pub mod bank;
pub mod cli;
pub mod dqn;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod oracle;
pub mod pg;
pub mod preset;
pub mod probe;
pub mod router;
pub mod trainer;

pub use bank::{default_expert_triple, generate_synthetic, load_bank, save_bank, EmbeddingBank, ExpertSpec, Split, SyntheticConfig};
pub use env::{Action, RouterConfig};
pub use error::{Error, Result};
pub use eval::{evaluate, MetricsRecord, RoutingPolicy};
pub use router::{ObservationMode, RouterNetwork};
pub use trainer::{train, AgentKind, SweepGrid, TrainRunConfig};
