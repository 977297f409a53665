//! Training loop, evaluation studies and figure output behind the `dvf`
//! command.

pub mod bundle;
pub mod config;
pub mod envs;
pub mod error;
pub mod eval;
pub mod figures;
pub mod train;

pub use bundle::Bundle;
pub use config::{EnvId, RunConfig, RunDir};
pub use error::{HarnessError, Result};
pub use train::{run_training, MetricsRow, Trainer};
