//! Small-scale learning stack: dense networks with hand-written backprop,
//! Adam, replay, SAC and its multi-task variants, and gradient surgery.

pub mod mlp;
pub mod optim;
pub mod pcgrad;
pub mod replay;
pub mod sac;
pub mod train;

pub use mlp::{Activation, Mlp, Tape};
pub use optim::Adam;
pub use pcgrad::{pcgrad_project, pcgrad_surgery};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use sac::{Algorithm, NamedTensor, SacConfig, SacLearner, UpdateStats};
pub use train::{train, Checkpoint, DiagnosticRow, DiagnosticsWriter, TrainConfig, TrainOutcome, TrainedAgent};
