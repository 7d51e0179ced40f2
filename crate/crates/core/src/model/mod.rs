//! The RallyNet policy: state embedding, experiential context selection, the
//! latent stochastic process, action projection, losses and training.

mod agent;
pub mod config;
pub mod embed;
pub mod heads;
pub mod loss;
mod net;
pub mod train;

pub use agent::RallyNetAgent;
pub use config::{ContextSchedule, LossWeights, ModelConfig};
pub use embed::{PlayerRegistry, GENERIC_PLAYER};
pub use heads::{MixtureParams, StepPrediction};
pub use loss::LossReport;
pub use net::{context_centroid, euler_maruyama, sde_noise, Context, LatentPosition, Process, RallyNet};
pub use train::train;
