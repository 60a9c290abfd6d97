//! Sparse autoencoder `x -> ReLU(W1 x + b1) -> W2 z + b2` trained with a
//! summed squared reconstruction error plus an L1 penalty on the bottleneck.
//! Its per-image reconstruction loss is the memorability proxy.

mod config;
mod model;
mod optim;
mod train;

pub use config::{OptimizerKind, Regime, SaeConfig};
pub use model::{Forward, Gradients, LossBreakdown, SaeModel};
pub use optim::Optimizer;
pub use train::{latent_stats, score, train, EpochReport, LatentStats, TrainReport};
