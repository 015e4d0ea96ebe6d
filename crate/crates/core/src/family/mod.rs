//! The universal model, the balance model, their updates and the training loop.

pub mod models;
pub mod space;
pub mod train;
pub mod updates;

pub use models::{act, ActMode, BalanceModel, PolicyHead, UniversalModel};
pub use space::{sample_offline_beta, BalanceSpace};
pub use train::{Phase, RunLog, TrainRun};
