//! Small dense-network toolkit: MLPs with manual gradients, Adam, policy heads
//! and the balance-coefficient encoding.

pub mod adam;
pub mod checkpoint;
pub mod encoding;
pub mod heads;
pub mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use encoding::BalanceEncoder;
pub use heads::{GaussianHead, SoftmaxHead};
pub use mlp::{Mlp, MlpGrads, Tape};
