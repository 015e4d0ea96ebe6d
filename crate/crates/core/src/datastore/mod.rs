//! Offline datasets, the replay buffer and per-episode statistics.

pub mod buffer;
pub mod jsonl;
pub mod returns;
pub mod transition;

pub use buffer::ReplayBuffer;
pub use jsonl::{load_jsonl, save_jsonl};
pub use returns::trajectory_returns;
pub use transition::{Action, Transition};
