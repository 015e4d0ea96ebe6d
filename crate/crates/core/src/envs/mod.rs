//! Desk-scale environments.

pub mod finite_mdp;
pub mod maze;
pub mod pointmass;

pub use finite_mdp::{random_finite_mdp, FiniteMdp, StateWeighting};
pub use maze::{collect_maze_dataset, MazeDataset, MazeSpec};
pub use pointmass::{collect_pointmass_dataset, PointMassSpec};
