//! Offline datasets built from a run config.

use std::collections::BTreeMap;

use crate::cli::config::{EnvKind, RunConfig};
use crate::datastore::jsonl::load_jsonl;
use crate::datastore::transition::Transition;
use crate::envs::maze::{collect_maze_dataset, MazeSpec, Route};
use crate::envs::pointmass::{collect_pointmass_dataset, PointMassSpec};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Transitions plus a route label per episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Collected {
    pub transitions: Vec<Transition>,
    pub labels: BTreeMap<u64, String>,
}

fn route_label(r: Route) -> &'static str {
    match r {
        Route::Upper => "upper",
        Route::Lower => "lower",
        Route::Guided => "guided",
        Route::Random => "random",
    }
}

/// Collects the configured dataset with the seed's data stream.
pub fn collect(cfg: &RunConfig, seed: u64) -> Result<Collected> {
    let mut rng = stream(seed, Stream::Data);
    match cfg.run.env {
        EnvKind::Maze => {
            if cfg.maze.episodes == 0 {
                return Err(Error::config("maze.episodes", "must be at least 1"));
            }
            let eps = collect_maze_dataset(&MazeSpec::default(), cfg.maze.dataset, cfg.maze.episodes, &mut rng)?;
            let mut labels = BTreeMap::new();
            let mut transitions = Vec::new();
            for e in &eps {
                labels.insert(e.id, route_label(e.route).to_string());
                transitions.extend(e.moves.iter().map(Transition::from));
            }
            Ok(Collected { transitions, labels })
        }
        EnvKind::Pointmass => {
            if cfg.pointmass.episodes == 0 {
                return Err(Error::config("pointmass.episodes", "must be at least 1"));
            }
            let moves = collect_pointmass_dataset(&PointMassSpec::default(), cfg.pointmass.episodes, cfg.pointmass.noise_std, &mut rng);
            let labels = (0..cfg.pointmass.episodes as u64)
                .map(|e| (e, if e % 2 == 0 { "noisy_greedy" } else { "random" }.to_string()))
                .collect();
            Ok(Collected {
                transitions: moves.iter().map(Transition::from).collect(),
                labels,
            })
        }
    }
}

/// The dataset a training run starts from: the configured file, or a fresh
/// in-memory collection.
pub fn offline_dataset(cfg: &RunConfig, seed: u64) -> Result<Vec<Transition>> {
    match &cfg.run.dataset {
        Some(p) => load_jsonl(p),
        None => Ok(collect(cfg, seed)?.transitions),
    }
}
