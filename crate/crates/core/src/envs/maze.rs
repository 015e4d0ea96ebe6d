//! Grid maze with two crossings through a dividing wall.
//!
//! Default 6x6 layout (`#` wall, `U`/`L` crossings, `G` goal, rows top to bottom):
//!
//! ```text
//! . . . # # #
//! . . . U . .
//! . . . # . .
//! . . . # . .
//! . . . L . .
//! . . . # . G
//! ```
//!
//! Agents start in the free cells of the top row. Every start reaches the goal
//! through either crossing in the same number of moves, so route choice alone
//! does not decide quality; guidance does.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub type Cell = (usize, usize);

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const N_ACTIONS: usize = 4;

pub const STEP_REWARD: f64 = -1.0;
pub const GOAL_REWARD: f64 = 10.0;

/// Unit displacement `(drow, dcol)` of an action.
pub fn displacement(action: usize) -> (f64, f64) {
    match action {
        UP => (-1.0, 0.0),
        DOWN => (1.0, 0.0),
        LEFT => (0.0, -1.0),
        _ => (0.0, 1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeSpec {
    pub width: usize,
    pub height: usize,
    pub walls: BTreeSet<Cell>,
    pub start_row: usize,
    pub goal: Cell,
    pub upper_crossing: Cell,
    pub lower_crossing: Cell,
    pub max_episode_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MazeStep {
    pub next: Cell,
    pub reward: f64,
    /// Goal reached.
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MazeFeatures {
    #[default]
    OneHot,
    /// Row and column scaled to [0, 1].
    Coords,
}

impl Default for MazeSpec {
    fn default() -> Self {
        let mut walls: BTreeSet<Cell> = (0..6).filter(|&r| r != 1 && r != 4).map(|r| (r, 3)).collect();
        walls.insert((0, 4));
        walls.insert((0, 5));
        Self {
            width: 6,
            height: 6,
            walls,
            start_row: 0,
            goal: (5, 5),
            upper_crossing: (1, 3),
            lower_crossing: (4, 3),
            max_episode_steps: 100,
        }
    }
}

impl MazeSpec {
    pub fn in_bounds(&self, c: Cell) -> bool {
        c.0 < self.height && c.1 < self.width
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.walls.contains(&c)
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&c| self.is_free(c))
            .collect()
    }

    pub fn start_cells(&self) -> Vec<Cell> {
        (0..self.width)
            .map(|c| (self.start_row, c))
            .filter(|&c| self.is_free(c))
            .collect()
    }

    pub fn index(&self, c: Cell) -> usize {
        c.0 * self.width + c.1
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn feature_dim(&self, kind: MazeFeatures) -> usize {
        match kind {
            MazeFeatures::OneHot => self.n_cells(),
            MazeFeatures::Coords => 2,
        }
    }

    pub fn features(&self, c: Cell, kind: MazeFeatures) -> Vec<f64> {
        match kind {
            MazeFeatures::OneHot => {
                let mut v = vec![0.0; self.n_cells()];
                v[self.index(c)] = 1.0;
                v
            }
            MazeFeatures::Coords => vec![
                c.0 as f64 / (self.height - 1).max(1) as f64,
                c.1 as f64 / (self.width - 1).max(1) as f64,
            ],
        }
    }

    fn neighbor(&self, c: Cell, action: usize) -> Option<Cell> {
        let (r, col) = (c.0 as isize, c.1 as isize);
        let (nr, nc) = match action {
            UP => (r - 1, col),
            DOWN => (r + 1, col),
            LEFT => (r, col - 1),
            _ => (r, col + 1),
        };
        if nr < 0 || nc < 0 {
            return None;
        }
        let n = (nr as usize, nc as usize);
        self.is_free(n).then_some(n)
    }

    pub fn step(&self, state: Cell, action: usize) -> Result<MazeStep> {
        if action >= N_ACTIONS {
            return Err(Error::contract(format!("maze action {action} outside 0..4")));
        }
        if !self.is_free(state) {
            return Err(Error::contract(format!("maze state {state:?} is a wall or out of bounds")));
        }
        let next = self.neighbor(state, action).unwrap_or(state);
        let terminal = next == self.goal;
        Ok(MazeStep {
            next,
            reward: if terminal { GOAL_REWARD } else { STEP_REWARD },
            terminal,
        })
    }

    /// Move distances to the goal, with `blocked` treated as walls.
    pub fn distances_avoiding(&self, blocked: &BTreeSet<Cell>) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_cells()];
        let mut queue = VecDeque::new();
        dist[self.index(self.goal)] = Some(0);
        queue.push_back(self.goal);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.index(c)].unwrap();
            for a in 0..N_ACTIONS {
                if let Some(n) = self.neighbor(c, a) {
                    if !blocked.contains(&n) && dist[self.index(n)].is_none() {
                        dist[self.index(n)] = Some(d + 1);
                        queue.push_back(n);
                    }
                }
            }
        }
        dist
    }

    pub fn distances(&self) -> Vec<Option<usize>> {
        self.distances_avoiding(&BTreeSet::new())
    }

    /// First action (in `UP, DOWN, LEFT, RIGHT` order) that decreases `dist`.
    pub fn greedy_action(&self, c: Cell, dist: &[Option<usize>]) -> Option<usize> {
        let d = dist[self.index(c)]?;
        (0..N_ACTIONS).find(|&a| {
            self.neighbor(c, a)
                .and_then(|n| dist[self.index(n)])
                .is_some_and(|nd| nd + 1 == d)
        })
    }

    /// Distances used by guidance: shortest paths that never use the upper crossing.
    pub fn guided_distances(&self) -> Vec<Option<usize>> {
        self.distances_avoiding(&BTreeSet::from([self.upper_crossing]))
    }

    /// Cells where collection switches to guided behaviour: the part of the
    /// start side of the wall at or below the lower crossing's approach row,
    /// plus the lower crossing itself.
    pub fn guidance_region(&self) -> BTreeSet<Cell> {
        let split = (self.upper_crossing.0 + self.lower_crossing.0).div_ceil(2);
        let mut region: BTreeSet<Cell> = self
            .free_cells()
            .into_iter()
            .filter(|c| c.0 >= split && c.1 < self.lower_crossing.1)
            .collect();
        region.insert(self.lower_crossing);
        region
    }

    /// Cells a guided episode can occupy: the guidance region and the guided
    /// path from the lower crossing to the goal (goal excluded).
    pub fn guided_route_cells(&self) -> BTreeSet<Cell> {
        let dist = self.guided_distances();
        let mut cells = self.guidance_region();
        let mut c = self.lower_crossing;
        while c != self.goal {
            cells.insert(c);
            let a = self.greedy_action(c, &dist).expect("goal reachable from lower crossing");
            c = self.neighbor(c, a).unwrap();
        }
        cells
    }

    /// Free non-goal cells that are not on the guided route.
    pub fn unguided_route_cells(&self) -> BTreeSet<Cell> {
        let guided = self.guided_route_cells();
        self.free_cells()
            .into_iter()
            .filter(|c| *c != self.goal && !guided.contains(c))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.upper_crossing == self.lower_crossing {
            return Err(Error::contract("crossings must differ"));
        }
        for c in [self.goal, self.upper_crossing, self.lower_crossing] {
            if !self.is_free(c) {
                return Err(Error::contract(format!("cell {c:?} must be free")));
            }
        }
        if self.start_cells().is_empty() {
            return Err(Error::contract("no free start cell"));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::contract("max_episode_steps must be positive"));
        }
        let all = self.distances();
        let no_upper = self.distances_avoiding(&BTreeSet::from([self.upper_crossing]));
        let no_lower = self.distances_avoiding(&BTreeSet::from([self.lower_crossing]));
        for s in self.start_cells() {
            if all[self.index(s)].is_none() {
                return Err(Error::contract(format!("goal unreachable from {s:?}")));
            }
        }
        // Each crossing must sit on some start-to-goal path: blocking the
        // other crossing must leave the goal reachable from some start.
        let reach = |d: &[Option<usize>]| self.start_cells().iter().any(|&s| d[self.index(s)].is_some());
        if !reach(&no_upper) || !reach(&no_lower) {
            return Err(Error::contract("both crossings must lie on a start-goal path"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MazeDataset {
    /// Alternating guided (lower crossing) and unguided (upper crossing) episodes.
    #[default]
    Mixed,
    /// Every episode follows guided shortest paths from its start.
    GuidedOnly,
    /// Every episode acts uniformly at random.
    RandomOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Upper,
    Lower,
    Guided,
    Random,
}

/// One recorded maze move.
#[derive(Debug, Clone, PartialEq)]
pub struct MazeMove {
    pub episode: u64,
    pub t: usize,
    pub state: Cell,
    pub action: usize,
    pub reward: f64,
    pub next: Cell,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MazeEpisode {
    pub id: u64,
    pub route: Route,
    pub moves: Vec<MazeMove>,
}

impl MazeEpisode {
    pub fn total_return(&self) -> f64 {
        self.moves.iter().map(|m| m.reward).sum()
    }

    pub fn reached_goal(&self) -> bool {
        self.moves.last().is_some_and(|m| m.terminal)
    }
}

fn random_action_avoiding(spec: &MazeSpec, c: Cell, forbidden: &BTreeSet<Cell>, rng: &mut Rng) -> usize {
    let allowed: Vec<usize> = (0..N_ACTIONS)
        .filter(|&a| spec.neighbor(c, a).is_none_or(|n| !forbidden.contains(&n)))
        .collect();
    allowed[rng.random_range(0..allowed.len())]
}

pub fn collect_maze_dataset(spec: &MazeSpec, kind: MazeDataset, n_episodes: usize, rng: &mut Rng) -> Result<Vec<MazeEpisode>> {
    spec.validate()?;
    let starts = spec.start_cells();
    let guided = spec.guided_distances();
    let region = spec.guidance_region();
    let lower_forbidden = BTreeSet::from([spec.upper_crossing]);
    let none = BTreeSet::new();
    let mut out = Vec::with_capacity(n_episodes);
    for ep in 0..n_episodes {
        let route = match kind {
            MazeDataset::Mixed if ep % 2 == 0 => Route::Lower,
            MazeDataset::Mixed => Route::Upper,
            MazeDataset::GuidedOnly => Route::Guided,
            MazeDataset::RandomOnly => Route::Random,
        };
        let mut c = starts[rng.random_range(0..starts.len())];
        let mut moves = Vec::new();
        let mut guiding = route == Route::Guided;
        for t in 0..spec.max_episode_steps {
            if route == Route::Lower && region.contains(&c) {
                guiding = true;
            }
            let action = if guiding {
                spec.greedy_action(c, &guided).expect("guided route reaches goal")
            } else {
                match route {
                    Route::Upper => random_action_avoiding(spec, c, &region, rng),
                    Route::Lower => random_action_avoiding(spec, c, &lower_forbidden, rng),
                    _ => random_action_avoiding(spec, c, &none, rng),
                }
            };
            let st = spec.step(c, action)?;
            moves.push(MazeMove {
                episode: ep as u64,
                t,
                state: c,
                action,
                reward: st.reward,
                next: st.next,
                terminal: st.terminal,
            });
            c = st.next;
            if st.terminal {
                break;
            }
        }
        out.push(MazeEpisode {
            id: ep as u64,
            route,
            moves,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn default_layout_is_valid() {
        let spec = MazeSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.start_cells(), vec![(0, 0), (0, 1), (0, 2)]);
    }

    #[test]
    fn blocked_move_stays() {
        let spec = MazeSpec::default();
        let st = spec.step((0, 2), RIGHT).unwrap();
        assert_eq!(st, MazeStep { next: (0, 2), reward: -1.0, terminal: false });
        let st = spec.step((0, 0), UP).unwrap();
        assert_eq!(st.next, (0, 0));
    }

    #[test]
    fn stepping_onto_goal() {
        let spec = MazeSpec::default();
        let st = spec.step((4, 5), DOWN).unwrap();
        assert_eq!(st, MazeStep { next: (5, 5), reward: 10.0, terminal: true });
    }

    #[test]
    fn bad_action_or_state() {
        let spec = MazeSpec::default();
        assert!(matches!(spec.step((0, 0), 4), Err(Error::Contract(_))));
        assert!(matches!(spec.step((0, 3), 0), Err(Error::Contract(_))));
    }

    #[test]
    fn crossings_tie_on_length() {
        let spec = MazeSpec::default();
        let all = spec.distances();
        let lower_only = spec.guided_distances();
        for s in spec.start_cells() {
            assert_eq!(all[spec.index(s)], lower_only[spec.index(s)]);
        }
    }

    #[test]
    fn route_cell_sets_partition() {
        let spec = MazeSpec::default();
        let g = spec.guided_route_cells();
        let u = spec.unguided_route_cells();
        assert!(g.contains(&spec.lower_crossing));
        assert!(u.contains(&spec.upper_crossing));
        assert!(g.is_disjoint(&u));
        assert_eq!(g.len() + u.len() + 1, spec.free_cells().len());
    }

    #[test]
    fn zero_episodes() {
        let spec = MazeSpec::default();
        assert!(collect_maze_dataset(&spec, MazeDataset::Mixed, 0, &mut seeded(0)).unwrap().is_empty());
    }

    #[test]
    fn upper_episodes_avoid_guidance_region() {
        let spec = MazeSpec::default();
        let region = spec.guidance_region();
        let eps = collect_maze_dataset(&spec, MazeDataset::Mixed, 50, &mut seeded(3)).unwrap();
        for ep in eps.iter().filter(|e| e.route == Route::Upper) {
            assert!(ep.moves.iter().all(|m| !region.contains(&m.next)));
        }
        for ep in eps.iter().filter(|e| e.route == Route::Lower) {
            assert!(ep.moves.iter().all(|m| m.next != spec.upper_crossing));
            // once guidance starts the remaining moves follow a shortest path
            let dist = spec.guided_distances();
            if let Some(k) = ep.moves.iter().position(|m| region.contains(&m.state)) {
                for m in &ep.moves[k..] {
                    assert_eq!(Some(m.action), spec.greedy_action(m.state, &dist));
                }
                assert!(ep.reached_goal());
            }
        }
    }
}
