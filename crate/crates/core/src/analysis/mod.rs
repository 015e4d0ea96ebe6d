//! Diagnostics over trained runs: imitation weights, action distances,
//! coefficient statistics and the maze coefficient map.

pub mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::datastore::transition::{Action, Transition};
use crate::envs::maze::{displacement, Cell, MazeSpec};
use crate::error::{Error, Result};
use crate::family::train::{RunLog, TrainRun};
use crate::rng::Rng;

/// An uncapped imitation weight. `overflow` marks an infinite result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImitationWeight {
    pub value: f64,
    pub overflow: bool,
}

/// `exp(β (Q - V))` with no cap.
pub fn imitation_weight(beta: f64, q: f64, v: f64) -> Result<ImitationWeight> {
    if !(beta.is_finite() && q.is_finite() && v.is_finite()) {
        return Err(Error::NonFinite("imitation weight inputs".into()));
    }
    let value = (beta * (q - v)).exp();
    Ok(ImitationWeight {
        value,
        overflow: value.is_infinite(),
    })
}

/// Euclidean embedding of an action; discrete maze moves become unit displacements.
pub fn action_vector(a: &Action) -> Vec<f64> {
    match a {
        Action::Discrete(k) => {
            let (dr, dc) = displacement(*k);
            vec![dr, dc]
        }
        Action::Continuous(v) => v.clone(),
    }
}

/// Mean squared distance between policy modes and the recorded actions.
pub fn action_distance(modes: &[Action], actions: &[Action]) -> Result<f64> {
    if modes.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    if modes.len() != actions.len() {
        return Err(Error::contract("one mode per recorded action"));
    }
    let mut total = 0.0;
    for (m, a) in modes.iter().zip(actions) {
        let (m, a) = (action_vector(m), action_vector(a));
        if m.len() != a.len() {
            return Err(Error::contract("action dimensions differ"));
        }
        total += m.iter().zip(&a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(total / modes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaStats {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn beta_statistics(betas: &[f64]) -> Result<BetaStats> {
    let (mean, std) = stats::mean_std(betas)?;
    Ok(BetaStats { n: betas.len(), mean, std })
}

/// Offline minibatch and online acting statistics of a run log.
pub fn run_beta_statistics(log: &RunLog) -> (Option<BetaStats>, Option<BetaStats>) {
    (beta_statistics(&log.offline_betas).ok(), beta_statistics(&log.online_betas).ok())
}

/// Mean coefficient per maze cell over deterministic rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaMap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major; `None` for cells never visited.
    pub cells: Vec<Option<f64>>,
    pub visits: Vec<usize>,
}

impl BetaMap {
    pub fn from_visits(rows: usize, cols: usize, visits: &[(Cell, f64)]) -> Result<Self> {
        let mut sum = vec![0.0; rows * cols];
        let mut count = vec![0usize; rows * cols];
        for &((r, c), b) in visits {
            if r >= rows || c >= cols {
                return Err(Error::contract(format!("cell ({r}, {c}) outside the grid")));
            }
            sum[r * cols + c] += b;
            count[r * cols + c] += 1;
        }
        let cells = sum.iter().zip(&count).map(|(s, &n)| (n > 0).then(|| s / n as f64)).collect();
        Ok(Self { rows, cols, cells, visits: count })
    }

    pub fn get(&self, c: Cell) -> Option<f64> {
        self.cells.get(c.0 * self.cols + c.1).copied().flatten()
    }

    /// Average of the per-cell means over the visited cells of `set`.
    pub fn mean_over(&self, set: &BTreeSet<Cell>) -> Option<f64> {
        let vals: Vec<f64> = set.iter().filter_map(|&c| self.get(c)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,mean_beta,visits\n");
        for r in 0..self.rows {
            for c in 0..self.cols {
                if let Some(b) = self.get((r, c)) {
                    let _ = writeln!(out, "{r},{c},{b},{}", self.visits[r * self.cols + c]);
                }
            }
        }
        out
    }
}

/// Rolls out the run deterministically from each start and averages the
/// coefficient used at every visited cell.
pub fn maze_beta_map(run: &TrainRun, spec: &MazeSpec, starts: &[Cell], rng: &mut Rng) -> Result<BetaMap> {
    let mut visits = Vec::new();
    for &s in starts {
        visits.extend(run.maze_rollout(spec, s, rng)?.1);
    }
    BetaMap::from_visits(spec.height, spec.width, &visits)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDiagnostics {
    pub episode: u64,
    pub ret: f64,
    pub mean_imitation_weight: f64,
    pub mean_action_distance: f64,
    /// Samples whose weight overflowed to infinity.
    pub overflowed: usize,
    pub delta_weight: Option<f64>,
    pub delta_distance: Option<f64>,
}

fn group_episodes(dataset: &[Transition]) -> BTreeMap<u64, Vec<&Transition>> {
    let mut eps: BTreeMap<u64, Vec<&Transition>> = BTreeMap::new();
    for t in dataset {
        eps.entry(t.episode).or_default().push(t);
    }
    eps
}

/// Per-trajectory mean imitation weight and action distance of one run over a dataset.
pub fn trajectory_diagnostics(run: &TrainRun, dataset: &[Transition], rng: &mut Rng) -> Result<Vec<TrajectoryDiagnostics>> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut out = Vec::new();
    for (episode, steps) in group_episodes(dataset) {
        let states: Vec<Vec<f64>> = steps.iter().map(|t| t.s.clone()).collect();
        let actions: Vec<Action> = steps.iter().map(|t| t.a.clone()).collect();
        let mut betas = Vec::with_capacity(steps.len());
        let mut modes = Vec::with_capacity(steps.len());
        for s in &states {
            let (a, b) = run.eval_action(s, rng)?;
            modes.push(a);
            betas.push(b);
        }
        let (q, v) = run.value_terms(&states, &actions, &betas)?;
        let mut wsum = 0.0;
        let mut overflowed = 0;
        for i in 0..steps.len() {
            let w = imitation_weight(betas[i], q[i], v[i])?;
            overflowed += w.overflow as usize;
            wsum += w.value;
        }
        out.push(TrajectoryDiagnostics {
            episode,
            ret: steps.iter().map(|t| t.r).sum(),
            mean_imitation_weight: wsum / steps.len() as f64,
            mean_action_distance: action_distance(&modes, &actions)?,
            overflowed,
            delta_weight: None,
            delta_distance: None,
        });
    }
    Ok(out)
}

/// Per-trajectory differences `a - b` (AIWD and action-distance difference).
pub fn diff_vs_baseline(a: &[TrajectoryDiagnostics], b: &[TrajectoryDiagnostics]) -> Result<Vec<TrajectoryDiagnostics>> {
    let base: BTreeMap<u64, &TrajectoryDiagnostics> = b.iter().map(|d| (d.episode, d)).collect();
    a.iter()
        .map(|d| {
            let o = base
                .get(&d.episode)
                .ok_or_else(|| Error::contract(format!("episode {} missing from baseline", d.episode)))?;
            Ok(TrajectoryDiagnostics {
                delta_weight: Some(d.mean_imitation_weight - o.mean_imitation_weight),
                delta_distance: Some(d.mean_action_distance - o.mean_action_distance),
                ..d.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_delta_weight: Option<f64>,
    pub mean_delta_distance: Option<f64>,
}

/// Equal-width bins over the trajectory returns; the top edge is inclusive.
pub fn bin_by_return(diags: &[TrajectoryDiagnostics], bins: usize) -> Result<Vec<ReturnBin>> {
    if bins == 0 {
        return Err(Error::contract("need at least one bin"));
    }
    if diags.is_empty() {
        return Err(Error::Empty("diagnostics"));
    }
    let lo = diags.iter().map(|d| d.ret).fold(f64::INFINITY, f64::min);
    let hi = diags.iter().map(|d| d.ret).fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut acc = vec![(0usize, 0.0, 0usize, 0.0, 0usize); bins];
    for d in diags {
        let k = (((d.ret - lo) / width) as usize).min(bins - 1);
        acc[k].0 += 1;
        if let Some(w) = d.delta_weight {
            acc[k].1 += w;
            acc[k].2 += 1;
        }
        if let Some(x) = d.delta_distance {
            acc[k].3 += x;
            acc[k].4 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(k, (count, ws, wn, ds, dn))| ReturnBin {
            lo: lo + k as f64 * width,
            hi: lo + (k + 1) as f64 * width,
            count,
            mean_delta_weight: (wn > 0).then(|| ws / wn as f64),
            mean_delta_distance: (dn > 0).then(|| ds / dn as f64),
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn diagnostics_csv(diags: &[TrajectoryDiagnostics]) -> String {
    let mut out = String::from("episode,return,mean_imitation_weight,mean_action_distance,overflowed,delta_weight,delta_distance\n");
    for d in diags {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            d.episode,
            d.ret,
            d.mean_imitation_weight,
            d.mean_action_distance,
            d.overflowed,
            opt(d.delta_weight),
            opt(d.delta_distance)
        );
    }
    out
}

pub fn bins_csv(bins: &[ReturnBin]) -> String {
    let mut out = String::from("return_lo,return_hi,count,mean_delta_weight,mean_delta_distance\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{},{},{}", b.lo, b.hi, b.count, opt(b.mean_delta_weight), opt(b.mean_delta_distance));
    }
    out
}

pub fn write_csv(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::maze::{DOWN, LEFT, RIGHT, UP};

    #[test]
    fn weight_examples() {
        assert_eq!(imitation_weight(3.0, 1.5, 1.5).unwrap().value, 1.0);
        assert_eq!(imitation_weight(0.0, 7.0, -2.0).unwrap().value, 1.0);
        assert!((imitation_weight(2.0, 1.0, 0.5).unwrap().value - std::f64::consts::E).abs() < 1e-12);
        let w = imitation_weight(1000.0, 10.0, 0.0).unwrap();
        assert!(w.overflow && w.value.is_infinite());
        assert!(imitation_weight(1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn distance_examples() {
        let c = |x: f64| Action::Continuous(vec![x]);
        assert_eq!(action_distance(&[c(0.5), c(0.5)], &[c(0.0), c(1.0)]).unwrap(), 0.25);
        let moves = [UP, DOWN, LEFT, RIGHT].map(Action::Discrete);
        assert_eq!(action_distance(&moves, &moves).unwrap(), 0.0);
        // Opposite unit moves are 2 apart.
        assert_eq!(action_distance(&[Action::Discrete(UP)], &[Action::Discrete(DOWN)]).unwrap(), 4.0);
        assert!(action_distance(&[], &[]).is_err());
    }

    #[test]
    fn beta_stats_examples() {
        let s = beta_statistics(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(beta_statistics(&[2.5; 10]).unwrap().std, 0.0);
    }

    #[test]
    fn beta_map_marks_unvisited() {
        let m = BetaMap::from_visits(2, 3, &[((0, 0), 1.0), ((0, 1), 2.0), ((0, 1), 4.0)]).unwrap();
        assert_eq!(m.get((0, 0)), Some(1.0));
        assert_eq!(m.get((0, 1)), Some(3.0));
        assert_eq!(m.get((1, 2)), None);
        assert_eq!(m.mean_over(&BTreeSet::from([(0, 0), (0, 1), (1, 1)])), Some(2.0));
        assert!(BetaMap::from_visits(2, 3, &[((2, 0), 1.0)]).is_err());
    }

    fn diag(ep: u64, ret: f64, w: f64) -> TrajectoryDiagnostics {
        TrajectoryDiagnostics {
            episode: ep,
            ret,
            mean_imitation_weight: w,
            mean_action_distance: 0.5,
            overflowed: 0,
            delta_weight: None,
            delta_distance: None,
        }
    }

    #[test]
    fn diff_and_bins() {
        let b: Vec<_> = (0..4).map(|i| diag(i, i as f64, 2.0 * i as f64)).collect();
        let a: Vec<_> = b.iter().map(|d| TrajectoryDiagnostics { mean_imitation_weight: d.mean_imitation_weight + 1.0, ..d.clone() }).collect();
        let d = diff_vs_baseline(&a, &b).unwrap();
        assert!(d.iter().all(|x| x.delta_weight == Some(1.0) && x.delta_distance == Some(0.0)));
        let same = diff_vs_baseline(&b, &b).unwrap();
        assert!(same.iter().all(|x| x.delta_weight == Some(0.0)));
        let bins = bin_by_return(&d, 2).unwrap();
        assert_eq!(bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![2, 2]);
        assert_eq!(bins[1].mean_delta_weight, Some(1.0));
        assert!(diff_vs_baseline(&a, &b[..2]).is_err());
    }
}
