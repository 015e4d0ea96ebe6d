//! Subcommand bodies. Each returns a [`Result`]; `main` maps errors to exit codes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    beta_statistics, bin_by_return, bins_csv, diagnostics_csv, diff_vs_baseline, maze_beta_map, stats, trajectory_diagnostics,
    write_csv,
};
use crate::cli::config::{MazeStarts, RunConfig};
use crate::cli::dataset::{collect, offline_dataset};
use crate::datastore::jsonl::save_jsonl;
use crate::datastore::returns::{trajectory_returns, write_returns_csv};
use crate::datastore::transition::Action;
use crate::envs::pointmass::POS_BOUND;
use crate::error::{Error, Result};
use crate::family::train::{EnvRuntime, TrainRun};
use crate::numkit::checkpoint;
use crate::oracle::{certify, CertificationReport, OracleSettings};
use crate::rng::{stream, Stream};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Writes the configured dataset as JSONL plus an `episode,return,route` summary
/// next to it. Returns the summary path.
pub fn cmd_collect(cfg: &RunConfig, seed: u64, out: &Path) -> Result<PathBuf> {
    let data = collect(cfg, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_jsonl(out, &data.transitions)?;
    let summary = out.with_extension("summary.csv");
    write_returns_csv(&summary, &trajectory_returns(&data.transitions), Some(&data.labels))?;
    log::info!("wrote {} transitions to {}", data.transitions.len(), out.display());
    Ok(summary)
}

/// What a run directory's `manifest.json` records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// The exact config text the run used.
    pub config: String,
    pub seed: u64,
    pub desk_scale: bool,
    pub online_only: bool,
    /// Hash of the config text and seed.
    pub content_hash: String,
    pub dataset_sha256: String,
    pub metrics_sha256: String,
    pub offline_checkpoint_sha256: String,
    pub final_checkpoint_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub final_eval: Option<f64>,
}

pub const OFFLINE_CKPT: &str = "checkpoints/offline.ckpt";
pub const FINAL_CKPT: &str = "checkpoints/final.ckpt";

fn dataset_hash(data: &[crate::datastore::transition::Transition]) -> Result<String> {
    let mut h = Sha256::new();
    for t in data {
        h.update(serde_json::to_vec(t)?);
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

fn write_beta_log(path: &Path, run: &TrainRun) -> Result<()> {
    let mut out = String::from("phase,beta\n");
    for b in &run.log.offline_betas {
        let _ = writeln!(out, "offline,{b}");
    }
    for b in &run.log.online_betas {
        let _ = writeln!(out, "online,{b}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn report_md(cfg: &RunConfig, seed: u64, run: &TrainRun) -> String {
    let mut r = String::new();
    let _ = writeln!(r, "# Run report\n");
    let _ = writeln!(r, "- algorithm: {}", cfg.run.algo);
    let _ = writeln!(r, "- balance: {}", cfg.run.balance);
    let _ = writeln!(r, "- environment: {}", format!("{:?}", cfg.run.env).to_lowercase());
    let _ = writeln!(r, "- seed: {seed}");
    let _ = writeln!(r, "- steps: {} offline, {} online", run.offline_steps, run.online_steps);
    let _ = writeln!(r, "- desk scale: {}", cfg.desk_scale());
    if cfg.train.n_offline == 0 {
        let _ = writeln!(r, "- warning: no offline phase (online-only run)");
    }
    if let Some((phase, step, ret)) = run.log.evals.last() {
        let _ = writeln!(r, "- final evaluation: {ret:.4} ({} step {step})", phase.as_str());
    }
    if let Ok(s) = beta_statistics(&run.log.online_betas) {
        let _ = writeln!(r, "- online acting coefficient: mean {:.4}, std {:.4} over {} steps", s.mean, s.std, s.n);
    }
    let _ = writeln!(r, "- imitation weights capped: {}, skipped: {}", run.log.weights_capped, run.log.weights_skipped);
    r
}

/// Trains one seed into `dir`: offline phase, offline checkpoint, online
/// phase, final checkpoint, then metrics, report and manifest.
pub fn train_seed(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<RunOutcome> {
    if let Some(p) = &cfg.run.dataset {
        if !p.exists() {
            return Err(Error::MissingFile(p.clone()));
        }
    }
    let data = offline_dataset(cfg, seed)?;
    std::fs::create_dir_all(dir.join("checkpoints"))?;
    let config_text = cfg.to_toml();
    std::fs::write(dir.join("config.toml"), &config_text)?;
    let mut run = TrainRun::new(cfg.clone(), seed, &data)?;
    while run.offline_steps < cfg.train.n_offline {
        run.offline_step()?;
    }
    checkpoint::save(&dir.join(OFFLINE_CKPT), &run.networks())?;
    while run.online_steps < cfg.train.n_online {
        run.online_step()?;
    }
    checkpoint::save(&dir.join(FINAL_CKPT), &run.networks())?;
    std::fs::write(dir.join("metrics.csv"), run.metrics_csv())?;
    write_beta_log(&dir.join("beta_log.csv"), &run)?;
    std::fs::write(dir.join("report.md"), report_md(cfg, seed, &run))?;
    let manifest = Manifest {
        content_hash: sha256_hex(format!("{config_text}\nseed = {seed}\n").as_bytes()),
        config: config_text,
        seed,
        desk_scale: cfg.desk_scale(),
        online_only: cfg.train.n_offline == 0,
        dataset_sha256: dataset_hash(&data)?,
        metrics_sha256: sha256_file(&dir.join("metrics.csv"))?,
        offline_checkpoint_sha256: sha256_file(&dir.join(OFFLINE_CKPT))?,
        final_checkpoint_sha256: sha256_file(&dir.join(FINAL_CKPT))?,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        manifest,
        final_eval: run.log.evals.last().map(|e| e.2),
    })
}

/// One run directory per seed under `out` (`seed_<n>`).
pub fn cmd_train(cfg: &RunConfig, seeds: &[u64], out: &Path) -> Result<Vec<RunOutcome>> {
    seeds.iter().map(|&s| train_seed(cfg, s, &out.join(format!("seed_{s}")))).collect()
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Re-runs the config and seed recorded in a manifest into `out`.
pub fn replay_manifest(manifest: &Path, out: &Path) -> Result<RunOutcome> {
    let m = read_manifest(manifest)?;
    let cfg = RunConfig::from_toml_str(&m.config, &[])?;
    train_seed(&cfg, m.seed, out)
}

/// A trained run reloaded from its directory.
pub fn load_run(dir: &Path, which: &str) -> Result<(RunConfig, Manifest, TrainRun)> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let m = read_manifest(&dir.join("manifest.json"))?;
    let cfg = RunConfig::from_toml_str(&m.config, &[])?;
    let mut run = TrainRun::new(cfg.clone(), m.seed, &[])?;
    let ckpt = dir.join(which);
    if !ckpt.exists() {
        return Err(Error::MissingFile(ckpt));
    }
    run.restore_networks(checkpoint::load(&ckpt)?)?;
    run.offline_steps = cfg.train.n_offline;
    run.online_steps = cfg.train.n_online;
    Ok((cfg, m, run))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    /// Half-width of the normal 95% interval.
    pub ci95: f64,
    pub returns: Vec<f64>,
}

/// Deterministic-policy returns from start states drawn with `seed`'s eval stream.
pub fn evaluate_run(run: &TrainRun, episodes: usize, seed: u64) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::contract("need at least one evaluation episode"));
    }
    let mut rng = stream(seed, Stream::Eval);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let ret = match &run.env {
            EnvRuntime::Maze { spec, .. } => {
                let starts = spec.start_cells();
                let s = starts[rng.random_range(0..starts.len())];
                run.maze_rollout(spec, s, &mut rng)?.0
            }
            EnvRuntime::Pointmass { spec, .. } => {
                let s = [rng.random_range(-POS_BOUND..POS_BOUND), rng.random_range(-POS_BOUND..POS_BOUND)];
                let mut act_rng = rng.clone();
                let r = spec
                    .rollout(s, |p| match run.eval_action(&p, &mut act_rng)?.0 {
                        Action::Continuous(a) => Ok([a[0], a[1]]),
                        Action::Discrete(_) => Err(Error::contract("discrete action in point-mass")),
                    })?
                    .0;
                rng = act_rng;
                r
            }
        };
        if !ret.is_finite() {
            return Err(Error::NonFinite("evaluation return".into()));
        }
        returns.push(ret);
    }
    let (mean, std) = stats::mean_std(&returns)?;
    Ok(EvalSummary {
        episodes,
        mean,
        std,
        ci95: 1.96 * std / (episodes as f64).sqrt(),
        returns,
    })
}

pub fn cmd_eval(run_dir: &Path, episodes: usize) -> Result<EvalSummary> {
    let (_, m, run) = load_run(run_dir, FINAL_CKPT)?;
    let summary = evaluate_run(&run, episodes, m.seed)?;
    std::fs::write(run_dir.join("eval.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

pub fn oracle_settings(cfg: &RunConfig) -> OracleSettings {
    let o = &cfg.oracle;
    OracleSettings {
        instances: o.instances,
        max_states: o.max_states,
        max_actions: o.max_actions,
        gamma: o.gamma,
        epsilons: o.epsilons.clone(),
        weighting: o.weighting,
    }
}

/// Certification over the configured instances; the report is written to `out` as JSON.
pub fn cmd_oracle(cfg: &RunConfig, seed: u64, out: &Path) -> Result<CertificationReport> {
    let report = certify(&oracle_settings(cfg), &mut stream(seed, Stream::Data))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Analysis {
    /// Mean and population std of logged coefficients per phase.
    BetaStats,
    /// Mean coefficient per maze cell over deterministic rollouts.
    BetaMap,
    /// Per-trajectory imitation weight and action distance.
    Diagnostics,
    /// Differences against a baseline run, per trajectory and binned by return.
    Diff,
}

impl std::str::FromStr for Analysis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta-stats" => Ok(Analysis::BetaStats),
            "beta-map" => Ok(Analysis::BetaMap),
            "diagnostics" => Ok(Analysis::Diagnostics),
            "diff" => Ok(Analysis::Diff),
            _ => Err(Error::config("analysis", format!("unknown analysis `{s}` (beta-stats, beta-map, diagnostics, diff)"))),
        }
    }
}

fn read_beta_log(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, line) in std::fs::read_to_string(path)?.lines().enumerate().skip(1) {
        let (phase, b) = line.split_once(',').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected phase,beta".into(),
        })?;
        let b: f64 = b.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("bad coefficient `{b}`"),
        })?;
        out.entry(phase.to_string()).or_default().push(b);
    }
    Ok(out)
}

/// Runs one analysis over a run directory and writes `<run>/analysis/<name>.csv`
/// (plus `diff_bins.csv` for the diff). Returns the files written.
pub fn cmd_analyze(run_dir: &Path, analysis: Analysis, baseline: Option<&Path>, bins: Option<usize>) -> Result<Vec<PathBuf>> {
    if !run_dir.is_dir() {
        return Err(Error::MissingFile(run_dir.to_path_buf()));
    }
    let out_dir = run_dir.join("analysis");
    match analysis {
        Analysis::BetaStats => {
            let log = read_beta_log(&run_dir.join("beta_log.csv"))?;
            let mut csv = String::from("phase,n,mean_beta,std_beta\n");
            for (phase, betas) in &log {
                let s = beta_statistics(betas)?;
                let _ = writeln!(csv, "{phase},{},{},{}", s.n, s.mean, s.std);
            }
            let p = out_dir.join("beta_stats.csv");
            write_csv(&p, &csv)?;
            Ok(vec![p])
        }
        Analysis::BetaMap => {
            let (cfg, m, run) = load_run(run_dir, FINAL_CKPT)?;
            let spec = match &run.env {
                EnvRuntime::Maze { spec, .. } => spec.clone(),
                EnvRuntime::Pointmass { .. } => return Err(Error::config("run.env", "the coefficient map needs the maze")),
            };
            let starts = match cfg.maze.map_starts {
                MazeStarts::TopRow => spec.start_cells(),
                MazeStarts::AllFree => spec.free_cells().into_iter().filter(|c| *c != spec.goal).collect(),
            };
            let map = maze_beta_map(&run, &spec, &starts, &mut stream(m.seed, Stream::Eval))?;
            let p = out_dir.join("beta_map.csv");
            write_csv(&p, &map.to_csv())?;
            Ok(vec![p])
        }
        Analysis::Diagnostics | Analysis::Diff => {
            let (cfg, m, run) = load_run(run_dir, FINAL_CKPT)?;
            let data = offline_dataset(&cfg, m.seed)?;
            let diags = trajectory_diagnostics(&run, &data, &mut stream(m.seed, Stream::Eval))?;
            if analysis == Analysis::Diagnostics {
                let p = out_dir.join("diagnostics.csv");
                write_csv(&p, &diagnostics_csv(&diags))?;
                return Ok(vec![p]);
            }
            let base_dir = baseline.ok_or_else(|| Error::config("baseline", "the diff analysis needs --baseline <run dir>"))?;
            let (_, bm, base) = load_run(base_dir, FINAL_CKPT)?;
            let base_diags = trajectory_diagnostics(&base, &data, &mut stream(bm.seed, Stream::Eval))?;
            let diff = diff_vs_baseline(&diags, &base_diags)?;
            let binned = bin_by_return(&diff, bins.unwrap_or(cfg.analysis.bins))?;
            let rets: Vec<f64> = diff.iter().map(|d| d.ret).collect();
            let aiwd: Vec<f64> = diff.iter().filter_map(|d| d.delta_weight).collect();
            if let Ok(Some(r)) = stats::pearson(&rets, &aiwd) {
                log::info!("pearson(return, AIWD) = {r:.4}");
            }
            let (p1, p2) = (out_dir.join("diff.csv"), out_dir.join("diff_bins.csv"));
            write_csv(&p1, &diagnostics_csv(&diff))?;
            write_csv(&p2, &bins_csv(&binned))?;
            Ok(vec![p1, p2])
        }
    }
}
