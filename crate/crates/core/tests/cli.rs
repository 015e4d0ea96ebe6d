use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use famo2o::cli::commands::{cmd_analyze, cmd_collect, cmd_eval, cmd_train, read_manifest, sha256_hex, Analysis};
use famo2o::cli::config::RunConfig;
use famo2o::datastore::{load_jsonl, trajectory_returns, Transition};
use famo2o::Error;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_famo2o"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn tiny(name: &str, extra: &[&str]) -> RunConfig {
    let mut o: Vec<String> = ["train.n_offline=60", "train.n_online=60", "train.log_every=20", "train.eval_every=50", "train.eval_episodes=2"]
        .map(String::from)
        .to_vec();
    o.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::load(&config(name), &o).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn config_errors_exit_with_one_and_name_the_field() {
    let o = bin(&["train", "--override", "run.algo=cql", "--override", "iql.expectile=0.7"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("iql.expectile"));
    let o = bin(&["train", "--override", "balance_space.beta_min=5", "--override", "balance_space.beta_max=1"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("balance_space.beta_min"));
    assert_eq!(code(&bin(&["nonsense"])), 1);
}

#[test]
fn missing_dataset_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let o = bin(&[
        "train",
        "--config",
        config("maze_iql.toml").to_str().unwrap(),
        "--override",
        "run.dataset=\"/no/such/file.jsonl\"",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/file.jsonl"));
    assert!(!out.join("seed_0").exists());
}

#[test]
fn analyze_on_missing_run_dir_is_a_clean_error() {
    let err = cmd_analyze(Path::new("/no/such/run"), Analysis::BetaStats, None, None).unwrap_err();
    assert!(matches!(err, Error::MissingFile(_)));
    let o = bin(&["analyze", "--run", "/no/such/run", "--analysis", "beta-map"]);
    assert_eq!(code(&o), 2);
    let o = bin(&["analyze", "--run", "/tmp", "--analysis", "histogram"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn oracle_writes_a_passing_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracle.json");
    let o = bin(&[
        "oracle",
        "--config",
        config("oracle.toml").to_str().unwrap(),
        "--override",
        "oracle.instances=10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["prop1_passes"], 30);
    assert_eq!(report["all_pass"], true);
    assert_eq!(report["symmetric"]["strict_improvement"], false);
    let sym = &report["symmetric"];
    assert!((sym["j_point_matched"].as_f64().unwrap() - sym["j_dist"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn collect_is_seeded_and_summaries_match_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("maze_iql.toml", &["maze.episodes=30"]);
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let summary = cmd_collect(&cfg, 4, &a).unwrap();
    cmd_collect(&cfg, 4, &b).unwrap();
    assert_eq!(sha256_hex(&std::fs::read(&a).unwrap()), sha256_hex(&std::fs::read(&b).unwrap()));

    let data: Vec<Transition> = load_jsonl(&a).unwrap();
    let returns = trajectory_returns(&data);
    let text = std::fs::read_to_string(summary).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), returns.len());
    for (row, (ep, ret)) in rows.iter().zip(&returns) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[0].parse::<u64>().unwrap(), *ep);
        assert_eq!(cols[1].parse::<f64>().unwrap(), *ret);
        assert!(["upper", "lower", "guided", "random"].contains(&cols[2]));
    }

    let empty = tiny("maze_iql.toml", &["maze.episodes=0"]);
    assert!(cmd_collect(&empty, 0, &dir.path().join("c.jsonl")).is_err());
}

#[test]
fn train_writes_the_run_layout_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("maze_iql.toml", &["run.seeds=[0, 1]"]);
    let runs = cmd_train(&cfg, &cfg.run.seeds, dir.path()).unwrap();
    assert_eq!(runs.len(), 2);
    for r in &runs {
        for f in ["config.toml", "metrics.csv", "beta_log.csv", "report.md", "manifest.json", "checkpoints/offline.ckpt", "checkpoints/final.ckpt"] {
            assert!(r.dir.join(f).exists(), "{f}");
        }
        let m = read_manifest(&r.dir.join("manifest.json")).unwrap();
        assert!(m.desk_scale);
        assert!(!m.online_only);
        assert_eq!(m.metrics_sha256, sha256_hex(&std::fs::read(r.dir.join("metrics.csv")).unwrap()));
    }
    let m0 = std::fs::read(runs[0].dir.join("metrics.csv")).unwrap();
    let m1 = std::fs::read(runs[1].dir.join("metrics.csv")).unwrap();
    assert_ne!(m0, m1);

    for a in [Analysis::BetaStats, Analysis::BetaMap, Analysis::Diagnostics] {
        for p in cmd_analyze(&runs[0].dir, a, None, None).unwrap() {
            assert!(std::fs::read_to_string(p).unwrap().lines().count() > 1);
        }
    }
    let files = cmd_analyze(&runs[0].dir, Analysis::Diff, Some(&runs[1].dir), Some(4)).unwrap();
    let bins = std::fs::read_to_string(&files[1]).unwrap();
    assert_eq!(bins.lines().count(), 5);
    assert!(cmd_analyze(&runs[0].dir, Analysis::Diff, None, None).is_err());
}

#[test]
fn online_only_runs_are_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("pointmass_cql.toml", &["train.n_offline=0"]);
    let r = cmd_train(&cfg, &[0], dir.path()).unwrap().remove(0);
    assert!(r.manifest.online_only);
    assert!(std::fs::read_to_string(r.dir.join("report.md")).unwrap().contains("online-only"));
}

#[test]
fn eval_of_an_untrained_policy_is_finite_and_its_interval_shrinks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("pointmass_cql.toml", &["train.n_offline=0", "train.n_online=1", "train.eval_every=1"]);
    let r = cmd_train(&cfg, &[2], dir.path()).unwrap().remove(0);
    let small = cmd_eval(&r.dir, 16).unwrap();
    let large = cmd_eval(&r.dir, 64).unwrap();
    assert!(small.mean.is_finite() && large.mean.is_finite());
    assert_eq!(small.returns[..], large.returns[..16]);
    let ratio = large.ci95 / small.ci95;
    assert!((0.3..0.8).contains(&ratio), "interval ratio {ratio}");
    assert!(r.dir.join("eval.json").exists());
}

#[test]
fn train_and_replay_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let o = bin(&[
        "train",
        "--config",
        config("pointmass_cql.toml").to_str().unwrap(),
        "--seed",
        "5",
        "--override",
        "train.n_offline=40",
        "--override",
        "train.n_online=40",
        "--override",
        "train.log_every=10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = out.join("seed_5").join("manifest.json");
    let replay = dir.path().join("replay");
    let o = bin(&["train", "--replay", manifest.to_str().unwrap(), "--out", replay.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(out.join("seed_5/metrics.csv")).unwrap(),
        std::fs::read(replay.join("metrics.csv")).unwrap()
    );
    let o = bin(&["eval", "--run", out.join("seed_5").to_str().unwrap(), "--episodes", "3"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("95% CI"));
}
