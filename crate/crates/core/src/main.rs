use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use famo2o::cli::commands::{self, Analysis};
use famo2o::cli::config::RunConfig;
use famo2o::Error;

#[derive(Parser)]
#[command(name = "famo2o", version, about = "Offline-to-online RL with state-adaptive balance coefficients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// `section.key=value`, applied after the config file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect an offline dataset to JSONL.
    Collect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Offline pre-training followed by online fine-tuning, one directory per seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Re-run the config and seed recorded in a run manifest.
        #[arg(long, conflicts_with = "config")]
        replay: Option<PathBuf>,
    },
    /// Evaluate a trained run's final policy.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Certify the point-wise vs distributional constraint claims on random finite MDPs.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "oracle_report.json")]
        out: PathBuf,
    },
    /// Post-hoc analyses of a run directory.
    Analyze {
        #[arg(long)]
        run: PathBuf,
        /// beta-stats, beta-map, diagnostics or diff.
        #[arg(long)]
        analysis: String,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
    },
}

fn load(common: &Common) -> famo2o::Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p, &common.overrides),
        None => RunConfig::from_toml_str("", &common.overrides),
    }
}

fn seeds(common: &Common, cfg: &RunConfig) -> Vec<u64> {
    common.seed.map_or_else(|| cfg.run.seeds.clone(), |s| vec![s])
}

fn run(cli: Cli) -> famo2o::Result<ExitCode> {
    match cli.command {
        Command::Collect { common, out } => {
            let cfg = load(&common)?;
            let seed = seeds(&common, &cfg).first().copied().unwrap_or(0);
            let summary = commands::cmd_collect(&cfg, seed, &out)?;
            println!("{}", summary.display());
        }
        Command::Train { common, out, replay } => {
            if let Some(manifest) = replay {
                let dir = out.unwrap_or_else(|| PathBuf::from("replay"));
                let r = commands::replay_manifest(&manifest, &dir)?;
                println!("{} final_checkpoint_sha256={}", r.dir.display(), r.manifest.final_checkpoint_sha256);
            } else {
                let cfg = load(&common)?;
                let out = out.unwrap_or_else(|| cfg.run.out_dir.clone());
                for r in commands::cmd_train(&cfg, &seeds(&common, &cfg), &out)? {
                    match r.final_eval {
                        Some(e) => println!("{} eval_return={e:.4}", r.dir.display()),
                        None => println!("{}", r.dir.display()),
                    }
                }
            }
        }
        Command::Eval { run, episodes } => {
            let s = commands::cmd_eval(&run, episodes)?;
            println!("return {:.4} ± {:.4} (95% CI, {} episodes)", s.mean, s.ci95, s.episodes);
        }
        Command::Oracle { common, out } => {
            let cfg = load(&common)?;
            let seed = seeds(&common, &cfg).first().copied().unwrap_or(0);
            let report = commands::cmd_oracle(&cfg, seed, &out)?;
            println!(
                "prop1 {}/{} prop2 {}/{} -> {}",
                report.prop1_passes,
                report.prop1_cases,
                report.prop2_passes,
                report.instances.len(),
                out.display()
            );
            if !report.all_pass {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Analyze { run, analysis, baseline, bins } => {
            let a: Analysis = analysis.parse()?;
            for p in commands::cmd_analyze(&run, a, baseline.as_deref(), bins)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } => 1,
                _ => 2,
            })
        }
    }
}
