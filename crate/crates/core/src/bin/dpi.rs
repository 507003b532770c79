use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dpi::baselines::AgentKind;
use dpi::harness::{commands, load_config, Ablation, RunConfig, RunManifest};
use dpi::{DpiError, Result};

/// Dynamic preference inference: training, baselines and experiments.
#[derive(Parser)]
#[command(name = "dpi", version)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Agent to train, overriding the config.
    #[arg(long, global = true)]
    agent: Option<String>,
    /// Environment steps per run, overriding the config.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory; defaults to `<output_dir>/<command>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one agent on one seed.
    Train {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every configured agent on every configured seed.
    Suite {
        /// Comma-separated subset of agents.
        #[arg(long, value_delimiter = ',')]
        agents: Option<Vec<String>>,
    },
    /// Evaluate a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Full DPI against DPI with appraisal terms removed.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "kl,dir,sta")]
        drop: Vec<String>,
    },
    /// DPI over history window lengths.
    SweepH {
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
    },
    /// DPI over the regularizer multiplier grid.
    SweepHparams,
    /// Fixed-preference fronts before and after events.
    Pareto {
        /// Simplex lattice resolution.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Render charts from the curve files under a directory.
    Report {
        #[arg(long)]
        outdir: PathBuf,
    },
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::from_toml_with("", std::env::vars())?,
    };
    if let Some(a) = &cli.agent {
        cfg.agent = AgentKind::parse(a)?;
    }
    if let Some(s) = cli.steps {
        cfg.total_steps = s;
    }
    if let Some(s) = &cli.seeds {
        cfg.seeds = s.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig, default: &str) -> PathBuf {
    cli.out
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(default))
}

fn report(m: &RunManifest, dir: &Path) {
    println!(
        "{} complete: {} ({} artifacts)",
        m.command,
        dir.display(),
        m.artifacts.len()
    );
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Train { seed } => {
            let cfg = config(cli)?;
            let dir = out_dir(cli, &cfg, &format!("train/{}/seed{seed}", cfg.agent.name()));
            report(&commands::train(&cfg, *seed, &dir)?, &dir);
        }
        Cmd::Suite { agents } => {
            let cfg = config(cli)?;
            let agents = agents
                .as_ref()
                .map(|v| {
                    v.iter()
                        .map(|a| AgentKind::parse(a))
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?;
            let dir = out_dir(cli, &cfg, "suite");
            report(&commands::suite(&cfg, agents.as_deref(), &dir)?, &dir);
        }
        Cmd::Eval {
            checkpoint,
            episodes,
        } => {
            let dir = cli
                .out
                .clone()
                .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join("eval"));
            report(&commands::eval(checkpoint, *episodes, &dir)?, &dir);
        }
        Cmd::Ablate { drop } => {
            let cfg = config(cli)?;
            let drops = drop
                .iter()
                .map(|d| Ablation::parse(d))
                .collect::<Result<Vec<_>>>()?;
            let dir = out_dir(cli, &cfg, "ablate");
            report(&commands::ablate(&cfg, &drops, &dir)?, &dir);
        }
        Cmd::SweepH { values } => {
            let cfg = config(cli)?;
            let values = values
                .clone()
                .unwrap_or_else(|| cfg.experiments.history_values.clone());
            let dir = out_dir(cli, &cfg, "sweep-h");
            report(&commands::sweep_h(&cfg, &values, &dir)?, &dir);
        }
        Cmd::SweepHparams => {
            let cfg = config(cli)?;
            let dir = out_dir(cli, &cfg, "sweep-hparams");
            report(&commands::sweep_hp(&cfg, &dir)?, &dir);
        }
        Cmd::Pareto { grid } => {
            let cfg = config(cli)?;
            let res = grid.unwrap_or(cfg.experiments.pareto_resolution);
            let dir = out_dir(cli, &cfg, "pareto");
            report(&commands::pareto(&cfg, res, &dir)?, &dir);
        }
        Cmd::Report { outdir } => {
            for p in commands::emit_reports(outdir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, DpiError::Numeric { .. }) {
                eprintln!("a diagnostic snapshot was written to the output directory");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
