//! One function per command-line subcommand. Each writes its artifacts into
//! an [`OutputDir`] and returns the final manifest.

use std::path::{Path, PathBuf};

use super::agent::{make_env, GreedyPolicy, Model};
use super::config::RunConfig;
use super::experiments::{
    pareto_sweep, run_ablations, run_suite, sweep_history, sweep_hparams, write_sweep, write_table,
    Ablation, RunSet, SeedRun,
};
use super::output::{load_checkpoint, write_train_log, OutputDir, RunManifest};
use super::seeding::substream;
use super::train::{eval_episode_seeds, train_agent, TrainOptions};
use crate::baselines::AgentKind;
use crate::error::{DpiError, Result};
use crate::eval::{
    alignment, run_episodes, svg_line_chart, write_alignment, write_curve, write_metrics,
    write_pareto, AlignmentRow, CurveRow, EpisodeLog, MetricRow,
};

/// Per-step alignment of the first episode that saw an event.
pub fn alignment_trace(logs: &[EpisodeLog]) -> Vec<AlignmentRow> {
    let Some(log) = logs.iter().find(|l| !l.events.is_empty()) else {
        return Vec::new();
    };
    log.prefs
        .iter()
        .zip(&log.vectors)
        .enumerate()
        .filter_map(|(t, (w, r))| {
            alignment(w, r).map(|a| AlignmentRow {
                t,
                align: a,
                event: log.events.contains(&t),
            })
        })
        .collect()
}

fn curve_svg(title: &str, sets: &[(String, Vec<CurveRow>)], sr: bool) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> = sets
        .iter()
        .map(|(name, rows)| {
            let pts = rows
                .iter()
                .map(|r| (r.step as f64, if sr { r.sr } else { r.mer }))
                .collect();
            (name.clone(), pts)
        })
        .collect();
    svg_line_chart(title, "environment steps", &series)
}

fn write_set_metrics(out: &mut OutputDir, name: &str, sets: &[RunSet]) -> Result<()> {
    let mut rows: Vec<MetricRow> = Vec::new();
    for s in sets {
        rows.extend(s.metric_rows()?);
    }
    out.write_with(name, |w| write_metrics(w, &rows))
}

/// Trains one agent on one seed.
pub fn train(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<RunManifest> {
    let mut out = OutputDir::create(dir, cfg, "train", Some(seed))?;
    let opts = TrainOptions {
        diagnostic_dir: Some(dir.to_path_buf()),
        skip_final_eval: false,
    };
    let t = train_agent(cfg, seed, &opts)?;
    let ckpt = t.model.checkpoint(cfg, seed, t.steps);
    out.write_with("checkpoint.json", |w| {
        serde_json::to_writer(w, &ckpt).map_err(|e| DpiError::Serde(e.to_string()))
    })?;
    let curve = t.curve_rows()?;
    out.write_with("curve.csv", |w| write_curve(w, &curve))?;
    out.write_with("train_log.jsonl", |w| write_train_log(w, &t.stats))?;
    let set = RunSet {
        label: cfg.agent.name().to_string(),
        agent: cfg.agent,
        k_max: cfg.eval.k_max,
        runs: vec![t.into()],
    };
    write_set_metrics(&mut out, "metrics.csv", std::slice::from_ref(&set))?;
    let trace = alignment_trace(&set.runs[0].logs);
    out.write_with("alignment.csv", |w| write_alignment(w, &trace))?;
    let svg = curve_svg("SR", &[(set.label.clone(), curve)], true);
    out.write_text("curve_sr.svg", &svg)?;
    out.finish()
}

/// Evaluates a saved checkpoint greedily on the evaluation episodes of its
/// seed.
pub fn eval(checkpoint: &Path, episodes: Option<usize>, dir: &Path) -> Result<RunManifest> {
    let ckpt = load_checkpoint(checkpoint)?;
    let mut cfg = ckpt.config.clone();
    if let Some(n) = episodes {
        cfg.eval.episodes = n;
    }
    let mut out = OutputDir::create(dir, &cfg, "eval", Some(ckpt.seed))?;
    let model = Model::from_checkpoint(&ckpt)?;
    let env = make_env(&cfg)?;
    let seeds = eval_episode_seeds(ckpt.seed, cfg.eval.episodes);
    let mut rng = substream(ckpt.seed, "eval/checkpoint");
    let mut policy = GreedyPolicy::new(&model);
    let logs = run_episodes(&mut policy, &env, &seeds, &cfg.omega_eval, &mut rng)?;
    let set = RunSet {
        label: cfg.agent.name().to_string(),
        agent: cfg.agent,
        k_max: cfg.eval.k_max,
        runs: vec![SeedRun {
            seed: ckpt.seed,
            steps: ckpt.steps,
            updates: 0,
            curve: Vec::new(),
            logs,
            stats: Vec::new(),
        }],
    };
    write_set_metrics(&mut out, "metrics.csv", std::slice::from_ref(&set))?;
    let trace = alignment_trace(&set.runs[0].logs);
    out.write_with("alignment.csv", |w| write_alignment(w, &trace))?;
    out.finish()
}

fn write_sets(out: &mut OutputDir, sets: &[RunSet]) -> Result<()> {
    write_set_metrics(out, "metrics.csv", sets)?;
    out.write_with("table.csv", |w| write_table(w, sets))?;
    let mut curves = Vec::new();
    for s in sets {
        let rows = s.curve()?;
        let name = format!("curves/{}.csv", s.label.replace(['/', ' '], "_"));
        out.write_with(&name, |w| write_curve(w, &rows))?;
        curves.push((s.label.clone(), rows));
    }
    if curves.iter().any(|(_, c)| !c.is_empty()) {
        out.write_text("curve_sr.svg", &curve_svg("SR", &curves, true))?;
        out.write_text("curve_mer.svg", &curve_svg("MER", &curves, false))?;
    }
    Ok(())
}

/// Trains `agents` (or the configured list) on every configured seed.
pub fn suite(cfg: &RunConfig, agents: Option<&[AgentKind]>, dir: &Path) -> Result<RunManifest> {
    let mut out = OutputDir::create(dir, cfg, "suite", None)?;
    let sets = run_suite(cfg, agents.unwrap_or(&cfg.experiments.agents))?;
    write_sets(&mut out, &sets)?;
    out.finish()
}

pub fn ablate(cfg: &RunConfig, drops: &[Ablation], dir: &Path) -> Result<RunManifest> {
    if drops.is_empty() {
        return Err(DpiError::config("ablate needs at least one term to drop"));
    }
    let mut out = OutputDir::create(dir, cfg, "ablate", None)?;
    let sets = run_ablations(cfg, drops)?;
    write_sets(&mut out, &sets)?;
    out.finish()
}

pub fn sweep_h(cfg: &RunConfig, values: &[usize], dir: &Path) -> Result<RunManifest> {
    let mut out = OutputDir::create(dir, cfg, "sweep-h", None)?;
    let rows = sweep_history(cfg, values)?;
    out.write_with("history.csv", |w| write_sweep(w, &rows))?;
    out.finish()
}

pub fn sweep_hp(cfg: &RunConfig, dir: &Path) -> Result<RunManifest> {
    let mut out = OutputDir::create(dir, cfg, "sweep-hparams", None)?;
    let rows = sweep_hparams(cfg, &cfg.experiments.hparam_grid)?;
    out.write_with("hparams.csv", |w| write_sweep(w, &rows))?;
    out.finish()
}

pub fn pareto(cfg: &RunConfig, resolution: usize, dir: &Path) -> Result<RunManifest> {
    let mut out = OutputDir::create(dir, cfg, "pareto", None)?;
    let res = pareto_sweep(cfg, resolution)?;
    out.write_with("pareto.csv", |w| write_pareto(w, &res.rows))?;
    let summary = serde_json::json!({
        "pre_front": res.pre_front,
        "post_front": res.post_front,
        "jaccard": res.jaccard,
    });
    out.write_text("pareto_summary.json", &format!("{summary:#}\n"))?;
    out.finish()
}

fn read_curve(path: &Path) -> Result<Vec<CurveRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| DpiError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("step,MER,MER_ci,SR,SR_ci") {
        return Err(DpiError::usage(format!(
            "{} is not a curve file",
            path.display()
        )));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad =
                || DpiError::usage(format!("malformed curve row `{l}` in {}", path.display()));
            if f.len() != 5 {
                return Err(bad());
            }
            let x = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            Ok(CurveRow {
                step: f[0].parse().map_err(|_| bad())?,
                mer: x(1)?,
                mer_ci: x(2)?,
                sr: x(3)?,
                sr_ci: x(4)?,
            })
        })
        .collect()
}

fn curve_files(dir: &Path, acc: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| DpiError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            curve_files(&p, acc)?;
        } else if p.extension().is_some_and(|e| e == "csv") {
            let head = std::fs::read_to_string(&p).map_err(|e| DpiError::io(&p, e))?;
            if head.starts_with("step,MER,") {
                acc.push(p);
            }
        }
    }
    Ok(())
}

/// Renders every curve file under `dir` into one SR and one MER chart.
/// Returns the written paths.
pub fn emit_reports(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    curve_files(dir, &mut files)?;
    if files.is_empty() {
        return Err(DpiError::usage(format!(
            "no curve files under {}",
            dir.display()
        )));
    }
    let mut sets = Vec::new();
    for f in &files {
        let name = f
            .strip_prefix(dir)
            .unwrap_or(f)
            .with_extension("")
            .to_string_lossy()
            .into_owned();
        sets.push((name, read_curve(f)?));
    }
    let mut written = Vec::new();
    for (sr, file) in [(true, "report_sr.svg"), (false, "report_mer.svg")] {
        let path = dir.join(file);
        let svg = curve_svg(if sr { "SR" } else { "MER" }, &sets, sr);
        std::fs::write(&path, svg).map_err(|e| DpiError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
