//! Multi-seed runs and the comparisons built from them: the agent suite,
//! ablations, history and regularizer sweeps, and the Pareto regime sweep.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::agent::{make_env, GreedyPolicy};
use super::config::RunConfig;
use super::seeding::substream;
use super::train::{
    eval_episode_seeds, train_agent, EvalPoint, TrainOptions, TrainOutcome, UpdateStats,
};
use crate::baselines::AgentKind;
use crate::envs::{component, EnvKind, EventMode};
use crate::error::{DpiError, Result};
use crate::eval::{
    alignment_summary, jaccard, mer, pareto_front, psk, psk_average, run_episodes, sr, CurveRow,
    EpisodeLog, MetricRow, MetricSummary, ParetoRow,
};
use crate::fmt::num;

/// What one seed leaves behind once the model is dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub steps: usize,
    pub updates: usize,
    pub curve: Vec<EvalPoint>,
    pub logs: Vec<EpisodeLog>,
    pub stats: Vec<UpdateStats>,
}

impl From<TrainOutcome> for SeedRun {
    fn from(t: TrainOutcome) -> Self {
        SeedRun {
            seed: t.seed,
            steps: t.steps,
            updates: t.updates,
            curve: t.curve,
            logs: t.final_logs,
            stats: t.stats,
        }
    }
}

/// One configuration trained over a seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSet {
    pub label: String,
    pub agent: AgentKind,
    pub k_max: usize,
    pub runs: Vec<SeedRun>,
}

impl RunSet {
    pub fn seeds(&self) -> usize {
        self.runs.len()
    }

    /// Final evaluation episodes of every seed, in seed order.
    pub fn logs(&self) -> Vec<EpisodeLog> {
        self.runs
            .iter()
            .flat_map(|r| r.logs.iter().cloned())
            .collect()
    }

    pub fn mer(&self) -> Result<MetricSummary> {
        mer(&self.logs(), self.seeds())
    }

    pub fn sr(&self) -> Result<MetricSummary> {
        sr(&self.logs(), self.seeds())
    }

    /// PS@K averaged over `K = 1..=k_max`.
    pub fn psk_average(&self) -> Result<MetricSummary> {
        psk_average(&self.logs(), self.k_max, self.seeds())
    }

    pub fn alignment(&self) -> Result<MetricSummary> {
        alignment_summary(&self.logs(), self.k_max, self.seeds())
    }

    /// Learning curve pooled over seeds at each evaluation step.
    pub fn curve(&self) -> Result<Vec<CurveRow>> {
        let n = self.runs.first().map_or(0, |r| r.curve.len());
        if self.runs.iter().any(|r| r.curve.len() != n) {
            return Err(DpiError::usage(
                "seeds have learning curves of different length",
            ));
        }
        (0..n)
            .map(|i| {
                let pts: Vec<&EvalPoint> = self.runs.iter().map(|r| &r.curve[i]).collect();
                EvalPoint::pooled_row(&pts)
            })
            .collect()
    }

    /// Per-seed MER/SR rows, then pooled MER, SR, PS@K for every K, the
    /// PS@K average and alignment. Metrics without events are skipped.
    pub fn metric_rows(&self) -> Result<Vec<MetricRow>> {
        let row = |seed: String, metric: &str, k: Option<usize>, m: &MetricSummary| MetricRow {
            run: self.label.clone(),
            seed,
            metric: metric.to_string(),
            k,
            mean: m.mean,
            ci: m.ci,
        };
        let mut rows = Vec::new();
        for r in &self.runs {
            rows.push(row(r.seed.to_string(), "MER", None, &mer(&r.logs, 1)?));
            rows.push(row(r.seed.to_string(), "SR", None, &sr(&r.logs, 1)?));
        }
        let logs = self.logs();
        let s = self.seeds();
        rows.push(row("all".into(), "MER", None, &mer(&logs, s)?));
        rows.push(row("all".into(), "SR", None, &sr(&logs, s)?));
        for k in 1..=self.k_max {
            if let Ok(m) = psk(&logs, k, s) {
                rows.push(row("all".into(), "PSK", Some(k), &m));
            }
        }
        if let Ok(m) = psk_average(&logs, self.k_max, s) {
            rows.push(row("all".into(), "PSK_avg", None, &m));
        }
        if let Ok(m) = alignment_summary(&logs, self.k_max, s) {
            rows.push(row("all".into(), "align", None, &m));
        }
        Ok(rows)
    }
}

/// Trains `cfg.agent` on every seed of `cfg.seeds`; `on_run` sees each
/// outcome (with its model) before the model is dropped.
pub fn train_seeds<F>(
    cfg: &RunConfig,
    label: &str,
    opts: &TrainOptions,
    mut on_run: F,
) -> Result<RunSet>
where
    F: FnMut(&TrainOutcome) -> Result<()>,
{
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let out = train_agent(cfg, seed, opts)?;
        on_run(&out)?;
        runs.push(SeedRun::from(out));
    }
    Ok(RunSet {
        label: label.to_string(),
        agent: cfg.agent,
        k_max: cfg.eval.k_max,
        runs,
    })
}

/// Agents of `agents` that can run on `env`.
pub fn suite_agents(env: EnvKind, agents: &[AgentKind]) -> Vec<AgentKind> {
    agents
        .iter()
        .copied()
        .filter(|a| *a != AgentKind::Tabq || env == EnvKind::Queue)
        .collect()
}

/// Every agent under one environment configuration and seed list.
pub fn run_suite(cfg: &RunConfig, agents: &[AgentKind]) -> Result<Vec<RunSet>> {
    if agents.is_empty() {
        return Err(DpiError::config("suite needs at least one agent"));
    }
    let mut sets = Vec::new();
    for agent in suite_agents(cfg.env, agents) {
        let mut c = cfg.clone();
        c.agent = agent;
        sets.push(train_seeds(
            &c,
            agent.name(),
            &TrainOptions::default(),
            |_| Ok(()),
        )?);
    }
    Ok(sets)
}

/// A regularizer of the appraisal objective that can be switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    Kl,
    Dir,
    Sta,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Kl, Ablation::Dir, Ablation::Sta];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(Ablation::Kl),
            "dir" => Ok(Ablation::Dir),
            "sta" | "stab" => Ok(Ablation::Sta),
            _ => Err(DpiError::config(format!(
                "unknown ablation `{s}` (expected kl, dir or sta)"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Kl => "w/o KL",
            Ablation::Dir => "w/o dir",
            Ablation::Sta => "w/o sta",
        }
    }

    pub fn apply(self, cfg: &mut RunConfig) {
        match self {
            Ablation::Kl => cfg.loss.no_kl = true,
            Ablation::Dir => cfg.loss.no_dir = true,
            Ablation::Sta => cfg.loss.no_sta = true,
        }
    }
}

/// Full DPI followed by one run set per dropped term.
pub fn run_ablations(cfg: &RunConfig, drops: &[Ablation]) -> Result<Vec<RunSet>> {
    let mut c = cfg.clone();
    c.agent = AgentKind::Dpi;
    let mut sets = vec![train_seeds(&c, "full", &TrainOptions::default(), |_| {
        Ok(())
    })?];
    for &d in drops {
        let mut a = c.clone();
        d.apply(&mut a);
        sets.push(train_seeds(
            &a,
            d.label(),
            &TrainOptions::default(),
            |_| Ok(()),
        )?);
    }
    Ok(sets)
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub params: Vec<(String, f64)>,
    pub mer: MetricSummary,
    pub sr: MetricSummary,
}

impl SweepRow {
    fn from_set(params: Vec<(String, f64)>, set: &RunSet) -> Result<Self> {
        Ok(SweepRow {
            params,
            mer: set.mer()?,
            sr: set.sr()?,
        })
    }
}

/// DPI MER and SR for each history length.
pub fn sweep_history(cfg: &RunConfig, values: &[usize]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(DpiError::config("sweep-h needs at least one H value"));
    }
    let mut rows = Vec::new();
    for &h in values {
        let mut c = cfg.clone();
        c.agent = AgentKind::Dpi;
        c.train.history = h;
        let set = train_seeds(&c, &format!("H={h}"), &TrainOptions::default(), |_| Ok(()))?;
        rows.push(SweepRow::from_set(vec![("H".into(), h as f64)], &set)?);
    }
    Ok(rows)
}

/// DPI MER and SR with `γ_stab` and `λ_dir` scaled by each multiplier pair.
pub fn sweep_hparams(cfg: &RunConfig, grid: &[(f64, f64)]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(DpiError::config(
            "sweep-hparams needs at least one grid point",
        ));
    }
    let mut rows = Vec::new();
    for &(gs, ld) in grid {
        let mut c = cfg.clone();
        c.agent = AgentKind::Dpi;
        c.loss.gamma_stab *= gs;
        c.loss.lambda_dir *= ld;
        let set = train_seeds(
            &c,
            &format!("gs={gs},ld={ld}"),
            &TrainOptions::default(),
            |_| Ok(()),
        )?;
        rows.push(SweepRow::from_set(
            vec![
                ("gamma_stab_mult".into(), gs),
                ("lambda_dir_mult".into(), ld),
            ],
            &set,
        )?);
    }
    Ok(rows)
}

/// Points of the `d`-simplex whose coordinates are multiples of
/// `1/resolution`, in lexicographic order.
pub fn simplex_grid(d: usize, resolution: usize) -> Vec<Vec<f64>> {
    fn rec(left: usize, slots: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for v in (0..=left).rev() {
            cur.push(v);
            rec(left - v, slots - 1, cur, out);
            cur.pop();
        }
    }
    if d == 0 || resolution == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    rec(resolution, d, &mut Vec::new(), &mut out);
    out.into_iter()
        .map(|p| {
            p.into_iter()
                .map(|v| v as f64 / resolution as f64)
                .collect()
        })
        .collect()
}

/// Projection used for fronts: progress return against the summed time and
/// deadline return, both larger-is-better.
pub fn pareto_projection(vector_return: &[f64]) -> (f64, f64) {
    (
        vector_return[component::PROGRESS],
        vector_return[component::TIME] + vector_return[component::DEADLINE],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoResult {
    pub grid: Vec<Vec<f64>>,
    pub rows: Vec<ParetoRow>,
    /// Grid indices on the non-dominated front of each regime.
    pub pre_front: Vec<usize>,
    pub post_front: Vec<usize>,
    /// Intersection over union of the two supporting sets.
    pub jaccard: f64,
}

pub const REGIMES: [(&str, EventMode); 2] =
    [("pre", EventMode::Disabled), ("post", EventMode::AtStart)];

/// Trains a fixed-ω agent per grid point and regime, then extracts each
/// regime's front of mean projected returns.
pub fn pareto_sweep(cfg: &RunConfig, resolution: usize) -> Result<ParetoResult> {
    let x = &cfg.experiments;
    let grid = simplex_grid(crate::envs::REWARD_DIM, resolution);
    if grid.is_empty() {
        return Err(DpiError::config("pareto grid resolution must be positive"));
    }
    let mut rows = Vec::new();
    let mut fronts = Vec::new();
    for (regime, mode) in REGIMES {
        let mut points = Vec::with_capacity(grid.len());
        for w in &grid {
            let mut c = cfg.clone();
            c.agent = AgentKind::Fixed;
            c.baselines.fixed_omega = w.clone();
            c.total_steps = x.pareto_steps;
            c.eval.interval = 0;
            c.set_event_mode(mode);
            let env = make_env(&c)?;
            let (mut px, mut py) = (0.0, 0.0);
            for &seed in &x.pareto_seeds {
                let out = train_agent(
                    &c,
                    seed,
                    &TrainOptions {
                        skip_final_eval: true,
                        ..TrainOptions::default()
                    },
                )?;
                let seeds = eval_episode_seeds(seed, x.pareto_episodes);
                let mut rng = substream(seed, &format!("eval/pareto/{regime}"));
                let mut policy = GreedyPolicy::new(&out.model);
                let logs = run_episodes(&mut policy, &env, &seeds, &c.omega_eval, &mut rng)?;
                for l in &logs {
                    let (a, b) = pareto_projection(&l.vector_return());
                    px += a;
                    py += b;
                }
            }
            let n = (x.pareto_seeds.len() * x.pareto_episodes) as f64;
            points.push((px / n, py / n));
        }
        let front = pareto_front(&points);
        for (i, (&(px, py), w)) in points.iter().zip(&grid).enumerate() {
            rows.push(ParetoRow {
                regime: regime.to_string(),
                x: px,
                y: py,
                omega: w.clone(),
                dominated: !front.contains(&i),
            });
        }
        fronts.push(front);
    }
    let post_front = fronts.pop().expect("two regimes");
    let pre_front = fronts.pop().expect("two regimes");
    Ok(ParetoResult {
        jaccard: jaccard(&pre_front, &post_front),
        grid,
        rows,
        pre_front,
        post_front,
    })
}

/// Table with one row per run set: MER, SR and the PS@K average with
/// their half-widths.
pub fn write_table<W: Write>(mut out: W, sets: &[RunSet]) -> Result<()> {
    let mut s = String::from("method,MER,MER_ci,SR,SR_ci,PSK,PSK_ci,episodes,seeds\n");
    for set in sets {
        let (m, r) = (set.mer()?, set.sr()?);
        let (p, pc) = match set.psk_average() {
            Ok(p) => (num(p.mean), num(p.ci)),
            Err(_) => (String::new(), String::new()),
        };
        s += &format!(
            "{},{},{},{},{},{p},{pc},{},{}\n",
            set.label,
            num(m.mean),
            num(m.ci),
            num(r.mean),
            num(r.ci),
            m.n,
            set.seeds()
        );
    }
    out.write_all(s.as_bytes())
        .map_err(|e| DpiError::io(Path::new("<table>"), e))
}

pub fn write_sweep<W: Write>(mut out: W, rows: &[SweepRow]) -> Result<()> {
    let Some(first) = rows.first() else {
        return Ok(());
    };
    let mut s: String = first.params.iter().map(|(k, _)| format!("{k},")).collect();
    s += "MER,MER_ci,SR,SR_ci\n";
    for r in rows {
        for (_, v) in &r.params {
            s += &format!("{},", num(*v));
        }
        s += &format!(
            "{},{},{},{}\n",
            num(r.mer.mean),
            num(r.mer.ci),
            num(r.sr.mean),
            num(r.sr.ci)
        );
    }
    out.write_all(s.as_bytes())
        .map_err(|e| DpiError::io(Path::new("<sweep>"), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_grid_sizes() {
        let g = simplex_grid(5, 2);
        assert_eq!(g.len(), 15);
        for w in &g {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|x| *x >= 0.0));
        }
        assert_eq!(g[0], vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(simplex_grid(3, 4).len(), 15);
        assert_eq!(simplex_grid(1, 3), vec![vec![1.0]]);
    }

    #[test]
    fn drop_parsing() {
        assert_eq!(Ablation::parse("kl").unwrap(), Ablation::Kl);
        assert_eq!(Ablation::parse("sta").unwrap(), Ablation::Sta);
        assert!(Ablation::parse("entropy").is_err());
        let mut c = RunConfig::default();
        Ablation::Dir.apply(&mut c);
        assert!(c.loss.no_dir && !c.loss.no_kl && !c.loss.no_sta);
    }

    #[test]
    fn suite_skips_tabq_on_maze() {
        let all = AgentKind::ALL;
        assert_eq!(suite_agents(EnvKind::Queue, &all).len(), all.len());
        assert!(!suite_agents(EnvKind::Maze, &all).contains(&AgentKind::Tabq));
    }

    fn tiny(agent: AgentKind) -> RunConfig {
        let mut c = RunConfig::default();
        c.agent = agent;
        c.seeds = vec![0, 1];
        c.total_steps = 256;
        c.train.batch_size = 128;
        c.eval.interval = 128;
        c.eval.episodes = 5;
        c.net.hidden = 8;
        c.net.gru_hidden = 8;
        c.net.head_hidden = 8;
        c
    }

    #[test]
    fn run_set_pools_seeds() {
        let set = train_seeds(
            &tiny(AgentKind::Fixed),
            "fixed",
            &TrainOptions::default(),
            |_| Ok(()),
        )
        .unwrap();
        assert_eq!(set.seeds(), 2);
        assert_eq!(set.logs().len(), 10);
        assert_eq!(set.mer().unwrap().n, 10);
        let curve = set.curve().unwrap();
        assert_eq!(
            curve.iter().map(|r| r.step).collect::<Vec<_>>(),
            vec![128, 256]
        );
        let rows = set.metric_rows().unwrap();
        assert_eq!(rows.iter().filter(|r| r.seed != "all").count(), 4);
        assert!(rows.iter().any(|r| r.seed == "all" && r.metric == "SR"));
    }

    #[test]
    fn sweep_layout() {
        let m = MetricSummary {
            mean: 1.5,
            ci: 0.25,
            n: 4,
            seeds: 2,
        };
        let rows = vec![SweepRow {
            params: vec![("H".into(), 3.0)],
            mer: m.clone(),
            sr: m,
        }];
        let mut buf = Vec::new();
        write_sweep(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "H,MER,MER_ci,SR,SR_ci\n3,1.5,0.25,1.5,0.25\n"
        );
    }

    #[test]
    fn empty_suite_is_a_config_error() {
        assert!(matches!(
            run_suite(&tiny(AgentKind::Dpi), &[]),
            Err(DpiError::Config(_))
        ));
    }
}
