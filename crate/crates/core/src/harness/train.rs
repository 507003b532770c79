//! Training: on-policy collection with per-step preference inference, then
//! one optimization phase per batch.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{make_env, AnyEnv, Decision, GreedyPolicy, Model};
use super::config::RunConfig;
use super::seeding::{stream, substream};
use crate::appraisal::{
    dir_loss, elbo_loss, entropy, kl_rows, sample_rows, stab_loss, window_batch, HistoryWindow,
    PosteriorVars,
};
use crate::baselines::AgentKind;
use crate::diffmath::{dot, softmax_rows, AdamConfig, AdamState, Graph, Tensor, Var};
use crate::envs::Environment;
use crate::error::{DpiError, Result};
use crate::eval::{mer, run_episodes, sr, CurveRow, EpisodeLog};
use crate::policy::{
    critic_loss, normalize_advantages, ppo_loss, total_loss, value_mse, vector_gae, LossTerms,
};

/// Greedy-evaluation results at one point of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub returns: Vec<f64>,
    pub successes: Vec<bool>,
}

impl EvalPoint {
    fn from_logs(step: usize, logs: &[EpisodeLog]) -> Self {
        EvalPoint {
            step,
            returns: logs.iter().map(EpisodeLog::total).collect(),
            successes: logs.iter().map(|l| l.success).collect(),
        }
    }

    /// Pools the points of several seeds taken at the same step.
    pub fn pooled_row(points: &[&EvalPoint]) -> Result<CurveRow> {
        let step = points.first().map_or(0, |p| p.step);
        let logs: Vec<EpisodeLog> = points
            .iter()
            .flat_map(|p| p.returns.iter().zip(&p.successes))
            .map(|(r, s)| EpisodeLog {
                rewards: vec![*r],
                vectors: vec![vec![]],
                prefs: vec![vec![]],
                success: *s,
                events: vec![],
            })
            .collect();
        let (m, s) = (mer(&logs, points.len())?, sr(&logs, points.len())?);
        Ok(CurveRow {
            step,
            mer: m.mean,
            mer_ci: m.ci,
            sr: s.mean,
            sr_ci: s.ci,
        })
    }
}

/// Loss values of one optimization phase, averaged over minibatches.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub update: usize,
    pub step: usize,
    pub ppo: f64,
    pub critic: f64,
    pub elbo: f64,
    pub dir: f64,
    pub stab: f64,
    pub total: f64,
    /// Mean entropy of `softmax(μ)` over the batch.
    pub pred_entropy: f64,
    pub episodes: usize,
    pub mean_episode_return: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub seed: u64,
    pub steps: usize,
    pub updates: usize,
    pub curve: Vec<EvalPoint>,
    pub final_logs: Vec<EpisodeLog>,
    pub stats: Vec<UpdateStats>,
}

impl TrainOutcome {
    pub fn curve_rows(&self) -> Result<Vec<CurveRow>> {
        self.curve
            .iter()
            .map(|p| EvalPoint::pooled_row(&[p]))
            .collect()
    }
}

/// Extra behaviour of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where to write `diagnostic.json` if the run diverges.
    pub diagnostic_dir: Option<PathBuf>,
    pub skip_final_eval: bool,
}

struct Transition {
    window: Option<HistoryWindow>,
    obs: Tensor,
    action: usize,
    logp: f64,
    omega: Vec<f64>,
    eps: Vec<Vec<f64>>,
    values: Vec<f64>,
    /// Reward the critic learns: the vector, or a one-element scalar.
    reward: Vec<f64>,
    done: bool,
    /// Value of the next state when the segment is cut without termination.
    bootstrap: Option<Vec<f64>>,
}

/// Episode seeds shared by every greedy evaluation of a run.
pub fn eval_episode_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = substream(seed, "eval/episodes");
    (0..episodes).map(|_| rng.random()).collect()
}

/// Runs `model` greedily on the evaluation episodes of `seed`.
pub fn evaluate_model(
    model: &Model,
    cfg: &RunConfig,
    seed: u64,
    label: &str,
) -> Result<Vec<EpisodeLog>> {
    let env = make_env(cfg)?;
    let seeds = eval_episode_seeds(seed, cfg.eval.episodes);
    let mut rng = substream(seed, &format!("{}/{label}", stream::EVAL));
    let mut policy = GreedyPolicy::new(model);
    run_episodes(&mut policy, &env, &seeds, &cfg.omega_eval, &mut rng)
}

/// Trains the agent selected by `cfg.agent`.
pub fn train_agent(cfg: &RunConfig, seed: u64, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut t = Trainer::new(cfg, seed)?;
    let res = t.run();
    if let (Err(DpiError::Numeric { .. }), Some(dir)) = (&res, &opts.diagnostic_dir) {
        t.write_diagnostic(dir)?;
    }
    res?;
    let final_logs = if opts.skip_final_eval {
        Vec::new()
    } else {
        evaluate_model(&t.model, cfg, seed, "final")?
    };
    Ok(TrainOutcome {
        model: t.model,
        seed,
        steps: t.steps,
        updates: t.updates,
        curve: t.curve,
        final_logs,
        stats: t.stats,
    })
}

/// Trains the full DPI agent regardless of `cfg.agent`.
pub fn train_dpi(cfg: &RunConfig, seed: u64) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.agent = AgentKind::Dpi;
    train_agent(&cfg, seed, &TrainOptions::default())
}

struct Trainer<'c> {
    cfg: &'c RunConfig,
    seed: u64,
    env: AnyEnv,
    model: Model,
    adam_theta: AdamState,
    adam_phi: AdamState,
    env_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    action_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    steps: usize,
    updates: usize,
    curve: Vec<EvalPoint>,
    stats: Vec<UpdateStats>,
    episode_returns: Vec<f64>,
}

impl<'c> Trainer<'c> {
    fn new(cfg: &'c RunConfig, seed: u64) -> Result<Self> {
        let env = make_env(cfg)?;
        let mut init = substream(seed, stream::INIT);
        let model = Model::new(cfg, &env, &mut init)?;
        let adam = AdamConfig {
            lr: cfg.train.lr,
            ..AdamConfig::default()
        };
        Ok(Trainer {
            adam_theta: AdamState::new(adam, &model.theta),
            adam_phi: AdamState::new(adam, &model.phi),
            cfg,
            seed,
            env,
            model,
            env_rng: substream(seed, stream::ENV),
            noise_rng: substream(seed, stream::NOISE),
            action_rng: substream(seed, stream::ACTION),
            update_rng: substream(seed, stream::UPDATE),
            steps: 0,
            updates: 0,
            curve: Vec::new(),
            stats: Vec::new(),
            episode_returns: Vec::new(),
        })
    }

    fn periodic_eval(&mut self) -> Result<()> {
        let iv = self.cfg.eval.interval;
        if iv > 0 && self.steps % iv == 0 {
            let logs = evaluate_model(
                &self.model,
                self.cfg,
                self.seed,
                &format!("step{}", self.steps),
            )?;
            self.curve.push(EvalPoint::from_logs(self.steps, &logs));
        }
        Ok(())
    }

    fn reset(&mut self) -> Result<HistoryWindow> {
        let obs = self.env.reset_episode(self.env_rng.random());
        HistoryWindow::new(self.model.history, &obs)
    }

    fn run(&mut self) -> Result<()> {
        let total = self.cfg.total_steps;
        if self.model.kind == AgentKind::Random {
            while self.steps < total {
                self.steps += 1;
                self.periodic_eval()?;
            }
            return Ok(());
        }
        let batch = self.cfg.train.batch_size;
        let appraisal = self.model.kind.uses_appraisal();
        let scalar = self.model.kind.is_scalar_ppo();
        let gamma = self.cfg.train.gamma;
        let mut ctrl = self.model.controller.clone();
        let mut window = self.reset()?;
        if let Some(c) = &mut ctrl {
            c.begin_episode();
        }
        let mut t_ep = 0;
        let mut ep_return = 0.0;
        let mut buf: Vec<Transition> = Vec::with_capacity(batch);
        while self.steps < total {
            let info = self.env.privileged();
            let d: Decision =
                self.model
                    .decide(ctrl.as_mut(), &window, t_ep, &info, &mut self.noise_rng)?;
            let (action, logp) = self.model.explore(&d, &mut self.action_rng);
            let out = self.env.step_action(action)?;
            if let Some(c) = &mut ctrl {
                c.observe_events(&out.events);
            }
            let r = out.reward.as_slice().to_vec();
            ep_return += dot(&self.cfg.omega_eval, &r);
            let values = match (&d.output, d.state) {
                (Some(o), _) => o.values.clone(),
                (None, Some(s)) => self
                    .model
                    .table
                    .as_ref()
                    .expect("table")
                    .1
                    .values(s)
                    .to_vec(),
                _ => unreachable!("non-random agents produce values"),
            };
            let reward = if scalar {
                vec![match self.model.kind {
                    AgentKind::SrPpo => f64::from(u8::from(out.success)),
                    _ => dot(&self.cfg.omega_eval, &r),
                }]
            } else {
                r.clone()
            };
            let finished = out.finished();
            let next_obs = out.observation.clone();
            if let (Some((disc, table)), Some(s)) = (&mut self.model.table, d.state) {
                let next = (!out.done).then(|| disc.index(&next_obs));
                table.update_q(s, action, dot(&d.omega, &r), next, gamma);
                table.update_values(s, &r, next, gamma);
            }
            let mut tr = Transition {
                window: appraisal.then(|| window.clone()),
                obs: window.latest().clone(),
                action,
                logp,
                omega: d.omega.clone(),
                eps: d.eps,
                values,
                reward,
                done: out.done,
                bootstrap: None,
            };
            self.steps += 1;
            if finished {
                if out.truncated {
                    tr.bootstrap = Some(self.bootstrap(&next_obs, &d.omega)?);
                }
                self.episode_returns.push(ep_return);
                ep_return = 0.0;
                window = self.reset()?;
                if let Some(c) = &mut ctrl {
                    c.begin_episode();
                }
                t_ep = 0;
            } else {
                window.push(next_obs.clone());
                t_ep += 1;
                if buf.len() + 1 == batch {
                    tr.bootstrap = Some(self.bootstrap(&next_obs, &d.omega)?);
                }
            }
            buf.push(tr);
            if buf.len() == batch {
                self.optimize(&buf)?;
                buf.clear();
            }
            self.periodic_eval()?;
        }
        Ok(())
    }

    fn bootstrap(&self, obs: &Tensor, omega: &[f64]) -> Result<Vec<f64>> {
        self.model.value(obs, omega)
    }

    fn optimize(&mut self, buf: &[Transition]) -> Result<()> {
        let tc = &self.cfg.train;
        let n = buf.len();
        let mut adv_vec: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut returns: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut start = 0;
        for i in 0..n {
            let end = buf[i].done || buf[i].bootstrap.is_some() || i + 1 == n;
            if !end {
                continue;
            }
            let seg = &buf[start..=i];
            let d = seg[0].reward.len();
            let boot = buf[i].bootstrap.clone().unwrap_or_else(|| vec![0.0; d]);
            let rewards: Vec<Vec<f64>> = seg.iter().map(|t| t.reward.clone()).collect();
            let values: Vec<Vec<f64>> = seg.iter().map(|t| t.values.clone()).collect();
            let dones: Vec<bool> = seg.iter().map(|t| t.done).collect();
            let g = vector_gae(&rewards, &values, &boot, &dones, tc.gamma, tc.gae_lambda)?;
            adv_vec.extend(g.advantages);
            returns.extend(g.returns);
            start = i + 1;
        }
        let scalar_adv: Vec<f64> = adv_vec
            .iter()
            .zip(buf)
            .map(|(a, t)| if a.len() == 1 { a[0] } else { dot(a, &t.omega) })
            .collect();
        let adv = normalize_advantages(&scalar_adv);

        let mut stats = UpdateStats {
            update: self.updates + 1,
            step: self.steps,
            episodes: self.episode_returns.len(),
            mean_episode_return: if self.episode_returns.is_empty() {
                0.0
            } else {
                self.episode_returns.iter().sum::<f64>() / self.episode_returns.len() as f64
            },
            ..UpdateStats::default()
        };
        self.episode_returns.clear();
        let mut batches = 0.0;
        for _ in 0..tc.epochs {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut self.update_rng);
            for mb in idx.chunks(tc.minibatch_size) {
                self.minibatch(buf, mb, &adv, &returns, &mut stats)?;
                batches += 1.0;
            }
        }
        for v in [
            &mut stats.ppo,
            &mut stats.critic,
            &mut stats.elbo,
            &mut stats.dir,
            &mut stats.stab,
            &mut stats.total,
            &mut stats.pred_entropy,
        ] {
            *v /= batches;
        }
        self.updates += 1;
        self.stats.push(stats);
        Ok(())
    }

    fn minibatch(
        &mut self,
        buf: &[Transition],
        mb: &[usize],
        adv: &[f64],
        returns: &[Vec<f64>],
        stats: &mut UpdateStats,
    ) -> Result<()> {
        let tc = &self.cfg.train;
        let w = self.cfg.loss;
        let m = &self.model;
        let n = mb.len();
        let k = m.samples;
        let prefs =
            Tensor::from_rows(&mb.iter().map(|&i| buf[i].omega.clone()).collect::<Vec<_>>())?;
        let ret = Tensor::from_rows(&mb.iter().map(|&i| returns[i].clone()).collect::<Vec<_>>())?;
        let grads = {
            let mut g = Graph::new();
            let mut total: Option<Var> = None;
            let mut ppo_critic = None;
            if let Some(actor) = &m.actor {
                let obs: Vec<&Tensor> = mb.iter().map(|&i| &buf[i].obs).collect();
                let x = g.input(crate::appraisal::network_input(&obs));
                let wv = actor.pref_input.then(|| g.constant(prefs.clone()));
                let (logits, values) = actor.forward(&mut g, &m.theta, x, wv);
                let actions: Vec<usize> = mb.iter().map(|&i| buf[i].action).collect();
                let old: Vec<f64> = mb.iter().map(|&i| buf[i].logp).collect();
                let a: Vec<f64> = mb.iter().map(|&i| adv[i]).collect();
                let ppo = ppo_loss(&mut g, logits, &actions, &old, &a, tc.clip, tc.entropy_coef)?;
                let critic = if actor.value_dim == 1 {
                    let r: Vec<f64> = mb.iter().map(|&i| returns[i][0]).collect();
                    value_mse(&mut g, values, &r)
                } else {
                    critic_loss(&mut g, values, &prefs, &ret, tc.xi)?
                };
                stats.ppo += g.value(ppo).item();
                stats.critic += g.value(critic).item();
                ppo_critic = Some((ppo, critic));
            }
            let mut terms = (None, None, None);
            if let Some(enc) = &m.encoder {
                let windows: Vec<&HistoryWindow> = mb
                    .iter()
                    .map(|&i| buf[i].window.as_ref().expect("window stored"))
                    .collect();
                let steps = window_batch(&windows);
                let post: PosteriorVars = enc.forward(&mut g, &m.phi, &steps);
                let kl = kl_rows(&mut g, post);
                let mut eps = Vec::with_capacity(n * k * enc.dim);
                for &i in mb {
                    for e in &buf[i].eps {
                        eps.extend_from_slice(e);
                    }
                }
                let eps = Tensor::from_parts(vec![n * k, enc.dim], eps);
                let (_, omega) = sample_rows(&mut g, post, &eps, k)?;
                let elbo = elbo_loss(&mut g, omega, &ret, k, kl, w.beta, w.effective_alpha_kl())?;
                let pred = g.softmax_rows(post.mu);
                let dir = dir_loss(&mut g, pred, &ret);
                let stab = stab_loss(&mut g, pred, &prefs);
                stats.elbo += g.value(elbo).item();
                stats.dir += g.value(dir).item();
                stats.stab += g.value(stab).item();
                let pv = softmax_rows(g.value(post.mu));
                stats.pred_entropy +=
                    (0..n).map(|r| entropy(pv.row_slice(r))).sum::<f64>() / n as f64;
                terms = (Some(elbo), Some(dir), Some(stab));
            }
            if let Some((ppo, critic)) = ppo_critic {
                total = Some(total_loss(
                    &mut g,
                    LossTerms {
                        ppo,
                        critic,
                        elbo: terms.0,
                        dir: terms.1,
                        stab: terms.2,
                    },
                    &w,
                ));
            } else if let (Some(e), Some(d), Some(s)) = terms {
                let d = g.scale(d, w.effective_lambda_dir());
                let s = g.scale(s, w.effective_gamma_stab());
                let es = g.add(e, d);
                total = Some(g.add(es, s));
            }
            let total = total.ok_or_else(|| DpiError::usage("agent has nothing to optimize"))?;
            let tv = g.value(total).item();
            if !tv.is_finite() {
                return Err(DpiError::numeric(
                    "train.update",
                    format!("non-finite loss {tv} at update {}", self.updates + 1),
                ));
            }
            stats.total += tv;
            g.backward(total)?
        };
        for (ps, adam) in [
            (&mut self.model.theta, &mut self.adam_theta),
            (&mut self.model.phi, &mut self.adam_phi),
        ] {
            if ps.is_empty() {
                continue;
            }
            ps.zero_grad();
            ps.accumulate(&grads)?;
            let norm = ps.clip_grad_norm(tc.max_grad_norm);
            if !norm.is_finite() {
                return Err(DpiError::numeric(
                    "train.update",
                    format!("non-finite gradient norm in `{}`", ps.name()),
                ));
            }
            adam.step(ps)?;
        }
        Ok(())
    }

    fn write_diagnostic(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| DpiError::io(dir, e))?;
        let snap = self.model.checkpoint(self.cfg, self.seed, self.steps);
        let path = dir.join("diagnostic.json");
        let text = serde_json::to_string(&snap).map_err(|e| DpiError::Serde(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| DpiError::io(&path, e))
    }
}
