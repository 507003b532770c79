//! Agent state shared by training and evaluation: networks, parameters, the
//! per-step preference/action decision and checkpoints.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::appraisal::{HistoryWindow, PreferenceEncoder};
use crate::baselines::{
    random_action, uniform_pref, AgentKind, PrefController, QueueDiscretizer, TabularQ,
};
use crate::diffmath::{ParamSet, ParamSnapshot, Tensor};
use crate::envs::{
    EnvKind, Environment, EventMode, MazeEnv, PrivilegedInfo, QueueEnv, StepOutcome, REWARD_DIM,
};
use crate::error::{DpiError, Result};
use crate::eval::EvalAgent;
use crate::policy::{
    envelope_argmax, envelope_select, greedy_action, sample_categorical, ActorCritic, ActorOutput,
};

/// Either environment behind one type.
#[derive(Debug, Clone)]
pub enum AnyEnv {
    Queue(QueueEnv),
    Maze(MazeEnv),
}

macro_rules! delegate {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            AnyEnv::Queue($e) => $body,
            AnyEnv::Maze($e) => $body,
        }
    };
}

impl Environment for AnyEnv {
    fn kind(&self) -> EnvKind {
        delegate!(self, e => e.kind())
    }
    fn num_actions(&self) -> usize {
        delegate!(self, e => e.num_actions())
    }
    fn observation_shape(&self) -> Vec<usize> {
        delegate!(self, e => e.observation_shape())
    }
    fn reset_episode(&mut self, seed: u64) -> Tensor {
        delegate!(self, e => e.reset_episode(seed))
    }
    fn step_action(&mut self, action: usize) -> Result<StepOutcome> {
        delegate!(self, e => e.step_action(action))
    }
    fn observation(&self) -> Tensor {
        delegate!(self, e => e.observation())
    }
    fn privileged(&self) -> PrivilegedInfo {
        delegate!(self, e => e.privileged())
    }
    fn summary(&self) -> serde_json::Value {
        delegate!(self, e => e.summary())
    }
    fn elapsed(&self) -> usize {
        delegate!(self, e => e.elapsed())
    }
    fn set_event_mode(&mut self, mode: EventMode) {
        delegate!(self, e => e.set_event_mode(mode))
    }
}

pub fn make_env(cfg: &RunConfig) -> Result<AnyEnv> {
    Ok(match cfg.env {
        EnvKind::Queue => AnyEnv::Queue(QueueEnv::new(cfg.queue.clone())?),
        EnvKind::Maze => AnyEnv::Maze(MazeEnv::new(cfg.maze.clone())?),
    })
}

/// Preference and network outputs chosen for one step.
#[derive(Debug, Clone)]
pub struct Decision {
    pub omega: Vec<f64>,
    /// Posterior noise draws behind the candidates (appraisal agents).
    pub eps: Vec<Vec<f64>>,
    pub output: Option<ActorOutput>,
    /// Discretized state (tabular agent).
    pub state: Option<usize>,
}

/// Everything an agent learns, plus the constants it acts with.
#[derive(Debug, Clone)]
pub struct Model {
    pub kind: AgentKind,
    pub env: EnvKind,
    pub history: usize,
    pub samples: usize,
    pub epsilon: f64,
    pub num_actions: usize,
    pub omega_eval: Vec<f64>,
    pub actor: Option<ActorCritic>,
    pub theta: ParamSet,
    pub encoder: Option<PreferenceEncoder>,
    pub phi: ParamSet,
    pub table: Option<(QueueDiscretizer, TabularQ)>,
    /// Initial controller state; cloned for each rollout.
    pub controller: Option<PrefController>,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(cfg: &RunConfig, env: &AnyEnv, rng: &mut R) -> Result<Self> {
        let kind = cfg.agent;
        let shape = env.observation_shape();
        let num_actions = env.num_actions();
        let mut theta = ParamSet::new("theta");
        let mut phi = ParamSet::new("phi");
        let actor = if kind.uses_pref_actor_critic() {
            Some(ActorCritic::new(
                &mut theta,
                cfg.env,
                &shape,
                num_actions,
                REWARD_DIM,
                true,
                REWARD_DIM,
                &cfg.net,
                rng,
            )?)
        } else if kind.is_scalar_ppo() {
            Some(ActorCritic::new(
                &mut theta,
                cfg.env,
                &shape,
                num_actions,
                REWARD_DIM,
                false,
                1,
                &cfg.net,
                rng,
            )?)
        } else {
            None
        };
        let encoder = if kind.uses_appraisal() {
            Some(PreferenceEncoder::new(
                &mut phi, cfg.env, &shape, &cfg.net, REWARD_DIM, rng,
            )?)
        } else {
            None
        };
        let table = if kind == AgentKind::Tabq {
            if cfg.env != EnvKind::Queue {
                return Err(DpiError::config("the tabq agent runs only on queue"));
            }
            let t = cfg.baselines.tabq;
            let disc = QueueDiscretizer { bins: t.bins };
            Some((
                disc,
                TabularQ::new(disc.num_states(), num_actions, REWARD_DIM, t.alpha),
            ))
        } else {
            None
        };
        Ok(Model {
            kind,
            env: cfg.env,
            history: cfg.train.history,
            samples: cfg.train.samples,
            epsilon: cfg.baselines.tabq.epsilon,
            num_actions,
            omega_eval: cfg.omega_eval.clone(),
            actor,
            theta,
            encoder,
            phi,
            table,
            controller: PrefController::for_agent(kind, cfg.env, &cfg.baselines),
        })
    }

    fn actor(&self) -> Result<&ActorCritic> {
        self.actor
            .as_ref()
            .ok_or_else(|| DpiError::usage(format!("{} has no actor-critic", self.kind.name())))
    }

    /// Selects the preference for the current step and evaluates the actor
    /// under it.
    pub fn decide(
        &self,
        ctrl: Option<&mut PrefController>,
        window: &HistoryWindow,
        t: usize,
        info: &PrivilegedInfo,
        rng: &mut ChaCha8Rng,
    ) -> Result<Decision> {
        let obs = window.latest();
        let mut d = Decision {
            omega: uniform_pref(),
            eps: Vec::new(),
            output: None,
            state: None,
        };
        match self.kind {
            AgentKind::Dpi | AgentKind::Tabq => {
                let enc = self
                    .encoder
                    .as_ref()
                    .expect("appraisal agents own an encoder");
                let post = enc.encode(&self.phi, window)?;
                let samples = post.sample(self.samples, rng)?;
                let cands: Vec<Vec<f64>> = samples.iter().map(|s| s.omega.clone()).collect();
                d.eps = samples.into_iter().map(|s| s.eps).collect();
                if let Some((disc, table)) = &self.table {
                    let s = disc.index(obs);
                    let v = vec![table.values(s).to_vec(); cands.len()];
                    let idx = envelope_argmax(&cands, &v)?;
                    d.omega = cands[idx].clone();
                    d.state = Some(s);
                } else {
                    let (w, idx, mut outs) =
                        envelope_select(self.actor()?, &self.theta, obs, &cands)?;
                    d.omega = w;
                    d.output = Some(outs.swap_remove(idx));
                }
            }
            AgentKind::MerPpo | AgentKind::SrPpo => {
                d.omega = self.omega_eval.clone();
                d.output = Some(self.actor()?.evaluate(&self.theta, obs, &[])?);
            }
            AgentKind::Random => {}
            _ => {
                let ctrl = ctrl.ok_or_else(|| DpiError::usage("preference controller missing"))?;
                let cands = ctrl.candidates(t, info, rng);
                let actor = self.actor()?;
                if cands.len() == 1 {
                    d.output = Some(actor.evaluate(&self.theta, obs, &cands[0])?);
                    d.omega = cands.into_iter().next().expect("one candidate");
                } else {
                    let (w, idx, mut outs) = envelope_select(actor, &self.theta, obs, &cands)?;
                    d.omega = w;
                    d.output = Some(outs.swap_remove(idx));
                }
            }
        }
        Ok(d)
    }

    /// Greedy action; ties are broken uniformly at random.
    pub fn greedy(&self, d: &Decision, rng: &mut ChaCha8Rng) -> usize {
        match (&d.output, &self.table, d.state) {
            (Some(out), _, _) => greedy_action(&out.logits, rng),
            (None, Some((_, table)), Some(s)) => table.greedy(s, rng),
            _ => random_action(rng, self.num_actions),
        }
    }

    /// Behaviour action and its log-probability under the actor (0 for
    /// agents without one).
    pub fn explore(&self, d: &Decision, rng: &mut ChaCha8Rng) -> (usize, f64) {
        match (&d.output, &self.table, d.state) {
            (Some(out), _, _) => {
                let p = out.probs();
                let a = sample_categorical(&p, rng);
                (a, p[a].ln())
            }
            (None, Some((_, table)), Some(s)) => (table.epsilon_greedy(s, self.epsilon, rng), 0.0),
            _ => (random_action(rng, self.num_actions), 0.0),
        }
    }

    /// Critic (or table) value of `obs` under `omega`.
    pub fn value(&self, obs: &Tensor, omega: &[f64]) -> Result<Vec<f64>> {
        if let Some((disc, table)) = &self.table {
            return Ok(table.values(disc.index(obs)).to_vec());
        }
        let actor = self.actor()?;
        Ok(actor.evaluate(&self.theta, obs, omega)?.values)
    }

    pub fn checkpoint(&self, config: &RunConfig, seed: u64, steps: usize) -> Checkpoint {
        Checkpoint {
            config: config.clone(),
            seed,
            steps,
            theta: self.theta.snapshot(),
            phi: self.phi.snapshot(),
            table: self.table.as_ref().map(|(_, t)| t.clone()),
        }
    }

    /// Rebuilds the networks from the stored config, then loads the weights.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let env = make_env(&ckpt.config)?;
        let mut rng = super::seeding::substream(ckpt.seed, super::seeding::stream::INIT);
        let mut m = Model::new(&ckpt.config, &env, &mut rng)?;
        m.theta.load(&ckpt.theta)?;
        m.phi.load(&ckpt.phi)?;
        if let (Some((_, t)), Some(saved)) = (&mut m.table, &ckpt.table) {
            *t = saved.clone();
        }
        Ok(m)
    }
}

/// Saved weights with the config needed to rebuild the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub seed: u64,
    pub steps: usize,
    pub theta: ParamSnapshot,
    pub phi: ParamSnapshot,
    pub table: Option<TabularQ>,
}

/// Frozen greedy policy for evaluation.
pub struct GreedyPolicy<'m> {
    model: &'m Model,
    ctrl: Option<PrefController>,
    window: Option<HistoryWindow>,
}

impl<'m> GreedyPolicy<'m> {
    pub fn new(model: &'m Model) -> Self {
        GreedyPolicy {
            model,
            ctrl: model.controller.clone(),
            window: None,
        }
    }
}

impl EvalAgent for GreedyPolicy<'_> {
    fn begin_episode(&mut self, obs: &Tensor) -> Result<()> {
        self.window = Some(HistoryWindow::new(self.model.history, obs)?);
        if let Some(c) = &mut self.ctrl {
            c.begin_episode();
        }
        Ok(())
    }

    fn act(
        &mut self,
        _obs: &Tensor,
        t: usize,
        info: &PrivilegedInfo,
        rng: &mut ChaCha8Rng,
    ) -> Result<(usize, Vec<f64>)> {
        let window = self
            .window
            .as_ref()
            .ok_or_else(|| DpiError::usage("act before begin_episode"))?;
        let d = self
            .model
            .decide(self.ctrl.as_mut(), window, t, info, rng)?;
        Ok((self.model.greedy(&d, rng), d.omega))
    }

    fn observe(&mut self, outcome: &StepOutcome) -> Result<()> {
        if let Some(c) = &mut self.ctrl {
            c.observe_events(&outcome.events);
        }
        if let Some(w) = &mut self.window {
            w.push(outcome.observation.clone());
        }
        Ok(())
    }
}
