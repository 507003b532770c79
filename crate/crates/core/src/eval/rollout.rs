use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{mer, sr, EpisodeLog};
use crate::diffmath::{dot, Tensor};
use crate::envs::{Environment, PrivilegedInfo, StepOutcome};
use crate::error::Result;

/// A frozen policy as seen by the evaluator.
pub trait EvalAgent {
    fn begin_episode(&mut self, obs: &Tensor) -> Result<()>;
    /// Greedy action and the preference it was chosen under.
    fn act(
        &mut self,
        obs: &Tensor,
        t: usize,
        info: &PrivilegedInfo,
        rng: &mut ChaCha8Rng,
    ) -> Result<(usize, Vec<f64>)>;
    fn observe(&mut self, outcome: &StepOutcome) -> Result<()>;
}

/// Plays one episode per seed with an independent environment copy.
pub fn run_episodes<E: Environment, A: EvalAgent + ?Sized>(
    agent: &mut A,
    env: &E,
    seeds: &[u64],
    omega_eval: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpisodeLog>> {
    let mut env = env.clone();
    let mut logs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut obs = env.reset_episode(seed);
        agent.begin_episode(&obs)?;
        let mut log = EpisodeLog {
            rewards: Vec::new(),
            vectors: Vec::new(),
            prefs: Vec::new(),
            success: false,
            events: Vec::new(),
        };
        let mut t = 0;
        loop {
            let info = env.privileged();
            let (a, w) = agent.act(&obs, t, &info, rng)?;
            let out = env.step_action(a)?;
            log.rewards.push(dot(omega_eval, out.reward.as_slice()));
            log.vectors.push(out.reward.as_slice().to_vec());
            log.prefs.push(w);
            if !out.events.is_empty() {
                log.events.push(t);
            }
            agent.observe(&out)?;
            t += 1;
            if out.finished() {
                log.success = out.success;
                break;
            }
            obs = out.observation;
        }
        logs.push(log);
    }
    Ok(logs)
}

/// One point of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub mer: f64,
    pub mer_ci: f64,
    pub sr: f64,
    pub sr_ci: f64,
}

impl CurveRow {
    pub fn from_logs(step: usize, logs: &[EpisodeLog], seeds: usize) -> Result<Self> {
        let (m, s) = (mer(logs, seeds)?, sr(logs, seeds)?);
        Ok(CurveRow {
            step,
            mer: m.mean,
            mer_ci: m.ci,
            sr: s.mean,
            sr_ci: s.ci,
        })
    }
}

/// Number of periodic evaluations in a run.
pub fn eval_points(total_steps: usize, interval: usize) -> usize {
    total_steps.checked_div(interval).unwrap_or(0)
}
