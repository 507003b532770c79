use rand::Rng;

use crate::appraisal::{network_input, NetConfig, StateEncoder};
use crate::diffmath::layers::Mlp;
use crate::diffmath::{Activation, Graph, ParamSet, Tensor, Var};
use crate::envs::EnvKind;
use crate::error::{DpiError, Result};

/// Shared state encoder feeding an actor head and a vector critic head.
///
/// When `pref_input` is set both heads also receive `ω`.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub state: StateEncoder,
    pub actor: Mlp,
    pub critic: Mlp,
    pub pref_dim: usize,
    pub pref_input: bool,
    pub num_actions: usize,
    pub value_dim: usize,
}

/// Plain outputs for a single state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorOutput {
    pub logits: Vec<f64>,
    pub values: Vec<f64>,
}

impl ActorOutput {
    pub fn probs(&self) -> Vec<f64> {
        crate::diffmath::softmax(&self.logits)
    }
}

impl ActorCritic {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        env: EnvKind,
        obs_shape: &[usize],
        num_actions: usize,
        pref_dim: usize,
        pref_input: bool,
        value_dim: usize,
        cfg: &NetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let state = StateEncoder::new(params, "ac.state", env, obs_shape, cfg, rng)?;
        let inputs = state.outputs() + if pref_input { pref_dim } else { 0 };
        let actor = Mlp::new(
            params,
            "ac.actor",
            &[inputs, cfg.head_hidden, num_actions],
            Activation::Identity,
            rng,
        )?;
        let critic = Mlp::new(
            params,
            "ac.critic",
            &[inputs, cfg.head_hidden, value_dim],
            Activation::Identity,
            rng,
        )?;
        Ok(ActorCritic {
            state,
            actor,
            critic,
            pref_dim,
            pref_input,
            num_actions,
            value_dim,
        })
    }

    pub fn features<'a>(&self, g: &mut Graph<'a>, params: &'a ParamSet, x: Var) -> Var {
        g.set_scope("policy.state");
        self.state.forward(g, params, x)
    }

    /// Actor logits and critic values from features `[n, f]` and preferences
    /// `[n, d]` (ignored without preference input).
    pub fn heads<'a>(
        &self,
        g: &mut Graph<'a>,
        params: &'a ParamSet,
        feat: Var,
        omega: Option<Var>,
    ) -> (Var, Var) {
        g.set_scope("policy.heads");
        let input = match (self.pref_input, omega) {
            (true, Some(w)) => g.concat_cols(feat, w),
            _ => feat,
        };
        let logits = self.actor.forward(g, params, input);
        let values = self.critic.forward(g, params, input);
        (logits, values)
    }

    pub fn forward<'a>(
        &self,
        g: &mut Graph<'a>,
        params: &'a ParamSet,
        x: Var,
        omega: Option<Var>,
    ) -> (Var, Var) {
        let feat = self.features(g, params, x);
        self.heads(g, params, feat, omega)
    }

    fn check_pref(&self, omega: &[f64]) -> Result<()> {
        if self.pref_input && omega.len() != self.pref_dim {
            return Err(DpiError::usage(format!(
                "preference of length {} for a network expecting {}",
                omega.len(),
                self.pref_dim
            )));
        }
        Ok(())
    }

    /// Actor and critic outputs for one observation.
    pub fn evaluate(&self, params: &ParamSet, obs: &Tensor, omega: &[f64]) -> Result<ActorOutput> {
        self.check_pref(omega)?;
        let mut g = Graph::new();
        let x = g.input(network_input(&[obs]));
        let w = self.pref_input.then(|| g.constant(Tensor::row(omega)));
        let (l, v) = self.forward(&mut g, params, x, w);
        g.ensure_finite()?;
        Ok(ActorOutput {
            logits: g.value(l).data().to_vec(),
            values: g.value(v).data().to_vec(),
        })
    }

    /// Outputs for one observation under each candidate preference, sharing
    /// the state features.
    pub fn evaluate_candidates(
        &self,
        params: &ParamSet,
        obs: &Tensor,
        candidates: &[Vec<f64>],
    ) -> Result<Vec<ActorOutput>> {
        if candidates.is_empty() {
            return Err(DpiError::usage("no candidate preferences"));
        }
        for c in candidates {
            self.check_pref(c)?;
        }
        let k = candidates.len();
        let mut g = Graph::new();
        let x = g.input(network_input(&[obs]));
        let feat = self.features(&mut g, params, x);
        let feat = g.repeat_rows(feat, k);
        let w = g.constant(Tensor::from_rows(candidates)?);
        let (l, v) = self.heads(&mut g, params, feat, Some(w));
        g.ensure_finite()?;
        let (lv, vv) = (g.value(l), g.value(v));
        Ok((0..k)
            .map(|i| ActorOutput {
                logits: lv.row_slice(i).to_vec(),
                values: vv.row_slice(i).to_vec(),
            })
            .collect())
    }
}

/// `⟨ω, V⟩`.
pub fn scalarize_value(values: &[f64], omega: &[f64]) -> f64 {
    crate::diffmath::dot(values, omega)
}

/// Index of the candidate with the largest scalarized value; ties go to the
/// lowest index.
pub fn envelope_argmax(candidates: &[Vec<f64>], values: &[Vec<f64>]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(DpiError::usage(
            "envelope selection over an empty candidate set",
        ));
    }
    if candidates.len() != values.len() {
        return Err(DpiError::usage("candidate and value counts differ"));
    }
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, (w, v)) in candidates.iter().zip(values).enumerate() {
        let s = scalarize_value(v, w);
        if s > best_v {
            best = i;
            best_v = s;
        }
    }
    Ok(best)
}

/// Envelope operator: the candidate maximizing `⟨ω, V(s, ω)⟩`.
pub fn envelope_select(
    net: &ActorCritic,
    params: &ParamSet,
    obs: &Tensor,
    candidates: &[Vec<f64>],
) -> Result<(Vec<f64>, usize, Vec<ActorOutput>)> {
    let outs = net.evaluate_candidates(params, obs, candidates)?;
    let values: Vec<Vec<f64>> = outs.iter().map(|o| o.values.clone()).collect();
    let idx = envelope_argmax(candidates, &values)?;
    Ok((candidates[idx].clone(), idx, outs))
}
