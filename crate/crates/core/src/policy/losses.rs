use serde::{Deserialize, Serialize};

use crate::diffmath::{Graph, Tensor, Var};
use crate::error::{DpiError, Result};

/// Clipped surrogate with entropy bonus:
/// `−mean min(ρ Ã, clip(ρ, 1 ± ε) Ã) − c_ent · mean H(π)`.
///
/// `logits` is `[n, actions]`; `old_logp` are the log-probabilities recorded
/// at collection time under the same preference.
pub fn ppo_loss(
    g: &mut Graph<'_>,
    logits: Var,
    actions: &[usize],
    old_logp: &[f64],
    advantages: &[f64],
    clip: f64,
    ent_coef: f64,
) -> Result<Var> {
    let n = g.shape(logits)[0];
    if old_logp.len() != n {
        return Err(DpiError::usage(format!(
            "{} old log-probabilities recorded for {n} transitions",
            old_logp.len()
        )));
    }
    if actions.len() != n || advantages.len() != n {
        return Err(DpiError::usage("ppo batch fields differ in length"));
    }
    g.set_scope("policy.ppo");
    let logp = g.log_softmax_rows(logits);
    let lp = g.gather_cols(logp, actions);
    let old = g.constant(Tensor::from_parts(vec![n, 1], old_logp.to_vec()));
    let diff = g.sub(lp, old);
    let ratio = g.exp(diff);
    let adv = g.constant(Tensor::from_parts(vec![n, 1], advantages.to_vec()));
    let s1 = g.mul(ratio, adv);
    let clipped = g.clamp(ratio, 1.0 - clip, 1.0 + clip);
    let s2 = g.mul(clipped, adv);
    let surr = g.min(s1, s2);
    let surr = g.mean(surr);
    let policy = g.scale(surr, -1.0);
    let ent = entropy_mean(g, logp);
    let bonus = g.scale(ent, -ent_coef);
    Ok(g.add(policy, bonus))
}

/// Mean categorical entropy from log-probabilities `[n, a]`.
pub fn entropy_mean(g: &mut Graph<'_>, logp: Var) -> Var {
    let p = g.exp(logp);
    let plogp = g.mul(p, logp);
    let per = g.sum_cols(plogp);
    let m = g.mean(per);
    g.scale(m, -1.0)
}

/// `ξ · mean‖V − G‖² + (1 − ξ) · mean(⟨ω̂, V⟩ − ⟨ω̂, G⟩)²`.
pub fn critic_loss(
    g: &mut Graph<'_>,
    values: Var,
    prefs: &Tensor,
    returns: &Tensor,
    xi: f64,
) -> Result<Var> {
    if g.shape(values) != returns.shape() || prefs.shape() != returns.shape() {
        return Err(DpiError::usage(format!(
            "critic loss shapes {:?} / {:?} / {:?}",
            g.shape(values),
            prefs.shape(),
            returns.shape()
        )));
    }
    g.set_scope("policy.critic");
    let n = returns.rows() as f64;
    let gv = g.constant(returns.clone());
    let w = g.constant(prefs.clone());
    let diff = g.sub(values, gv);
    let sq = g.square(diff);
    let vec_term = g.sum(sq);
    let vec_term = g.scale(vec_term, xi / n);
    let sdiff = g.row_dot(w, diff);
    let ssq = g.square(sdiff);
    let scal_term = g.sum(ssq);
    let scal_term = g.scale(scal_term, (1.0 - xi) / n);
    Ok(g.add(vec_term, scal_term))
}

/// Mean squared error for a scalar critic `[n, 1]`.
pub fn value_mse(g: &mut Graph<'_>, values: Var, returns: &[f64]) -> Var {
    let n = returns.len();
    let gv = g.constant(Tensor::from_parts(vec![n, 1], returns.to_vec()));
    let d = g.sub(values, gv);
    let sq = g.square(d);
    g.mean(sq)
}

/// Weights of the composite objective and the ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_dir: f64,
    pub gamma_stab: f64,
    pub alpha_kl: f64,
    /// Temperature on the utility term of the ELBO.
    pub beta: f64,
    pub no_kl: bool,
    pub no_dir: bool,
    pub no_sta: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_dir: 0.1,
            gamma_stab: 0.01,
            alpha_kl: 0.1,
            beta: 1.0,
            no_kl: false,
            no_dir: false,
            no_sta: false,
        }
    }
}

impl LossWeights {
    pub fn effective_alpha_kl(&self) -> f64 {
        if self.no_kl {
            0.0
        } else {
            self.alpha_kl
        }
    }

    pub fn effective_lambda_dir(&self) -> f64 {
        if self.no_dir {
            0.0
        } else {
            self.lambda_dir
        }
    }

    pub fn effective_gamma_stab(&self) -> f64 {
        if self.no_sta {
            0.0
        } else {
            self.gamma_stab
        }
    }
}

/// Graph handles of the individual terms.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub ppo: Var,
    pub critic: Var,
    /// Negative ELBO with the KL weight already applied.
    pub elbo: Option<Var>,
    pub dir: Option<Var>,
    pub stab: Option<Var>,
}

/// `L_PPO + L_critic − ELBO + λ_dir L_dir + γ_stab L_stab`; disabled
/// regularizers are left out of the graph entirely.
pub fn total_loss(g: &mut Graph<'_>, terms: LossTerms, w: &LossWeights) -> Var {
    let mut total = g.add(terms.ppo, terms.critic);
    if let Some(e) = terms.elbo {
        total = g.add(total, e);
    }
    if let (Some(d), false) = (terms.dir, w.no_dir) {
        let d = g.scale(d, w.lambda_dir);
        total = g.add(total, d);
    }
    if let (Some(s), false) = (terms.stab, w.no_sta) {
        let s = g.scale(s, w.gamma_stab);
        total = g.add(total, s);
    }
    total
}
