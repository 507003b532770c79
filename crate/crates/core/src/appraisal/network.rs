//! State encoders and the recurrent preference encoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::layers::{Conv, Dense, GruCell, Mlp, LEAKY_SLOPE};
use crate::diffmath::{Activation, Graph, ParamSet, Tensor, Var};
use crate::envs::EnvKind;
use crate::error::{DpiError, Result};

/// Widths of the networks. Queue uses `hidden` for its two dense layers;
/// Maze uses two convolutions followed by one dense layer of width `hidden`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: usize,
    pub gru_hidden: usize,
    pub head_hidden: usize,
    pub conv_channels: [usize; 2],
    pub kernel: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: 64,
            gru_hidden: 64,
            head_hidden: 64,
            conv_channels: [8, 16],
            kernel: 3,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.gru_hidden == 0 || self.head_hidden == 0 {
            return Err(DpiError::config("network widths must be positive"));
        }
        if self.conv_channels.contains(&0) || self.kernel % 2 == 0 {
            return Err(DpiError::config(
                "conv channels must be positive and the kernel odd",
            ));
        }
        Ok(())
    }
}

/// Converts environment observations into one network input batch.
///
/// Queue rows `[1, f]` stack into `[n, f]`; Maze images `[h, w, 3]` become
/// channel-first `[n, 3, h, w]`.
pub fn network_input(obs: &[&Tensor]) -> Tensor {
    let first = obs[0].shape();
    if first.len() == 3 {
        let (h, w, c) = (first[0], first[1], first[2]);
        let mut data = Vec::with_capacity(obs.len() * h * w * c);
        for o in obs {
            let d = o.data();
            for ch in 0..c {
                for p in 0..h * w {
                    data.push(d[p * c + ch]);
                }
            }
        }
        Tensor::from_parts(vec![obs.len(), c, h, w], data)
    } else {
        let f = obs[0].len();
        let mut data = Vec::with_capacity(obs.len() * f);
        for o in obs {
            data.extend_from_slice(o.data());
        }
        Tensor::from_parts(vec![obs.len(), f], data)
    }
}

#[derive(Debug, Clone)]
pub enum StateEncoder {
    Dense(Mlp),
    Conv {
        first: Conv,
        second: Conv,
        fc: Dense,
        flat: usize,
    },
}

impl StateEncoder {
    /// `obs_shape` is the environment observation shape.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        env: EnvKind,
        obs_shape: &[usize],
        cfg: &NetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        match env {
            EnvKind::Queue => {
                let inputs = obs_shape.iter().product::<usize>();
                let mlp = Mlp::new(
                    params,
                    name,
                    &[inputs, cfg.hidden, cfg.hidden],
                    Activation::LeakyRelu(LEAKY_SLOPE),
                    rng,
                )?;
                Ok(StateEncoder::Dense(mlp))
            }
            EnvKind::Maze => {
                if obs_shape.len() != 3 {
                    return Err(DpiError::config(format!(
                        "maze observations must be [h, w, c], got {obs_shape:?}"
                    )));
                }
                let (h, w, c) = (obs_shape[0], obs_shape[1], obs_shape[2]);
                let [c1, c2] = cfg.conv_channels;
                let first = Conv::new(params, &format!("{name}.conv0"), c, c1, cfg.kernel, rng)?;
                let second = Conv::new(params, &format!("{name}.conv1"), c1, c2, cfg.kernel, rng)?;
                let flat = c2 * h * w;
                let fc = Dense::new(
                    params,
                    &format!("{name}.fc"),
                    flat,
                    cfg.hidden,
                    Activation::LeakyRelu(LEAKY_SLOPE),
                    rng,
                )?;
                Ok(StateEncoder::Conv {
                    first,
                    second,
                    fc,
                    flat,
                })
            }
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            StateEncoder::Dense(m) => m.outputs(),
            StateEncoder::Conv { fc, .. } => fc.outputs,
        }
    }

    /// `x` is a batch produced by [`network_input`].
    pub fn forward<'a>(&self, g: &mut Graph<'a>, params: &'a ParamSet, x: Var) -> Var {
        match self {
            StateEncoder::Dense(m) => m.forward(g, params, x),
            StateEncoder::Conv {
                first,
                second,
                fc,
                flat,
            } => {
                let n = g.shape(x)[0];
                let h1 = first.forward(g, params, x);
                let h2 = second.forward(g, params, h1);
                let f = g.reshape(h2, &[n, *flat]);
                fc.forward(g, params, f)
            }
        }
    }
}

/// Graph handles for a batch of posteriors.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorVars {
    pub mu: Var,
    /// Clamped log standard deviation.
    pub log_sigma: Var,
}

/// Recurrent encoder `q(z | s_{t-H+1:t})`.
#[derive(Debug, Clone)]
pub struct PreferenceEncoder {
    pub state: StateEncoder,
    pub gru: GruCell,
    pub mu_head: Mlp,
    pub log_sigma_head: Mlp,
    pub dim: usize,
}

pub const LOG_SIGMA_MIN: f64 = -5.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

impl PreferenceEncoder {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        env: EnvKind,
        obs_shape: &[usize],
        cfg: &NetConfig,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let state = StateEncoder::new(params, "enc.state", env, obs_shape, cfg, rng)?;
        let gru = GruCell::new(params, "enc.gru", state.outputs(), cfg.gru_hidden, rng)?;
        let head = [cfg.gru_hidden, cfg.head_hidden, dim];
        let mu_head = Mlp::new(params, "enc.mu", &head, Activation::Identity, rng)?;
        let log_sigma_head = Mlp::new(params, "enc.log_sigma", &head, Activation::Identity, rng)?;
        Ok(PreferenceEncoder {
            state,
            gru,
            mu_head,
            log_sigma_head,
            dim,
        })
    }

    /// `steps[t]` holds the window position `t` (oldest first) for every
    /// element of the batch, in [`network_input`] layout.
    pub fn forward<'a>(
        &self,
        g: &mut Graph<'a>,
        params: &'a ParamSet,
        steps: &[Tensor],
    ) -> PosteriorVars {
        g.set_scope("appraisal.encoder");
        let n = steps[0].shape()[0];
        let mut h = g.constant(Tensor::zeros(&[n, self.gru.hidden]));
        for x in steps {
            let xv = g.input(x.clone());
            let f = self.state.forward(g, params, xv);
            h = self.gru.step(g, params, f, h);
        }
        let mu = self.mu_head.forward(g, params, h);
        let raw = self.log_sigma_head.forward(g, params, h);
        let log_sigma = g.clamp(raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        PosteriorVars { mu, log_sigma }
    }
}
