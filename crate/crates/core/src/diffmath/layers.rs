//! Layers used by the appraisal encoder and the actor–critic.

use rand::Rng;

use super::graph::{Activation, Graph, Var};
use super::params::{ParamId, ParamSet};
use crate::error::{DpiError, Result};

/// Slope of the leaky ReLU used after hidden dense layers.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Fully connected layer `act(x W + b)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
    pub act: Activation,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        act: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let w = params.add_glorot(
            format!("{name}.w"),
            &[inputs, outputs],
            inputs,
            outputs,
            rng,
        )?;
        let b = params.add(format!("{name}.b"), super::Tensor::zeros(&[outputs]))?;
        Ok(Dense {
            w,
            b,
            inputs,
            outputs,
            act,
        })
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, params: &'a ParamSet, x: Var) -> Var {
        let (w, b) = (g.param(params, self.w), g.param(params, self.b));
        let y = g.linear(x, w, b);
        g.act(y, self.act)
    }
}

/// Stack of dense layers; hidden layers use leaky ReLU, the last uses `out_act`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        widths: &[usize],
        out_act: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(DpiError::config(format!(
                "mlp `{name}` needs at least input and output widths"
            )));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    out_act
                } else {
                    Activation::LeakyRelu(LEAKY_SLOPE)
                };
                Dense::new(params, &format!("{name}.{i}"), w[0], w[1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp { layers })
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, params: &'a ParamSet, x: Var) -> Var {
        self.layers
            .iter()
            .fold(x, |h, layer| layer.forward(g, params, h))
    }
}

/// Same-padding, stride-1 convolution followed by ReLU.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(DpiError::config(format!(
                "conv `{name}` kernel size must be odd, got {kernel}"
            )));
        }
        let area = kernel * kernel;
        let w = params.add_glorot(
            format!("{name}.w"),
            &[out_channels, in_channels, kernel, kernel],
            in_channels * area,
            out_channels * area,
            rng,
        )?;
        let b = params.add(format!("{name}.b"), super::Tensor::zeros(&[out_channels]))?;
        Ok(Conv {
            w,
            b,
            in_channels,
            out_channels,
            kernel,
        })
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, params: &'a ParamSet, x: Var) -> Var {
        let (w, b) = (g.param(params, self.w), g.param(params, self.b));
        let y = g.conv2d(x, w, b);
        g.relu(y)
    }
}

/// Gated recurrent unit with update, reset and candidate gates:
///
/// ```text
/// r  = σ(x W_r + b_r + h U_r + c_r)
/// z  = σ(x W_z + b_z + h U_z + c_z)
/// n  = tanh(x W_n + b_n + r ⊙ (h U_n + c_n))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
///
/// The three input projections are stored fused as one `[inputs, 3·hidden]`
/// matrix in gate order `r, z, n`; likewise for the recurrent ones.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub b_ih: ParamId,
    pub w_hh: ParamId,
    pub b_hh: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w_ih = params.add_glorot(
            format!("{name}.w_ih"),
            &[inputs, 3 * hidden],
            inputs,
            hidden,
            rng,
        )?;
        let w_hh = params.add_glorot(
            format!("{name}.w_hh"),
            &[hidden, 3 * hidden],
            hidden,
            hidden,
            rng,
        )?;
        let b_ih = params.add(format!("{name}.b_ih"), super::Tensor::zeros(&[3 * hidden]))?;
        let b_hh = params.add(format!("{name}.b_hh"), super::Tensor::zeros(&[3 * hidden]))?;
        Ok(GruCell {
            w_ih,
            b_ih,
            w_hh,
            b_hh,
            inputs,
            hidden,
        })
    }

    pub fn step<'a>(&self, g: &mut Graph<'a>, params: &'a ParamSet, x: Var, h: Var) -> Var {
        let hd = self.hidden;
        let (w_ih, b_ih) = (g.param(params, self.w_ih), g.param(params, self.b_ih));
        let (w_hh, b_hh) = (g.param(params, self.w_hh), g.param(params, self.b_hh));
        let gi = g.linear(x, w_ih, b_ih);
        let gh = g.linear(h, w_hh, b_hh);

        let (ir, iz, inn) = (
            g.slice_cols(gi, 0, hd),
            g.slice_cols(gi, hd, hd),
            g.slice_cols(gi, 2 * hd, hd),
        );
        let (hr, hz, hn) = (
            g.slice_cols(gh, 0, hd),
            g.slice_cols(gh, hd, hd),
            g.slice_cols(gh, 2 * hd, hd),
        );

        let r_pre = g.add(ir, hr);
        let r = g.sigmoid(r_pre);
        let z_pre = g.add(iz, hz);
        let z = g.sigmoid(z_pre);
        let gated = g.mul(r, hn);
        let n_pre = g.add(inn, gated);
        let n = g.tanh(n_pre);

        // h' = n + z ⊙ (h − n)
        let diff = g.sub(h, n);
        let zd = g.mul(z, diff);
        g.add(n, zd)
    }
}
