//! Value appraisal: a recurrent encoder yields a diagonal Gaussian over
//! preference logits `z`; preferences are `ω = softmax(z)`.

mod network;

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffmath::{softmax, Graph, ParamSet, Tensor, Var};
use crate::error::{DpiError, Result};
use crate::fmt;

pub use network::{
    network_input, NetConfig, PosteriorVars, PreferenceEncoder, StateEncoder, LOG_SIGMA_MAX,
    LOG_SIGMA_MIN,
};

/// The last `H` observations, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    len: usize,
    items: VecDeque<Tensor>,
}

impl HistoryWindow {
    /// Starts a window filled with copies of `first`.
    pub fn new(len: usize, first: &Tensor) -> Result<Self> {
        if len == 0 {
            return Err(DpiError::config("history window length must be at least 1"));
        }
        Ok(HistoryWindow {
            len,
            items: std::iter::repeat(first.clone()).take(len).collect(),
        })
    }

    pub fn push(&mut self, obs: Tensor) {
        self.items.pop_front();
        self.items.push_back(obs);
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn latest(&self) -> &Tensor {
        &self.items[self.len - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.items.iter()
    }
}

/// Stacks a batch of windows into per-position network inputs.
pub fn window_batch(windows: &[&HistoryWindow]) -> Vec<Tensor> {
    let h = windows[0].len();
    (0..h)
        .map(|t| {
            let obs: Vec<&Tensor> = windows.iter().map(|w| &w.items[t]).collect();
            network_input(&obs)
        })
        .collect()
}

/// Plain-valued posterior for a single window.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

/// One reparameterized draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefSample {
    pub eps: Vec<f64>,
    pub z: Vec<f64>,
    pub omega: Vec<f64>,
}

impl Posterior {
    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `softmax(μ)`.
    pub fn pref_pred(&self) -> Vec<f64> {
        softmax(&self.mu)
    }

    pub fn kl(&self) -> f64 {
        kl_closed_form(&self.mu, &self.log_sigma)
    }

    /// Draws `k` samples `z = μ + σ ⊙ ε`.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<PrefSample>> {
        if k < 1 {
            return Err(DpiError::usage(
                "at least one preference sample is required",
            ));
        }
        let sigma = self.sigma();
        Ok((0..k)
            .map(|_| {
                let eps: Vec<f64> = (0..self.dim())
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                self.reparameterize(&sigma, eps)
            })
            .collect())
    }

    fn reparameterize(&self, sigma: &[f64], eps: Vec<f64>) -> PrefSample {
        let z: Vec<f64> = self
            .mu
            .iter()
            .zip(sigma)
            .zip(&eps)
            .map(|((m, s), e)| m + s * e)
            .collect();
        let omega = softmax(&z);
        PrefSample { eps, z, omega }
    }

    /// Reuses fixed noise, e.g. draws stored at collection time.
    pub fn sample_with(&self, eps: &[Vec<f64>]) -> Vec<PrefSample> {
        let sigma = self.sigma();
        eps.iter()
            .map(|e| self.reparameterize(&sigma, e.clone()))
            .collect()
    }
}

impl PreferenceEncoder {
    /// Posterior for one window.
    pub fn encode(&self, params: &ParamSet, window: &HistoryWindow) -> Result<Posterior> {
        let steps = window_batch(&[window]);
        let mut g = Graph::new();
        let p = self.forward(&mut g, params, &steps);
        g.ensure_finite()?;
        Ok(Posterior {
            mu: g.value(p.mu).data().to_vec(),
            log_sigma: g.value(p.log_sigma).data().to_vec(),
        })
    }
}

/// `Σ_i ½(μ_i² + σ_i² − 1 − 2 log σ_i)`.
pub fn kl_closed_form(mu: &[f64], log_sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(log_sigma)
        .map(|(m, l)| 0.5 * (m * m + (2.0 * l).exp() - 1.0 - 2.0 * l))
        .sum()
}

/// Per-row KL to the standard normal, `[n, 1]`.
pub fn kl_rows(g: &mut Graph<'_>, post: PosteriorVars) -> Var {
    let mu2 = g.square(post.mu);
    let two_ls = g.scale(post.log_sigma, 2.0);
    let var = g.exp(two_ls);
    let a = g.add(mu2, var);
    let b = g.sub(a, two_ls);
    let c = g.offset(b, -1.0);
    let per = g.sum_cols(c);
    g.scale(per, 0.5)
}

/// Reparameterized samples for a batch: `eps` is `[n·k, d]` with the `k`
/// draws of each row stored consecutively. Returns `(z, ω)`.
pub fn sample_rows(
    g: &mut Graph<'_>,
    post: PosteriorVars,
    eps: &Tensor,
    k: usize,
) -> Result<(Var, Var)> {
    if k < 1 {
        return Err(DpiError::usage(
            "at least one preference sample is required",
        ));
    }
    let (n, d) = (g.shape(post.mu)[0], g.shape(post.mu)[1]);
    if eps.shape() != [n * k, d] {
        return Err(DpiError::usage(format!(
            "noise shape {:?} does not match {n}x{k} samples of dimension {d}",
            eps.shape()
        )));
    }
    let mu = g.repeat_rows(post.mu, k);
    let ls = g.repeat_rows(post.log_sigma, k);
    let sigma = g.exp(ls);
    let e = g.constant(eps.clone());
    let noise = g.mul(sigma, e);
    let z = g.add(mu, noise);
    let omega = g.softmax_rows(z);
    Ok((z, omega))
}

/// `−β · mean_{n,k}⟨ω, G⟩ + α_kl · mean_n KL`, with `G` `[n, d]` held constant.
pub fn elbo_loss(
    g: &mut Graph<'_>,
    omega: Var,
    returns: &Tensor,
    k: usize,
    kl: Var,
    beta: f64,
    alpha_kl: f64,
) -> Result<Var> {
    let (rows, d) = (g.shape(omega)[0], g.shape(omega)[1]);
    if returns.cols() != d || returns.rows() * k != rows {
        return Err(DpiError::usage(format!(
            "return evidence {:?} does not match {rows} samples of dimension {d}",
            returns.shape()
        )));
    }
    let gv = g.constant(returns.clone());
    let grep = g.repeat_rows(gv, k);
    let util = g.row_dot(omega, grep);
    let util = g.mean(util);
    let util = g.scale(util, -beta);
    let klm = g.mean(kl);
    let klm = g.scale(klm, alpha_kl);
    Ok(g.add(util, klm))
}

/// Mean over rows with `‖G‖ > 0` of `1 − cos(ω^pred, G)`; exactly zero when
/// every row is gated out.
pub fn dir_loss(g: &mut Graph<'_>, omega_pred: Var, returns: &Tensor) -> Var {
    let d = returns.cols();
    let n = returns.rows();
    let mut unit = Vec::with_capacity(n * d);
    let mut mask = Vec::with_capacity(n);
    for r in 0..n {
        let row = returns.row_slice(r);
        let nrm = crate::diffmath::norm(row);
        if nrm > 0.0 {
            unit.extend(row.iter().map(|v| v / nrm));
            mask.push(1.0);
        } else {
            unit.extend(std::iter::repeat(0.0).take(d));
            mask.push(0.0);
        }
    }
    let active: f64 = mask.iter().sum();
    let u = g.constant(Tensor::from_parts(vec![n, d], unit));
    let m = g.constant(Tensor::from_parts(vec![n, 1], mask));
    let num = g.row_dot(omega_pred, u);
    let sq = g.row_dot(omega_pred, omega_pred);
    let den = g.sqrt(sq);
    let cos = g.div(num, den);
    let neg = g.scale(cos, -1.0);
    let one_minus = g.offset(neg, 1.0);
    let gated = g.mul(one_minus, m);
    let total = g.sum(gated);
    g.scale(total, 1.0 / active.max(1.0))
}

/// Mean over rows of `‖ω^pred − ω̂‖²`.
pub fn stab_loss(g: &mut Graph<'_>, omega_pred: Var, omega_hat: &Tensor) -> Var {
    let n = omega_hat.rows();
    let h = g.constant(omega_hat.clone());
    let diff = g.sub(omega_pred, h);
    let sq = g.square(diff);
    let total = g.sum(sq);
    g.scale(total, 1.0 / n as f64)
}

/// `1 − cos(ω, G)`, or 0 when `G` is the zero vector.
pub fn dir_loss_value(omega_pred: &[f64], returns: &[f64]) -> f64 {
    let ng = crate::diffmath::norm(returns);
    if ng == 0.0 {
        return 0.0;
    }
    1.0 - crate::diffmath::dot(omega_pred, returns) / (crate::diffmath::norm(omega_pred) * ng)
}

pub fn stab_loss_value(omega_pred: &[f64], omega_hat: &[f64]) -> f64 {
    omega_pred
        .iter()
        .zip(omega_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Shannon entropy (nats) of a simplex point.
pub fn entropy(omega: &[f64]) -> f64 {
    -omega
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// One row of the optional posterior trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub omega_pred: Vec<f64>,
    pub omega_hat: Vec<f64>,
}

/// CSV with header `t, mu_0.., sigma_0.., pred_0.., hat_0..`.
pub fn write_posterior_trace<W: Write>(mut out: W, rows: &[TraceRow]) -> Result<()> {
    let d = rows.first().map_or(5, |r| r.mu.len());
    let mut header = vec!["t".to_string()];
    for prefix in ["mu", "sigma", "pred", "hat"] {
        header.extend((0..d).map(|i| format!("{prefix}_{i}")));
    }
    let io = |e| DpiError::io("<posterior trace>", e);
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.t,
            fmt::join(&r.mu, ","),
            fmt::join(&r.sigma, ","),
            fmt::join(&r.omega_pred, ","),
            fmt::join(&r.omega_hat, ",")
        )
        .map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvKind, Environment, MazeConfig, MazeEnv, QueueConfig, QueueEnv};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn queue_encoder(rng: &mut ChaCha8Rng) -> (ParamSet, PreferenceEncoder, QueueEnv) {
        let env = QueueEnv::new(QueueConfig::default()).unwrap();
        let mut ps = ParamSet::new("phi");
        let cfg = NetConfig {
            hidden: 16,
            gru_hidden: 16,
            head_hidden: 16,
            ..NetConfig::default()
        };
        let enc = PreferenceEncoder::new(
            &mut ps,
            EnvKind::Queue,
            &env.observation_shape(),
            &cfg,
            5,
            rng,
        )
        .unwrap();
        (ps, enc, env)
    }

    #[test]
    fn encode_is_deterministic_and_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (ps, enc, env) = queue_encoder(&mut rng);
        for h in [1, 3] {
            let w = HistoryWindow::new(h, &env.observation()).unwrap();
            let a = enc.encode(&ps, &w).unwrap();
            let b = enc.encode(&ps, &w).unwrap();
            assert_eq!(a, b);
            assert_eq!((a.mu.len(), a.log_sigma.len()), (5, 5));
            assert!(a
                .log_sigma
                .iter()
                .all(|l| (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(l)));
        }
    }

    #[test]
    fn maze_encoder_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let env = MazeEnv::new(MazeConfig::default()).unwrap();
        let mut ps = ParamSet::new("phi");
        let cfg = NetConfig {
            hidden: 8,
            gru_hidden: 8,
            head_hidden: 8,
            conv_channels: [2, 2],
            kernel: 3,
        };
        let enc = PreferenceEncoder::new(
            &mut ps,
            EnvKind::Maze,
            &env.observation_shape(),
            &cfg,
            5,
            &mut rng,
        )
        .unwrap();
        let w = HistoryWindow::new(3, &env.observation()).unwrap();
        let p = enc.encode(&ps, &w).unwrap();
        assert!(p.mu.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn window_front_pads_and_slides() {
        let a = Tensor::row(&[1.0]);
        let mut w = HistoryWindow::new(3, &a).unwrap();
        assert!(w.iter().all(|t| t == &a));
        w.push(Tensor::row(&[2.0]));
        let v: Vec<f64> = w.iter().map(|t| t.data()[0]).collect();
        assert_eq!(v, vec![1.0, 1.0, 2.0]);
        assert!(HistoryWindow::new(0, &a).is_err());
    }

    #[test]
    fn pref_pred_examples() {
        let p = Posterior {
            mu: vec![0.0; 5],
            log_sigma: vec![0.0; 5],
        };
        assert!(p.pref_pred().iter().all(|w| (w - 0.2).abs() < 1e-15));
        let p = Posterior {
            mu: vec![10.0, 0.0, 0.0, 0.0, 0.0],
            log_sigma: vec![0.0; 5],
        };
        assert!(p.pref_pred()[0] > 0.99);
        let shifted = Posterior {
            mu: p.mu.iter().map(|m| m + 3.0).collect(),
            log_sigma: vec![0.0; 5],
        };
        for (a, b) in p.pref_pred().iter().zip(shifted.pref_pred()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_closed_form(&[0.0; 5], &[0.0; 5]), 0.0);
        assert!((kl_closed_form(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
        assert!(kl_closed_form(&[0.1, -0.3], &[0.2, -0.4]) > 0.0);
    }

    #[test]
    fn samples_collapse_without_noise() {
        let p = Posterior {
            mu: vec![0.3, -1.0, 2.0, 0.0, 0.5],
            log_sigma: vec![-60.0; 5],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pred = p.pref_pred();
        for s in p.sample(8, &mut rng).unwrap() {
            for (a, b) in s.omega.iter().zip(&pred) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(matches!(p.sample(0, &mut rng), Err(DpiError::Usage(_))));
    }

    #[test]
    fn graph_sampling_matches_plain_sampling() {
        let p = Posterior {
            mu: vec![0.3, -1.0, 2.0, 0.0, 0.5],
            log_sigma: vec![-0.5, 0.1, 0.0, -1.0, 0.4],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = p.sample(4, &mut rng).unwrap();
        let eps =
            Tensor::from_rows(&draws.iter().map(|d| d.eps.clone()).collect::<Vec<_>>()).unwrap();
        let mut g = Graph::new();
        let mu = g.input(Tensor::row(&p.mu));
        let ls = g.input(Tensor::row(&p.log_sigma));
        let (_, omega) = sample_rows(&mut g, PosteriorVars { mu, log_sigma: ls }, &eps, 4).unwrap();
        for (k, d) in draws.iter().enumerate() {
            for (a, b) in g.value(omega).row_slice(k).iter().zip(&d.omega) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_evidence_elbo_is_weighted_kl() {
        let mut g = Graph::new();
        let mu = g.input(Tensor::from_rows(&[[0.5, -0.2, 0.0, 0.1, 0.3]]).unwrap());
        let ls = g.input(Tensor::from_rows(&[[0.1, 0.0, -0.3, 0.2, 0.0]]).unwrap());
        let post = PosteriorVars { mu, log_sigma: ls };
        let kl = kl_rows(&mut g, post);
        let eps = Tensor::zeros(&[2, 5]);
        let (_, omega) = sample_rows(&mut g, post, &eps, 2).unwrap();
        let loss = elbo_loss(&mut g, omega, &Tensor::zeros(&[1, 5]), 2, kl, 1.0, 0.1).unwrap();
        let expected =
            0.1 * kl_closed_form(&[0.5, -0.2, 0.0, 0.1, 0.3], &[0.1, 0.0, -0.3, 0.2, 0.0]);
        assert!((g.value(loss).item() - expected).abs() < 1e-15);
        assert!(elbo_loss(&mut g, omega, &Tensor::zeros(&[1, 4]), 2, kl, 1.0, 0.1).is_err());
    }

    #[test]
    fn more_evidence_lowers_elbo_loss() {
        let eval = |gj: f64| {
            let mut g = Graph::new();
            let mu = g.input(Tensor::row(&[0.1, 0.2, -0.1, 0.0, 0.3]));
            let ls = g.input(Tensor::row(&[0.0; 5]));
            let post = PosteriorVars { mu, log_sigma: ls };
            let kl = kl_rows(&mut g, post);
            let eps = Tensor::from_rows(&[[0.3, -0.1, 0.5, 1.0, -2.0]]).unwrap();
            let (_, omega) = sample_rows(&mut g, post, &eps, 1).unwrap();
            let ev = Tensor::row(&[1.0, gj, -0.5, 0.0, 2.0]);
            let l = elbo_loss(&mut g, omega, &ev, 1, kl, 1.0, 0.1).unwrap();
            g.value(l).item()
        };
        assert!(eval(0.5) < eval(0.0));
        assert!(eval(1.0) < eval(0.5));
    }

    #[test]
    fn dir_and_stab_examples() {
        assert!(
            dir_loss_value(&[0.2, 0.3, 0.5, 0.0, 0.0], &[0.4, 0.6, 1.0, 0.0, 0.0]).abs() < 1e-12
        );
        assert_eq!(dir_loss_value(&[0.2; 5], &[0.0; 5]), 0.0);
        assert!(
            (dir_loss_value(&[1.0, 0.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0, 0.0]) - 1.0).abs()
                < 1e-15
        );
        let (a, b) = ([1.0, 0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(stab_loss_value(&a, &b), 2.0);
        assert_eq!(stab_loss_value(&a, &a), 0.0);
        assert_eq!(stab_loss_value(&a, &b), stab_loss_value(&b, &a));
    }

    #[test]
    fn graph_losses_match_plain_values() {
        let preds = [[0.1, 0.2, 0.3, 0.2, 0.2], [0.5, 0.1, 0.1, 0.1, 0.2]];
        let rets = [[1.0, -2.0, 0.5, 0.0, 3.0], [0.0; 5]];
        let hats = [[0.2; 5], [0.0, 0.0, 1.0, 0.0, 0.0]];
        let mut g = Graph::new();
        let p = g.input(Tensor::from_rows(&preds).unwrap());
        let d = dir_loss(&mut g, p, &Tensor::from_rows(&rets).unwrap());
        assert!((g.value(d).item() - dir_loss_value(&preds[0], &rets[0])).abs() < 1e-14);
        let s = stab_loss(&mut g, p, &Tensor::from_rows(&hats).unwrap());
        let expected =
            (stab_loss_value(&preds[0], &hats[0]) + stab_loss_value(&preds[1], &hats[1])) / 2.0;
        assert!((g.value(s).item() - expected).abs() < 1e-14);
        let mut g = Graph::new();
        let p = g.input(Tensor::from_rows(&preds).unwrap());
        let d = dir_loss(&mut g, p, &Tensor::zeros(&[2, 5]));
        assert_eq!(g.value(d).item(), 0.0);
    }

    #[test]
    fn trace_has_header_and_rows() {
        let row = TraceRow {
            t: 0,
            mu: vec![0.0; 5],
            sigma: vec![1.0; 5],
            omega_pred: vec![0.2; 5],
            omega_hat: vec![0.2; 5],
        };
        let mut buf = Vec::new();
        write_posterior_trace(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 21);
        assert!(lines[1].starts_with("0,0,0,0,0,0,1,1,1,1,1,0.2"));
    }

    #[test]
    fn encoder_params_all_receive_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (ps, enc, env) = queue_encoder(&mut rng);
        let w = HistoryWindow::new(3, &env.observation()).unwrap();
        let steps = window_batch(&[&w]);
        let mut g = Graph::new();
        let post = enc.forward(&mut g, &ps, &steps);
        let kl = kl_rows(&mut g, post);
        let loss = g.mean(kl);
        let grads = g.backward(loss).unwrap();
        let touched = ps
            .ids()
            .filter(|id| grads.param("phi", *id).is_some())
            .count();
        assert_eq!(touched, ps.len());
    }
}
