//! Tabular Q-learning over a discretized Queue state, plus a vector value
//! table used by the envelope operator and for preference returns.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::Tensor;
use crate::error::{DpiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularQConfig {
    pub bins: usize,
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for TabularQConfig {
    fn default() -> Self {
        TabularQConfig {
            bins: 8,
            alpha: 0.1,
            epsilon: 0.1,
        }
    }
}

impl TabularQConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0
            || !(self.alpha > 0.0 && self.alpha <= 1.0)
            || !(0.0..=1.0).contains(&self.epsilon)
        {
            return Err(DpiError::config(format!(
                "invalid tabular settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// Bins queue position, energy and deadline (observation columns 0, 2, 3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueDiscretizer {
    pub bins: usize,
}

impl QueueDiscretizer {
    pub fn num_states(&self) -> usize {
        self.bins * self.bins * self.bins
    }

    fn bin(&self, x: f64) -> usize {
        let b = (x.clamp(0.0, 1.0) * self.bins as f64).floor() as usize;
        b.min(self.bins - 1)
    }

    pub fn index(&self, obs: &Tensor) -> usize {
        let o = obs.data();
        let (p, e, d) = (self.bin(o[0]), self.bin(o[2]), self.bin(o[3]));
        (p * self.bins + e) * self.bins + d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularQ {
    pub num_states: usize,
    pub num_actions: usize,
    pub value_dim: usize,
    pub alpha: f64,
    q: Vec<f64>,
    v: Vec<f64>,
}

impl TabularQ {
    pub fn new(num_states: usize, num_actions: usize, value_dim: usize, alpha: f64) -> Self {
        TabularQ {
            num_states,
            num_actions,
            value_dim,
            alpha,
            q: vec![0.0; num_states * num_actions],
            v: vec![0.0; num_states * value_dim],
        }
    }

    pub fn q(&self, s: usize) -> &[f64] {
        &self.q[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn values(&self, s: usize) -> &[f64] {
        &self.v[s * self.value_dim..(s + 1) * self.value_dim]
    }

    pub fn greedy<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        crate::policy::greedy_action(self.q(s), rng)
    }

    pub fn epsilon_greedy<R: Rng + ?Sized>(&self, s: usize, epsilon: f64, rng: &mut R) -> usize {
        if rng.random::<f64>() < epsilon {
            rng.random_range(0..self.num_actions)
        } else {
            self.greedy(s, rng)
        }
    }

    /// One-step Q-learning; `next` is `None` at terminal transitions.
    pub fn update_q(&mut self, s: usize, a: usize, r: f64, next: Option<usize>, gamma: f64) {
        let target = r + next.map_or(0.0, |n| {
            gamma * self.q(n).iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        });
        let i = s * self.num_actions + a;
        self.q[i] += self.alpha * (target - self.q[i]);
    }

    /// TD(0) on the vector value table.
    pub fn update_values(&mut self, s: usize, r: &[f64], next: Option<usize>, gamma: f64) {
        let d = self.value_dim;
        let next_v: Vec<f64> = next.map_or(vec![0.0; d], |n| self.values(n).to_vec());
        for j in 0..d {
            let i = s * d + j;
            self.v[i] += self.alpha * (r[j] + gamma * next_v[j] - self.v[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Deterministic two-state MDP: (next state, reward) for each (s, a).
    const MDP: [[(usize, f64); 2]; 2] = [[(0, 0.0), (1, 1.0)], [(0, 2.0), (1, 0.0)]];

    fn value_iteration(gamma: f64) -> [[f64; 2]; 2] {
        let mut q = [[0.0f64; 2]; 2];
        for _ in 0..2000 {
            let mut next = q;
            for s in 0..2 {
                for a in 0..2 {
                    let (n, r) = MDP[s][a];
                    next[s][a] = r + gamma * q[n][0].max(q[n][1]);
                }
            }
            q = next;
        }
        q
    }

    #[test]
    fn converges_to_value_iteration() {
        let gamma = 0.9;
        let oracle = value_iteration(gamma);
        let mut t = TabularQ::new(2, 2, 1, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = 0;
        for _ in 0..20_000 {
            let a = t.epsilon_greedy(s, 0.5, &mut rng);
            let (n, r) = MDP[s][a];
            t.update_q(s, a, r, Some(n), gamma);
            s = n;
        }
        for s in 0..2 {
            for a in 0..2 {
                assert!(
                    (t.q(s)[a] - oracle[s][a]).abs() < 1e-6,
                    "{s} {a}: {} vs {}",
                    t.q(s)[a],
                    oracle[s][a]
                );
            }
        }
    }

    #[test]
    fn terminal_update_has_no_bootstrap() {
        let mut t = TabularQ::new(1, 2, 2, 1.0);
        t.update_q(0, 1, 3.0, None, 0.9);
        assert_eq!(t.q(0), &[0.0, 3.0]);
        t.update_values(0, &[1.0, -1.0], None, 0.9);
        assert_eq!(t.values(0), &[1.0, -1.0]);
        t.update_values(0, &[0.0, 0.0], Some(0), 0.5);
        assert_eq!(t.values(0), &[0.5, -0.5]);
    }

    #[test]
    fn discretizer_covers_range() {
        let d = QueueDiscretizer { bins: 8 };
        let lo = Tensor::row(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let hi = Tensor::row(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(d.index(&lo), 0);
        assert_eq!(d.index(&hi), d.num_states() - 1);
        let mid = Tensor::row(&[0.5, 0.0, 0.26, 0.99, 0.0, 0.0]);
        assert_eq!(d.index(&mid), (4 * 8 + 2) * 8 + 7);
    }
}
