use serde::{Deserialize, Serialize};

use crate::diffmath::{dot, norm};
use crate::error::{DpiError, Result};

/// z-value of a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

/// One greedy evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    /// `⟨ω^eval, r⃗_t⟩` per step.
    pub rewards: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    /// Preference the agent acted under at each step.
    pub prefs: Vec<Vec<f64>>,
    pub success: bool,
    /// Steps at whose end an event fired, strictly increasing.
    pub events: Vec<usize>,
}

impl EpisodeLog {
    pub fn validate(&self) -> Result<()> {
        let n = self.rewards.len();
        if self.vectors.len() != n || self.prefs.len() != n {
            return Err(DpiError::usage("episode log fields differ in length"));
        }
        if self.events.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DpiError::usage("event steps must be strictly increasing"));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Vector return, undiscounted.
    pub fn vector_return(&self) -> Vec<f64> {
        let d = self.vectors.first().map_or(0, Vec::len);
        let mut out = vec![0.0; d];
        for v in &self.vectors {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
        out
    }
}

/// Mean with a 95% normal half-width `1.96·σ/√N`, `σ` the population
/// standard deviation of the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub ci: f64,
    pub n: usize,
    pub seeds: usize,
}

impl MetricSummary {
    pub fn from_samples(samples: &[f64], seeds: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(DpiError::usage("metric over zero samples"));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Ok(MetricSummary {
            mean,
            ci: Z95 * var.sqrt() / n.sqrt(),
            n: samples.len(),
            seeds,
        })
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci
    }

    /// `self` is above `other` and the two intervals do not touch.
    pub fn beats(&self, other: &MetricSummary) -> bool {
        self.lower() > other.upper()
    }
}

fn nonempty(logs: &[EpisodeLog]) -> Result<()> {
    if logs.is_empty() {
        Err(DpiError::usage("no evaluation episodes"))
    } else {
        Ok(())
    }
}

/// Mean episodic return of the evaluation scalarization.
pub fn mer(logs: &[EpisodeLog], seeds: usize) -> Result<MetricSummary> {
    nonempty(logs)?;
    let s: Vec<f64> = logs.iter().map(EpisodeLog::total).collect();
    MetricSummary::from_samples(&s, seeds)
}

/// Success rate.
pub fn sr(logs: &[EpisodeLog], seeds: usize) -> Result<MetricSummary> {
    nonempty(logs)?;
    let s: Vec<f64> = logs
        .iter()
        .map(|l| if l.success { 1.0 } else { 0.0 })
        .collect();
    MetricSummary::from_samples(&s, seeds)
}

/// Mean reward over the `k` steps after each change point of one episode,
/// averaged over change points. Windows are clipped at episode end; change
/// points with no following step are skipped.
pub fn psk_episode(log: &EpisodeLog, k: usize) -> Option<f64> {
    let n = log.rewards.len();
    if n == 0 || k == 0 {
        return None;
    }
    let per: Vec<f64> = log
        .events
        .iter()
        .filter_map(|&t| {
            let lo = t + 1;
            let hi = (t + k).min(n - 1);
            (lo <= hi).then(|| log.rewards[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64)
        })
        .collect();
    (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
}

pub fn psk(logs: &[EpisodeLog], k: usize, seeds: usize) -> Result<MetricSummary> {
    let s: Vec<f64> = logs.iter().filter_map(|l| psk_episode(l, k)).collect();
    if s.is_empty() {
        return Err(DpiError::usage("no episode contains a change point"));
    }
    MetricSummary::from_samples(&s, seeds)
}

/// Per-episode PS@K averaged over `K = 1..=k_max`, summarized over episodes.
pub fn psk_average(logs: &[EpisodeLog], k_max: usize, seeds: usize) -> Result<MetricSummary> {
    let s: Vec<f64> = logs
        .iter()
        .filter_map(|l| {
            let vals: Vec<f64> = (1..=k_max).filter_map(|k| psk_episode(l, k)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    if s.is_empty() {
        return Err(DpiError::usage("no episode contains a change point"));
    }
    MetricSummary::from_samples(&s, seeds)
}

/// Cosine between a preference and a reward vector; `None` when either is
/// zero.
pub fn alignment(omega: &[f64], reward: &[f64]) -> Option<f64> {
    let (a, b) = (norm(omega), norm(reward));
    if a == 0.0 || b == 0.0 {
        return None;
    }
    Some((dot(omega, reward) / (a * b)).clamp(-1.0, 1.0))
}

/// Alignment at each step in the `k` steps after every change point.
pub fn post_event_alignment(log: &EpisodeLog, k: usize) -> Vec<f64> {
    let n = log.rewards.len();
    let mut steps: Vec<usize> = log
        .events
        .iter()
        .flat_map(|&t| (t + 1..=(t + k)).filter(move |&s| s < n))
        .collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .filter_map(|s| alignment(&log.prefs[s], &log.vectors[s]))
        .collect()
}

/// Mean post-event alignment per episode, summarized over episodes.
pub fn alignment_summary(logs: &[EpisodeLog], k: usize, seeds: usize) -> Result<MetricSummary> {
    let s: Vec<f64> = logs
        .iter()
        .filter_map(|l| {
            let a = post_event_alignment(l, k);
            (!a.is_empty()).then(|| a.iter().sum::<f64>() / a.len() as f64)
        })
        .collect();
    if s.is_empty() {
        return Err(DpiError::usage("no post-event steps with a nonzero reward"));
    }
    MetricSummary::from_samples(&s, seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(rewards: &[f64], events: &[usize]) -> EpisodeLog {
        EpisodeLog {
            rewards: rewards.to_vec(),
            vectors: rewards.iter().map(|r| vec![*r, 0.0]).collect(),
            prefs: vec![vec![1.0, 0.0]; rewards.len()],
            success: false,
            events: events.to_vec(),
        }
    }

    #[test]
    fn mer_examples() {
        let m = mer(&[log(&[1.0, -1.0, 2.0], &[])], 1).unwrap();
        assert_eq!((m.mean, m.ci), (2.0, 0.0));
        let m = mer(&[log(&[4.0], &[]), log(&[6.0], &[])], 1).unwrap();
        assert_eq!(m.mean, 5.0);
        assert!((m.ci - 1.96 / 2f64.sqrt()).abs() < 1e-15);
        assert!(mer(&[], 1).is_err());
    }

    #[test]
    fn sr_examples() {
        let mk = |s: bool| EpisodeLog {
            success: s,
            ..log(&[0.0], &[])
        };
        let all = vec![mk(true); 3];
        assert_eq!(sr(&all, 1).unwrap().mean, 1.0);
        let half = sr(&[mk(true), mk(false), mk(true), mk(false)], 1).unwrap();
        assert_eq!(half.mean, 0.5);
        assert!((half.ci - 1.96 * 0.5 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn psk_examples() {
        let l = log(&[0.0, 0.0, 5.0, 3.0, 1.0, 7.0], &[2]);
        assert_eq!(psk_episode(&l, 2), Some(2.0));
        assert_eq!(psk_episode(&l, 1), Some(3.0));
        // Clipped at episode end.
        assert_eq!(psk_episode(&l, 10), Some(11.0 / 3.0));
        let last = log(&[1.0, 2.0], &[1]);
        assert_eq!(psk_episode(&last, 4), None);
        assert!(psk(&[last, log(&[1.0], &[])], 2, 1).is_err());
    }

    #[test]
    fn alignment_examples() {
        let w = [1.0, 0.0, 0.0, 0.0, 0.0];
        assert!((alignment(&w, &[1.0, 1.0, 0.0, 0.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        let v = [0.2, 0.3, 0.1, 0.1, 0.3];
        assert!((alignment(&v, &v.map(|x| 3.0 * x)).unwrap() - 1.0).abs() < 1e-12);
        assert!((alignment(&v, &v.map(|x| -x)).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(alignment(&v, &[0.0; 5]), None);
    }

    #[test]
    fn invalid_logs_are_rejected() {
        assert!(log(&[1.0, 2.0, 3.0], &[1, 1]).validate().is_err());
        let mut l = log(&[1.0], &[]);
        l.prefs.clear();
        assert!(l.validate().is_err());
    }
}
