//! Generalized advantage estimation on vector and scalar signals.

use crate::error::{DpiError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GaeResult {
    pub advantages: Vec<Vec<f64>>,
    /// `G_t = A_t + V_t`.
    pub returns: Vec<Vec<f64>>,
}

fn check(gamma: f64, lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
        return Err(DpiError::usage(format!(
            "discount {gamma} and trace parameter {lambda} must lie in [0, 1]"
        )));
    }
    Ok(())
}

/// Per-dimension GAE over one trajectory segment.
///
/// `bootstrap` is `V(s_{T+1})`, used only when the last step is not done.
pub fn vector_gae(
    rewards: &[Vec<f64>],
    values: &[Vec<f64>],
    bootstrap: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<GaeResult> {
    check(gamma, lambda)?;
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(DpiError::usage(format!(
            "gae inputs have lengths {} / {} / {}",
            n,
            values.len(),
            dones.len()
        )));
    }
    let d = bootstrap.len();
    if rewards.iter().chain(values).any(|r| r.len() != d) {
        return Err(DpiError::usage("gae vectors differ in dimension"));
    }
    let mut advantages = vec![vec![0.0; d]; n];
    let mut next_adv = vec![0.0; d];
    let mut next_val = bootstrap.to_vec();
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        for j in 0..d {
            let delta = rewards[t][j] + gamma * live * next_val[j] - values[t][j];
            let a = delta + gamma * lambda * live * next_adv[j];
            advantages[t][j] = a;
            next_adv[j] = a;
        }
        next_val.clone_from(&values[t]);
    }
    let returns = advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a.iter().zip(v).map(|(x, y)| x + y).collect())
        .collect();
    Ok(GaeResult {
        advantages,
        returns,
    })
}

/// Scalar GAE; returns `(advantages, returns)`.
pub fn scalar_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check(gamma, lambda)?;
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(DpiError::usage("scalar gae inputs differ in length"));
    }
    let mut adv = vec![0.0; n];
    let (mut next_adv, mut next_val) = (0.0, bootstrap);
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * next_val - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_val = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// `A_t = ⟨ω̂_t, A⃗_t⟩`.
pub fn scalarize_advantages(advantages: &[Vec<f64>], prefs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if advantages.len() != prefs.len() {
        return Err(DpiError::usage("advantage and preference counts differ"));
    }
    Ok(advantages
        .iter()
        .zip(prefs)
        .map(|(a, w)| crate::diffmath::dot(a, w))
        .collect())
}

/// `(A − mean) / (std + 1e-8)` with the population standard deviation.
pub fn normalize_advantages(a: &[f64]) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    a.iter().map(|x| (x - mean) / (std + 1e-8)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_single_step() {
        let r = vec![vec![1.0, -1.0, 0.0, 0.5, 2.0]];
        let v = vec![vec![0.5, 0.5, 0.5, 0.5, 0.5]];
        let out = vector_gae(&r, &v, &[9.0; 5], &[true], 0.99, 0.95).unwrap();
        assert_eq!(out.advantages[0], vec![0.5, -1.5, -0.5, 0.0, 1.5]);
        assert_eq!(out.returns[0], r[0]);
    }

    #[test]
    fn lambda_zero_is_td_error() {
        let r = vec![vec![1.0, 2.0], vec![0.0, -1.0]];
        let v = vec![vec![0.3, 0.1], vec![0.7, -0.2]];
        let out = vector_gae(&r, &v, &[1.0, 1.0], &[false, false], 0.9, 0.0).unwrap();
        for t in 0..2 {
            let next = if t == 0 { &v[1] } else { &vec![1.0, 1.0] };
            for j in 0..2 {
                let td = r[t][j] + 0.9 * next[j] - v[t][j];
                assert!((out.advantages[t][j] - td).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn length_mismatch_is_usage_error() {
        let r = vec![vec![0.0; 5]; 2];
        let v = vec![vec![0.0; 5]; 3];
        assert!(vector_gae(&r, &v, &[0.0; 5], &[false; 2], 0.99, 0.95).is_err());
    }

    #[test]
    fn normalization_examples() {
        assert!(normalize_advantages(&[3.0; 4])
            .iter()
            .all(|x| x.abs() < 1e-12));
        let n = normalize_advantages(&[1.0, -1.0]);
        assert!((n[0] - 1.0).abs() < 1e-7 && (n[1] + 1.0).abs() < 1e-7);
    }
}
