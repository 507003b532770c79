//! Action selection: the preference-conditioned actor–critic, the envelope
//! operator, vector GAE and the PPO/critic objectives.

mod gae;
mod losses;
mod network;

pub use gae::{normalize_advantages, scalar_gae, scalarize_advantages, vector_gae, GaeResult};
pub use losses::{
    critic_loss, entropy_mean, ppo_loss, total_loss, value_mse, LossTerms, LossWeights,
};
pub use network::{envelope_argmax, envelope_select, scalarize_value, ActorCritic, ActorOutput};

use rand::Rng;

/// Samples an index from a categorical distribution.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Argmax with ties broken uniformly at random.
pub fn greedy_action<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let best = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..logits.len()).filter(|&i| logits[i] == best).collect();
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::appraisal::NetConfig;
    use crate::diffmath::{ParamSet, Tensor};
    use crate::envs::EnvKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalarize_examples() {
        let v = [2.0, 4.0, 9.0, 9.0, 9.0];
        assert_eq!(scalarize_value(&v, &[0.5, 0.5, 0.0, 0.0, 0.0]), 3.0);
        assert_eq!(scalarize_value(&v, &[0.0, 0.0, 1.0, 0.0, 0.0]), 9.0);
        assert!((scalarize_value(&v, &[0.2; 5]) - 33.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_ties_and_singletons() {
        let c = vec![vec![1.0, 0.0]; 7];
        let mut v = vec![vec![0.0, 0.0]; 7];
        v[2] = vec![5.0, 0.0];
        v[5] = vec![5.0, 0.0];
        assert_eq!(envelope_argmax(&c, &v).unwrap(), 2);
        assert_eq!(envelope_argmax(&c[..1], &v[..1]).unwrap(), 0);
        assert!(envelope_argmax(&[], &[]).is_err());
    }

    #[test]
    fn network_shapes_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::new("theta");
        let cfg = NetConfig {
            hidden: 8,
            gru_hidden: 8,
            head_hidden: 8,
            ..NetConfig::default()
        };
        let net = ActorCritic::new(
            &mut ps,
            EnvKind::Queue,
            &[1, 6],
            2,
            5,
            true,
            5,
            &cfg,
            &mut rng,
        )
        .unwrap();
        let obs = Tensor::row(&[0.5, 0.4, 1.0, 0.8, 0.0, 0.7]);
        let a = net.evaluate(&ps, &obs, &[0.2; 5]).unwrap();
        assert_eq!(a, net.evaluate(&ps, &obs, &[0.2; 5]).unwrap());
        assert_eq!((a.logits.len(), a.values.len()), (2, 5));
        let b = net.evaluate(&ps, &obs, &[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_ne!(a.values, b.values);
        let cands = vec![vec![0.2; 5], vec![1.0, 0.0, 0.0, 0.0, 0.0]];
        let outs = net.evaluate_candidates(&ps, &obs, &cands).unwrap();
        for (x, y) in outs[0].values.iter().zip(&a.values) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in outs[1].values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_breaks_ties_randomly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let picks: Vec<usize> = (0..200)
            .map(|_| greedy_action(&[1.0, 1.0, 0.0], &mut rng))
            .collect();
        assert!(picks.contains(&0) && picks.contains(&1) && !picks.contains(&2));
        assert_eq!(greedy_action(&[0.0, 3.0], &mut rng), 1);
    }
}
