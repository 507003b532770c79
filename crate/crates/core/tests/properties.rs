//! Invariants checked on generated inputs.

use proptest::prelude::*;

use dpi::diffmath::{softmax, Tensor};
use dpi::eval::{
    alignment, dominates, jaccard, pareto_front, psk_episode, EpisodeLog, MetricSummary,
};
use dpi::harness::simplex_grid;
use dpi::policy::{
    envelope_argmax, normalize_advantages, scalar_gae, scalarize_advantages, vector_gae,
};

const TOL: f64 = 1e-9;

fn points() -> impl Strategy<Value = Vec<(f64, f64)>> {
    // Small integer grids produce plenty of duplicates and ties.
    prop::collection::vec(
        (-4i32..5, -4i32..5).prop_map(|(a, b)| (a as f64, b as f64)),
        0..30,
    )
}

fn brute_front(p: &[(f64, f64)]) -> Vec<usize> {
    (0..p.len())
        .filter(|&i| {
            !p.iter()
                .any(|q| q.0 >= p[i].0 && q.1 >= p[i].1 && (q.0 > p[i].0 || q.1 > p[i].1))
        })
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * (1.0 + a.abs().max(b.abs()))
}

/// Rewards, values, bootstrap values and done flags.
type Trajectory = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, Vec<bool>);

fn trajectory(d: usize) -> impl Strategy<Value = Trajectory> {
    (1usize..12).prop_flat_map(move |n| {
        (
            prop::collection::vec(prop::collection::vec(-5.0..5.0f64, d), n),
            prop::collection::vec(prop::collection::vec(-5.0..5.0f64, d), n),
            prop::collection::vec(-5.0..5.0f64, d),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

fn simplex(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..1.0f64, d).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn front_matches_brute_force(p in points()) {
        prop_assert_eq!(pareto_front(&p), brute_front(&p));
    }

    #[test]
    fn front_is_idempotent(p in points()) {
        let front: Vec<(f64, f64)> = pareto_front(&p).into_iter().map(|i| p[i]).collect();
        prop_assert_eq!(pareto_front(&front), (0..front.len()).collect::<Vec<_>>());
        for a in &front {
            for b in &front {
                prop_assert!(!dominates(*a, *b));
            }
        }
    }

    #[test]
    fn jaccard_is_a_similarity(a in prop::collection::btree_set(0usize..15, 0..15),
                               b in prop::collection::btree_set(0usize..15, 0..15)) {
        let (a, b): (Vec<usize>, Vec<usize>) = (a.into_iter().collect(), b.into_iter().collect());
        let j = jaccard(&a, &b);
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(j, jaccard(&b, &a));
        prop_assert_eq!(jaccard(&a, &a), 1.0);
    }

    #[test]
    fn alignment_ignores_positive_scale(w in simplex(5),
                                        r in prop::collection::vec(-5.0..5.0f64, 5),
                                        c in 0.01..100.0f64) {
        let scaled_r: Vec<f64> = r.iter().map(|x| x * c).collect();
        let scaled_w: Vec<f64> = w.iter().map(|x| x * c).collect();
        match alignment(&w, &r) {
            Some(a) => {
                prop_assert!((-1.0..=1.0).contains(&a));
                prop_assert!(close(a, alignment(&w, &scaled_r).unwrap()));
                prop_assert!(close(a, alignment(&scaled_w, &r).unwrap()));
            }
            None => prop_assert!(r.iter().all(|x| *x == 0.0)),
        }
    }

    #[test]
    fn gae_is_linear((r1, v1, b1, dones) in trajectory(3),
                     a in -2.0..2.0f64, c in -2.0..2.0f64,
                     gamma in 0.0..=1.0f64, lambda in 0.0..=1.0f64) {
        let n = r1.len();
        let r2: Vec<Vec<f64>> = r1.iter().rev().cloned().collect();
        let v2: Vec<Vec<f64>> = v1.iter().map(|v| v.iter().map(|x| x * 0.5 - 1.0).collect()).collect();
        let b2: Vec<f64> = b1.iter().map(|x| -x).collect();
        let mix = |x: &[Vec<f64>], y: &[Vec<f64>]| -> Vec<Vec<f64>> {
            x.iter().zip(y).map(|(p, q)| p.iter().zip(q).map(|(s, t)| a * s + c * t).collect()).collect()
        };
        let b: Vec<f64> = b1.iter().zip(&b2).map(|(s, t)| a * s + c * t).collect();
        let g1 = vector_gae(&r1, &v1, &b1, &dones, gamma, lambda).unwrap();
        let g2 = vector_gae(&r2, &v2, &b2, &dones, gamma, lambda).unwrap();
        let g = vector_gae(&mix(&r1, &r2), &mix(&v1, &v2), &b, &dones, gamma, lambda).unwrap();
        let want = mix(&g1.advantages, &g2.advantages);
        for t in 0..n {
            for j in 0..3 {
                prop_assert!(close(g.advantages[t][j], want[t][j]));
            }
        }
    }

    #[test]
    fn scalarization_commutes_with_gae((r, v, boot, dones) in trajectory(5), w in simplex(5),
                                       gamma in 0.0..=1.0f64, lambda in 0.0..=1.0f64) {
        let dot = |x: &[f64]| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let g = vector_gae(&r, &v, &boot, &dones, gamma, lambda).unwrap();
        let prefs = vec![w.clone(); r.len()];
        let scalar = scalarize_advantages(&g.advantages, &prefs).unwrap();
        let sr: Vec<f64> = r.iter().map(|x| dot(x)).collect();
        let sv: Vec<f64> = v.iter().map(|x| dot(x)).collect();
        let (adv, _) = scalar_gae(&sr, &sv, dot(&boot), &dones, gamma, lambda).unwrap();
        for (a, b) in scalar.iter().zip(&adv) {
            prop_assert!(close(*a, *b));
        }
    }

    #[test]
    fn confidence_interval_formula(s in prop::collection::vec(-50.0..50.0f64, 1..200)) {
        let m = MetricSummary::from_samples(&s, 1).unwrap();
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let sd = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(close(m.mean, mean));
        prop_assert!(close(m.ci, 1.96 * sd / n.sqrt()));
        prop_assert!(m.lower() <= m.mean && m.mean <= m.upper());
        prop_assert!(!m.beats(&m));
    }

    #[test]
    fn simplex_grid_is_complete(d in 1usize..6, res in 1usize..5) {
        let g = simplex_grid(d, res);
        // Stars and bars: C(res + d − 1, d − 1).
        let mut want = 1usize;
        for i in 0..d - 1 {
            want = want * (res + d - 1 - i) / (i + 1);
        }
        prop_assert_eq!(g.len(), want);
        for p in &g {
            prop_assert_eq!(p.len(), d);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            prop_assert!(close(p.iter().sum::<f64>(), 1.0));
        }
        let mut keys: Vec<Vec<i64>> = g.iter().map(|p| p.iter().map(|x| (x * res as f64).round() as i64).collect()).collect();
        keys.sort();
        keys.dedup();
        prop_assert_eq!(keys.len(), g.len());
    }

    #[test]
    fn softmax_is_shift_invariant(z in prop::collection::vec(-20.0..20.0f64, 1..8), c in -50.0..50.0f64) {
        let p = softmax(&z);
        let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
        prop_assert!(close(p.iter().sum::<f64>(), 1.0));
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!(a.is_finite() && *a >= 0.0);
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_advantages_are_standardized(a in prop::collection::vec(-100.0..100.0f64, 2..100)) {
        let spread = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - a.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let z = normalize_advantages(&a);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn envelope_picks_the_first_maximum(rows in prop::collection::vec(
        (simplex(3), prop::collection::vec(-2i32..3, 3)), 1..10)) {
        let cands: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
        let vals: Vec<Vec<f64>> = rows.iter().map(|r| r.1.iter().map(|x| *x as f64).collect()).collect();
        let s: Vec<f64> = cands.iter().zip(&vals).map(|(w, v)| w.iter().zip(v).map(|(a, b)| a * b).sum()).collect();
        let i = envelope_argmax(&cands, &vals).unwrap();
        prop_assert!(s.iter().all(|x| *x <= s[i]));
        prop_assert!(s[..i].iter().all(|x| *x < s[i]));
    }

    #[test]
    fn psk_lies_within_reward_range(rewards in prop::collection::vec(-10.0..10.0f64, 2..40),
                                    t in 0usize..40, k in 1usize..10) {
        let n = rewards.len();
        let log = EpisodeLog {
            rewards: rewards.clone(),
            vectors: vec![vec![0.0; 5]; n],
            prefs: vec![vec![0.2; 5]; n],
            success: false,
            events: vec![t % n],
        };
        match psk_episode(&log, k) {
            Some(v) => {
                let lo = rewards.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(v >= lo - TOL && v <= hi + TOL);
            }
            None => prop_assert_eq!(t % n, n - 1),
        }
    }

    #[test]
    fn tensor_rows_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6..1e6f64, 4), 1..6)) {
        let t = Tensor::from_rows(&rows).unwrap();
        prop_assert_eq!(t.shape(), &[rows.len(), 4][..]);
        for (i, r) in rows.iter().enumerate() {
            prop_assert_eq!(t.row_slice(i), &r[..]);
        }
    }
}
