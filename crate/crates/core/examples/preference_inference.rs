//! Runs an untrained preference encoder along one Queue episode. At each step
//! it prints the posterior mean preference, its KL to the prior and the
//! candidate chosen by the envelope rule, and it writes the posterior trace
//! as CSV to stderr.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dpi::appraisal::{
    write_posterior_trace, HistoryWindow, NetConfig, PreferenceEncoder, TraceRow,
};
use dpi::diffmath::ParamSet;
use dpi::envs::{EnvKind, QueueAction, QueueConfig, QueueEnv, REWARD_DIM};
use dpi::policy::{envelope_select, ActorCritic};

const HISTORY: usize = 4;
const SAMPLES: usize = 8;

fn show(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> dpi::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut env = QueueEnv::new(QueueConfig::default())?;
    let (_, obs) = env.reset(3);
    let shape = obs.shape().to_vec();
    let net = NetConfig::default();

    let mut phi = ParamSet::new("phi");
    let encoder =
        PreferenceEncoder::new(&mut phi, EnvKind::Queue, &shape, &net, REWARD_DIM, &mut rng)?;
    let mut theta = ParamSet::new("theta");
    let actor = ActorCritic::new(
        &mut theta,
        EnvKind::Queue,
        &shape,
        2,
        REWARD_DIM,
        true,
        REWARD_DIM,
        &net,
        &mut rng,
    )?;

    let mut window = HistoryWindow::new(HISTORY, &obs)?;
    let mut trace = Vec::new();
    loop {
        let post = encoder.encode(&phi, &window)?;
        let candidates: Vec<Vec<f64>> = post
            .sample(SAMPLES, &mut rng)?
            .into_iter()
            .map(|s| s.omega)
            .collect();
        let (chosen, idx, outs) = envelope_select(&actor, &theta, window.latest(), &candidates)?;
        let t = env.state().t;
        println!(
            "t={t:>2} pred=[{}] kl={:.3} chose sample {idx} [{}]",
            show(&post.pref_pred()),
            post.kl(),
            show(&chosen)
        );
        trace.push(TraceRow {
            t,
            mu: post.mu.clone(),
            sigma: post.sigma(),
            omega_pred: post.pref_pred(),
            omega_hat: chosen,
        });

        let logits = &outs[idx].logits;
        let action = if logits[1] > logits[0] {
            QueueAction::Cut
        } else {
            QueueAction::Wait
        };
        let out = env.step(action)?;
        if out.finished() {
            break;
        }
        window.push(out.observation);
    }
    write_posterior_trace(std::io::stderr(), &trace)
}
