//! Steps the Queue environment with a simple rule (cut while far back, wait
//! near the front) and prints each reward vector. Pass a seed as the first
//! argument.

use dpi::envs::{QueueAction, QueueConfig, QueueEnv};

fn main() -> dpi::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let mut env = QueueEnv::new(QueueConfig::default())?;
    let (state, _) = env.reset(seed);
    println!(
        "start: {} ahead, deadline {}, energy {}, service rate {:.2}",
        state.queue_len, state.deadline, state.energy, state.service_rate
    );
    println!("pending events: {:?}", env.schedule().pending());
    println!(" t  action  [progress, time, fairness, energy, deadline]");
    loop {
        let s = env.state();
        let action = if s.queue_len > 6 && s.energy > 10.0 {
            QueueAction::Cut
        } else {
            QueueAction::Wait
        };
        let out = env.step(action)?;
        println!(
            "{:>2}  {:<6}  {:?}",
            env.state().t,
            format!("{action:?}"),
            out.reward.0
        );
        for e in &out.events {
            println!("    event {} {:?}", e.kind.name(), e.params);
        }
        if out.finished() {
            println!("finished: success = {}", out.success);
            return Ok(());
        }
    }
}
