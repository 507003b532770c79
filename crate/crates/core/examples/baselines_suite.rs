//! Trains DPI and the baselines on the Queue environment and prints the
//! comparison table. Arguments: steps per run (default 10000) and number of
//! seeds (default 2).

use dpi::baselines::AgentKind;
use dpi::harness::{run_suite, RunConfig};

fn main() -> dpi::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);
    let mut cfg = RunConfig {
        total_steps: steps,
        ..RunConfig::default()
    };
    cfg.seeds = (0..seeds).collect();
    cfg.eval.interval = steps;
    cfg.validate()?;

    let agents = [
        AgentKind::Dpi,
        AgentKind::Random,
        AgentKind::Fixed,
        AgentKind::Heuristic,
        AgentKind::Envelope,
    ];
    println!("{:<10} {:>16} {:>16} {:>16}", "method", "MER", "SR", "PS@K");
    for set in run_suite(&cfg, &agents)? {
        let (m, s, p) = (set.mer()?, set.sr()?, set.psk_average()?);
        println!(
            "{:<10} {:>8.2} ± {:<5.2} {:>8.3} ± {:<5.3} {:>8.2} ± {:<5.2}",
            set.label, m.mean, m.ci, s.mean, s.ci, p.mean, p.ci
        );
    }
    Ok(())
}
