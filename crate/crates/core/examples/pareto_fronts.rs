//! Trains one fixed-preference agent per simplex lattice point with and
//! without events, then prints both non-dominated fronts and their overlap.
//! The first argument sets the steps per agent (default 5000).

use dpi::harness::{pareto_sweep, RunConfig};

fn main() -> dpi::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5_000);
    let mut cfg = RunConfig::default();
    cfg.experiments.pareto_steps = steps;
    cfg.experiments.pareto_seeds = vec![0];
    cfg.validate()?;

    let res = pareto_sweep(&cfg, cfg.experiments.pareto_resolution)?;
    println!("{} lattice points", res.grid.len());
    for row in &res.rows {
        let w: Vec<String> = row.omega.iter().map(|x| format!("{x:.2}")).collect();
        let mark = if row.dominated { ' ' } else { '*' };
        println!(
            "{:<4} [{}] x={:>8.3} y={:>8.3} {mark}",
            row.regime,
            w.join(" "),
            row.x,
            row.y
        );
    }
    println!("pre front {:?}", res.pre_front);
    println!("post front {:?}", res.post_front);
    println!("jaccard {:.3}", res.jaccard);
    Ok(())
}
