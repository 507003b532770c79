//! Trains DPI on the Queue environment for a short budget, saves a checkpoint,
//! reloads it and evaluates the reloaded model. The first argument sets the
//! number of environment steps (default 20000).

use dpi::eval::{mer, sr};
use dpi::harness::{evaluate_model, load_checkpoint, save_checkpoint, train_dpi, Model, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20_000);
    let mut cfg = RunConfig {
        total_steps: steps,
        ..RunConfig::default()
    };
    cfg.eval.interval = (steps / 4).max(1);
    cfg.eval.episodes = 50;
    cfg.validate()?;

    let seed = 0;
    let out = train_dpi(&cfg, seed)?;
    println!("{} steps, {} updates", out.steps, out.updates);
    for row in out.curve_rows()? {
        println!(
            "step {:>7}  MER {:>7.2} ± {:.2}  SR {:.3} ± {:.3}",
            row.step, row.mer, row.mer_ci, row.sr, row.sr_ci
        );
    }

    let dir = std::env::temp_dir().join("dpi-train-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("checkpoint.json");
    save_checkpoint(&out.model.checkpoint(&cfg, seed, out.steps), &path)?;
    let restored = Model::from_checkpoint(&load_checkpoint(&path)?)?;
    let logs = evaluate_model(&restored, &cfg, seed, "reloaded")?;
    println!("reloaded from {}", path.display());
    println!(
        "MER {:.2}  SR {:.3}",
        mer(&logs, 1)?.mean,
        sr(&logs, 1)?.mean
    );
    Ok(())
}
