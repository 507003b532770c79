//! Draws a Maze layout and walks the shortest path to the goal, summing the
//! reward vector.

use dpi::envs::{EventKind, MazeAction, MazeConfig, MazeEnv};

fn main() -> dpi::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let mut env = MazeEnv::new(MazeConfig::default())?;
    env.reset(seed);
    let (start, goal) = (env.start_cell(), env.goal_cell());
    let path = env
        .shortest_path(start, goal)
        .expect("layouts are regenerated until reachable");
    for r in 0..env.config.height {
        let row: String = (0..env.config.width)
            .map(|c| match (r, c) {
                p if p == start => 'S',
                p if p == goal => 'G',
                p if env.is_wall(p) => '#',
                p if env.is_hazard(p) => '!',
                p if path.contains(&p) => '.',
                _ => ' ',
            })
            .collect();
        println!("|{row}|");
    }
    let rec = env.fire_event(EventKind::DeadlineShock)?;
    println!("deadline shock: {:?}", rec.params);

    let mut total = [0.0; 5];
    for w in path.windows(2) {
        let action = [
            MazeAction::Up,
            MazeAction::Down,
            MazeAction::Left,
            MazeAction::Right,
        ]
        .into_iter()
        .find(|a| {
            let (dr, dc) = a.delta();
            (w[0].0 as isize + dr, w[0].1 as isize + dc) == (w[1].0 as isize, w[1].1 as isize)
        })
        .expect("path cells are adjacent");
        let out = env.step(action)?;
        for (t, r) in total.iter_mut().zip(out.reward.0) {
            *t += r;
        }
        if out.finished() {
            println!(
                "reached goal in {} steps, success = {}",
                env.state().t,
                out.success
            );
        }
    }
    println!("return [prog, time, hazard, energy, deadline] = {total:?}");
    Ok(())
}
