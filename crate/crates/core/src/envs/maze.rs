//! Grid maze with hazards, a deadline and an energy budget, observed as an
//! `H×W×3` image.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::events::{EventKind, EventMode, EventRecord, EventSchedule};
use super::{component, EnvKind, Environment, PrivilegedInfo, StepOutcome, VectorReward};
use crate::diffmath::Tensor;
use crate::error::{DpiError, Result};

pub const CODE_WALL: f64 = 1.0;
pub const CODE_HAZARD: f64 = 0.75;
pub const CODE_GOAL: f64 = 0.5;
pub const CODE_AGENT: f64 = 0.25;
pub const CODE_FREE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MazeAction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl MazeAction {
    pub fn from_index(a: usize) -> Result<Self> {
        match a {
            0 => Ok(MazeAction::Up),
            1 => Ok(MazeAction::Down),
            2 => Ok(MazeAction::Left),
            3 => Ok(MazeAction::Right),
            _ => Err(DpiError::usage(format!("maze action {a} out of range"))),
        }
    }

    /// Row and column offset of the move.
    pub fn delta(self) -> (isize, isize) {
        match self {
            MazeAction::Up => (-1, 0),
            MazeAction::Down => (1, 0),
            MazeAction::Left => (0, -1),
            MazeAction::Right => (0, 1),
        }
    }
}

/// `(row, col)`; row 0 is the top.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MazeConfig {
    pub height: usize,
    pub width: usize,
    pub wall_density: f64,
    pub initial_hazards: usize,
    /// Step budget; reaching it truncates the episode.
    pub horizon: usize,
    pub initial_deadline: usize,
    pub hazard_penalty: f64,
    pub energy_coef: f64,
    pub deadline_bonus: f64,
    /// Normalized energy spent per step before multipliers.
    pub step_energy: f64,
    pub deadline_shock: f64,
    pub surge_radius: usize,
    pub drought_factor: f64,
    pub events: EventMode,
}

impl Default for MazeConfig {
    fn default() -> Self {
        MazeConfig {
            height: 12,
            width: 12,
            wall_density: 0.2,
            initial_hazards: 6,
            horizon: 200,
            initial_deadline: 100,
            hazard_penalty: 2.0,
            energy_coef: 0.1,
            deadline_bonus: 10.0,
            step_energy: 1.0 / 150.0,
            deadline_shock: 0.7,
            surge_radius: 1,
            drought_factor: 2.0,
            events: EventMode::default(),
        }
    }
}

impl MazeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DpiError::config(format!("maze: {m}")));
        if self.height < 2 || self.width < 2 {
            return bad("grid must be at least 2x2");
        }
        if !(0.0..0.6).contains(&self.wall_density) {
            return bad("wall_density must be in [0, 0.6)");
        }
        if self.horizon == 0 || self.initial_deadline == 0 {
            return bad("horizon and initial_deadline must be positive");
        }
        if !(0.0..=1.0).contains(&self.deadline_shock) || self.drought_factor < 1.0 {
            return bad("deadline_shock must be in [0, 1] and drought_factor >= 1");
        }
        if self.step_energy < 0.0 {
            return bad("step_energy must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeState {
    pub agent: Cell,
    pub goal: Cell,
    pub walls: Vec<bool>,
    pub hazards: Vec<bool>,
    /// Remaining deadline over the initial deadline.
    pub timer: f64,
    /// Remaining normalized energy.
    pub energy: f64,
    pub cost_multiplier: f64,
    pub deadline: usize,
    pub t: usize,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct MazeEnv {
    pub config: MazeConfig,
    state: MazeState,
    schedule: EventSchedule,
    events_fired: usize,
    rng: ChaCha8Rng,
}

fn manhattan(a: Cell, b: Cell) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

impl MazeEnv {
    pub fn new(config: MazeConfig) -> Result<Self> {
        config.validate()?;
        let n = config.height * config.width;
        let mut env = MazeEnv {
            state: MazeState {
                agent: (0, 0),
                goal: (0, 0),
                walls: vec![false; n],
                hazards: vec![false; n],
                timer: 1.0,
                energy: 1.0,
                cost_multiplier: 1.0,
                deadline: 0,
                t: 0,
                done: true,
            },
            schedule: EventSchedule::default(),
            events_fired: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            config,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn state(&self) -> &MazeState {
        &self.state
    }

    pub fn schedule(&self) -> &EventSchedule {
        &self.schedule
    }

    pub fn set_schedule(&mut self, schedule: EventSchedule) {
        self.schedule = schedule;
    }

    fn idx(&self, c: Cell) -> usize {
        c.0 * self.config.width + c.1
    }

    pub fn start_cell(&self) -> Cell {
        (self.config.height - 1, 0)
    }

    pub fn goal_cell(&self) -> Cell {
        (0, self.config.width - 1)
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        self.state.walls[self.idx(c)]
    }

    pub fn is_hazard(&self, c: Cell) -> bool {
        self.state.hazards[self.idx(c)]
    }

    fn neighbours(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        let (h, w) = (self.config.height as isize, self.config.width as isize);
        [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)]
            .into_iter()
            .filter_map(move |(dr, dc)| {
                let (r, col) = (c.0 as isize + dr, c.1 as isize + dc);
                (r >= 0 && r < h && col >= 0 && col < w).then_some((r as usize, col as usize))
            })
    }

    /// Breadth-first shortest path avoiding walls, inclusive of both ends.
    pub fn shortest_path(&self, from: Cell, to: Cell) -> Option<Vec<Cell>> {
        let n = self.config.height * self.config.width;
        let mut prev = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        let start = self.idx(from);
        prev[start] = start;
        queue.push_back(from);
        while let Some(c) = queue.pop_front() {
            if c == to {
                let mut path = vec![c];
                let mut i = self.idx(c);
                while i != start {
                    i = prev[i];
                    path.push((i / self.config.width, i % self.config.width));
                }
                path.reverse();
                return Some(path);
            }
            for nb in self.neighbours(c) {
                let j = self.idx(nb);
                if prev[j] == usize::MAX && !self.state.walls[j] {
                    prev[j] = self.idx(c);
                    queue.push_back(nb);
                }
            }
        }
        None
    }

    pub fn reset(&mut self, seed: u64) -> (MazeState, Tensor) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (self.config.height, self.config.width);
        let (start, goal) = (self.start_cell(), self.goal_cell());
        self.state = MazeState {
            agent: start,
            goal,
            walls: vec![false; h * w],
            hazards: vec![false; h * w],
            timer: 1.0,
            energy: 1.0,
            cost_multiplier: 1.0,
            deadline: self.config.initial_deadline,
            t: 0,
            done: false,
        };
        loop {
            for i in 0..h * w {
                self.state.walls[i] = self.rng.random::<f64>() < self.config.wall_density;
            }
            let (si, gi) = (self.idx(start), self.idx(goal));
            self.state.walls[si] = false;
            self.state.walls[gi] = false;
            if self.shortest_path(start, goal).is_some() {
                break;
            }
        }
        let mut placed = 0;
        let free = (0..h * w)
            .filter(|&i| !self.state.walls[i] && i != self.idx(start) && i != self.idx(goal))
            .count();
        while placed < self.config.initial_hazards.min(free) {
            let i = self.rng.random_range(0..h * w);
            if !self.state.walls[i]
                && !self.state.hazards[i]
                && i != self.idx(start)
                && i != self.idx(goal)
            {
                self.state.hazards[i] = true;
                placed += 1;
            }
        }
        self.events_fired = 0;
        self.schedule = EventSchedule::draw(
            self.config.events,
            EnvKind::Maze,
            self.config.horizon,
            &mut self.rng,
        );
        if self.config.events == EventMode::AtStart {
            for &kind in EventKind::for_env(EnvKind::Maze) {
                let _ = self.fire_event(kind);
            }
        }
        (self.state.clone(), self.render())
    }

    /// `[H, W, 3]`: cell codes, timer ratio, energy ratio.
    pub fn render(&self) -> Tensor {
        let (h, w) = (self.config.height, self.config.width);
        let s = &self.state;
        let mut data = Vec::with_capacity(h * w * 3);
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let code = if (r, c) == s.agent {
                    CODE_AGENT
                } else if s.walls[i] {
                    CODE_WALL
                } else if (r, c) == s.goal {
                    CODE_GOAL
                } else if s.hazards[i] {
                    CODE_HAZARD
                } else {
                    CODE_FREE
                };
                data.extend_from_slice(&[code, s.timer, s.energy]);
            }
        }
        Tensor::from_parts(vec![h, w, 3], data)
    }

    pub fn fire_event(&mut self, kind: EventKind) -> Result<EventRecord> {
        if kind.env() != EnvKind::Maze {
            return Err(DpiError::usage(format!(
                "event {} does not apply to the maze",
                kind.name()
            )));
        }
        let params = match kind {
            EventKind::DeadlineShock => {
                let before = self.state.deadline;
                let after = ((before as f64 * self.config.deadline_shock).floor() as usize).max(1);
                self.state.deadline = after;
                self.state.timer =
                    (after as f64 / self.config.initial_deadline as f64).clamp(0.0, 1.0);
                vec![
                    ("before".to_string(), before as f64),
                    ("after".to_string(), after as f64),
                ]
            }
            EventKind::HazardSurge => {
                let path = self
                    .shortest_path(self.state.agent, self.state.goal)
                    .unwrap_or_else(|| vec![self.state.agent]);
                // Prefer an interior path cell so the region lies ahead of the agent.
                let centre = if path.len() > 2 {
                    path[self.rng.random_range(1..path.len() - 1)]
                } else {
                    path[path.len() - 1]
                };
                let rad = self.config.surge_radius as isize;
                let mut added = 0.0;
                for dr in -rad..=rad {
                    for dc in -rad..=rad {
                        let (r, c) = (centre.0 as isize + dr, centre.1 as isize + dc);
                        if r < 0
                            || c < 0
                            || r >= self.config.height as isize
                            || c >= self.config.width as isize
                        {
                            continue;
                        }
                        let cell = (r as usize, c as usize);
                        let i = self.idx(cell);
                        if !self.state.walls[i] && cell != self.state.goal && !self.state.hazards[i]
                        {
                            self.state.hazards[i] = true;
                            added += 1.0;
                        }
                    }
                }
                vec![
                    ("row".to_string(), centre.0 as f64),
                    ("col".to_string(), centre.1 as f64),
                    ("added".to_string(), added),
                ]
            }
            EventKind::EnergyDrought => {
                self.state.cost_multiplier *= self.config.drought_factor;
                vec![("multiplier".to_string(), self.state.cost_multiplier)]
            }
            _ => unreachable!(),
        };
        self.events_fired += 1;
        Ok(EventRecord {
            kind,
            step: self.state.t,
            params,
        })
    }

    pub fn step(&mut self, action: MazeAction) -> Result<StepOutcome> {
        if self.state.done {
            return Err(DpiError::usage("maze step after episode end"));
        }
        let c = self.config.clone();
        let mut r = [0.0; 5];
        let here = self.state.agent;
        let (dr, dc) = action.delta();
        let (nr, nc) = (here.0 as isize + dr, here.1 as isize + dc);
        let inside = nr >= 0 && nc >= 0 && nr < c.height as isize && nc < c.width as isize;
        let next = if inside && !self.is_wall((nr as usize, nc as usize)) {
            (nr as usize, nc as usize)
        } else {
            here
        };
        if manhattan(next, self.state.goal) < manhattan(here, self.state.goal) {
            r[component::PROGRESS] = 1.0;
        }
        r[component::TIME] = -1.0;
        if next != here && self.is_hazard(next) {
            r[component::PENALTY] = -c.hazard_penalty;
        }
        let s = &mut self.state;
        let in_time = s.deadline > 0;
        let cost = c.step_energy * s.cost_multiplier;
        r[component::ENERGY] = -c.energy_coef * s.cost_multiplier;
        s.energy = (s.energy - cost).max(0.0);
        s.agent = next;
        s.deadline = s.deadline.saturating_sub(1);
        s.timer = (s.deadline as f64 / c.initial_deadline as f64).clamp(0.0, 1.0);
        s.t += 1;

        let mut success = false;
        let mut truncated = false;
        if s.agent == s.goal {
            s.done = true;
            // Arriving on the last step of the budget still counts.
            if in_time {
                success = true;
                r[component::DEADLINE] = c.deadline_bonus;
            }
        } else if s.energy <= 0.0 {
            s.done = true;
        } else if s.t >= c.horizon {
            truncated = true;
            s.done = true;
        }

        let mut events = Vec::new();
        if !self.state.done {
            let t = self.state.t - 1;
            for kind in self.schedule.take_due(t) {
                let mut rec = self.fire_event(kind)?;
                rec.step = t;
                events.push(rec);
            }
        }
        Ok(StepOutcome {
            observation: self.render(),
            reward: VectorReward(r),
            done: self.state.done && !truncated,
            truncated,
            success,
            events,
        })
    }
}

impl Environment for MazeEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::Maze
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn observation_shape(&self) -> Vec<usize> {
        vec![self.config.height, self.config.width, 3]
    }

    fn reset_episode(&mut self, seed: u64) -> Tensor {
        self.reset(seed).1
    }

    fn step_action(&mut self, action: usize) -> Result<StepOutcome> {
        self.step(MazeAction::from_index(action)?)
    }

    fn observation(&self) -> Tensor {
        self.render()
    }

    fn privileged(&self) -> PrivilegedInfo {
        let s = &self.state;
        let (h, w) = (self.config.height as isize, self.config.width as isize);
        let (mut cells, mut hot) = (0.0, 0.0);
        for dr in -2..=2isize {
            for dc in -2..=2isize {
                let (r, c) = (s.agent.0 as isize + dr, s.agent.1 as isize + dc);
                if r >= 0 && c >= 0 && r < h && c < w {
                    cells += 1.0;
                    if s.hazards[(r * w + c) as usize] {
                        hot += 1.0;
                    }
                }
            }
        }
        let start = manhattan(self.start_cell(), s.goal).max(1) as f64;
        PrivilegedInfo {
            deadline_ratio: s.timer,
            energy_ratio: s.energy,
            hazard_intensity: hot / cells,
            backlog_ratio: (manhattan(s.agent, s.goal) as f64 / start).min(1.0),
            events_fired: self.events_fired,
        }
    }

    fn summary(&self) -> serde_json::Value {
        let s = &self.state;
        serde_json::json!({
            "row": s.agent.0,
            "col": s.agent.1,
            "timer": s.timer,
            "energy": s.energy,
            "deadline": s.deadline,
            "cost_multiplier": s.cost_multiplier,
        })
    }

    fn elapsed(&self) -> usize {
        self.state.t
    }

    fn set_event_mode(&mut self, mode: EventMode) {
        self.config.events = mode;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> MazeConfig {
        MazeConfig {
            events: EventMode::Disabled,
            ..MazeConfig::default()
        }
    }

    fn open() -> MazeEnv {
        let mut env = MazeEnv::new(MazeConfig {
            wall_density: 0.0,
            initial_hazards: 0,
            ..quiet()
        })
        .unwrap();
        env.reset(0);
        env
    }

    #[test]
    fn reset_places_agent_bottom_left() {
        let mut env = MazeEnv::new(MazeConfig::default()).unwrap();
        for seed in 0..50 {
            let (s, _) = env.reset(seed);
            assert_eq!(s.agent, (11, 0));
            assert_eq!(s.goal, (0, 11));
            assert_eq!((s.timer, s.energy), (1.0, 1.0));
            assert!(env.shortest_path(s.agent, s.goal).is_some());
        }
    }

    #[test]
    fn same_seed_same_layout() {
        let mut a = MazeEnv::new(MazeConfig::default()).unwrap();
        let mut b = MazeEnv::new(MazeConfig::default()).unwrap();
        assert_eq!(a.reset(9).0, b.reset(9).0);
        assert_ne!(a.reset(9).0.walls, b.reset(10).0.walls);
    }

    #[test]
    fn move_toward_goal_rewards_progress() {
        let mut env = open();
        let out = env.step(MazeAction::Up).unwrap();
        assert_eq!(out.reward.0[component::PROGRESS], 1.0);
        assert_eq!(out.reward.0[component::TIME], -1.0);
        assert_eq!(out.reward.0[component::PENALTY], 0.0);
        assert!(out.reward.0[component::ENERGY] < 0.0);
    }

    #[test]
    fn blocked_move_stays_put() {
        let mut env = open();
        let out = env.step(MazeAction::Left).unwrap();
        assert_eq!(env.state().agent, (11, 0));
        assert_eq!(out.reward.0[component::PROGRESS], 0.0);
        assert_eq!(out.reward.0[component::TIME], -1.0);
        let i = env.idx((10, 0));
        env.state.walls[i] = true;
        env.step(MazeAction::Up).unwrap();
        assert_eq!(env.state().agent, (11, 0));
    }

    #[test]
    fn hazard_cell_costs_kappa() {
        let mut env = open();
        let i = env.idx((11, 1));
        env.state.hazards[i] = true;
        let out = env.step(MazeAction::Right).unwrap();
        assert_eq!(out.reward.0[component::PENALTY], -2.0);
    }

    #[test]
    fn deadline_shock_shortens_by_thirty_percent() {
        let mut env = open();
        env.state.deadline = 100;
        let rec = env.fire_event(EventKind::DeadlineShock).unwrap();
        assert_eq!(env.state().deadline, 70);
        assert_eq!(rec.kind, EventKind::DeadlineShock);
        env.state.deadline = 1;
        env.fire_event(EventKind::DeadlineShock).unwrap();
        assert_eq!(env.state().deadline, 1);
    }

    #[test]
    fn drought_doubles_cost() {
        let mut env = open();
        let before = env.step(MazeAction::Up).unwrap().reward.0[component::ENERGY];
        env.fire_event(EventKind::EnergyDrought).unwrap();
        assert_eq!(env.state().cost_multiplier, 2.0);
        let after = env.step(MazeAction::Up).unwrap().reward.0[component::ENERGY];
        assert!((after - 2.0 * before).abs() < 1e-15);
    }

    #[test]
    fn hazard_surge_hits_shortest_path() {
        let mut env = MazeEnv::new(quiet()).unwrap();
        for seed in 0..30 {
            env.reset(seed);
            let path = env
                .shortest_path(env.state().agent, env.state().goal)
                .unwrap();
            let rec = env.fire_event(EventKind::HazardSurge).unwrap();
            let centre = (rec.params[0].1 as usize, rec.params[1].1 as usize);
            assert!(path.contains(&centre));
            assert!(env.is_hazard(centre) || centre == env.state().goal);
        }
        assert!(matches!(
            env.fire_event(EventKind::EnergyShock),
            Err(DpiError::Usage(_))
        ));
    }

    #[test]
    fn render_codes_and_ratios() {
        let mut env = MazeEnv::new(quiet()).unwrap();
        env.reset(1);
        env.state.timer = 0.5;
        env.state.energy = 0.0;
        let obs = env.render();
        assert_eq!(obs.shape(), &[12, 12, 3]);
        let d = obs.data();
        let agents = d.chunks(3).filter(|p| p[0] == CODE_AGENT).count();
        assert_eq!(agents, 1);
        assert!(d.chunks(3).all(|p| p[1] == 0.5 && p[2] == 0.0));
        let goal = env.idx(env.state().goal);
        assert_eq!(d[goal * 3], CODE_GOAL);
    }

    #[test]
    fn goal_before_deadline_succeeds_and_horizon_truncates() {
        let mut env = open();
        let mut out = None;
        for _ in 0..11 {
            out = Some(env.step(MazeAction::Up).unwrap());
        }
        for _ in 0..11 {
            out = Some(env.step(MazeAction::Right).unwrap());
        }
        let out = out.unwrap();
        assert!(out.done && out.success && !out.truncated);
        assert_eq!(out.reward.0[component::DEADLINE], 10.0);

        let mut env = MazeEnv::new(MazeConfig {
            wall_density: 0.0,
            initial_hazards: 0,
            step_energy: 0.0,
            ..quiet()
        })
        .unwrap();
        env.reset(0);
        let mut steps = 0;
        loop {
            let out = env.step(MazeAction::Left).unwrap();
            steps += 1;
            if out.finished() {
                assert!(out.truncated && !out.done && !out.success);
                break;
            }
        }
        assert_eq!(steps, 200);
    }

    #[test]
    fn energy_strictly_decreases_while_moving() {
        let mut env = MazeEnv::new(MazeConfig::default()).unwrap();
        env.reset(4);
        let mut prev = env.state().energy;
        for k in 0..40 {
            let out = env.step(MazeAction::from_index(k % 4).unwrap()).unwrap();
            assert!(env.state().energy < prev);
            assert!(out.reward.is_finite());
            prev = env.state().energy;
            if out.finished() {
                break;
            }
        }
    }
}
