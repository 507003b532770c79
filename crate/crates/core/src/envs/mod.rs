//! Queue and Maze environments with vector rewards and event-driven
//! non-stationarity.
//!
//! Both environments are plain values: cloning one clones its random stream,
//! so a clone replays exactly the same future for the same actions.

mod events;
mod maze;
mod queue;
mod trajectory;

use serde::{Deserialize, Serialize};

use crate::diffmath::Tensor;
use crate::error::Result;

pub use events::{EventKind, EventMode, EventRecord, EventSchedule};
pub use maze::{
    Cell, MazeAction, MazeConfig, MazeEnv, MazeState, CODE_AGENT, CODE_FREE, CODE_GOAL,
    CODE_HAZARD, CODE_WALL,
};
pub use queue::{QueueAction, QueueConfig, QueueEnv, QueueState};
pub use trajectory::{write_trajectory, TrajectoryRecord};

/// Number of reward objectives in both environments.
pub const REWARD_DIM: usize = 5;

/// Per-step reward vector.
///
/// Queue: `[progress, time, fairness, energy, deadline]`;
/// Maze: `[progress, time, hazard, energy, deadline]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VectorReward(pub [f64; REWARD_DIM]);

impl VectorReward {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scalarize(&self, weights: &[f64]) -> f64 {
        crate::diffmath::dot(&self.0, weights)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

pub mod component {
    pub const PROGRESS: usize = 0;
    pub const TIME: usize = 1;
    /// Fairness in Queue, hazard in Maze.
    pub const PENALTY: usize = 2;
    pub const ENERGY: usize = 3;
    pub const DEADLINE: usize = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Queue,
    Maze,
}

/// Result of one environment transition.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Tensor,
    pub reward: VectorReward,
    /// Terminal: the task ended (served, goal, depletion or deadline expiry).
    pub done: bool,
    /// Cut off by the step horizon without a terminal condition.
    pub truncated: bool,
    pub success: bool,
    pub events: Vec<EventRecord>,
}

impl StepOutcome {
    pub fn finished(&self) -> bool {
        self.done || self.truncated
    }
}

/// Signals that only the dense-oracle baseline is allowed to read.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrivilegedInfo {
    /// Remaining deadline over its initial value, in `[0, 1]`.
    pub deadline_ratio: f64,
    /// Remaining energy over its initial value, in `[0, 1]`.
    pub energy_ratio: f64,
    /// Local hazard density around the agent (Maze), in `[0, 1]`.
    pub hazard_intensity: f64,
    /// Remaining work relative to the start (Queue: people ahead).
    pub backlog_ratio: f64,
    /// Number of events that have fired so far.
    pub events_fired: usize,
}

/// Common interface the training harness drives.
pub trait Environment: Clone + Send + Sync {
    fn kind(&self) -> EnvKind;
    fn num_actions(&self) -> usize;
    fn observation_shape(&self) -> Vec<usize>;
    /// Starts a fresh episode from `seed` and returns the first observation.
    fn reset_episode(&mut self, seed: u64) -> Tensor;
    fn step_action(&mut self, action: usize) -> Result<StepOutcome>;
    fn observation(&self) -> Tensor;
    fn privileged(&self) -> PrivilegedInfo;
    /// Compact JSON summary of the state for trajectory dumps.
    fn summary(&self) -> serde_json::Value;
    /// Steps taken in the current episode.
    fn elapsed(&self) -> usize;
    fn set_event_mode(&mut self, mode: EventMode);
}
