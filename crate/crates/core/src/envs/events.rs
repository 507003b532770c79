use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EnvKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ArrivalBurst,
    ServiceSlowdown,
    EnergyShock,
    DeadlineShock,
    HazardSurge,
    EnergyDrought,
}

impl EventKind {
    pub fn env(self) -> EnvKind {
        match self {
            EventKind::ArrivalBurst | EventKind::ServiceSlowdown | EventKind::EnergyShock => {
                EnvKind::Queue
            }
            EventKind::DeadlineShock | EventKind::HazardSurge | EventKind::EnergyDrought => {
                EnvKind::Maze
            }
        }
    }

    pub fn for_env(env: EnvKind) -> &'static [EventKind] {
        match env {
            EnvKind::Queue => &[
                EventKind::ArrivalBurst,
                EventKind::ServiceSlowdown,
                EventKind::EnergyShock,
            ],
            EnvKind::Maze => &[
                EventKind::DeadlineShock,
                EventKind::HazardSurge,
                EventKind::EnergyDrought,
            ],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EventKind::ArrivalBurst => "arrival_burst",
            EventKind::ServiceSlowdown => "service_slowdown",
            EventKind::EnergyShock => "energy_shock",
            EventKind::DeadlineShock => "deadline_shock",
            EventKind::HazardSurge => "hazard_surge",
            EventKind::EnergyDrought => "energy_drought",
        }
    }
}

/// An event that fired, with the parameters it applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub kind: EventKind,
    /// Index of the step at whose end the event was applied.
    pub step: usize,
    pub params: Vec<(String, f64)>,
}

/// How events are scheduled when an episode starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EventMode {
    /// Each kind fires at most once, with probability `prob`, at a step drawn
    /// uniformly from `[lo·T, hi·T]`.
    Random {
        prob: f64,
        lo: f64,
        hi: f64,
    },
    Disabled,
    /// Every kind fires at reset, before the first action.
    AtStart,
}

impl Default for EventMode {
    fn default() -> Self {
        EventMode::Random {
            prob: 0.7,
            lo: 0.2,
            hi: 0.8,
        }
    }
}

/// Pending events for the current episode, sorted by step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventSchedule {
    pending: Vec<(usize, EventKind)>,
}

impl EventSchedule {
    pub fn draw<R: Rng + ?Sized>(
        mode: EventMode,
        env: EnvKind,
        horizon: usize,
        rng: &mut R,
    ) -> Self {
        let mut pending = Vec::new();
        if let EventMode::Random { prob, lo, hi } = mode {
            let first = ((lo * horizon as f64).ceil() as u64).max(1);
            let last = ((hi * horizon as f64).floor() as u64).max(first);
            for &kind in EventKind::for_env(env) {
                // Both draws are always made so the stream position does not
                // depend on the outcome of the coin.
                let coin: f64 = rng.random();
                let step = rng.random_range(first..=last) as usize;
                if coin < prob {
                    pending.push((step, kind));
                }
            }
        }
        pending.sort();
        EventSchedule { pending }
    }

    pub fn from_steps(mut pending: Vec<(usize, EventKind)>) -> Self {
        pending.sort();
        EventSchedule { pending }
    }

    /// Removes and returns the kinds due at `step`.
    pub fn take_due(&mut self, step: usize) -> Vec<EventKind> {
        let mut due = Vec::new();
        self.pending.retain(|&(s, k)| {
            if s == step {
                due.push(k);
                false
            } else {
                true
            }
        });
        due
    }

    pub fn pending(&self) -> &[(usize, EventKind)] {
        &self.pending
    }
}
