//! Comparison agents. Most of them reuse the preference-conditioned
//! actor–critic and differ only in where `ω` comes from; see
//! [`PrefController`]. The scalar PPO variants and tabular Q-learning have
//! their own learners.

mod tabular;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvKind, EventKind, EventRecord, PrivilegedInfo, REWARD_DIM};
use crate::error::{DpiError, Result};

pub use tabular::{QueueDiscretizer, TabularQ, TabularQConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Dpi,
    Random,
    Fixed,
    Rs,
    Heuristic,
    Envelope,
    Oracle,
    MerPpo,
    SrPpo,
    Tabq,
}

impl AgentKind {
    pub const ALL: [AgentKind; 10] = [
        AgentKind::Dpi,
        AgentKind::Random,
        AgentKind::Fixed,
        AgentKind::Rs,
        AgentKind::Heuristic,
        AgentKind::Envelope,
        AgentKind::Oracle,
        AgentKind::MerPpo,
        AgentKind::SrPpo,
        AgentKind::Tabq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Dpi => "dpi",
            AgentKind::Random => "random",
            AgentKind::Fixed => "fixed",
            AgentKind::Rs => "rs",
            AgentKind::Heuristic => "heuristic",
            AgentKind::Envelope => "envelope",
            AgentKind::Oracle => "oracle",
            AgentKind::MerPpo => "mer-ppo",
            AgentKind::SrPpo => "sr-ppo",
            AgentKind::Tabq => "tabq",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DpiError::config(format!("unknown agent kind `{s}`")))
    }

    /// Trained with the preference-conditioned actor–critic.
    pub fn uses_pref_actor_critic(self) -> bool {
        matches!(
            self,
            AgentKind::Dpi
                | AgentKind::Fixed
                | AgentKind::Rs
                | AgentKind::Heuristic
                | AgentKind::Envelope
                | AgentKind::Oracle
        )
    }

    /// Infers preferences with the appraisal encoder.
    pub fn uses_appraisal(self) -> bool {
        matches!(self, AgentKind::Dpi | AgentKind::Tabq)
    }

    pub fn is_scalar_ppo(self) -> bool {
        matches!(self, AgentKind::MerPpo | AgentKind::SrPpo)
    }
}

/// Checks that `w` has `REWARD_DIM` non-negative entries summing to one.
pub fn validate_simplex(w: &[f64], what: &str) -> Result<()> {
    let ok = w.len() == REWARD_DIM
        && w.iter().all(|x| x.is_finite() && *x >= 0.0)
        && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
    if ok {
        Ok(())
    } else {
        Err(DpiError::config(format!(
            "{what} must be {REWARD_DIM} non-negative weights summing to 1, got {w:?}"
        )))
    }
}

/// Uniform draw from the simplex (Dirichlet with unit concentration).
pub fn sample_simplex<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn uniform_pref() -> Vec<f64> {
    vec![1.0 / REWARD_DIM as f64; REWARD_DIM]
}

/// Uniform random action.
pub fn random_action<R: Rng + ?Sized>(rng: &mut R, num_actions: usize) -> usize {
    rng.random_range(0..num_actions)
}

/// Event-to-preference table shared by the heuristic and rule-envelope agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    /// Preference before any event.
    pub initial: Vec<f64>,
    #[serde(default)]
    pub events: BTreeMap<EventKind, Vec<f64>>,
}

impl Schedule {
    pub fn queue_default() -> Self {
        Schedule {
            initial: vec![0.4, 0.1, 0.1, 0.1, 0.3],
            events: BTreeMap::from([
                // A longer line makes the deadline the binding constraint.
                (EventKind::ArrivalBurst, vec![0.35, 0.15, 0.05, 0.05, 0.4]),
                // Slower service makes every waiting step costlier.
                (EventKind::ServiceSlowdown, vec![0.3, 0.3, 0.05, 0.05, 0.3]),
                // Less energy left: conserve it.
                (EventKind::EnergyShock, vec![0.2, 0.1, 0.1, 0.4, 0.2]),
            ]),
        }
    }

    pub fn maze_default() -> Self {
        Schedule {
            initial: vec![0.4, 0.1, 0.1, 0.1, 0.3],
            events: BTreeMap::from([
                (EventKind::DeadlineShock, vec![0.3, 0.2, 0.05, 0.05, 0.4]),
                (EventKind::HazardSurge, vec![0.3, 0.1, 0.4, 0.05, 0.15]),
                (EventKind::EnergyDrought, vec![0.3, 0.1, 0.1, 0.4, 0.1]),
            ]),
        }
    }

    pub fn validate(&self, env: EnvKind) -> Result<()> {
        validate_simplex(&self.initial, "schedule.initial")?;
        for (kind, w) in &self.events {
            if kind.env() != env {
                return Err(DpiError::config(format!(
                    "schedule entry `{}` does not belong to this environment",
                    kind.name()
                )));
            }
            validate_simplex(w, &format!("schedule.{}", kind.name()))?;
        }
        Ok(())
    }

    /// Preference for an event, falling back to the initial entry.
    pub fn lookup(&self, kind: EventKind) -> &[f64] {
        self.events.get(&kind).map_or(&self.initial, |w| w)
    }
}

/// Hand-crafted rules of the dense oracle, all on privileged signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleRules {
    /// Weights before adjustment.
    pub base: Vec<f64>,
    /// Added to the deadline weight per unit of deadline ratio lost.
    pub deadline_slope: f64,
    /// Added to the penalty weight per unit of local hazard intensity.
    pub hazard_slope: f64,
    /// Energy weight is `energy_scale / max(energy_ratio, energy_floor)`.
    pub energy_scale: f64,
    pub energy_floor: f64,
}

impl Default for OracleRules {
    fn default() -> Self {
        OracleRules {
            base: vec![0.4, 0.1, 0.1, 0.1, 0.3],
            deadline_slope: 0.6,
            hazard_slope: 1.0,
            energy_scale: 0.05,
            energy_floor: 0.1,
        }
    }
}

impl OracleRules {
    pub fn validate(&self) -> Result<()> {
        validate_simplex(&self.base, "oracle.base")?;
        if self.deadline_slope < 0.0
            || self.hazard_slope < 0.0
            || self.energy_scale < 0.0
            || self.energy_floor <= 0.0
        {
            return Err(DpiError::config(
                "oracle slopes must be non-negative and energy_floor positive",
            ));
        }
        Ok(())
    }

    /// Deterministic preference from privileged signals.
    pub fn preference(&self, info: &PrivilegedInfo) -> Vec<f64> {
        use crate::envs::component::*;
        let mut w = self.base.clone();
        w[DEADLINE] += self.deadline_slope * (1.0 - info.deadline_ratio.clamp(0.0, 1.0));
        w[PENALTY] += self.hazard_slope * info.hazard_intensity.clamp(0.0, 1.0);
        w[ENERGY] = self.energy_scale / info.energy_ratio.clamp(0.0, 1.0).max(self.energy_floor);
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub fixed_omega: Vec<f64>,
    pub rs_period: usize,
    pub queue_schedule: Schedule,
    pub maze_schedule: Schedule,
    pub oracle: OracleRules,
    pub tabq: TabularQConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            fixed_omega: vec![0.4, 0.1, 0.1, 0.1, 0.3],
            rs_period: 10,
            queue_schedule: Schedule::queue_default(),
            maze_schedule: Schedule::maze_default(),
            oracle: OracleRules::default(),
            tabq: TabularQConfig::default(),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        validate_simplex(&self.fixed_omega, "baselines.fixed_omega")?;
        if self.rs_period == 0 {
            return Err(DpiError::config("baselines.rs_period must be positive"));
        }
        self.queue_schedule.validate(EnvKind::Queue)?;
        self.maze_schedule.validate(EnvKind::Maze)?;
        self.oracle.validate()?;
        self.tabq.validate()
    }

    pub fn schedule(&self, env: EnvKind) -> &Schedule {
        match env {
            EnvKind::Queue => &self.queue_schedule,
            EnvKind::Maze => &self.maze_schedule,
        }
    }
}

/// Supplies the candidate preferences of the non-inferential agents.
#[derive(Debug, Clone)]
pub enum PrefController {
    Fixed(Vec<f64>),
    RandomSwitch {
        period: usize,
        current: Vec<f64>,
    },
    Heuristic {
        schedule: Schedule,
        current: Vec<f64>,
    },
    RuleEnvelope {
        schedule: Schedule,
        active: Vec<Vec<f64>>,
        fired: Vec<EventKind>,
    },
    Oracle(OracleRules),
}

impl PrefController {
    pub fn for_agent(kind: AgentKind, env: EnvKind, cfg: &BaselineConfig) -> Option<Self> {
        let schedule = cfg.schedule(env).clone();
        match kind {
            AgentKind::Fixed => Some(PrefController::Fixed(cfg.fixed_omega.clone())),
            AgentKind::Rs => Some(PrefController::RandomSwitch {
                period: cfg.rs_period,
                current: uniform_pref(),
            }),
            AgentKind::Heuristic => Some(PrefController::Heuristic {
                current: schedule.initial.clone(),
                schedule,
            }),
            AgentKind::Envelope => Some(PrefController::RuleEnvelope {
                active: vec![schedule.initial.clone()],
                schedule,
                fired: Vec::new(),
            }),
            AgentKind::Oracle => Some(PrefController::Oracle(cfg.oracle.clone())),
            _ => None,
        }
    }

    pub fn begin_episode(&mut self) {
        match self {
            PrefController::Heuristic { schedule, current } => *current = schedule.initial.clone(),
            PrefController::RuleEnvelope {
                schedule,
                active,
                fired,
            } => {
                *active = vec![schedule.initial.clone()];
                fired.clear();
            }
            _ => {}
        }
    }

    /// Candidates for step `t` of the episode. A single candidate is used
    /// directly; several are resolved with the envelope operator.
    pub fn candidates<R: Rng + ?Sized>(
        &mut self,
        t: usize,
        info: &PrivilegedInfo,
        rng: &mut R,
    ) -> Vec<Vec<f64>> {
        match self {
            PrefController::Fixed(w) => vec![w.clone()],
            PrefController::RandomSwitch { period, current } => {
                if t % *period == 0 {
                    *current = sample_simplex(rng, REWARD_DIM);
                }
                vec![current.clone()]
            }
            PrefController::Heuristic { current, .. } => vec![current.clone()],
            PrefController::RuleEnvelope { active, .. } => active.clone(),
            PrefController::Oracle(rules) => vec![rules.preference(info)],
        }
    }

    pub fn observe_events(&mut self, events: &[EventRecord]) {
        for e in events {
            match self {
                PrefController::Heuristic { schedule, current } => {
                    *current = schedule.lookup(e.kind).to_vec();
                }
                PrefController::RuleEnvelope {
                    schedule,
                    active,
                    fired,
                } if !fired.contains(&e.kind) => {
                    fired.push(e.kind);
                    if let Some(w) = schedule.events.get(&e.kind) {
                        active.push(w.clone());
                    }
                }
                _ => {}
            }
        }
    }
}
