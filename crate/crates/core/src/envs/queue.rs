//! Symbolic queue: wait in line or cut ahead, under energy and deadline
//! pressure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::events::{EventKind, EventMode, EventRecord, EventSchedule};
use super::{component, EnvKind, Environment, PrivilegedInfo, StepOutcome, VectorReward};
use crate::diffmath::Tensor;
use crate::error::{DpiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueueAction {
    Wait = 0,
    Cut = 1,
}

impl QueueAction {
    pub fn from_index(a: usize) -> Result<Self> {
        match a {
            0 => Ok(QueueAction::Wait),
            1 => Ok(QueueAction::Cut),
            _ => Err(DpiError::usage(format!("queue action {a} out of range"))),
        }
    }
}

/// Environment constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueConfig {
    /// Positions gained by one CUT.
    pub cut_jump: usize,
    /// Fairness penalty per CUT.
    pub fairness_penalty: f64,
    /// Energy reward coefficient per unit of energy spent.
    pub energy_coef: f64,
    /// Bonus for being served before the deadline.
    pub deadline_bonus: f64,
    pub initial_ahead: (usize, usize),
    pub initial_deadline: (usize, usize),
    pub initial_energy: f64,
    pub service_rate: (f64, f64),
    /// Energy spent by every step.
    pub step_energy: f64,
    /// Extra energy spent by a CUT.
    pub cut_energy: f64,
    /// People inserted ahead of the agent by an arrival burst.
    pub burst_size: usize,
    /// Service-rate multiplier applied by a slowdown.
    pub slowdown_factor: f64,
    /// Fraction of remaining energy removed by an energy shock.
    pub shock_fraction: f64,
    /// Normalizers for the observation.
    pub ahead_scale: f64,
    pub deadline_scale: f64,
    pub events: EventMode,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            cut_jump: 3,
            fairness_penalty: 2.0,
            energy_coef: 0.1,
            deadline_bonus: 10.0,
            initial_ahead: (10, 16),
            initial_deadline: (16, 22),
            initial_energy: 25.0,
            service_rate: (0.6, 0.9),
            step_energy: 1.0,
            cut_energy: 4.0,
            burst_size: 5,
            slowdown_factor: 0.5,
            shock_fraction: 0.4,
            ahead_scale: 20.0,
            deadline_scale: 30.0,
            events: EventMode::default(),
        }
    }
}

impl QueueConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DpiError::config(format!("queue: {m}")));
        if self.cut_jump == 0 {
            return bad("cut_jump must be positive");
        }
        if self.initial_ahead.0 > self.initial_ahead.1
            || self.initial_deadline.0 > self.initial_deadline.1
        {
            return bad("initial ranges must be ordered (lo, hi)");
        }
        if self.initial_deadline.0 == 0 {
            return bad("initial deadline must be positive");
        }
        let (lo, hi) = self.service_rate;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("service_rate must satisfy 0 < lo <= hi <= 1");
        }
        if !(0.0..=1.0).contains(&self.slowdown_factor)
            || !(0.0..=1.0).contains(&self.shock_fraction)
        {
            return bad("slowdown_factor and shock_fraction must be in [0, 1]");
        }
        if self.initial_energy <= 0.0 || self.step_energy < 0.0 || self.cut_energy < 0.0 {
            return bad("energies must be non-negative and initial energy positive");
        }
        if self.ahead_scale <= 0.0 || self.deadline_scale <= 0.0 {
            return bad("observation scales must be positive");
        }
        if let EventMode::Random { prob, lo, hi } = self.events {
            if !(0.0..=1.0).contains(&prob) || !(0.0..=1.0).contains(&lo) || lo > hi || hi > 1.0 {
                return bad("event window must satisfy 0 <= lo <= hi <= 1 and prob in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    /// People still ahead of the agent; 0 means at the front.
    pub queue_len: usize,
    /// Largest queue length seen this episode, used to normalize `pos`.
    pub queue_ref: usize,
    pub energy: f64,
    pub deadline: usize,
    pub recent_cut: bool,
    pub service_rate: f64,
    pub served: bool,
    pub t: usize,
    pub done: bool,
}

impl QueueState {
    /// Position in `[0, 1]`; 0 is the front.
    pub fn pos(&self) -> f64 {
        if self.queue_ref == 0 {
            0.0
        } else {
            (self.queue_len as f64 / self.queue_ref as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct QueueEnv {
    pub config: QueueConfig,
    state: QueueState,
    initial_deadline: usize,
    initial_energy: f64,
    schedule: EventSchedule,
    events_fired: usize,
    rng: ChaCha8Rng,
}

impl QueueEnv {
    pub fn new(config: QueueConfig) -> Result<Self> {
        config.validate()?;
        let mut env = QueueEnv {
            state: QueueState {
                queue_len: 0,
                queue_ref: 0,
                energy: 0.0,
                deadline: 0,
                recent_cut: false,
                service_rate: 1.0,
                served: false,
                t: 0,
                done: true,
            },
            initial_deadline: 1,
            initial_energy: config.initial_energy,
            schedule: EventSchedule::default(),
            events_fired: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            config,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn state(&self) -> &QueueState {
        &self.state
    }

    pub fn schedule(&self) -> &EventSchedule {
        &self.schedule
    }

    /// Replaces the pending events of the current episode.
    pub fn set_schedule(&mut self, schedule: EventSchedule) {
        self.schedule = schedule;
    }

    pub fn reset(&mut self, seed: u64) -> (QueueState, Tensor) {
        let c = &self.config;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let queue_len = self.rng.random_range(c.initial_ahead.0..=c.initial_ahead.1);
        let deadline = self
            .rng
            .random_range(c.initial_deadline.0..=c.initial_deadline.1);
        let (lo, hi) = c.service_rate;
        let service_rate = if hi > lo {
            self.rng.random_range(lo..hi)
        } else {
            lo
        };
        self.state = QueueState {
            queue_len,
            queue_ref: queue_len.max(1),
            energy: c.initial_energy,
            deadline,
            recent_cut: false,
            service_rate,
            served: false,
            t: 0,
            done: false,
        };
        self.initial_deadline = deadline;
        self.initial_energy = c.initial_energy;
        self.events_fired = 0;
        self.schedule = EventSchedule::draw(c.events, EnvKind::Queue, deadline, &mut self.rng);
        if c.events == EventMode::AtStart {
            for &kind in EventKind::for_env(EnvKind::Queue) {
                // Cannot fail: kinds come from the queue list.
                let _ = self.fire_event(kind);
            }
        }
        (self.state.clone(), self.observe())
    }

    pub fn observe(&self) -> Tensor {
        let s = &self.state;
        let c = &self.config;
        Tensor::row(&[
            s.pos(),
            s.queue_len as f64 / c.ahead_scale,
            (s.energy / self.initial_energy).clamp(0.0, 1.0),
            s.deadline as f64 / c.deadline_scale,
            if s.recent_cut { 1.0 } else { 0.0 },
            s.service_rate,
        ])
    }

    /// Applies `kind` immediately.
    pub fn fire_event(&mut self, kind: EventKind) -> Result<EventRecord> {
        if kind.env() != EnvKind::Queue {
            return Err(DpiError::usage(format!(
                "event {} does not apply to the queue",
                kind.name()
            )));
        }
        let c = &self.config;
        let s = &mut self.state;
        let params = match kind {
            EventKind::ArrivalBurst => {
                s.queue_len += c.burst_size;
                s.queue_ref = s.queue_ref.max(s.queue_len);
                vec![
                    ("added".to_string(), c.burst_size as f64),
                    ("queue_len".to_string(), s.queue_len as f64),
                ]
            }
            EventKind::ServiceSlowdown => {
                s.service_rate *= c.slowdown_factor;
                vec![
                    ("factor".to_string(), c.slowdown_factor),
                    ("service_rate".to_string(), s.service_rate),
                ]
            }
            EventKind::EnergyShock => {
                let lost = s.energy * c.shock_fraction;
                s.energy -= lost;
                vec![("lost".to_string(), lost), ("energy".to_string(), s.energy)]
            }
            _ => unreachable!(),
        };
        self.events_fired += 1;
        Ok(EventRecord {
            kind,
            step: s.t,
            params,
        })
    }

    pub fn step(&mut self, action: QueueAction) -> Result<StepOutcome> {
        if self.state.done {
            return Err(DpiError::usage("queue step after episode end"));
        }
        let c = self.config.clone();
        let mut r = [0.0; 5];
        let mut spent = c.step_energy;
        // The service draw is made on every step so that CUT and WAIT
        // consume the stream identically.
        let serviced = self.rng.random::<f64>() < self.state.service_rate;
        let s = &mut self.state;
        match action {
            QueueAction::Wait => {
                s.recent_cut = false;
                r[component::TIME] = -1.0;
                if serviced {
                    r[component::PROGRESS] = 1.0;
                    if s.queue_len == 0 {
                        s.served = true;
                    } else {
                        s.queue_len -= 1;
                    }
                }
            }
            QueueAction::Cut => {
                s.recent_cut = true;
                spent += c.cut_energy;
                r[component::PENALTY] = -c.fairness_penalty;
                let jumped = s.queue_len.min(c.cut_jump);
                // One unit per position gained.
                r[component::PROGRESS] = jumped as f64;
                s.queue_len -= jumped;
            }
        }
        let spent = spent.min(s.energy);
        s.energy -= spent;
        r[component::ENERGY] = -c.energy_coef * spent;
        s.deadline = s.deadline.saturating_sub(1);
        s.t += 1;

        let mut success = false;
        if s.served {
            s.done = true;
            // The deadline counts the step on which service happens.
            if s.energy > 0.0 {
                success = true;
                r[component::DEADLINE] = c.deadline_bonus;
            }
        } else if s.energy <= 0.0 || s.deadline == 0 {
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
            if self.state.energy <= 0.0 {
                self.state.done = true;
            }
        }
        let reward = VectorReward(r);
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            done: self.state.done,
            truncated: false,
            success,
            events,
        })
    }

    pub fn initial_deadline(&self) -> usize {
        self.initial_deadline
    }
}

impl Environment for QueueEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::Queue
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn observation_shape(&self) -> Vec<usize> {
        vec![1, 6]
    }

    fn reset_episode(&mut self, seed: u64) -> Tensor {
        self.reset(seed).1
    }

    fn step_action(&mut self, action: usize) -> Result<StepOutcome> {
        self.step(QueueAction::from_index(action)?)
    }

    fn observation(&self) -> Tensor {
        self.observe()
    }

    fn privileged(&self) -> PrivilegedInfo {
        let s = &self.state;
        PrivilegedInfo {
            deadline_ratio: (s.deadline as f64 / self.initial_deadline as f64).clamp(0.0, 1.0),
            energy_ratio: (s.energy / self.initial_energy).clamp(0.0, 1.0),
            hazard_intensity: 0.0,
            backlog_ratio: s.pos(),
            events_fired: self.events_fired,
        }
    }

    fn summary(&self) -> serde_json::Value {
        let s = &self.state;
        serde_json::json!({
            "pos": s.pos(),
            "queue_len": s.queue_len,
            "energy": s.energy,
            "deadline": s.deadline,
            "recent_cut": s.recent_cut,
            "service_rate": s.service_rate,
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

    fn quiet() -> QueueConfig {
        QueueConfig {
            events: EventMode::Disabled,
            ..QueueConfig::default()
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = QueueEnv::new(QueueConfig::default()).unwrap();
        let mut b = a.clone();
        assert_eq!(a.reset(42), b.reset(42));
        assert_eq!(a.schedule(), b.schedule());
        assert!(!a.state().recent_cut);
    }

    #[test]
    fn reset_sweep_respects_invariants() {
        let mut env = QueueEnv::new(QueueConfig::default()).unwrap();
        for seed in 0..1000 {
            let (s, obs) = env.reset(seed);
            assert!((0.0..=1.0).contains(&s.pos()));
            assert!(s.energy >= 0.0);
            assert!(!s.recent_cut);
            assert!(s.service_rate > 0.0 && s.service_rate <= 1.0);
            assert!(obs.all_finite());
        }
    }

    #[test]
    fn wait_without_service_costs_time_only() {
        let mut env = QueueEnv::new(quiet()).unwrap();
        env.reset(1);
        env.state.service_rate = 0.0;
        let out = env.step(QueueAction::Wait).unwrap();
        assert_eq!(out.reward.0[component::TIME], -1.0);
        assert_eq!(out.reward.0[component::PROGRESS], 0.0);
        assert_eq!(out.reward.0[component::PENALTY], 0.0);
    }

    #[test]
    fn cut_charges_fairness_and_sets_flag() {
        let mut env = QueueEnv::new(quiet()).unwrap();
        env.reset(2);
        let before = env.state().queue_len;
        let out = env.step(QueueAction::Cut).unwrap();
        assert_eq!(out.reward.0[component::PENALTY], -2.0);
        assert!(env.state().recent_cut);
        assert_eq!(env.state().queue_len, before - 3);
        let spent = env.config.step_energy + env.config.cut_energy;
        assert!((out.reward.0[component::ENERGY] + 0.1 * spent).abs() < 1e-12);
    }

    #[test]
    fn cut_is_capped_at_front() {
        let mut env = QueueEnv::new(quiet()).unwrap();
        env.reset(3);
        env.state.queue_len = 1;
        env.step(QueueAction::Cut).unwrap();
        assert_eq!(env.state().queue_len, 0);
    }

    #[test]
    fn served_at_front_earns_bonus() {
        let mut env = QueueEnv::new(quiet()).unwrap();
        env.reset(4);
        env.state.queue_len = 0;
        env.state.service_rate = 1.0;
        let out = env.step(QueueAction::Wait).unwrap();
        assert!(out.done && out.success);
        assert_eq!(out.reward.0[component::DEADLINE], 10.0);
        assert_eq!(out.reward.0[component::PROGRESS], 1.0);
        assert!(matches!(
            env.step(QueueAction::Wait),
            Err(DpiError::Usage(_))
        ));
    }

    #[test]
    fn deadline_expiry_fails() {
        let mut env = QueueEnv::new(quiet()).unwrap();
        env.reset(5);
        env.state.service_rate = 0.0;
        let mut last = None;
        while !env.state().done {
            last = Some(env.step(QueueAction::Wait).unwrap());
        }
        let out = last.unwrap();
        assert!(out.done && !out.success);
        assert_eq!(out.reward.0[component::DEADLINE], 0.0);
    }

    #[test]
    fn events_apply_their_effects() {
        let mut env = QueueEnv::new(quiet()).unwrap();
        env.reset(6);
        let (q, r, e) = (
            env.state().queue_len,
            env.state().service_rate,
            env.state().energy,
        );
        env.fire_event(EventKind::ArrivalBurst).unwrap();
        env.fire_event(EventKind::ServiceSlowdown).unwrap();
        env.fire_event(EventKind::EnergyShock).unwrap();
        assert_eq!(env.state().queue_len, q + 5);
        assert!((env.state().service_rate - 0.5 * r).abs() < 1e-15);
        assert!((env.state().energy - 0.6 * e).abs() < 1e-12);
        assert!(matches!(
            env.fire_event(EventKind::HazardSurge),
            Err(DpiError::Usage(_))
        ));
    }

    #[test]
    fn simultaneous_events_are_all_reported() {
        let mut env = QueueEnv::new(quiet()).unwrap();
        env.reset(7);
        env.set_schedule(EventSchedule::from_steps(vec![
            (0, EventKind::ArrivalBurst),
            (0, EventKind::EnergyShock),
        ]));
        let out = env.step(QueueAction::Wait).unwrap();
        let kinds: Vec<_> = out.events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventKind::ArrivalBurst, EventKind::EnergyShock]);
        assert!(out.events.iter().all(|e| e.step == 0));
    }

    #[test]
    fn energy_never_increases() {
        let mut env = QueueEnv::new(QueueConfig::default()).unwrap();
        for seed in 0..50 {
            env.reset(seed);
            let mut prev = env.state().energy;
            let mut i = 0;
            while !env.state().done {
                let a = if (seed + i) % 3 == 0 {
                    QueueAction::Cut
                } else {
                    QueueAction::Wait
                };
                let out = env.step(a).unwrap();
                assert!(env.state().energy <= prev);
                assert!(out.reward.0[component::PROGRESS] >= 0.0);
                assert!(out.reward.0[component::TIME] <= 0.0);
                assert!(out.reward.0[component::PENALTY] <= 0.0);
                assert!(out.reward.0[component::ENERGY] <= 0.0);
                assert!(out.reward.0[component::DEADLINE] >= 0.0);
                assert!(!out.success || out.done);
                prev = env.state().energy;
                i += 1;
            }
        }
    }
}
