//! Transmission policies for controllable devices: ALOHA, fixed policies,
//! and the tabular one-step learners (Q-learning and R-learning) over three
//! state abstractions.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Action, ChannelObservation, LeadTimeQueue};

/// What part of its own queue a learner looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Abstraction {
    /// Whole lead-time vector (as a bitmask) plus observation: FSQA/FSRA.
    Full,
    /// Lead time of the head-of-line packet plus observation: HSRA.
    Hol,
    /// Urgent flag plus observation: TSRA.
    Tiny,
}

impl Abstraction {
    pub fn payload_count(self, deadline: usize) -> usize {
        match self {
            Abstraction::Full => 1 << deadline,
            Abstraction::Hol => deadline + 1,
            Abstraction::Tiny => 2,
        }
    }

    pub fn state_count(self, deadline: usize) -> usize {
        4 * self.payload_count(deadline)
    }

    pub fn observe(self, queue: &LeadTimeQueue, observation: ChannelObservation) -> AgentState {
        let payload = match self {
            Abstraction::Full => queue.mask(),
            Abstraction::Hol => queue.hol_lead_time() as u32,
            Abstraction::Tiny => u32::from(queue.urgent_flag()),
        };
        AgentState {
            payload,
            observation,
        }
    }

    /// True when the payload proves the queue is empty, which makes
    /// TRANSMIT indistinguishable from WAIT.
    pub fn payload_is_empty(self, payload: u32) -> bool {
        match self {
            Abstraction::Full | Abstraction::Hol => payload == 0,
            Abstraction::Tiny => false,
        }
    }

    pub fn format_payload(self, payload: u32, deadline: usize) -> String {
        match self {
            Abstraction::Full => {
                let q = LeadTimeQueue::from_mask(deadline, payload);
                let parts: Vec<String> = q.counts().iter().map(|c| c.to_string()).collect();
                format!("({})", parts.join(","))
            }
            Abstraction::Hol | Abstraction::Tiny => payload.to_string(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Abstraction::Full => "full",
            Abstraction::Hol => "hol",
            Abstraction::Tiny => "tiny",
        }
    }
}

/// A learner's view of the world at the start of a slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AgentState {
    pub payload: u32,
    pub observation: ChannelObservation,
}

impl AgentState {
    pub fn index(self) -> usize {
        self.payload as usize * 4 + self.observation.index()
    }

    pub fn from_index(i: usize) -> Self {
        Self {
            payload: (i / 4) as u32,
            observation: ChannelObservation::from_index(i % 4),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardSpec {
    /// 1 when the slot delivered a packet from anyone.
    TwoLevel,
    /// Two-level reward minus a constant.
    TwoLevelShifted { c: f64 },
    /// Per-device table keyed by observation, own action and own urgency.
    MultiLevel,
}

/// Reward for observation `observation`, which followed a slot in which the
/// device took (physical) action `action` while holding urgent flag `urgent`.
///
/// Panics on an observation that cannot follow `action` under the
/// multi-level table (e.g. SUCCESSFUL after WAIT).
pub fn reward(
    spec: RewardSpec,
    observation: ChannelObservation,
    action: Action,
    urgent: u8,
) -> f64 {
    use ChannelObservation::*;
    let delivered = f64::from(u8::from(matches!(observation, Busy | Successful)));
    match spec {
        RewardSpec::TwoLevel => delivered,
        RewardSpec::TwoLevelShifted { c } => delivered - c,
        RewardSpec::MultiLevel => match (observation, action) {
            (Idle, Action::Wait) if urgent == 1 => -3.0,
            (Idle, Action::Wait) => 2.0,
            (Busy, Action::Wait) => 10.0,
            (Successful, Action::Transmit) => 10.0,
            (Failed, Action::Transmit) => -5.0,
            (Failed, Action::Wait) => 2.0,
            (o, a) => panic!("observation {o} cannot follow action {a}"),
        },
    }
}

/// Which (state, action) pair a reward is credited to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardTiming {
    /// The update for `(s_t, a_t)` uses the reward computed from `o_{t+1}`,
    /// i.e. the outcome of `a_t`.
    #[default]
    OutcomeAligned,
    /// The update for `(s_t, a_t)` uses the reward computed from `o_t`, the
    /// outcome of the previous slot.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algorithm {
    /// Discounted one-step Q-learning.
    QLearning { gamma: f64 },
    /// Average-reward R-learning; `beta` is the step size of the average.
    RLearning { beta: f64 },
}

/// `eps_t = max(decay^(t-1), floor)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub decay: f64,
    pub floor: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            decay: 0.995,
            floor: 0.01,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, t: u64) -> f64 {
        // decay^(t-1) underflows to 0 long before t overflows i32
        let exp = t.saturating_sub(1).min(i32::MAX as u64) as i32;
        self.decay.powi(exp).max(self.floor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    pub abstraction: Abstraction,
    pub alpha: f64,
    pub epsilon: EpsilonSchedule,
    pub reward: RewardSpec,
    #[serde(default)]
    pub timing: RewardTiming,
}

impl LearnerConfig {
    pub fn r_learning(abstraction: Abstraction) -> Self {
        Self {
            algorithm: Algorithm::RLearning { beta: 0.01 },
            abstraction,
            alpha: 0.01,
            epsilon: EpsilonSchedule::default(),
            reward: RewardSpec::TwoLevel,
            timing: RewardTiming::default(),
        }
    }

    pub fn q_learning(abstraction: Abstraction) -> Self {
        Self {
            algorithm: Algorithm::QLearning { gamma: 0.9 },
            ..Self::r_learning(abstraction)
        }
    }

    pub fn tsra() -> Self {
        Self::r_learning(Abstraction::Tiny)
    }

    pub fn hsra() -> Self {
        Self::r_learning(Abstraction::Hol)
    }

    pub fn fsra() -> Self {
        Self::r_learning(Abstraction::Full)
    }

    pub fn fsqa() -> Self {
        Self::q_learning(Abstraction::Full)
    }

    pub fn with_reward(mut self, reward: RewardSpec) -> Self {
        self.reward = reward;
        self
    }

    pub fn with_timing(mut self, timing: RewardTiming) -> Self {
        self.timing = timing;
        self
    }

    /// Short scheme name, e.g. `tsra` or `fsqa`.
    pub fn scheme_name(&self) -> String {
        let prefix = match self.abstraction {
            Abstraction::Full => "fs",
            Abstraction::Hol => "hs",
            Abstraction::Tiny => "ts",
        };
        let suffix = match self.algorithm {
            Algorithm::QLearning { .. } => "qa",
            Algorithm::RLearning { .. } => "ra",
        };
        format!("{prefix}{suffix}")
    }
}

/// Tabular learner: Q table, average-reward estimate and slot counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Learner {
    config: LearnerConfig,
    deadline: usize,
    q: Vec<[f64; 2]>,
    rho: f64,
    /// 1-based index of the next decision.
    t: u64,
}

impl Learner {
    pub fn new(config: LearnerConfig, deadline: usize) -> Self {
        assert!(
            config.alpha > 0.0 && config.alpha <= 1.0,
            "alpha must be in (0, 1]"
        );
        match config.algorithm {
            Algorithm::QLearning { gamma } => {
                assert!(gamma > 0.0 && gamma < 1.0, "gamma must be in (0, 1)")
            }
            Algorithm::RLearning { beta } => {
                assert!(beta > 0.0 && beta <= 1.0, "beta must be in (0, 1]")
            }
        }
        if config.abstraction == Abstraction::Full {
            assert!(
                deadline <= 20,
                "full-state table would have 2^{deadline} rows"
            );
        }
        Self {
            config,
            deadline,
            q: vec![[0.0; 2]; config.abstraction.state_count(deadline)],
            rho: 0.0,
            t: 1,
        }
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn deadline(&self) -> usize {
        self.deadline
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn slot(&self) -> u64 {
        self.t
    }

    pub fn q_values(&self, state: AgentState) -> [f64; 2] {
        self.q[state.index()]
    }

    pub fn set_q(&mut self, state: AgentState, action: Action, value: f64) {
        self.q[state.index()][action.index()] = value;
    }

    pub fn table(&self) -> &[[f64; 2]] {
        &self.q
    }

    pub fn observe(&self, queue: &LeadTimeQueue, observation: ChannelObservation) -> AgentState {
        self.config.abstraction.observe(queue, observation)
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon.at(self.t)
    }

    /// Argmax with ties going to the earlier entry of [`Action::ALL`].
    pub fn greedy(&self, state: AgentState) -> Action {
        argmax(&self.q[state.index()])
    }

    /// ε-greedy choice at the current exploration rate.
    pub fn select_action<R: Rng + ?Sized>(&self, state: AgentState, rng: &mut R) -> Action {
        self.select_with_epsilon(state, self.epsilon(), rng)
    }

    pub fn select_with_epsilon<R: Rng + ?Sized>(
        &self,
        state: AgentState,
        epsilon: f64,
        rng: &mut R,
    ) -> Action {
        if rng.random::<f64>() < epsilon {
            Action::from_index(rng.random_range(0..2))
        } else {
            self.greedy(state)
        }
    }

    fn max_q(&self, state: AgentState) -> f64 {
        let [w, t] = self.q[state.index()];
        w.max(t)
    }

    /// One-step discounted Q-learning update.
    pub fn q_update(&mut self, state: AgentState, action: Action, reward: f64, next: AgentState) {
        let Algorithm::QLearning { gamma } = self.config.algorithm else {
            panic!("q_update on an R-learning agent");
        };
        let target = reward + gamma * self.max_q(next);
        let cell = &mut self.q[state.index()][action.index()];
        *cell += self.config.alpha * (target - *cell);
    }

    /// One-step R-learning update. The temporal-difference error is formed
    /// once from pre-update values and drives both the Q cell and ρ.
    pub fn r_update(&mut self, state: AgentState, action: Action, reward: f64, next: AgentState) {
        let Algorithm::RLearning { beta } = self.config.algorithm else {
            panic!("r_update on a Q-learning agent");
        };
        let delta = reward + self.max_q(next) - self.q[state.index()][action.index()] - self.rho;
        self.q[state.index()][action.index()] += self.config.alpha * delta;
        self.rho += beta * delta;
    }

    /// Applies the configured update and advances the slot counter.
    pub fn update(&mut self, state: AgentState, action: Action, reward: f64, next: AgentState) {
        match self.config.algorithm {
            Algorithm::QLearning { .. } => self.q_update(state, action, reward, next),
            Algorithm::RLearning { .. } => self.r_update(state, action, reward, next),
        }
        self.t += 1;
    }

    /// Greedy action for every state in enumeration order. States whose
    /// payload proves an empty queue report WAIT, since TRANSMIT is a no-op
    /// there.
    pub fn greedy_policy(&self) -> Vec<PolicyRow> {
        let abstraction = self.config.abstraction;
        (0..self.q.len())
            .map(|i| {
                let state = AgentState::from_index(i);
                let action = if abstraction.payload_is_empty(state.payload) {
                    Action::Wait
                } else {
                    self.greedy(state)
                };
                PolicyRow {
                    state,
                    action,
                    q: self.q[i],
                }
            })
            .collect()
    }

    /// Writes the policy table as CSV. R-learners prepend a `# rho=` line.
    pub fn write_policy<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut out = out;
        if let Algorithm::RLearning { .. } = self.config.algorithm {
            writeln!(out, "# rho={}", self.rho)?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "abstraction",
            "state",
            "observation",
            "action",
            "q_wait",
            "q_transmit",
        ])?;
        let abstraction = self.config.abstraction;
        for row in self.greedy_policy() {
            w.write_record([
                abstraction.name().to_string(),
                abstraction.format_payload(row.state.payload, self.deadline),
                row.state.observation.to_string(),
                row.action.to_string(),
                row.q[0].to_string(),
                row.q[1].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyRow {
    pub state: AgentState,
    pub action: Action,
    pub q: [f64; 2],
}

pub(crate) fn argmax(values: &[f64; 2]) -> Action {
    if values[1] > values[0] {
        Action::Transmit
    } else {
        Action::Wait
    }
}

/// ALOHA: transmit the head-of-line packet with probability `transmit`.
pub fn aloha_policy<R: Rng + ?Sized>(transmit: f64, queue_nonempty: bool, rng: &mut R) -> Action {
    if queue_nonempty && rng.random::<f64>() < transmit {
        Action::Transmit
    } else {
        Action::Wait
    }
}
