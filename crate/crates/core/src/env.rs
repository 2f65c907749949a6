//! Slotted collision-channel environment.
//!
//! Devices `0..N1` are uncontrollable ALOHA devices, `N1..N` are the
//! controllable ones. Each slot: every device picks an action, the channel
//! resolves, the AP broadcasts, queues advance and fresh packets arrive,
//! then learners update on the transition they just saw.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{aloha_policy, reward, AgentState, Learner, LearnerConfig, RewardTiming};
use crate::error::{Error, Result};
use crate::mdp::StatePolicy;
use crate::model::{
    draw_arrivals, Action, ApFeedback, ChannelObservation, DeviceParams, LeadTimeQueue,
};
use crate::rng::{substream, Stream};

/// Default evaluation window in slots.
pub const DEFAULT_EVAL_WINDOW: usize = 100_000;

/// Policy run by a controllable device.
#[derive(Clone, Debug)]
pub enum AgentKind {
    Aloha {
        transmit: f64,
    },
    AlwaysTransmit,
    AlwaysIdle,
    Learner(LearnerConfig),
    /// Randomised policy over the full two-device state; it reads device 0's
    /// queue, so it only makes sense in a two-device scenario.
    FullInfo(Arc<StatePolicy>),
}

#[derive(Clone, Debug)]
pub struct ControlledDevice {
    pub params: DeviceParams,
    pub agent: AgentKind,
}

#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    /// Uncontrollable ALOHA devices; `transmit` is their ALOHA probability.
    pub aloha: Vec<DeviceParams>,
    pub controlled: Vec<ControlledDevice>,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn device_count(&self) -> usize {
        self.aloha.len() + self.controlled.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.device_count() == 0 {
            return Err(Error::InvalidScenario("scenario has no devices".into()));
        }
        for p in self
            .aloha
            .iter()
            .chain(self.controlled.iter().map(|c| &c.params))
        {
            p.validate()?;
        }
        for c in &self.controlled {
            match &c.agent {
                AgentKind::Aloha { transmit } if !(0.0..=1.0).contains(transmit) => {
                    return Err(Error::InvalidParameter(format!(
                        "ALOHA transmit probability {transmit} outside [0, 1]"
                    )))
                }
                AgentKind::FullInfo(policy) => {
                    if self.aloha.len() != 1 || self.controlled.len() != 1 {
                        return Err(Error::InvalidScenario(
                            "full-information policy needs exactly one ALOHA and one controlled device".into(),
                        ));
                    }
                    if policy.deadline() != c.params.deadline
                        || policy.deadline() != self.aloha[0].deadline
                    {
                        return Err(Error::InvalidScenario(
                            "full-information policy was built for a different hard delay".into(),
                        ));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Result of resolving one slot on the channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotOutcome {
    /// Whether each device physically sent a packet.
    pub sent: Vec<bool>,
    pub feedback: ApFeedback,
    /// Device whose packet was decoded, if any.
    pub success: Option<usize>,
    /// What each device observes at the start of the next slot.
    pub observations: Vec<ChannelObservation>,
}

/// Trace entry for one slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotRecord {
    pub t: u64,
    pub intents: Vec<Action>,
    pub outcome: SlotOutcome,
    pub expired: Vec<u32>,
    pub deliveries_cum: u64,
    pub transmissions_cum: u64,
}

/// Resolves the unreliable collision channel for one slot.
///
/// A device sends only if it intends to and has a packet. Two or more
/// senders collide; a lone sender `i` is decoded with probability
/// `params[i].success`. One channel draw is consumed only in the lone-sender
/// case.
pub fn resolve_slot<R: Rng + ?Sized>(
    intents: &[Action],
    queues: &[LeadTimeQueue],
    params: &[DeviceParams],
    rng: &mut R,
) -> SlotOutcome {
    let mut out = SlotOutcome {
        sent: Vec::with_capacity(intents.len()),
        feedback: ApFeedback::Nothing,
        success: None,
        observations: Vec::with_capacity(intents.len()),
    };
    resolve_into(intents, queues, params, rng, &mut out);
    out
}

fn resolve_into<R: Rng + ?Sized>(
    intents: &[Action],
    queues: &[LeadTimeQueue],
    params: &[DeviceParams],
    rng: &mut R,
    out: &mut SlotOutcome,
) {
    assert_eq!(intents.len(), queues.len(), "one intent per device");
    out.sent.clear();
    out.sent.extend(
        intents
            .iter()
            .zip(queues)
            .map(|(a, q)| *a == Action::Transmit && !q.is_empty()),
    );
    let mut senders = out
        .sent
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| i);
    let first = senders.next();
    let second = senders.next();
    (out.feedback, out.success) = match (first, second) {
        (None, _) => (ApFeedback::Nothing, None),
        (Some(_), Some(_)) => (ApFeedback::Nack, None),
        (Some(i), None) => {
            if rng.random::<f64>() < params[i].success {
                (ApFeedback::Ack, Some(i))
            } else {
                (ApFeedback::Nack, None)
            }
        }
    };
    out.observations.clear();
    let fb = out.feedback;
    out.observations.extend(
        out.sent
            .iter()
            .map(|&s| ChannelObservation::from_feedback(fb, s)),
    );
}

/// Running tallies of deliveries and physical transmissions.
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    devices: usize,
    slots: u64,
    deliveries: u64,
    transmissions: u64,
    per_device_deliveries: Vec<u64>,
    per_device_transmissions: Vec<u64>,
    expired: u64,
    capacity: usize,
    recent: VecDeque<(u8, u16)>,
    block: Option<usize>,
    block_fill: usize,
    block_acc: (u64, u64),
    blocks: Vec<(u64, u64)>,
}

impl MetricsAccumulator {
    /// `window_capacity` bounds the windows that can be queried later;
    /// `block` enables a non-overlapping windowed time series.
    pub fn new(devices: usize, window_capacity: usize, block: Option<usize>) -> Self {
        Self {
            devices,
            slots: 0,
            deliveries: 0,
            transmissions: 0,
            per_device_deliveries: vec![0; devices],
            per_device_transmissions: vec![0; devices],
            expired: 0,
            capacity: window_capacity,
            recent: VecDeque::with_capacity(window_capacity.min(1 << 20)),
            block: block.filter(|&b| b > 0),
            block_fill: 0,
            block_acc: (0, 0),
            blocks: Vec::new(),
        }
    }

    pub fn record(&mut self, outcome: &SlotOutcome, expired: u64) {
        let delivered = u8::from(outcome.success.is_some());
        let sent = outcome.sent.iter().filter(|&&s| s).count() as u16;
        for (i, &s) in outcome.sent.iter().enumerate() {
            self.per_device_transmissions[i] += u64::from(s);
        }
        if let Some(i) = outcome.success {
            self.per_device_deliveries[i] += 1;
        }
        self.slots += 1;
        self.deliveries += u64::from(delivered);
        self.transmissions += u64::from(sent);
        self.expired += expired;
        if self.capacity > 0 {
            if self.recent.len() == self.capacity {
                self.recent.pop_front();
            }
            self.recent.push_back((delivered, sent));
        }
        if let Some(b) = self.block {
            self.block_acc.0 += u64::from(delivered);
            self.block_acc.1 += u64::from(sent);
            self.block_fill += 1;
            if self.block_fill == b {
                self.blocks.push(self.block_acc);
                self.block_acc = (0, 0);
                self.block_fill = 0;
            }
        }
    }

    pub fn slots(&self) -> u64 {
        self.slots
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn deliveries(&self) -> u64 {
        self.deliveries
    }

    pub fn transmissions(&self) -> u64 {
        self.transmissions
    }

    pub fn expired(&self) -> u64 {
        self.expired
    }

    pub fn per_device_deliveries(&self) -> &[u64] {
        &self.per_device_deliveries
    }

    pub fn per_device_transmissions(&self) -> &[u64] {
        &self.per_device_transmissions
    }

    fn window_sums(&self, window: usize) -> Result<(u64, u64)> {
        if window == 0 {
            return Err(Error::InvalidParameter(
                "evaluation window must be positive".into(),
            ));
        }
        if window > self.recent.len() {
            return Err(Error::InvalidParameter(format!(
                "window {window} exceeds the {} recorded slots available",
                self.recent.len()
            )));
        }
        Ok(self
            .recent
            .iter()
            .rev()
            .take(window)
            .fold((0, 0), |(d, t), &(dd, tt)| {
                (d + u64::from(dd), t + u64::from(tt))
            }))
    }

    /// Deliveries per slot over the last `window` slots.
    pub fn timely_throughput(&self, window: usize) -> Result<f64> {
        let (d, _) = self.window_sums(window)?;
        Ok(d as f64 / window as f64)
    }

    /// Physical transmissions per slot over the last `window` slots.
    pub fn power(&self, window: usize) -> Result<f64> {
        let (_, t) = self.window_sums(window)?;
        Ok(t as f64 / window as f64)
    }

    /// Deliveries per slot since slot 1.
    pub fn overall_throughput(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.deliveries as f64 / self.slots as f64
        }
    }

    /// Completed blocks of the windowed series as (throughput, power).
    pub fn series(&self) -> Vec<(f64, f64)> {
        let Some(b) = self.block else {
            return Vec::new();
        };
        self.blocks
            .iter()
            .map(|&(d, t)| (d as f64 / b as f64, t as f64 / b as f64))
            .collect()
    }

    pub fn block(&self) -> Option<usize> {
        self.block
    }
}

/// Options that do not affect the random trajectory.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub window_capacity: usize,
    pub series_block: Option<usize>,
    pub keep_trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            window_capacity: DEFAULT_EVAL_WINDOW,
            series_block: None,
            keep_trace: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: MetricsAccumulator,
    pub trace: Option<Vec<SlotRecord>>,
    /// Final learner of each controllable device (None for fixed policies).
    pub learners: Vec<Option<Learner>>,
}

enum Policy {
    Aloha(f64),
    AlwaysTransmit,
    AlwaysIdle,
    Learner(Box<LearnerSlot>),
    FullInfo(Arc<StatePolicy>),
}

struct LearnerSlot {
    learner: Learner,
    /// State, intended action and urgent flag of the pending decision.
    pending: Option<(AgentState, Action, u8)>,
    /// Physical action and urgent flag of the previous slot (literal timing).
    previous: (Action, u8),
}

struct Device {
    params: DeviceParams,
    queue: LeadTimeQueue,
    observation: ChannelObservation,
    policy: Policy,
    arrivals: ChaCha8Rng,
    coins: ChaCha8Rng,
}

/// A scenario instantiated and ready to step.
pub struct Simulation {
    devices: Vec<Device>,
    controlled_from: usize,
    channel: ChaCha8Rng,
    params: Vec<DeviceParams>,
    queues: Vec<LeadTimeQueue>,
    intents: Vec<Action>,
    outcome: SlotOutcome,
    metrics: MetricsAccumulator,
    trace: Option<Vec<SlotRecord>>,
    t: u64,
}

impl Simulation {
    pub fn new(scenario: &ScenarioConfig, options: &RunOptions) -> Result<Self> {
        scenario.validate()?;
        let n = scenario.device_count();
        let mut devices = Vec::with_capacity(n);
        let controlled_from = scenario.aloha.len();
        for (i, p) in scenario.aloha.iter().enumerate() {
            devices.push((i, *p, Policy::Aloha(p.transmit)));
        }
        for (j, c) in scenario.controlled.iter().enumerate() {
            let policy = match &c.agent {
                AgentKind::Aloha { transmit } => Policy::Aloha(*transmit),
                AgentKind::AlwaysTransmit => Policy::AlwaysTransmit,
                AgentKind::AlwaysIdle => Policy::AlwaysIdle,
                AgentKind::Learner(cfg) => Policy::Learner(Box::new(LearnerSlot {
                    learner: Learner::new(*cfg, c.params.deadline),
                    pending: None,
                    previous: (Action::Wait, 0),
                })),
                AgentKind::FullInfo(p) => Policy::FullInfo(Arc::clone(p)),
            };
            devices.push((controlled_from + j, c.params, policy));
        }
        let devices: Vec<Device> = devices
            .into_iter()
            .map(|(i, params, policy)| Device {
                params,
                queue: LeadTimeQueue::new(params.deadline),
                observation: ChannelObservation::Idle,
                policy,
                arrivals: substream(scenario.seed, Stream::Arrivals, i),
                coins: substream(scenario.seed, Stream::Policy, i),
            })
            .collect();
        Ok(Self {
            params: devices.iter().map(|d| d.params).collect(),
            queues: devices.iter().map(|d| d.queue.clone()).collect(),
            intents: vec![Action::Wait; n],
            outcome: SlotOutcome {
                sent: Vec::with_capacity(n),
                feedback: ApFeedback::Nothing,
                success: None,
                observations: Vec::with_capacity(n),
            },
            metrics: MetricsAccumulator::new(n, options.window_capacity, options.series_block),
            trace: options.keep_trace.then(Vec::new),
            channel: substream(scenario.seed, Stream::Channel, 0),
            devices,
            controlled_from,
            t: 0,
        })
    }

    pub fn metrics(&self) -> &MetricsAccumulator {
        &self.metrics
    }

    pub fn queues(&self) -> &[LeadTimeQueue] {
        &self.queues
    }

    pub fn observations(&self) -> Vec<ChannelObservation> {
        self.devices.iter().map(|d| d.observation).collect()
    }

    /// Learner of controllable device `j` (0-based among controllable devices).
    pub fn learner(&self, j: usize) -> Option<&Learner> {
        match &self.devices.get(self.controlled_from + j)?.policy {
            Policy::Learner(slot) => Some(&slot.learner),
            _ => None,
        }
    }

    /// Runs one slot.
    pub fn step(&mut self) {
        self.t += 1;
        let peer_queue = self.queues.first();
        for (i, dev) in self.devices.iter_mut().enumerate() {
            let nonempty = !dev.queue.is_empty();
            self.intents[i] = match &mut dev.policy {
                Policy::Aloha(p) => aloha_policy(*p, nonempty, &mut dev.coins),
                Policy::AlwaysTransmit => Action::Transmit,
                Policy::AlwaysIdle => Action::Wait,
                Policy::FullInfo(pol) => {
                    let l1 = peer_queue.expect("two-device scenario");
                    pol.sample(l1, &dev.queue, dev.observation, &mut dev.coins)
                }
                Policy::Learner(slot) => {
                    let state = slot.learner.observe(&dev.queue, dev.observation);
                    let action = slot.learner.select_action(state, &mut dev.coins);
                    slot.pending = Some((state, action, dev.queue.urgent_flag()));
                    action
                }
            };
        }

        resolve_into(
            &self.intents,
            &self.queues,
            &self.params,
            &mut self.channel,
            &mut self.outcome,
        );

        let mut expired_total = 0u64;
        let mut expired = Vec::new();
        let keep_trace = self.trace.is_some();
        for (i, dev) in self.devices.iter_mut().enumerate() {
            let delivered = self.outcome.success == Some(i);
            let arrivals = draw_arrivals(&dev.params, &mut dev.arrivals);
            let before = dev.queue.total();
            let gone = dev.queue.advance(delivered, arrivals);
            debug_assert_eq!(
                dev.queue.total() + u64::from(delivered) + u64::from(gone),
                before + u64::from(arrivals)
            );
            expired_total += u64::from(gone);
            if keep_trace {
                expired.push(gone);
            }
            let observation = self.outcome.observations[i];
            debug_assert!(observation.is_possible(self.outcome.sent[i]));
            let physical = if self.outcome.sent[i] {
                Action::Transmit
            } else {
                Action::Wait
            };
            if let Policy::Learner(slot) = &mut dev.policy {
                let (state, action, urgent) = slot.pending.take().expect("decision recorded");
                let spec = slot.learner.config().reward;
                let r = match slot.learner.config().timing {
                    RewardTiming::OutcomeAligned => reward(spec, observation, physical, urgent),
                    RewardTiming::Literal => {
                        let (prev_action, prev_urgent) = slot.previous;
                        reward(spec, dev.observation, prev_action, prev_urgent)
                    }
                };
                slot.previous = (physical, urgent);
                let next = slot.learner.observe(&dev.queue, observation);
                slot.learner.update(state, action, r, next);
            }
            dev.observation = observation;
            self.queues[i].clone_from(&dev.queue);
        }

        self.metrics.record(&self.outcome, expired_total);
        if let Some(trace) = self.trace.as_mut() {
            trace.push(SlotRecord {
                t: self.t,
                intents: self.intents.clone(),
                outcome: self.outcome.clone(),
                expired,
                deliveries_cum: self.metrics.deliveries(),
                transmissions_cum: self.metrics.transmissions(),
            });
        }
    }

    pub fn finish(self) -> RunOutput {
        let learners = self.devices[self.controlled_from..]
            .iter()
            .map(|d| match &d.policy {
                Policy::Learner(slot) => Some(slot.learner.clone()),
                _ => None,
            })
            .collect();
        RunOutput {
            metrics: self.metrics,
            trace: self.trace,
            learners,
        }
    }
}

/// Runs `scenario` for `horizon` slots. Initial queues are empty and every
/// device starts from an IDLE observation.
pub fn run(scenario: &ScenarioConfig, horizon: u64, options: &RunOptions) -> Result<RunOutput> {
    if horizon == 0 {
        return Err(Error::InvalidParameter(
            "horizon must be at least one slot".into(),
        ));
    }
    let mut sim = Simulation::new(scenario, options)?;
    for _ in 0..horizon {
        sim.step();
    }
    Ok(sim.finish())
}

/// Writes a trace as CSV, one row per slot.
pub fn write_trace<W: Write>(trace: &[SlotRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = trace.first().map_or(0, |r| r.intents.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("action_{i}")));
    header.push("feedback".into());
    header.push("success_id".into());
    header.extend((0..n).map(|i| format!("obs_{i}")));
    header.push("deliveries_cum".into());
    header.push("transmissions_cum".into());
    w.write_record(&header)?;
    for rec in trace {
        let mut row = vec![rec.t.to_string()];
        row.extend(rec.intents.iter().map(|a| a.to_string()));
        row.push(rec.outcome.feedback.to_string());
        row.push(rec.outcome.success.map_or(String::new(), |i| i.to_string()));
        row.extend(rec.outcome.observations.iter().map(|o| o.to_string()));
        row.push(rec.deliveries_cum.to_string());
        row.push(rec.transmissions_cum.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
