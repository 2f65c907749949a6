//! Per-device domain types: lead-time queues, traffic, actions and the
//! feedback alphabet shared by the environment, the agents and the MDP.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pending packets of one device, bucketed by remaining lifetime.
///
/// `counts[k]` is the number of packets that expire in `k + 1` slots, so
/// index 0 holds the urgent packets and index `D - 1` the fresh arrivals.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LeadTimeQueue {
    counts: Vec<u32>,
}

impl LeadTimeQueue {
    /// An empty queue for hard delay `deadline` (must be at least 1).
    pub fn new(deadline: usize) -> Self {
        assert!(deadline >= 1, "hard delay must be at least one slot");
        Self {
            counts: vec![0; deadline],
        }
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        assert!(!counts.is_empty(), "hard delay must be at least one slot");
        Self { counts }
    }

    /// Builds a 0/1 queue from a lead-time bitmask.
    ///
    /// The mask reads the lead-time vector `(l^1, .., l^D)` as a binary
    /// number with `l^1` as the most significant digit, so numeric order of
    /// masks is the lexicographic order of lead-time vectors.
    pub fn from_mask(deadline: usize, mask: u32) -> Self {
        assert!((1..=31).contains(&deadline));
        let counts = (0..deadline)
            .map(|k| (mask >> (deadline - 1 - k)) & 1)
            .collect();
        Self { counts }
    }

    /// Inverse of [`LeadTimeQueue::from_mask`]; any non-zero count maps to bit 1.
    pub fn mask(&self) -> u32 {
        let d = self.counts.len();
        debug_assert!(d <= 31);
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .fold(0, |m, (k, _)| m | (1 << (d - 1 - k)))
    }

    pub fn deadline(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    /// 1 when a packet with lead time 1 is pending.
    pub fn urgent_flag(&self) -> u8 {
        u8::from(self.counts[0] > 0)
    }

    /// Lead time of the head-of-line packet, 0 for an empty queue.
    pub fn hol_lead_time(&self) -> usize {
        self.counts.iter().position(|&c| c > 0).map_or(0, |k| k + 1)
    }

    /// Advances the queue by one slot.
    ///
    /// Order within the slot: the head-of-line packet is removed if it was
    /// delivered, every remaining packet loses one slot of lifetime (those
    /// at lead time 1 expire and are counted in the return value), and then
    /// `arrivals` new packets enter with the full lifetime.
    ///
    /// Panics if `delivered` is set on an empty queue.
    pub fn advance(&mut self, delivered: bool, arrivals: u32) -> u32 {
        if delivered {
            let hol = self
                .counts
                .iter()
                .position(|&c| c > 0)
                .expect("delivery reported for an empty queue");
            self.counts[hol] -= 1;
        }
        let expired = self.counts[0];
        self.counts.rotate_left(1);
        let last = self.counts.len() - 1;
        self.counts[last] = arrivals;
        expired
    }
}

/// Functional form of [`LeadTimeQueue::advance`].
pub fn advance_queue(q: &LeadTimeQueue, delivered: bool, arrivals: u32) -> (LeadTimeQueue, u32) {
    let mut next = q.clone();
    let expired = next.advance(delivered, arrivals);
    (next, expired)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Wait,
    Transmit,
}

impl Action {
    /// Tie-break order used by every argmax in the crate.
    pub const ALL: [Action; 2] = [Action::Wait, Action::Transmit];

    pub fn index(self) -> usize {
        match self {
            Action::Wait => 0,
            Action::Transmit => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => Action::Wait,
            1 => Action::Transmit,
            _ => panic!("action index {i} out of range"),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Wait => "WAIT",
            Action::Transmit => "TRANSMIT",
        })
    }
}

/// What a device learns about the previous slot at the start of the next one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelObservation {
    Idle,
    Busy,
    Successful,
    Failed,
}

impl ChannelObservation {
    /// Enumeration order used for state indexing and exports.
    pub const ALL: [ChannelObservation; 4] = [
        ChannelObservation::Idle,
        ChannelObservation::Busy,
        ChannelObservation::Successful,
        ChannelObservation::Failed,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    /// Maps the AP broadcast to this device's view of the slot.
    pub fn from_feedback(feedback: ApFeedback, sent: bool) -> Self {
        match (feedback, sent) {
            (ApFeedback::Nothing, _) => ChannelObservation::Idle,
            (ApFeedback::Ack, true) => ChannelObservation::Successful,
            (ApFeedback::Ack, false) => ChannelObservation::Busy,
            (ApFeedback::Nack, _) => ChannelObservation::Failed,
        }
    }

    /// Whether this observation can follow a slot in which the device did
    /// (`sent = true`) or did not physically transmit.
    pub fn is_possible(self, sent: bool) -> bool {
        match self {
            ChannelObservation::Idle | ChannelObservation::Busy => !sent,
            ChannelObservation::Successful => sent,
            ChannelObservation::Failed => true,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            ChannelObservation::Idle => "I",
            ChannelObservation::Busy => "B",
            ChannelObservation::Successful => "S",
            ChannelObservation::Failed => "F",
        }
    }
}

impl fmt::Display for ChannelObservation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelObservation::Idle => "IDLE",
            ChannelObservation::Busy => "BUSY",
            ChannelObservation::Successful => "SUCCESSFUL",
            ChannelObservation::Failed => "FAILED",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ApFeedback {
    Ack,
    Nack,
    Nothing,
}

impl fmt::Display for ApFeedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApFeedback::Ack => "ACK",
            ApFeedback::Nack => "NACK",
            ApFeedback::Nothing => "NOTHING",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArrivalModel {
    /// At most one packet per slot, with probability `p`.
    Bernoulli { p: f64 },
    /// Poisson-distributed batch per slot with mean `rate`.
    Poisson { rate: f64 },
}

impl ArrivalModel {
    pub fn mean(&self) -> f64 {
        match *self {
            ArrivalModel::Bernoulli { p } => p,
            ArrivalModel::Poisson { rate } => rate,
        }
    }
}

/// Traffic and channel parameters of one device.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub arrivals: ArrivalModel,
    /// Hard delay in slots.
    pub deadline: usize,
    /// Probability that a lone transmission is decoded.
    pub success: f64,
    /// ALOHA transmission probability; ignored by controllable agents.
    #[serde(default)]
    pub transmit: f64,
}

impl DeviceParams {
    pub fn bernoulli(p: f64, deadline: usize, success: f64, transmit: f64) -> Self {
        Self {
            arrivals: ArrivalModel::Bernoulli { p },
            deadline,
            success,
            transmit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        match self.arrivals {
            ArrivalModel::Bernoulli { p } if !(p > 0.0 && p <= 1.0) => {
                return Err(Error::InvalidParameter(format!(
                    "arrival probability {p} outside (0, 1]"
                )))
            }
            ArrivalModel::Poisson { rate } if !(rate > 0.0 && rate.is_finite()) => {
                return Err(Error::InvalidParameter(format!(
                    "poisson rate {rate} must be positive"
                )))
            }
            _ => {}
        }
        if self.deadline == 0 {
            return Err(Error::InvalidParameter("hard delay must be >= 1".into()));
        }
        if !(self.success > 0.0 && self.success <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "success probability {} outside (0, 1]",
                self.success
            )));
        }
        if !in_unit(self.transmit) {
            return Err(Error::InvalidParameter(format!(
                "transmit probability {} outside [0, 1]",
                self.transmit
            )));
        }
        Ok(())
    }
}

/// Number of packets arriving at a device in one slot.
pub fn draw_arrivals<R: Rng + ?Sized>(params: &DeviceParams, rng: &mut R) -> u32 {
    match params.arrivals {
        ArrivalModel::Bernoulli { p } => u32::from(p >= 1.0 || rng.random::<f64>() < p),
        ArrivalModel::Poisson { rate } => {
            let dist = Poisson::new(rate).expect("validated poisson rate");
            dist.sample(rng) as u32
        }
    }
}
