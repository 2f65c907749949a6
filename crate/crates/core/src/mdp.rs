//! Exact two-device model and its dual-LP throughput bound.
//!
//! Device 1 is an ALOHA device; Device 2 is the controllable one and sees
//! both lead-time vectors plus its own channel observation. State index is
//! `((l1 << D) | l2) * 4 + o`, so states enumerate `(l1, l2, o)`
//! lexicographically with `o` in observation order.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lp::{self, LpProgram, LpStatus};
use crate::model::{
    advance_queue, Action, ApFeedback, ChannelObservation, DeviceParams, LeadTimeQueue,
};

/// Largest hard delay the bound is built for by default.
pub const MAX_BOUND_DEADLINE: usize = 4;

/// Parameters of the two-device system. Device 1 runs ALOHA with
/// `aloha_transmit`; Device 2 is controlled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwoDeviceParams {
    pub aloha_arrival: f64,
    pub agent_arrival: f64,
    pub aloha_success: f64,
    pub agent_success: f64,
    pub aloha_transmit: f64,
    pub deadline: usize,
}

impl TwoDeviceParams {
    /// Arguments in the fixed CSV order: arrival 1, arrival 2, success 1,
    /// success 2, ALOHA transmit probability, hard delay.
    pub fn new(
        aloha_arrival: f64,
        agent_arrival: f64,
        aloha_success: f64,
        agent_success: f64,
        aloha_transmit: f64,
        deadline: usize,
    ) -> Self {
        Self {
            aloha_arrival,
            agent_arrival,
            aloha_success,
            agent_success,
            aloha_transmit,
            deadline,
        }
    }

    pub fn with_deadline(mut self, deadline: usize) -> Self {
        self.deadline = deadline;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.aloha_device().validate()?;
        self.agent_device().validate()
    }

    pub fn aloha_device(&self) -> DeviceParams {
        DeviceParams::bernoulli(
            self.aloha_arrival,
            self.deadline,
            self.aloha_success,
            self.aloha_transmit,
        )
    }

    /// Device 2's parameters; its `transmit` field is unused by learners.
    pub fn agent_device(&self) -> DeviceParams {
        DeviceParams::bernoulli(self.agent_arrival, self.deadline, self.agent_success, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MdpState {
    pub l1: u32,
    pub l2: u32,
    pub observation: ChannelObservation,
}

impl MdpState {
    pub fn index(&self, deadline: usize) -> usize {
        ((((self.l1 as usize) << deadline) | self.l2 as usize) << 2) | self.observation.index()
    }

    pub fn from_index(index: usize, deadline: usize) -> Self {
        let masks = index >> 2;
        Self {
            l1: (masks >> deadline) as u32,
            l2: (masks & ((1 << deadline) - 1)) as u32,
            observation: ChannelObservation::from_index(index & 3),
        }
    }
}

pub fn state_count(deadline: usize) -> usize {
    1 << (2 * deadline + 2)
}

/// One-step reward: a delivery happened in the previous slot.
pub fn state_reward(observation: ChannelObservation) -> f64 {
    match observation {
        ChannelObservation::Busy | ChannelObservation::Successful => 1.0,
        ChannelObservation::Idle | ChannelObservation::Failed => 0.0,
    }
}

#[derive(Clone, Debug)]
pub struct MdpModel {
    params: TwoDeviceParams,
    /// `rows[s * 2 + a]` lists `(s', P(s'|s,a))` with `s'` ascending.
    rows: Vec<Vec<(u32, f64)>>,
}

impl MdpModel {
    pub fn params(&self) -> &TwoDeviceParams {
        &self.params
    }

    pub fn deadline(&self) -> usize {
        self.params.deadline
    }

    pub fn state_count(&self) -> usize {
        state_count(self.params.deadline)
    }

    pub fn transitions(&self, state: usize, action: Action) -> &[(u32, f64)] {
        &self.rows[state * 2 + action.index()]
    }

    pub fn probability(&self, state: usize, action: Action, next: usize) -> f64 {
        let row = self.transitions(state, action);
        row.binary_search_by_key(&(next as u32), |&(s, _)| s)
            .map_or(0.0, |k| row[k].1)
    }

    pub fn reward(&self, state: usize) -> f64 {
        state_reward(ChannelObservation::from_index(state & 3))
    }
}

/// Enumerates every one-slot outcome. Device 1 sends with `aloha_transmit`
/// when non-empty; Device 2 sends when told to and non-empty; the next
/// observation is Device 2's view of the slot.
pub fn build_mdp(params: &TwoDeviceParams) -> Result<MdpModel> {
    params.validate()?;
    let d = params.deadline;
    if d == 0 || d > 12 {
        return Err(Error::InvalidParameter(format!(
            "hard delay {d} outside 1..=12"
        )));
    }
    let n = state_count(d);
    let mut rows = Vec::with_capacity(2 * n);
    let mut scratch: Vec<(u32, f64)> = Vec::new();
    for s in 0..n {
        let st = MdpState::from_index(s, d);
        let q1 = LeadTimeQueue::from_mask(d, st.l1);
        let q2 = LeadTimeQueue::from_mask(d, st.l2);
        for action in Action::ALL {
            scratch.clear();
            let send1_p = if q1.is_empty() {
                0.0
            } else {
                params.aloha_transmit
            };
            let send2 = action == Action::Transmit && !q2.is_empty();
            for send1 in [false, true] {
                let p_send = if send1 { send1_p } else { 1.0 - send1_p };
                if p_send == 0.0 {
                    continue;
                }
                // (feedback, delivered by 1, delivered by 2, probability)
                let branches: Vec<(ApFeedback, bool, bool, f64)> = match (send1, send2) {
                    (false, false) => vec![(ApFeedback::Nothing, false, false, 1.0)],
                    (true, true) => vec![(ApFeedback::Nack, false, false, 1.0)],
                    (true, false) => vec![
                        (ApFeedback::Ack, true, false, params.aloha_success),
                        (ApFeedback::Nack, false, false, 1.0 - params.aloha_success),
                    ],
                    (false, true) => vec![
                        (ApFeedback::Ack, false, true, params.agent_success),
                        (ApFeedback::Nack, false, false, 1.0 - params.agent_success),
                    ],
                };
                for (feedback, del1, del2, p_fb) in branches {
                    if p_fb == 0.0 {
                        continue;
                    }
                    let obs = ChannelObservation::from_feedback(feedback, send2);
                    for arr1 in [0u32, 1] {
                        let p_a1 = if arr1 == 1 {
                            params.aloha_arrival
                        } else {
                            1.0 - params.aloha_arrival
                        };
                        for arr2 in [0u32, 1] {
                            let p_a2 = if arr2 == 1 {
                                params.agent_arrival
                            } else {
                                1.0 - params.agent_arrival
                            };
                            let p = p_send * p_fb * p_a1 * p_a2;
                            if p == 0.0 {
                                continue;
                            }
                            let (n1, _) = advance_queue(&q1, del1, arr1);
                            let (n2, _) = advance_queue(&q2, del2, arr2);
                            let next = MdpState {
                                l1: n1.mask(),
                                l2: n2.mask(),
                                observation: obs,
                            };
                            scratch.push((next.index(d) as u32, p));
                        }
                    }
                }
            }
            scratch.sort_by_key(|&(s, _)| s);
            let mut row: Vec<(u32, f64)> = Vec::with_capacity(scratch.len());
            for &(s2, p) in &scratch {
                match row.last_mut() {
                    Some((last, acc)) if *last == s2 => *acc += p,
                    _ => row.push((s2, p)),
                }
            }
            rows.push(row);
        }
    }
    Ok(MdpModel {
        params: *params,
        rows,
    })
}

/// Randomised stationary policy over the full two-device state.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePolicy {
    deadline: usize,
    /// Probability of TRANSMIT per state index.
    transmit: Vec<f64>,
}

impl StatePolicy {
    pub fn new(deadline: usize, transmit: Vec<f64>) -> Result<Self> {
        if transmit.len() != state_count(deadline) {
            return Err(Error::InvalidParameter(format!(
                "policy has {} entries, expected {}",
                transmit.len(),
                state_count(deadline)
            )));
        }
        if let Some(p) = transmit.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidParameter(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        Ok(Self { deadline, transmit })
    }

    pub fn deterministic(deadline: usize, action: Action) -> Self {
        let p = if action == Action::Transmit { 1.0 } else { 0.0 };
        Self {
            deadline,
            transmit: vec![p; state_count(deadline)],
        }
    }

    pub fn deadline(&self) -> usize {
        self.deadline
    }

    pub fn probability(&self, state: usize, action: Action) -> f64 {
        match action {
            Action::Transmit => self.transmit[state],
            Action::Wait => 1.0 - self.transmit[state],
        }
    }

    pub fn transmit_probabilities(&self) -> &[f64] {
        &self.transmit
    }

    /// Draws an action; randomness is consumed only for interior probabilities.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        l1: &LeadTimeQueue,
        l2: &LeadTimeQueue,
        observation: ChannelObservation,
        rng: &mut R,
    ) -> Action {
        let s = MdpState {
            l1: l1.mask(),
            l2: l2.mask(),
            observation,
        }
        .index(self.deadline);
        let p = self.transmit[s];
        if p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p) {
            Action::Transmit
        } else {
            Action::Wait
        }
    }

    /// Writes `abstraction,state,observation,action,p_wait,p_transmit` rows;
    /// `state` is `l1;l2` with each vector written as `(l^1,...,l^D)`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "abstraction",
            "state",
            "observation",
            "action",
            "p_wait",
            "p_transmit",
        ])?;
        for (s, &p) in self.transmit.iter().enumerate() {
            let st = MdpState::from_index(s, self.deadline);
            let action = if p > 0.5 {
                Action::Transmit
            } else {
                Action::Wait
            };
            w.write_record([
                "mdp".to_string(),
                format!(
                    "{};{}",
                    format_mask(st.l1, self.deadline),
                    format_mask(st.l2, self.deadline)
                ),
                st.observation.to_string(),
                action.to_string(),
                (1.0 - p).to_string(),
                p.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(l^1,...,l^D)` with `l^1` the lead-time-1 slot.
pub fn format_mask(mask: u32, deadline: usize) -> String {
    let bits: Vec<String> = (0..deadline)
        .map(|k| ((mask >> (deadline - 1 - k)) & 1).to_string())
        .collect();
    format!("({})", bits.join(","))
}

#[derive(Clone, Debug, Serialize)]
pub struct LpDiagnostics {
    pub rows: usize,
    pub cols: usize,
    pub iterations: usize,
    pub used_bland: bool,
    pub residual: f64,
    pub dual_bound: f64,
    /// States with no recurrent frequency in the LP solution.
    pub transient_states: usize,
    pub solve_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct BoundResult {
    pub params: TwoDeviceParams,
    pub value: f64,
    /// Optimal policy with transient-state actions chosen by bias improvement.
    pub policy: StatePolicy,
    /// Policy read directly off the LP vertex.
    pub vertex_policy: StatePolicy,
    pub diagnostics: LpDiagnostics,
}

/// Builds the dual program over state-action frequencies. Columns are all
/// `x(s,a)` then all `y(s,a)`, states ascending, WAIT before TRANSMIT.
/// Rows `0..|S|` balance `x`; rows `|S|..2|S|` balance `x + y` against the
/// initial weights `1/|S|`.
pub fn dual_program(model: &MdpModel) -> LpProgram {
    let n = model.state_count();
    let alpha = 1.0 / n as f64;
    let mut rhs = vec![0.0; 2 * n];
    for r in &mut rhs[n..] {
        *r = alpha;
    }
    let mut program = LpProgram::new(rhs);
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for block in 0..2 {
        for s in 0..n {
            for a in Action::ALL {
                entries.clear();
                let base = block * n;
                entries.push((n + s, 1.0));
                if block == 0 {
                    entries.push((s, 1.0));
                }
                for &(next, p) in model.transitions(s, a) {
                    entries.push((base + next as usize, -p));
                }
                let objective = if block == 0 { model.reward(s) } else { 0.0 };
                program.add_column(objective, &entries);
            }
        }
    }
    program
}

/// Solves the dual program and extracts an optimal randomised policy.
///
/// The vertex policy normalises `x(s,·)` where it has mass and `y(s,·)`
/// elsewhere. States with no `x` mass are transient under that policy, so
/// any action there is gain-optimal and the vertex's choice is arbitrary;
/// the returned `policy` re-decides them by bias improvement (Howard steps
/// restricted to those states) and keeps the vertex action on exact ties.
/// States whose Device-2 queue is empty are pinned to WAIT in both, since
/// TRANSMIT is a no-op there.
pub fn upper_bound(model: &MdpModel) -> Result<BoundResult> {
    let start = Instant::now();
    let program = dual_program(model);
    let solution = lp::solve(&program)?;
    let solve_seconds = start.elapsed().as_secs_f64();
    if solution.status != LpStatus::Optimal {
        return Err(Error::BoundNotOptimal(solution.status));
    }
    let n = model.state_count();
    let d = model.deadline();
    let mut transmit = vec![0.0; n];
    let mut transient = vec![false; n];
    for s in 0..n {
        let x = [solution.x[2 * s], solution.x[2 * s + 1]];
        let y = [solution.x[2 * n + 2 * s], solution.x[2 * n + 2 * s + 1]];
        transient[s] = x[0] + x[1] <= 1e-12;
        if MdpState::from_index(s, d).l2 == 0 {
            continue;
        }
        let pick = if transient[s] { y } else { x };
        let total = pick[0] + pick[1];
        transmit[s] = if total > 0.0 {
            (pick[1] / total).clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
    let vertex_policy = StatePolicy {
        deadline: d,
        transmit,
    };
    let policy = refine_transient(model, &vertex_policy, &transient, solution.objective)?;
    Ok(BoundResult {
        params: *model.params(),
        value: solution.objective,
        policy,
        vertex_policy,
        diagnostics: LpDiagnostics {
            rows: program.rows(),
            cols: program.cols(),
            iterations: solution.iterations,
            used_bland: solution.used_bland,
            residual: program.residual(&solution.x),
            dual_bound: solution.dual_bound(&program),
            transient_states: transient.iter().filter(|&&t| t).count(),
            solve_seconds,
        },
    })
}

/// Relative values `h` of `policy` for gain `gain`:
/// `h(s) = r(s) - gain + E[h(s')]`, pinned to `h(reference) = 0`.
pub fn policy_bias(
    model: &MdpModel,
    policy: &StatePolicy,
    gain: f64,
    reference: usize,
) -> Result<Vec<f64>> {
    let n = model.state_count();
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for s in 0..n {
        let row = &mut a[s * n..(s + 1) * n];
        if s == reference {
            row[s] = 1.0;
            continue;
        }
        row[s] += 1.0;
        for act in Action::ALL {
            let w = policy.probability(s, act);
            if w > 0.0 {
                for &(next, p) in model.transitions(s, act) {
                    row[next as usize] -= w * p;
                }
            }
        }
        b[s] = model.reward(s) - gain;
    }
    lp::solve_dense(n, a, b)
        .ok_or_else(|| Error::InvalidScenario("policy has more than one recurrent class".into()))
}

fn refine_transient(
    model: &MdpModel,
    vertex: &StatePolicy,
    transient: &[bool],
    gain: f64,
) -> Result<StatePolicy> {
    let d = model.deadline();
    let Some(reference) = transient.iter().position(|&t| !t) else {
        return Ok(vertex.clone());
    };
    let mut policy = vertex.clone();
    // each round strictly improves the bias, so this is a safety cap
    for _ in 0..64 {
        let h = policy_bias(model, &policy, gain, reference)?;
        let scale = 1.0 + h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut changed = false;
        for s in (0..model.state_count()).filter(|&s| transient[s]) {
            if MdpState::from_index(s, d).l2 == 0 {
                continue;
            }
            let look = |a: Action| -> f64 {
                model
                    .transitions(s, a)
                    .iter()
                    .map(|&(t, p)| p * h[t as usize])
                    .sum()
            };
            let (wait, send) = (look(Action::Wait), look(Action::Transmit));
            let current = policy.transmit[s];
            let next = if send > wait + 1e-9 * scale {
                1.0
            } else if wait > send + 1e-9 * scale {
                0.0
            } else {
                current
            };
            if next != current {
                policy.transmit[s] = next;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(policy)
}

/// Long-run average reward of `policy` from its stationary distribution,
/// assuming a single recurrent class.
pub fn policy_gain(model: &MdpModel, policy: &StatePolicy) -> Result<f64> {
    let n = model.state_count();
    // solve mu (I - P) = 0 with sum(mu) = 1, written as A^T mu = e_last
    let mut a = vec![0.0; n * n];
    for s in 0..n {
        a[s * n + s] += 1.0;
        for act in Action::ALL {
            let w = policy.probability(s, act);
            if w > 0.0 {
                for &(next, p) in model.transitions(s, act) {
                    a[next as usize * n + s] -= w * p;
                }
            }
        }
    }
    for v in &mut a[(n - 1) * n..] {
        *v = 1.0;
    }
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let mu = lp::solve_dense(n, a, rhs)
        .ok_or_else(|| Error::InvalidScenario("policy has more than one recurrent class".into()))?;
    Ok(mu
        .iter()
        .enumerate()
        .map(|(s, m)| m * model.reward(s))
        .sum())
}

/// Writes one CSV row per bound: the parameter columns, then the value and
/// solver statistics.
pub fn write_bounds_csv<W: Write>(bounds: &[BoundResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "p_b",
        "p_b2",
        "p_s",
        "p_s2",
        "p_t",
        "D",
        "bound",
        "solve_seconds",
        "iterations",
    ])?;
    for b in bounds {
        let p = &b.params;
        w.write_record([
            p.aloha_arrival.to_string(),
            p.agent_arrival.to_string(),
            p.aloha_success.to_string(),
            p.agent_success.to_string(),
            p.aloha_transmit.to_string(),
            p.deadline.to_string(),
            b.value.to_string(),
            format!("{:.6}", b.diagnostics.solve_seconds),
            b.diagnostics.iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FixedPolicy {
    AlwaysTransmit,
    AlwaysIdle,
}

impl FixedPolicy {
    pub fn action(self) -> Action {
        match self {
            FixedPolicy::AlwaysTransmit => Action::Transmit,
            FixedPolicy::AlwaysIdle => Action::Wait,
        }
    }
}

/// Best queue-blind binary policy for a unit hard delay and its throughput.
pub fn best_fixed_policy(params: &TwoDeviceParams) -> Result<(FixedPolicy, f64)> {
    require_unit_delay("best_fixed_policy", params)?;
    let p = params;
    let aloha_busy = p.aloha_arrival * p.aloha_transmit;
    if aloha_busy * (p.aloha_success + p.agent_success) < p.agent_success {
        let r = (p.agent_success - (p.aloha_success + p.agent_success) * aloha_busy)
            * p.agent_arrival
            + p.aloha_success * aloha_busy;
        Ok((FixedPolicy::AlwaysTransmit, r))
    } else {
        Ok((FixedPolicy::AlwaysIdle, p.aloha_success * aloha_busy))
    }
}

/// Throughput at unit hard delay when Device 2 sends a pending packet with
/// probability `agent_transmit`, independently of everything else.
pub fn blind_throughput(params: &TwoDeviceParams, agent_transmit: f64) -> Result<f64> {
    require_unit_delay("blind_throughput", params)?;
    let p = params;
    let aloha_busy = p.aloha_arrival * p.aloha_transmit;
    let agent_busy = p.agent_arrival * agent_transmit;
    Ok(p.aloha_success * aloha_busy * (1.0 - agent_busy)
        + p.agent_success * agent_busy * (1.0 - aloha_busy))
}

/// Optimal throughput at unit hard delay when Device 2 also sees whether
/// Device 1 holds a packet: send when Device 1 is empty, and when both hold
/// one, pick the better of yielding and contending.
pub fn full_information_unit_delay(params: &TwoDeviceParams) -> Result<f64> {
    require_unit_delay("full_information_unit_delay", params)?;
    let p = params;
    let aloha_alone =
        p.aloha_arrival * (1.0 - p.agent_arrival) * p.aloha_transmit * p.aloha_success;
    let agent_alone = (1.0 - p.aloha_arrival) * p.agent_arrival * p.agent_success;
    let both = p.aloha_arrival
        * p.agent_arrival
        * (p.aloha_transmit * p.aloha_success).max((1.0 - p.aloha_transmit) * p.agent_success);
    Ok(aloha_alone + agent_alone + both)
}

fn require_unit_delay(op: &'static str, params: &TwoDeviceParams) -> Result<()> {
    if params.deadline != 1 {
        return Err(Error::RequiresUnitDelay {
            op,
            deadline: params.deadline,
        });
    }
    params.validate()
}

/// Majority action per `(l2, o)`, indexed like a full-abstraction agent
/// state (`l2 * 4 + o`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MajorityPolicy {
    deadline: usize,
    actions: Vec<Action>,
}

impl MajorityPolicy {
    pub fn deadline(&self) -> usize {
        self.deadline
    }

    pub fn action(&self, l2: u32, observation: ChannelObservation) -> Action {
        self.actions[(l2 as usize) * 4 + observation.index()]
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }
}

/// For each `(l2, o)`: every `l1` votes for its more likely action (ties to
/// WAIT) and the majority wins (ties to WAIT).
pub fn majority_policy(policy: &StatePolicy) -> MajorityPolicy {
    let d = policy.deadline;
    let per_l1 = 1usize << d;
    let mut actions = Vec::with_capacity(per_l1 * 4);
    for l2 in 0..per_l1 as u32 {
        for o in ChannelObservation::ALL {
            let votes = (0..per_l1 as u32)
                .filter(|&l1| {
                    let s = MdpState {
                        l1,
                        l2,
                        observation: o,
                    }
                    .index(d);
                    policy.transmit[s] > 0.5
                })
                .count();
            actions.push(if 2 * votes > per_l1 {
                Action::Transmit
            } else {
                Action::Wait
            });
        }
    }
    MajorityPolicy {
        deadline: d,
        actions,
    }
}
