//! Parameter sampling, seeded sweeps and CSV export.
//!
//! Every group draws its parameters from its own sampling stream and runs
//! every scheme under the same group seed, so schemes within a group see the
//! same arrival and channel randomness. Groups run in parallel; results are
//! collected in group order, so output does not depend on scheduling.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{Abstraction, LearnerConfig, RewardSpec, RewardTiming};
use crate::env::{run, AgentKind, ControlledDevice, RunOptions, ScenarioConfig};
use crate::error::{Error, Result};
use crate::mdp::{build_mdp, upper_bound, StatePolicy, TwoDeviceParams, MAX_BOUND_DEADLINE};
use crate::model::DeviceParams;
use crate::rng::{child_seed, substream, Stream};

/// Default block length of convergence series, in slots.
pub const DEFAULT_SERIES_BLOCK: usize = 2_000;
/// Relative band a block must stay within to count as converged.
pub const DEFAULT_CONVERGENCE_TOLERANCE: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lo) || !(0.0..=1.0).contains(&self.hi) || self.lo > self.hi {
            return Err(Error::InvalidParameter(format!(
                "{what} range [{}, {}] is not a sub-interval of [0, 1]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

/// Uniform ranges the sweep draws device parameters from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub arrival: Interval,
    pub success: Interval,
    pub transmit: Interval,
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            arrival: Interval::new(0.1, 1.0),
            success: Interval::new(0.1, 1.0),
            transmit: Interval::new(0.05, 0.95),
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        self.arrival.validate("arrival")?;
        self.success.validate("success")?;
        self.transmit.validate("transmit")
    }
}

/// Draws a two-device tuple in the order arrival 1, arrival 2, success 1,
/// success 2, transmit.
pub fn sample_params<R: Rng + ?Sized>(
    ranges: &ParamRanges,
    deadline: usize,
    rng: &mut R,
) -> TwoDeviceParams {
    let aloha_arrival = ranges.arrival.draw(rng);
    let agent_arrival = ranges.arrival.draw(rng);
    let aloha_success = ranges.success.draw(rng);
    let agent_success = ranges.success.draw(rng);
    let aloha_transmit = ranges.transmit.draw(rng);
    TwoDeviceParams::new(
        aloha_arrival,
        agent_arrival,
        aloha_success,
        agent_success,
        aloha_transmit,
        deadline,
    )
}

/// Draws one device: arrival, success, transmit.
pub fn sample_device<R: Rng + ?Sized>(
    ranges: &ParamRanges,
    deadline: usize,
    rng: &mut R,
) -> DeviceParams {
    let arrival = ranges.arrival.draw(rng);
    let success = ranges.success.draw(rng);
    let transmit = ranges.transmit.draw(rng);
    DeviceParams::bernoulli(arrival, deadline, success, transmit)
}

/// Access scheme run by every controllable device.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Tsra,
    Hsra,
    Fsra,
    Fsqa,
    /// ALOHA; transmit probability defaults to `1/N2`.
    Aloha,
    AlwaysTransmit,
    AlwaysIdle,
    /// The optimal full-information policy from the LP bound (two devices).
    BoundPolicy,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 8] = [
        SchemeKind::Tsra,
        SchemeKind::Hsra,
        SchemeKind::Fsra,
        SchemeKind::Fsqa,
        SchemeKind::Aloha,
        SchemeKind::AlwaysTransmit,
        SchemeKind::AlwaysIdle,
        SchemeKind::BoundPolicy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Tsra => "tsra",
            SchemeKind::Hsra => "hsra",
            SchemeKind::Fsra => "fsra",
            SchemeKind::Fsqa => "fsqa",
            SchemeKind::Aloha => "aloha",
            SchemeKind::AlwaysTransmit => "always-transmit",
            SchemeKind::AlwaysIdle => "always-idle",
            SchemeKind::BoundPolicy => "bound-policy",
        }
    }

    fn learner(self) -> Option<LearnerConfig> {
        match self {
            SchemeKind::Tsra => Some(LearnerConfig::r_learning(Abstraction::Tiny)),
            SchemeKind::Hsra => Some(LearnerConfig::r_learning(Abstraction::Hol)),
            SchemeKind::Fsra => Some(LearnerConfig::r_learning(Abstraction::Full)),
            SchemeKind::Fsqa => Some(LearnerConfig::q_learning(Abstraction::Full)),
            _ => None,
        }
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scheme {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    pub kind: SchemeKind,
    /// Learner reward; two-level when absent.
    #[serde(default)]
    pub reward: Option<RewardSpec>,
    #[serde(default)]
    pub timing: RewardTiming,
    /// ALOHA transmit probability; `1/N2` when absent.
    #[serde(default)]
    pub transmit: Option<f64>,
}

impl Scheme {
    pub fn new(kind: SchemeKind) -> Self {
        Self {
            kind,
            reward: None,
            timing: RewardTiming::default(),
            transmit: None,
        }
    }

    pub fn with_reward(mut self, reward: RewardSpec) -> Self {
        self.reward = Some(reward);
        self
    }

    pub fn with_transmit(mut self, transmit: f64) -> Self {
        self.transmit = Some(transmit);
        self
    }

    /// Column label, e.g. `tsra`, `tsra-multi`, `fsqa-c0.3`, `aloha-p0.1`.
    pub fn label(&self) -> String {
        let mut s = self.kind.name().to_string();
        match self.reward {
            Some(RewardSpec::MultiLevel) => s.push_str("-multi"),
            Some(RewardSpec::TwoLevelShifted { c }) => s.push_str(&format!("-c{c}")),
            Some(RewardSpec::TwoLevel) | None => {}
        }
        if self.timing == RewardTiming::Literal {
            s.push_str("-literal");
        }
        if let Some(p) = self.transmit {
            s.push_str(&format!("-p{p}"));
        }
        s
    }

    pub fn learner_config(&self) -> Option<LearnerConfig> {
        let cfg = self.kind.learner()?;
        Some(
            cfg.with_reward(self.reward.unwrap_or(RewardSpec::TwoLevel))
                .with_timing(self.timing),
        )
    }

    fn agent(&self, controlled: usize, bound: Option<&Arc<StatePolicy>>) -> Result<AgentKind> {
        if let Some(cfg) = self.learner_config() {
            return Ok(AgentKind::Learner(cfg));
        }
        Ok(match self.kind {
            SchemeKind::Aloha => AgentKind::Aloha {
                transmit: self.transmit.unwrap_or(1.0 / controlled.max(1) as f64),
            },
            SchemeKind::AlwaysTransmit => AgentKind::AlwaysTransmit,
            SchemeKind::AlwaysIdle => AgentKind::AlwaysIdle,
            SchemeKind::BoundPolicy => AgentKind::FullInfo(Arc::clone(bound.ok_or_else(|| {
                Error::InvalidScenario("bound-policy needs a two-device group with D <= 4".into())
            })?)),
            _ => unreachable!("learner schemes handled above"),
        })
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Inverse of [`Scheme::label`]: a scheme name followed by any of `-multi`,
/// `-c<shift>`, `-literal`, `-p<transmit>`.
impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("cannot parse scheme {s:?}"));
        let kind = SchemeKind::ALL
            .into_iter()
            .filter(|k| s == k.name() || s.starts_with(&format!("{}-", k.name())))
            .max_by_key(|k| k.name().len())
            .ok_or_else(bad)?;
        let mut scheme = Scheme::new(kind);
        let rest = &s[kind.name().len()..];
        for token in rest.split('-').skip(1) {
            match token {
                "multi" => scheme.reward = Some(RewardSpec::MultiLevel),
                "literal" => scheme.timing = RewardTiming::Literal,
                t if t.starts_with('c') => {
                    let c = t[1..].parse().map_err(|_| bad())?;
                    scheme.reward = Some(RewardSpec::TwoLevelShifted { c });
                }
                t if t.starts_with('p') => {
                    let p: f64 = t[1..].parse().map_err(|_| bad())?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(bad());
                    }
                    scheme.transmit = Some(p);
                }
                _ => return Err(bad()),
            }
        }
        if scheme.kind.learner().is_none()
            && (scheme.reward.is_some() || scheme.timing != RewardTiming::default())
        {
            return Err(Error::InvalidParameter(format!(
                "{s:?}: reward options apply to learning schemes only"
            )));
        }
        if scheme.transmit.is_some() && scheme.kind != SchemeKind::Aloha {
            return Err(Error::InvalidParameter(format!(
                "{s:?}: a transmit probability applies to aloha only"
            )));
        }
        Ok(scheme)
    }
}

/// Devices of one group: uncontrollable ALOHA devices and the parameters of
/// the controllable ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub aloha: Vec<DeviceParams>,
    pub controlled: Vec<DeviceParams>,
}

impl Population {
    pub fn two_device(p: &TwoDeviceParams) -> Self {
        Self {
            aloha: vec![p.aloha_device()],
            controlled: vec![p.agent_device()],
        }
    }

    pub fn deadline(&self) -> usize {
        self.aloha
            .iter()
            .chain(&self.controlled)
            .map(|d| d.deadline)
            .next()
            .unwrap_or(0)
    }

    /// The two-device tuple, when this is a two-device Bernoulli group.
    pub fn as_two_device(&self) -> Option<TwoDeviceParams> {
        match (self.aloha.as_slice(), self.controlled.as_slice()) {
            ([a], [c]) => match (a.arrivals, c.arrivals) {
                (
                    crate::model::ArrivalModel::Bernoulli { p: pa },
                    crate::model::ArrivalModel::Bernoulli { p: pc },
                ) => Some(TwoDeviceParams::new(
                    pa, pc, a.success, c.success, a.transmit, a.deadline,
                )),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn scenario(
        &self,
        scheme: &Scheme,
        seed: u64,
        bound: Option<&Arc<StatePolicy>>,
    ) -> Result<ScenarioConfig> {
        let agent = scheme.agent(self.controlled.len(), bound)?;
        Ok(ScenarioConfig {
            aloha: self.aloha.clone(),
            controlled: self
                .controlled
                .iter()
                .map(|p| ControlledDevice {
                    params: *p,
                    agent: agent.clone(),
                })
                .collect(),
            seed,
        })
    }

    /// Parameter columns `p_b, p_b2, p_s, p_s2, p_t`: means over the ALOHA
    /// devices (unprimed) and the controllable devices (primed); None for an
    /// empty side.
    fn param_columns(&self) -> [Option<f64>; 5] {
        fn mean(v: &[DeviceParams], f: impl Fn(&DeviceParams) -> f64) -> Option<f64> {
            (!v.is_empty()).then(|| v.iter().map(f).sum::<f64>() / v.len() as f64)
        }
        [
            mean(&self.aloha, |d| d.arrivals.mean()),
            mean(&self.controlled, |d| d.arrivals.mean()),
            mean(&self.aloha, |d| d.success),
            mean(&self.controlled, |d| d.success),
            mean(&self.aloha, |d| d.transmit),
        ]
    }
}

/// How groups are populated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PopulationSpec {
    /// One ALOHA and one controllable device with sampled parameters.
    TwoDevice,
    /// One fixed two-device tuple for every group.
    Fixed {
        p_b: f64,
        p_b2: f64,
        p_s: f64,
        p_s2: f64,
        p_t: f64,
    },
    /// `n1` ALOHA and `n2` controllable devices, each with sampled parameters.
    Multi { n1: usize, n2: usize },
    /// `n1` saturated ALOHA devices with transmit `1/(4 n1)` and success
    /// 0.5, plus `n2` controllable devices with sampled parameters.
    Congested { n1: usize, n2: usize },
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PopulationSpec::Fixed {
                p_b,
                p_b2,
                p_s,
                p_s2,
                p_t,
            } => TwoDeviceParams::new(p_b, p_b2, p_s, p_s2, p_t, 1).validate(),
            PopulationSpec::Multi { n1, n2 } if n1 + n2 == 0 => {
                Err(Error::InvalidScenario("population has no devices".into()))
            }
            PopulationSpec::Congested { n1: 0, .. } => Err(Error::InvalidScenario(
                "congested population needs n1 >= 1".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn draw<R: Rng + ?Sized>(
        &self,
        ranges: &ParamRanges,
        deadline: usize,
        rng: &mut R,
    ) -> Population {
        match *self {
            PopulationSpec::TwoDevice => {
                Population::two_device(&sample_params(ranges, deadline, rng))
            }
            PopulationSpec::Fixed {
                p_b,
                p_b2,
                p_s,
                p_s2,
                p_t,
            } => Population::two_device(&TwoDeviceParams::new(p_b, p_b2, p_s, p_s2, p_t, deadline)),
            PopulationSpec::Multi { n1, n2 } => Population {
                aloha: (0..n1)
                    .map(|_| sample_device(ranges, deadline, rng))
                    .collect(),
                controlled: (0..n2)
                    .map(|_| sample_device(ranges, deadline, rng))
                    .collect(),
            },
            PopulationSpec::Congested { n1, n2 } => Population {
                aloha: vec![
                    DeviceParams::bernoulli(1.0, deadline, 0.5, 1.0 / (4.0 * n1 as f64));
                    n1
                ],
                controlled: (0..n2)
                    .map(|_| sample_device(ranges, deadline, rng))
                    .collect(),
            },
        }
    }

    fn counts(&self) -> (usize, usize) {
        match *self {
            PopulationSpec::TwoDevice | PopulationSpec::Fixed { .. } => (1, 1),
            PopulationSpec::Multi { n1, n2 } | PopulationSpec::Congested { n1, n2 } => (n1, n2),
        }
    }
}

/// A sweep: for every hard delay, `groups` parameter groups, each running
/// every scheme for `slots` slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub population: PopulationSpec,
    pub deadlines: Vec<usize>,
    pub schemes: Vec<Scheme>,
    pub groups: usize,
    pub slots: u64,
    /// Evaluation window at the end of each run.
    pub window: usize,
    pub seed: u64,
    #[serde(default)]
    pub ranges: ParamRanges,
    /// Also solve the LP bound for two-device groups with small `D`.
    #[serde(default)]
    pub bound: bool,
    /// Block length of the windowed-throughput series used for convergence.
    #[serde(default = "default_block")]
    pub series_block: usize,
}

fn default_block() -> usize {
    DEFAULT_SERIES_BLOCK
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 {
            return Err(Error::InvalidParameter(
                "group count must be at least 1".into(),
            ));
        }
        if self.window == 0 || self.slots < self.window as u64 {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= window <= slots, got window {} and slots {}",
                self.window, self.slots
            )));
        }
        if self.series_block == 0 {
            return Err(Error::InvalidParameter(
                "series block must be positive".into(),
            ));
        }
        if self.deadlines.is_empty() || self.deadlines.contains(&0) {
            return Err(Error::InvalidParameter(
                "deadlines must be a non-empty list of positive values".into(),
            ));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidParameter("no schemes to run".into()));
        }
        self.ranges.validate()?;
        self.population.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchemeOutcome {
    pub scheme: String,
    pub throughput: f64,
    pub power: f64,
    /// Start of the first block after which every block stays within the
    /// convergence band around the final-window throughput.
    pub convergence_slot: Option<u64>,
    /// Windowed throughput per block.
    #[serde(skip)]
    pub series: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupRow {
    pub group: usize,
    pub seed: u64,
    pub deadline: usize,
    pub population: Population,
    pub bound: Option<f64>,
    pub outcomes: Vec<SchemeOutcome>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub schemes: Vec<String>,
    pub n1: usize,
    pub n2: usize,
    pub rows: Vec<GroupRow>,
}

/// Smallest block index `k` such that every block from `k` on lies within
/// `tolerance` (relative) of `reference`, reported as the block's first slot.
pub fn convergence_slot(
    series: &[f64],
    block: usize,
    reference: f64,
    tolerance: f64,
) -> Option<u64> {
    let band = tolerance * reference.abs().max(1e-12);
    let mut start = series.len();
    for (k, v) in series.iter().enumerate().rev() {
        if (v - reference).abs() > band {
            break;
        }
        start = k;
    }
    (start < series.len()).then(|| (start * block) as u64)
}

/// Runs one group: every scheme under the group seed.
pub fn run_group(
    spec: &ExperimentSpec,
    group: usize,
    deadline: usize,
    population: Population,
    seed: u64,
) -> Result<GroupRow> {
    let bound = match population.as_two_device() {
        Some(p) if spec.bound && p.deadline <= MAX_BOUND_DEADLINE => {
            Some(upper_bound(&build_mdp(&p)?)?)
        }
        _ => None,
    };
    let bound_policy = bound.as_ref().map(|b| Arc::new(b.policy.clone()));
    let options = RunOptions {
        window_capacity: spec.window,
        series_block: Some(spec.series_block),
        keep_trace: false,
    };
    let mut outcomes = Vec::with_capacity(spec.schemes.len());
    for scheme in &spec.schemes {
        let scenario = population.scenario(scheme, seed, bound_policy.as_ref())?;
        let out = run(&scenario, spec.slots, &options)?;
        let throughput = out.metrics.timely_throughput(spec.window)?;
        let power = out.metrics.power(spec.window)?;
        let series: Vec<f64> = out.metrics.series().into_iter().map(|(t, _)| t).collect();
        outcomes.push(SchemeOutcome {
            scheme: scheme.label(),
            throughput,
            power,
            convergence_slot: convergence_slot(
                &series,
                spec.series_block,
                throughput,
                DEFAULT_CONVERGENCE_TOLERANCE,
            ),
            series,
        });
    }
    Ok(GroupRow {
        group,
        seed,
        deadline,
        population,
        bound: bound.map(|b| b.value),
        outcomes,
    })
}

/// Runs every group of `spec` in parallel and returns rows in group order.
/// Groups are numbered `deadline_index * groups + g`; parameters depend only
/// on `g`, so each hard delay sees the same parameter draws.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    let jobs: Vec<(usize, usize, usize)> = spec
        .deadlines
        .iter()
        .enumerate()
        .flat_map(|(di, &d)| (0..spec.groups).map(move |g| (di * spec.groups + g, g, d)))
        .collect();
    let rows = jobs
        .into_par_iter()
        .map(|(group, g, d)| {
            let mut sampler = substream(spec.seed, Stream::Sampling, g);
            let population = spec.population.draw(&spec.ranges, d, &mut sampler);
            let seed = child_seed(spec.seed, group as u64);
            run_group(spec, group, d, population, seed).map_err(|e| Error::GroupFailed {
                group,
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (n1, n2) = spec.population.counts();
    Ok(SweepResult {
        schemes: spec.schemes.iter().map(Scheme::label).collect(),
        n1,
        n2,
        rows,
    })
}

impl SweepResult {
    /// Arithmetic mean of each scheme's throughput over the rows, in row order.
    pub fn mean_throughput(&self, scheme: usize) -> f64 {
        mean_in_order(self.rows.iter().map(|r| r.outcomes[scheme].throughput))
    }

    pub fn mean_power(&self, scheme: usize) -> f64 {
        mean_in_order(self.rows.iter().map(|r| r.outcomes[scheme].power))
    }

    pub fn scheme_index(&self, label: &str) -> Option<usize> {
        self.schemes.iter().position(|s| s == label)
    }

    /// Writes one row per group and a final `mean` row. Columns: `group,
    /// seed, p_b, p_b2, p_s, p_s2, p_t, D, N1, N2, bound`, then per scheme
    /// `<label>_throughput, <label>_power, <label>_convergence_slot`. With
    /// more than two devices the parameter columns hold group means.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "group", "seed", "p_b", "p_b2", "p_s", "p_s2", "p_t", "D", "N1", "N2", "bound",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for s in &self.schemes {
            header.push(format!("{s}_throughput"));
            header.push(format!("{s}_power"));
            header.push(format!("{s}_convergence_slot"));
        }
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.rows {
            let mut rec = vec![r.group.to_string(), r.seed.to_string()];
            rec.extend(r.population.param_columns().into_iter().map(opt));
            rec.push(r.deadline.to_string());
            rec.push(r.population.aloha.len().to_string());
            rec.push(r.population.controlled.len().to_string());
            rec.push(opt(r.bound));
            for o in &r.outcomes {
                rec.push(o.throughput.to_string());
                rec.push(o.power.to_string());
                rec.push(o.convergence_slot.map_or(String::new(), |s| s.to_string()));
            }
            w.write_record(&rec)?;
        }
        let mut rec = vec!["mean".to_string(), String::new()];
        for k in 0..5 {
            let vals: Vec<f64> = self
                .rows
                .iter()
                .filter_map(|r| r.population.param_columns()[k])
                .collect();
            rec.push(if vals.is_empty() {
                String::new()
            } else {
                mean_in_order(vals.into_iter()).to_string()
            });
        }
        rec.extend([String::new(), self.n1.to_string(), self.n2.to_string()]);
        let bounds: Vec<f64> = self.rows.iter().filter_map(|r| r.bound).collect();
        rec.push(if bounds.len() == self.rows.len() && !bounds.is_empty() {
            mean_in_order(bounds.into_iter()).to_string()
        } else {
            String::new()
        });
        for k in 0..self.schemes.len() {
            rec.push(self.mean_throughput(k).to_string());
            rec.push(self.mean_power(k).to_string());
            rec.push(String::new());
        }
        w.write_record(&rec)?;
        w.flush()?;
        Ok(())
    }

    /// Writes the convergence series, one row per (group, scheme, block):
    /// `group, D, scheme, slot, throughput` with `slot` the block's last slot.
    pub fn write_series_csv<W: Write>(&self, block: usize, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["group", "D", "scheme", "slot", "throughput"])?;
        for r in &self.rows {
            for o in &r.outcomes {
                for (k, t) in o.series.iter().enumerate() {
                    w.write_record([
                        r.group.to_string(),
                        r.deadline.to_string(),
                        o.scheme.clone(),
                        ((k + 1) * block).to_string(),
                        t.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn mean_in_order(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// The congestion grid: for every `n1` and `n2`, a sweep of `groups` groups
/// with saturated ALOHA devices and `n2` controllable devices running each
/// scheme. `n2 = 0` gives the uncontrolled baseline.
pub fn congestion_study(
    n1_values: &[usize],
    n2_values: &[usize],
    template: &ExperimentSpec,
) -> Result<Vec<SweepResult>> {
    let mut out = Vec::new();
    for &n1 in n1_values {
        if !(1..=3).contains(&n1) {
            return Err(Error::InvalidParameter(format!("n1 = {n1} outside 1..=3")));
        }
        for &n2 in n2_values {
            if n2 != 0 && !(10..=100).contains(&n2) {
                return Err(Error::InvalidParameter(format!(
                    "n2 = {n2} must be 0 or in 10..=100"
                )));
            }
            let mut spec = template.clone();
            spec.population = PopulationSpec::Congested { n1, n2 };
            if n2 == 0 {
                // nothing to control; one pass is enough
                spec.schemes = vec![Scheme::new(SchemeKind::AlwaysIdle)];
            }
            out.push(run_experiment(&spec)?);
        }
    }
    Ok(out)
}

/// Writes one row per (n1, n2, scheme) with the mean throughput and power.
pub fn write_congestion_csv<W: Write>(results: &[SweepResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N1", "N2", "scheme", "throughput", "power"])?;
    for r in results {
        for (k, s) in r.schemes.iter().enumerate() {
            let label = if r.n2 == 0 { "baseline" } else { s.as_str() };
            w.write_record([
                r.n1.to_string(),
                r.n2.to_string(),
                label.to_string(),
                r.mean_throughput(k).to_string(),
                r.mean_power(k).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Creates `path` (and its parent directories) and hands a buffered writer
/// to `write`, mapping failures to errors that name the path.
pub fn write_file<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::result::Result<(), Box<dyn std::error::Error + Send + Sync>>,
{
    let io_err = |source: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err)?;
    }
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut buf = std::io::BufWriter::new(file);
    write(&mut buf).map_err(|e| match e.downcast::<std::io::Error>() {
        Ok(io) => io_err(*io),
        Err(other) => io_err(std::io::Error::other(other.to_string())),
    })?;
    buf.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec {
            population: PopulationSpec::TwoDevice,
            deadlines: vec![2],
            schemes: vec![
                Scheme::new(SchemeKind::Tsra),
                Scheme::new(SchemeKind::Aloha).with_transmit(0.5),
            ],
            groups: 3,
            slots: 4_000,
            window: 2_000,
            seed: 11,
            ranges: ParamRanges::default(),
            bound: true,
            series_block: 1_000,
        }
    }

    #[test]
    fn sampling_is_reproducible_and_in_range() {
        let r = ParamRanges::default();
        let a: Vec<TwoDeviceParams> = {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            (0..20).map(|_| sample_params(&r, 3, &mut rng)).collect()
        };
        let b: Vec<TwoDeviceParams> = {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            (0..20).map(|_| sample_params(&r, 3, &mut rng)).collect()
        };
        assert_eq!(a, b);
        for p in &a {
            assert!(
                (0.1..=1.0).contains(&p.aloha_arrival) && (0.05..=0.95).contains(&p.aloha_transmit)
            );
        }
    }

    #[test]
    fn degenerate_range_is_constant() {
        let r = ParamRanges {
            arrival: Interval::new(0.5, 0.5),
            ..ParamRanges::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let p = sample_params(&r, 1, &mut rng);
            assert_eq!((p.aloha_arrival, p.agent_arrival), (0.5, 0.5));
        }
    }

    #[test]
    fn arrival_draws_have_uniform_mean() {
        let r = ParamRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mean = (0..n).map(|_| r.arrival.draw(&mut rng)).sum::<f64>() / n as f64;
        // sd of the mean is 0.9 / sqrt(12 n) ~ 0.0008
        assert!((mean - 0.55).abs() < 0.01, "{mean}");
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = tiny_spec();
        s.groups = 0;
        assert!(run_experiment(&s).is_err());
        let mut s = tiny_spec();
        s.window = 5_000;
        assert!(run_experiment(&s).is_err());
        let mut s = tiny_spec();
        s.ranges.arrival = Interval::new(0.6, 0.4);
        assert!(run_experiment(&s).is_err());
    }

    #[test]
    fn rows_match_groups_and_means_match_rows() {
        let r = run_experiment(&tiny_spec()).unwrap();
        assert_eq!(r.rows.len(), 3);
        for row in &r.rows {
            assert!(row.bound.is_some());
            for o in &row.outcomes {
                assert!((0.0..=1.0).contains(&o.throughput));
                assert!((0.0..=2.0).contains(&o.power));
            }
        }
        let manual = (r.rows[0].outcomes[0].throughput
            + r.rows[1].outcomes[0].throughput
            + r.rows[2].outcomes[0].throughput)
            / 3.0;
        assert_eq!(r.mean_throughput(0), manual);
    }

    #[test]
    fn csv_is_deterministic() {
        let render = || {
            let r = run_experiment(&tiny_spec()).unwrap();
            let mut buf = Vec::new();
            r.write_csv(&mut buf).unwrap();
            buf
        };
        let a = render();
        assert_eq!(a, render());
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("group,seed,p_b,p_b2,p_s,p_s2,p_t,D,N1,N2,bound,tsra_throughput,"));
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().last().unwrap().starts_with("mean,"));
    }

    #[test]
    fn convergence_slot_rules() {
        let s = [0.1, 0.5, 0.31, 0.29, 0.3];
        assert_eq!(convergence_slot(&s, 100, 0.3, 0.1), Some(200));
        assert_eq!(convergence_slot(&[0.3, 0.3], 100, 0.3, 0.1), Some(0));
        assert_eq!(convergence_slot(&[0.3, 0.9], 100, 0.3, 0.1), None);
    }

    #[test]
    fn scheme_labels_and_parsing() {
        assert_eq!("tsra".parse::<SchemeKind>().unwrap(), SchemeKind::Tsra);
        assert!("nope".parse::<SchemeKind>().is_err());
        assert_eq!(
            Scheme::new(SchemeKind::Tsra)
                .with_reward(RewardSpec::MultiLevel)
                .label(),
            "tsra-multi"
        );
        assert_eq!(
            Scheme::new(SchemeKind::Fsqa)
                .with_reward(RewardSpec::TwoLevelShifted { c: 0.3 })
                .label(),
            "fsqa-c0.3"
        );
    }

    #[test]
    fn scheme_labels_roundtrip() {
        for label in [
            "tsra",
            "tsra-multi",
            "fsqa-c0.3",
            "fsra-literal",
            "aloha-p0.25",
            "always-idle",
            "bound-policy",
        ] {
            assert_eq!(label.parse::<Scheme>().unwrap().label(), label);
        }
        for bad in [
            "tsra-",
            "aloha-multi",
            "tsra-p0.5",
            "aloha-p2",
            "always",
            "fsqa-cx",
        ] {
            assert!(bad.parse::<Scheme>().is_err(), "{bad}");
        }
    }

    #[test]
    fn congested_population_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p =
            PopulationSpec::Congested { n1: 2, n2: 10 }.draw(&ParamRanges::default(), 10, &mut rng);
        assert_eq!(p.aloha.len(), 2);
        assert_eq!(p.controlled.len(), 10);
        assert!(p
            .aloha
            .iter()
            .all(|d| d.transmit == 0.125 && d.success == 0.5 && d.arrivals.mean() == 1.0));
    }

    #[test]
    fn aloha_defaults_to_one_over_n2() {
        let pop = Population {
            aloha: vec![],
            controlled: vec![DeviceParams::bernoulli(0.5, 2, 0.5, 1.0); 4],
        };
        let sc = pop
            .scenario(&Scheme::new(SchemeKind::Aloha), 0, None)
            .unwrap();
        assert!(sc
            .controlled
            .iter()
            .all(|c| matches!(c.agent, AgentKind::Aloha { transmit } if transmit == 0.25)));
        assert!(pop
            .scenario(&Scheme::new(SchemeKind::BoundPolicy), 0, None)
            .is_err());
    }
}
