//! Delay-constrained random access on an unreliable collision channel.
//!
//! * [`model`]: lead-time queues, actions, observations, device parameters.
//! * [`env`]: the slotted channel simulator and its metrics.
//! * [`agents`]: tabular Q- and R-learning agents and their state abstractions.
//! * [`lp`]: a dense revised simplex solver.
//! * [`mdp`]: the exact two-device model and its LP throughput bound.
//! * [`harness`]: parameter sampling, sweeps and experiment export.

pub mod agents;
pub mod env;
pub mod error;
pub mod harness;
pub mod lp;
pub mod mdp;
pub mod model;
pub mod rng;

pub use agents::{
    Abstraction, Algorithm, EpsilonSchedule, Learner, LearnerConfig, RewardSpec, RewardTiming,
};
pub use env::{
    run, AgentKind, ControlledDevice, RunOptions, RunOutput, ScenarioConfig, Simulation,
};
pub use error::{Error, Result};
pub use lp::{LpProgram, LpSolution, LpStatus};
pub use mdp::{
    best_fixed_policy, build_mdp, upper_bound, BoundResult, MdpModel, StatePolicy, TwoDeviceParams,
};
pub use model::{
    Action, ApFeedback, ArrivalModel, ChannelObservation, DeviceParams, LeadTimeQueue,
};
