//! Fixtures shared by the criterion benches.

use dcra_core::{
    AgentKind, ControlledDevice, DeviceParams, LearnerConfig, ScenarioConfig, TwoDeviceParams,
};

/// The two-device operating point used throughout the benches.
pub fn reference(deadline: usize) -> TwoDeviceParams {
    TwoDeviceParams::new(0.5, 0.4, 0.7, 0.6, 0.4, deadline)
}

pub fn two_device(deadline: usize, agent: AgentKind) -> ScenarioConfig {
    let p = reference(deadline);
    ScenarioConfig {
        aloha: vec![p.aloha_device()],
        controlled: vec![ControlledDevice {
            params: p.agent_device(),
            agent,
        }],
        seed: 17,
    }
}

/// `n` controllable TSRA devices with identical parameters.
pub fn tsra_population(n: usize, deadline: usize) -> ScenarioConfig {
    ScenarioConfig {
        aloha: vec![],
        controlled: (0..n)
            .map(|_| ControlledDevice {
                params: DeviceParams::bernoulli(0.3, deadline, 0.8, 1.0),
                agent: AgentKind::Learner(LearnerConfig::tsra()),
            })
            .collect(),
        seed: 17,
    }
}
