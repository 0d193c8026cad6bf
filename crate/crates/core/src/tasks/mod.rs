//! Task definitions over the forward dynamics: observations, rewards,
//! terminations and initialisation for running forward, tracking a
//! reference trajectory and reaching with the neck.

mod env;
mod neck;
mod run_forward;
mod tracking;

use crate::dynamics::SimState;
use crate::model::Model;

pub use env::{
    run, ConstantPolicy, Env, EnvConfig, Policy, RandomPolicy, ReplayPolicy, RunSummary, StepOutcome, Task,
    DEFAULT_HORIZON,
};
pub use neck::{neck_control_step, neck_target_sample, NeckTask, RESET_PERIOD, TARGET_THRESHOLD};
pub use run_forward::{run_forward_step, RunForwardLimits, RunForwardTask};
pub use tracking::{
    tracking_reward, tracking_step, TrackingTask, DEFAULT_POSE_NOISE, DEFAULT_W_P, DEFAULT_W_R, REWARD_FLOOR,
    START_MARGIN, SUBSAMPLE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    None,
    Height,
    Rotation,
    RewardFloor,
    ClipEnd,
    TargetReached,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Height => "height",
            Self::Rotation => "rotation",
            Self::RewardFloor => "reward-floor",
            Self::ClipEnd => "clip-end",
            Self::TargetReached => "target-reached",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStatus {
    pub reward: f64,
    pub terminated: bool,
    pub reason: TerminationReason,
}

impl EpisodeStatus {
    pub fn running(reward: f64) -> Self {
        Self {
            reward,
            terminated: false,
            reason: TerminationReason::None,
        }
    }

    pub fn terminal(reward: f64, reason: TerminationReason) -> Self {
        Self {
            reward,
            terminated: reason != TerminationReason::None,
            reason,
        }
    }
}

/// Maps policy outputs in [-1, 1] to excitations in [0, 1].
pub fn action_map(actions: &[f64]) -> Vec<f64> {
    actions
        .iter()
        .map(|a| ((a + 1.0) / 2.0).clamp(0.0, 1.0))
        .collect()
}

/// Per-muscle force, activation, normalised length and normalised velocity.
pub(crate) fn push_muscle_quartet(obs: &mut Vec<f64>, state: &SimState) {
    for (m, f) in state.muscles.iter().zip(&state.forces) {
        obs.extend([*f, m.activation, m.length, m.velocity]);
    }
}

pub(crate) fn require_tag(model: &Model, tag: &str) -> crate::Result<Vec<usize>> {
    let found: Vec<usize> = model.bodies_tagged(tag).collect();
    if found.is_empty() {
        return Err(crate::Error::Unknown {
            kind: "body tag",
            name: tag.to_string(),
        });
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_mapping() {
        assert_eq!(
            action_map(&[-1.0, 0.0, 1.0, 1.2, -3.0]),
            vec![0.0, 0.5, 1.0, 1.0, 0.0]
        );
    }

    #[test]
    fn terminated_iff_reason() {
        assert!(!EpisodeStatus::terminal(1.0, TerminationReason::None).terminated);
        assert!(EpisodeStatus::terminal(1.0, TerminationReason::Height).terminated);
    }
}
