use crate::dynamics::SimState;
use crate::error::Result;
use crate::kinematics::{center_of_mass_velocity, forward_kinematics, pitch_of};
use crate::model::{JointKind, Model};

use super::{push_muscle_quartet, require_tag, EpisodeStatus, TerminationReason};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunForwardLimits {
    pub min_head_height: f64,
    pub min_pelvis_height: f64,
    /// Torso pitch must stay strictly inside (-max_pitch, max_pitch).
    pub max_pitch: f64,
}

impl Default for RunForwardLimits {
    fn default() -> Self {
        Self {
            min_head_height: 0.9,
            min_pelvis_height: 0.6,
            max_pitch: 0.8,
        }
    }
}

/// Bodies and joints the run-forward task reads, resolved from tags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunForwardTask {
    pub head: usize,
    pub pelvis: usize,
    pub torso: usize,
    pub feet: Vec<usize>,
    /// Root slide along world x, left out of the observation.
    pub root_x: Option<usize>,
    pub limits: RunForwardLimits,
}

impl RunForwardTask {
    pub fn new(model: &Model) -> Result<Self> {
        let root_x = model.joint_chain(0).iter().copied().find(|&j| {
            let joint = &model.joints[j];
            joint.kind == JointKind::Slide && joint.body == 0 && (joint.axis.x - 1.0).abs() < 1e-9
        });
        Ok(Self {
            head: require_tag(model, "head")?[0],
            pelvis: require_tag(model, "pelvis")?[0],
            torso: require_tag(model, "torso")?[0],
            feet: require_tag(model, "foot")?,
            root_x,
            limits: RunForwardLimits::default(),
        })
    }

    pub fn observe(&self, model: &Model, state: &SimState) -> Result<Vec<f64>> {
        let frames = forward_kinematics(model, &state.pose)?;
        let mut obs = vec![
            frames.body_positions[self.head].z,
            frames.body_positions[self.pelvis].z,
        ];
        obs.extend(self.feet.iter().map(|&f| frames.body_positions[f].z));
        obs.extend(
            state
                .pose
                .angles
                .iter()
                .enumerate()
                .filter(|&(j, _)| Some(j) != self.root_x)
                .map(|(_, q)| *q),
        );
        obs.extend(&state.pose.velocities);
        push_muscle_quartet(&mut obs, state);
        obs.push(center_of_mass_velocity(model, &frames, &state.pose.velocities).x);
        Ok(obs)
    }
}

/// Reward and termination for the current state.
pub fn run_forward_step(model: &Model, task: &RunForwardTask, state: &SimState) -> Result<EpisodeStatus> {
    let frames = forward_kinematics(model, &state.pose)?;
    let reward = center_of_mass_velocity(model, &frames, &state.pose.velocities).x;
    let pitch = pitch_of(&frames.body_rotations[task.torso]);
    let l = &task.limits;
    let reason = if frames.body_positions[task.head].z < l.min_head_height
        || frames.body_positions[task.pelvis].z < l.min_pelvis_height
    {
        TerminationReason::Height
    } else if !(pitch > -l.max_pitch && pitch < l.max_pitch) {
        TerminationReason::Rotation
    } else {
        TerminationReason::None
    };
    Ok(EpisodeStatus::terminal(reward, reason))
}
