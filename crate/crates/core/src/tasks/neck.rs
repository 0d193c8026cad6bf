use nalgebra::Vector3;
use rand::Rng as _;

use crate::dynamics::SimState;
use crate::error::{Error, Result};
use crate::kinematics::forward_kinematics;
use crate::model::Model;
use crate::rng::Rng;

use super::{push_muscle_quartet, EpisodeStatus, TerminationReason};

/// Beak-to-target distance that ends an episode, metres.
pub const TARGET_THRESHOLD: f64 = 0.05;
/// Every this many episodes the neck is reset to its reference pose.
pub const RESET_PERIOD: usize = 100;

/// Uniform sample in the ball of radius `outer_r` around `base`, rejected
/// while it falls inside the ball of radius `inner_r` around
/// `base + inner_offset`.
pub fn neck_target_sample(
    rng: &mut Rng,
    outer_r: f64,
    inner_r: f64,
    base: &Vector3<f64>,
    inner_offset: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    if !(outer_r > 0.0) || inner_r < 0.0 || inner_offset.norm() + outer_r <= inner_r {
        return Err(Error::InvalidArgument(format!(
            "empty target region: outer radius {outer_r}, inner radius {inner_r}, offset {}",
            inner_offset.norm()
        )));
    }
    let inner_center = base + inner_offset;
    loop {
        let u = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if u.norm_squared() > 1.0 {
            continue;
        }
        let x = base + u * outer_r;
        if (x - inner_center).norm() > inner_r {
            return Ok(x);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeckTask {
    pub beak: usize,
    /// Centre of the target sphere (the rib cage origin).
    pub base: Vector3<f64>,
    pub outer_r: f64,
    pub inner_r: f64,
    pub inner_offset: Vector3<f64>,
}

impl NeckTask {
    pub fn new(model: &Model) -> Result<Self> {
        let beak = model.site_index("beak").ok_or_else(|| Error::Unknown {
            kind: "site",
            name: "beak".into(),
        })?;
        let frames = forward_kinematics(model, &model.default_pose())?;
        Ok(Self {
            beak,
            base: frames.body_positions[0],
            outer_r: 0.8,
            inner_r: 0.6,
            inner_offset: Vector3::zeros(),
        })
    }

    pub fn sample_target(&self, rng: &mut Rng) -> Result<Vector3<f64>> {
        neck_target_sample(rng, self.outer_r, self.inner_r, &self.base, &self.inner_offset)
    }

    pub fn observe(&self, model: &Model, state: &SimState, target: &Vector3<f64>) -> Result<Vec<f64>> {
        let beak = forward_kinematics(model, &state.pose)?.site_positions[self.beak];
        let mut obs = state.pose.angles.clone();
        obs.extend(&state.pose.velocities);
        push_muscle_quartet(&mut obs, state);
        obs.extend(beak.iter());
        obs.extend(target.iter());
        obs.extend((target - beak).iter());
        Ok(obs)
    }
}

/// Reward is minus the beak-to-target distance; reaching within
/// [`TARGET_THRESHOLD`] terminates.
pub fn neck_control_step(
    model: &Model,
    state: &SimState,
    target: &Vector3<f64>,
    task: &NeckTask,
) -> Result<EpisodeStatus> {
    let beak = forward_kinematics(model, &state.pose)?.site_positions[task.beak];
    let distance = (beak - target).norm();
    let reason = if distance < TARGET_THRESHOLD {
        TerminationReason::TargetReached
    } else {
        TerminationReason::None
    };
    Ok(EpisodeStatus::terminal(-distance, reason))
}
