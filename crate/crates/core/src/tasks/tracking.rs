use nalgebra::{Matrix3, Vector3};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dynamics::SimState;
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, FrameSet};
use crate::mocap::Trajectory;
use crate::model::Model;
use crate::rng::Rng;

use super::{push_muscle_quartet, require_tag, EpisodeStatus, TerminationReason};

pub const DEFAULT_W_P: f64 = 0.2;
pub const DEFAULT_W_R: f64 = 0.1;
pub const REWARD_FLOOR: f64 = 0.01;
/// Reference frames per control step (240 Hz reference, 40 Hz control).
pub const SUBSAMPLE: usize = 6;
pub const DEFAULT_POSE_NOISE: f64 = 0.02;
/// Control steps at the end of a clip never used as a start.
pub const START_MARGIN: usize = 20;

/// exp(-w_p * e_p) * exp(-w_r * e_r) with e_p the summed body position
/// errors and e_r the summed rotation angles between matching bodies.
pub fn tracking_reward(frames: &FrameSet, reference: &FrameSet, w_p: f64, w_r: f64) -> f64 {
    let e_p: f64 = frames
        .body_positions
        .iter()
        .zip(&reference.body_positions)
        .map(|(p, r)| (r - p).norm())
        .sum();
    let e_r: f64 = frames
        .body_rotations
        .iter()
        .zip(&reference.body_rotations)
        .map(|(r, rr)| rotation_angle(&(rr * r.transpose())))
        .sum();
    (-w_p * e_p).exp() * (-w_r * e_r).exp()
}

/// Angle of a rotation matrix. atan2 of the skew and trace parts keeps
/// precision near the identity, where arccos of the trace loses half the
/// digits.
fn rotation_angle(d: &Matrix3<f64>) -> f64 {
    let skew = Vector3::new(
        d[(2, 1)] - d[(1, 2)],
        d[(0, 2)] - d[(2, 0)],
        d[(1, 0)] - d[(0, 1)],
    );
    let cos = ((d.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    (skew.norm() / 2.0).atan2(cos)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingTask {
    pub reference: Trajectory,
    /// Reference frames at every control step.
    pub reference_frames: Vec<FrameSet>,
    pub w_p: f64,
    pub w_r: f64,
    pub pose_noise: f64,
    pub control_dt: f64,
    pelvis: usize,
    feet: Vec<usize>,
}

impl TrackingTask {
    pub fn new(model: &Model, reference: Trajectory, control_dt: f64) -> Result<Self> {
        if reference.frames() == 0 {
            return Err(Error::InvalidArgument("empty reference trajectory".into()));
        }
        let reference_frames = (0..reference.frames())
            .step_by(SUBSAMPLE)
            .map(|t| forward_kinematics(model, &reference.pose(t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            reference_frames,
            reference,
            w_p: DEFAULT_W_P,
            w_r: DEFAULT_W_R,
            pose_noise: DEFAULT_POSE_NOISE,
            control_dt,
            pelvis: require_tag(model, "pelvis")?[0],
            feet: require_tag(model, "foot")?,
        })
    }

    /// Control steps covered by the reference.
    pub fn control_steps(&self) -> usize {
        self.reference_frames.len()
    }

    /// Random start step (never within the last [`START_MARGIN`] steps) and
    /// the reference pose there with Gaussian noise on the angles;
    /// velocities are copied unchanged.
    pub fn initial_state(&self, model: &Model, rng: &mut Rng) -> Result<(usize, SimState)> {
        let eligible = self.control_steps().saturating_sub(START_MARGIN).max(1);
        let t0 = rng.random_range(0..eligible);
        let mut pose = self.reference.pose(t0 * SUBSAMPLE);
        if self.pose_noise > 0.0 {
            let normal = Normal::new(0.0, self.pose_noise)
                .map_err(|e| Error::InvalidArgument(format!("pose noise: {e}")))?;
            for (q, joint) in pose.angles.iter_mut().zip(&model.joints) {
                if !joint.is_locked() {
                    *q += normal.sample(rng);
                }
            }
        }
        for (q, joint) in pose.angles.iter_mut().zip(&model.joints) {
            *q = q.clamp(joint.range.0, joint.range.1);
        }
        Ok((t0, SimState::new(model, pose)?))
    }

    pub fn observe(&self, model: &Model, state: &SimState, t: usize) -> Result<Vec<f64>> {
        let frames = forward_kinematics(model, &state.pose)?;
        let mut obs = vec![frames.body_positions[self.pelvis].z];
        obs.extend(self.feet.iter().map(|&f| frames.body_positions[f].z));
        obs.extend(&state.pose.angles);
        obs.extend(&state.pose.velocities);
        push_muscle_quartet(&mut obs, state);
        let left = self.control_steps().saturating_sub(t + 1);
        obs.push(left as f64 * self.control_dt);
        Ok(obs)
    }
}

/// Reward against reference frame `SUBSAMPLE * t`; terminates below the
/// reward floor or on the last reference step.
pub fn tracking_step(
    model: &Model,
    state: &SimState,
    task: &TrackingTask,
    t: usize,
) -> Result<EpisodeStatus> {
    let reference = task.reference_frames.get(t).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "control step {t} is past the reference ({} steps)",
            task.control_steps()
        ))
    })?;
    let frames = forward_kinematics(model, &state.pose)?;
    let reward = tracking_reward(&frames, reference, task.w_p, task.w_r);
    let reason = if reward < REWARD_FLOOR {
        TerminationReason::RewardFloor
    } else if t + 1 >= task.control_steps() {
        TerminationReason::ClipEnd
    } else {
        TerminationReason::None
    };
    Ok(EpisodeStatus::terminal(reward, reason))
}
