//! Muscle routing through waypoints and around wrap geometry.

mod path;
mod wrap;

pub use path::{
    joint_torques, moment_arms, muscle_kinematics, path_length, path_span, MomentArms, MuscleKinematics,
    MusclePath, PathResult, PathSegment, MOMENT_ARM_STEP,
};
pub use wrap::{wrap_cylinder, wrap_sphere, Segment, TANGENCY_TOLERANCE};
