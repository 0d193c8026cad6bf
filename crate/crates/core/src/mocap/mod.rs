//! Motion-capture pipeline: marker clips, interval selection, gap filling
//! and its masking evaluation, IK retargeting, velocity inference and
//! cyclic clips.

mod clip;
mod ik;
mod impute;
mod trajectory;

pub use clip::{rescale, select_interval, Clip, DEFAULT_RATE, MARKER_LAYOUT};
pub use ik::{
    ik_fit, ik_fit_from, synthesize_clip, ClampViolation, IkConfig, IkFit, IkParams, IkProblem,
    DEFAULT_REGULARIZER_WEIGHT, MAX_HALVINGS, MAX_REJECTIONS,
};
pub use impute::{evaluate_imputer, impute, HoldImputer, Imputer, SplineImputer};
pub use trajectory::{infer_velocities, make_cyclic, seam_jump, CyclicOptions, Trajectory};
