//! Musculotendon simulation and motion-analysis toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] – articulated body trees, hinge/slide joints, sites, wrap
//!   geometry, mesh-derived inertia and the model document format.
//! * [`kinematics`] – forward kinematics and Jacobian helpers.
//! * [`muscle`] – activation filter, Hill-type force law and rest-length
//!   solving from actuator length ranges.
//! * [`routing`] – muscle paths through waypoints with sphere/cylinder
//!   wrapping, moment arms and joint torques.
//! * [`dynamics`] – dense-mass-matrix forward dynamics with penalty contact.
//! * [`mocap`] – marker clips, gap filling, IK retargeting, cyclic clips.
//! * [`tasks`] – run-forward, tracking and neck-reaching environments.
//! * [`gait`] – stance/swing segmentation and excitation profile comparison.

pub mod assets;
pub mod dynamics;
pub mod error;
pub mod gait;
pub mod kinematics;
pub mod mocap;
pub mod model;
pub mod muscle;
pub mod rng;
pub mod routing;
pub mod tasks;

pub use error::{Error, Result};
pub use kinematics::{forward_kinematics, FrameSet};
pub use model::{Model, Pose};
