//! Forward kinematics.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::Result;
use crate::model::{JointKind, Model, Pose};

/// World placement of every body, site and joint for one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub body_positions: Vec<Vector3<f64>>,
    pub body_rotations: Vec<Matrix3<f64>>,
    /// World centre of mass of each body.
    pub body_coms: Vec<Vector3<f64>>,
    pub site_positions: Vec<Vector3<f64>>,
    /// World joint axes and the point each joint acts about.
    pub joint_axes: Vec<Vector3<f64>>,
    pub joint_anchors: Vec<Vector3<f64>>,
}

/// Rigid transform applied to the root's parent frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseFrame {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for BaseFrame {
    fn default() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }
}

pub fn axis_rotation(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_unchecked(*axis), angle).into_inner()
}

pub fn forward_kinematics(model: &Model, pose: &Pose) -> Result<FrameSet> {
    forward_kinematics_from(model, pose, &BaseFrame::default())
}

/// Forward kinematics with the world frame of the root's parent replaced by
/// `base`.
pub fn forward_kinematics_from(model: &Model, pose: &Pose, base: &BaseFrame) -> Result<FrameSet> {
    if pose.angles.len() != model.joints.len() {
        return Err(crate::Error::Dimension {
            what: "pose angles",
            expected: model.joints.len(),
            got: pose.angles.len(),
        });
    }
    Ok(frames_for_angles(model, &pose.angles, base))
}

pub(crate) fn frames_for_angles(model: &Model, angles: &[f64], base: &BaseFrame) -> FrameSet {
    let nb = model.bodies.len();
    let nj = model.joints.len();
    let mut out = FrameSet {
        body_positions: Vec::with_capacity(nb),
        body_rotations: Vec::with_capacity(nb),
        body_coms: Vec::with_capacity(nb),
        site_positions: vec![Vector3::zeros(); model.sites.len()],
        joint_axes: vec![Vector3::zeros(); nj],
        joint_anchors: vec![Vector3::zeros(); nj],
    };
    for body in &model.bodies {
        let (parent_p, parent_r) = match body.parent {
            Some(p) => (out.body_positions[p], out.body_rotations[p]),
            None => (base.translation, base.rotation),
        };
        let mut p = parent_p + parent_r * body.offset;
        let mut r = parent_r;
        for &j in &body.joints {
            let joint = &model.joints[j];
            let axis_world = r * joint.axis;
            out.joint_axes[j] = axis_world;
            out.joint_anchors[j] = p;
            match joint.kind {
                JointKind::Hinge => r *= axis_rotation(&joint.axis, angles[j]),
                JointKind::Slide => p += axis_world * angles[j],
            }
        }
        out.body_coms.push(p + r * body.com);
        out.body_positions.push(p);
        out.body_rotations.push(r);
    }
    for (s, site) in model.sites.iter().enumerate() {
        out.site_positions[s] = out.body_positions[site.body] + out.body_rotations[site.body] * site.position;
    }
    out
}

/// Linear velocity Jacobian column of a world point fixed to `body` with
/// respect to joint `j`. Zero when `j` does not move the body.
pub fn point_jacobian_column(
    model: &Model,
    frames: &FrameSet,
    body: usize,
    point: &Vector3<f64>,
    j: usize,
) -> Vector3<f64> {
    if !model.joint_chain(body).contains(&j) {
        return Vector3::zeros();
    }
    joint_point_column(model, frames, j, point)
}

#[inline]
pub(crate) fn joint_point_column(
    model: &Model,
    frames: &FrameSet,
    j: usize,
    point: &Vector3<f64>,
) -> Vector3<f64> {
    let axis = frames.joint_axes[j];
    match model.joints[j].kind {
        JointKind::Hinge => axis.cross(&(point - frames.joint_anchors[j])),
        JointKind::Slide => axis,
    }
}

/// World velocity of a point fixed to `body`.
pub fn point_velocity(
    model: &Model,
    frames: &FrameSet,
    body: usize,
    point: &Vector3<f64>,
    velocities: &[f64],
) -> Vector3<f64> {
    model
        .joint_chain(body)
        .iter()
        .map(|&j| joint_point_column(model, frames, j, point) * velocities[j])
        .sum()
}

/// Whole-model centre of mass.
pub fn center_of_mass(model: &Model, frames: &FrameSet) -> Vector3<f64> {
    let total = model.total_mass();
    model
        .bodies
        .iter()
        .zip(&frames.body_coms)
        .map(|(b, c)| c * b.mass)
        .sum::<Vector3<f64>>()
        / total
}

pub fn center_of_mass_velocity(model: &Model, frames: &FrameSet, velocities: &[f64]) -> Vector3<f64> {
    let total = model.total_mass();
    model
        .bodies
        .iter()
        .enumerate()
        .map(|(b, body)| point_velocity(model, frames, b, &frames.body_coms[b], velocities) * body.mass)
        .sum::<Vector3<f64>>()
        / total
}

/// Pitch of a rotation about the world y axis, read from the z component of
/// its x-axis column.
pub fn pitch_of(rotation: &Matrix3<f64>) -> f64 {
    let x = rotation.column(0);
    (-x[2]).atan2((x[0] * x[0] + x[1] * x[1]).sqrt())
}

/// Nearest rotation matrix (polar projection).
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}
