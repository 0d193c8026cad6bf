//! Penalty ground contact on sites tagged `contact`.

use nalgebra::Vector3;

use crate::kinematics::{point_velocity, FrameSet};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactParams {
    /// N/m
    pub stiffness: f64,
    /// N·s/m
    pub damping: f64,
    pub friction: f64,
    /// Tangential speed at which friction reaches ~76% (tanh(1)) of its cap.
    pub slip_speed: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            stiffness: 5e4,
            damping: 1e3,
            friction: 1.0,
            slip_speed: 1e-3,
        }
    }
}

/// Ground reaction on one site for height `z` (ground at zero) and world
/// velocity `v`.
pub fn contact_force(z: f64, v: &Vector3<f64>, params: &ContactParams) -> Vector3<f64> {
    if z >= 0.0 {
        return Vector3::zeros();
    }
    let normal = (params.stiffness * -z - params.damping * v.z).max(0.0);
    let slip = Vector3::new(v.x, v.y, 0.0);
    let speed = slip.norm();
    let tangential = if speed > 0.0 && normal > 0.0 {
        -slip / speed * (params.friction * normal * (speed / params.slip_speed).tanh())
    } else {
        Vector3::zeros()
    };
    tangential + Vector3::new(0.0, 0.0, normal)
}

/// Forces on every contact site, in the order of
/// `model.sites_tagged("contact")`.
pub fn contact_forces(
    model: &Model,
    frames: &FrameSet,
    velocities: &[f64],
    params: &ContactParams,
) -> Vec<(usize, Vector3<f64>)> {
    model
        .sites_tagged("contact")
        .map(|s| {
            let p = frames.site_positions[s];
            let body = model.sites[s].body;
            let v = if p.z < 0.0 {
                point_velocity(model, frames, body, &p, velocities)
            } else {
                Vector3::zeros()
            };
            (s, contact_force(p.z, &v, params))
        })
        .collect()
}
