//! Joint-space mass matrix, bias forces and energies.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::kinematics::FrameSet;
use crate::model::{JointKind, Model};

fn world_inertia(model: &Model, frames: &FrameSet, b: usize) -> Matrix3<f64> {
    let r = frames.body_rotations[b];
    r * model.bodies[b].inertia * r.transpose()
}

/// Dense joint-space inertia matrix, assembled body by body from centre of
/// mass Jacobians.
pub fn mass_matrix(model: &Model, frames: &FrameSet) -> DMatrix<f64> {
    let n = model.joints.len();
    let mut m = DMatrix::zeros(n, n);
    let mut lin = Vec::with_capacity(n);
    let mut ang = Vec::with_capacity(n);
    for (b, body) in model.bodies.iter().enumerate() {
        let chain = model.joint_chain(b);
        if chain.is_empty() {
            continue;
        }
        let c = frames.body_coms[b];
        let inertia = world_inertia(model, frames, b);
        lin.clear();
        ang.clear();
        for &j in chain {
            let s = frames.joint_axes[j];
            match model.joints[j].kind {
                JointKind::Hinge => {
                    lin.push(s.cross(&(c - frames.joint_anchors[j])));
                    ang.push(s);
                }
                JointKind::Slide => {
                    lin.push(s);
                    ang.push(Vector3::zeros());
                }
            }
        }
        for (x, &jx) in chain.iter().enumerate() {
            let iw = inertia * ang[x];
            for (y, &jy) in chain.iter().enumerate().skip(x) {
                let v = body.mass * lin[x].dot(&lin[y]) + ang[y].dot(&iw);
                m[(jx, jy)] += v;
                if x != y {
                    m[(jy, jx)] += v;
                }
            }
        }
    }
    m
}

/// Generalised forces needed to hold the model at zero joint acceleration:
/// Coriolis, centrifugal and gravity terms.
pub fn bias_forces(
    model: &Model,
    frames: &FrameSet,
    velocities: &[f64],
    gravity: &Vector3<f64>,
) -> DVector<f64> {
    let nb = model.bodies.len();
    let mut omega = vec![Vector3::zeros(); nb];
    let mut omega_dot = vec![Vector3::zeros(); nb];
    let mut vel = vec![Vector3::zeros(); nb];
    let mut acc = vec![Vector3::zeros(); nb];
    let mut tau = DVector::zeros(model.joints.len());

    for (b, body) in model.bodies.iter().enumerate() {
        let (mut w, mut wd, mut v, mut a, start) = match body.parent {
            Some(p) => {
                let start = frames.body_positions[p] + frames.body_rotations[p] * body.offset;
                let r = start - frames.body_positions[p];
                (
                    omega[p],
                    omega_dot[p],
                    vel[p] + omega[p].cross(&r),
                    acc[p] + omega_dot[p].cross(&r) + omega[p].cross(&omega[p].cross(&r)),
                    start,
                )
            }
            None => {
                let start = match body.joints.first() {
                    Some(&j) => frames.joint_anchors[j],
                    None => frames.body_positions[b],
                };
                (
                    Vector3::zeros(),
                    Vector3::zeros(),
                    Vector3::zeros(),
                    Vector3::zeros(),
                    start,
                )
            }
        };
        let mut cur = start;
        for &j in &body.joints {
            let s = frames.joint_axes[j];
            let qd = velocities[j];
            match model.joints[j].kind {
                JointKind::Hinge => {
                    wd += w.cross(&(s * qd));
                    w += s * qd;
                }
                JointKind::Slide => {
                    let next = if let Some(&k) = body.joints.iter().skip_while(|&&k| k != j).nth(1) {
                        frames.joint_anchors[k]
                    } else {
                        frames.body_positions[b]
                    };
                    let disp = next - cur;
                    v += w.cross(&disp) + s * qd;
                    a += wd.cross(&disp) + w.cross(&w.cross(&disp)) + w.cross(&(s * qd)) * 2.0;
                    cur = next;
                }
            }
        }
        omega[b] = w;
        omega_dot[b] = wd;
        vel[b] = v;
        acc[b] = a;

        let rc = frames.body_coms[b] - frames.body_positions[b];
        let com_acc = a + wd.cross(&rc) + w.cross(&w.cross(&rc));
        let force = (com_acc - gravity) * body.mass;
        let inertia = world_inertia(model, frames, b);
        let moment = inertia * wd + w.cross(&(inertia * w));
        for &j in model.joint_chain(b) {
            let s = frames.joint_axes[j];
            tau[j] += match model.joints[j].kind {
                JointKind::Hinge => {
                    s.dot(&(moment + (frames.body_coms[b] - frames.joint_anchors[j]).cross(&force)))
                }
                JointKind::Slide => s.dot(&force),
            };
        }
    }
    tau
}

pub fn kinetic_energy(mass: &DMatrix<f64>, velocities: &[f64]) -> f64 {
    let v = DVector::from_column_slice(velocities);
    0.5 * v.dot(&(mass * &v))
}

pub fn gravity_potential(model: &Model, frames: &FrameSet, gravity: &Vector3<f64>) -> f64 {
    -model
        .bodies
        .iter()
        .zip(&frames.body_coms)
        .map(|(b, c)| b.mass * gravity.dot(c))
        .sum::<f64>()
}

pub fn spring_potential(model: &Model, angles: &[f64]) -> f64 {
    model
        .joints
        .iter()
        .zip(angles)
        .map(|(j, q)| 0.5 * j.stiffness * (q - j.default_angle).powi(2))
        .sum()
}
