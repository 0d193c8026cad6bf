//! Forward dynamics of the articulated model driven by muscles, joint
//! springs and dampers, gravity and penalty ground contact.
//!
//! Each physics substep evaluates the muscle pipeline (activation filter,
//! path lengths, Hill force, moment arms), assembles the dense joint-space
//! mass matrix and bias forces, then integrates velocities before positions
//! (semi-implicit Euler). Joint damping and the force-velocity slope of each
//! muscle enter the velocity update implicitly, linearised about the current
//! state, so short stiff fibres stay stable at 240 Hz. Joint limits are
//! enforced by clamping with the velocity zeroed. A final projection removes
//! any energy the update created beyond the work done by muscles, contact and
//! damping.

mod contact;
pub mod io;
mod mass;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, frames_for_angles, orthonormalize, BaseFrame, FrameSet};
use crate::model::{BodySpec, JointSpec, Model, ModelBuilder, Pose};
use crate::muscle::{clamp_excitation, muscle_force, step_activation, MuscleState};
use crate::routing::{joint_torques, muscle_kinematics};

pub use contact::{contact_force, contact_forces, ContactParams};
pub use mass::{bias_forces, gravity_potential, kinetic_energy, mass_matrix, spring_potential};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub physics_dt: f64,
    pub control_dt: f64,
    pub gravity: Vector3<f64>,
    pub contact: ContactParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            physics_dt: 1.0 / 240.0,
            control_dt: 1.0 / 40.0,
            gravity: Vector3::new(0.0, 0.0, -9.81),
            contact: ContactParams::default(),
        }
    }
}

impl SimConfig {
    /// Physics substeps per control step.
    pub fn substeps(&self) -> Result<usize> {
        if !(self.physics_dt > 0.0 && self.control_dt > 0.0) {
            return Err(Error::InvalidArgument("time steps must be positive".into()));
        }
        let ratio = self.control_dt / self.physics_dt;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio {
            return Err(Error::InvalidArgument(format!(
                "control_dt {} is not an integer multiple of physics_dt {}",
                self.control_dt, self.physics_dt
            )));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub pose: Pose,
    pub muscles: Vec<MuscleState>,
    /// Excitations applied during the last step, after clamping.
    pub excitations: Vec<f64>,
    /// Tensile muscle forces, N.
    pub forces: Vec<f64>,
    pub time: f64,
    /// One flag per site tagged `contact`, true while below ground.
    pub contacts: Vec<bool>,
}

impl SimState {
    /// Resting muscles at `pose`.
    pub fn new(model: &Model, pose: Pose) -> Result<Self> {
        pose.check(model)?;
        let mut state = Self {
            muscles: vec![MuscleState::default(); model.muscles.len()],
            excitations: vec![0.0; model.muscles.len()],
            forces: vec![0.0; model.muscles.len()],
            contacts: vec![false; model.sites_tagged("contact").count()],
            pose,
            time: 0.0,
        };
        state.refresh(model)?;
        Ok(state)
    }

    /// Recomputes muscle lengths, velocities, forces and contact flags for
    /// the current pose.
    pub fn refresh(&mut self, model: &Model) -> Result<()> {
        let kin = muscle_kinematics(model, &self.pose)?;
        for ((m, k), (state, force)) in model
            .muscles
            .iter()
            .zip(&kin)
            .zip(self.muscles.iter_mut().zip(self.forces.iter_mut()))
        {
            state.length = m.params.normalized_length(k.length);
            state.velocity = m.params.normalized_velocity(k.lengthening_speed);
            *force = muscle_force(state, &m.params);
        }
        let frames = forward_kinematics(model, &self.pose)?;
        for (flag, s) in self.contacts.iter_mut().zip(model.sites_tagged("contact")) {
            *flag = frames.site_positions[s].z < 0.0;
        }
        Ok(())
    }

    pub fn frames(&self, model: &Model) -> Result<FrameSet> {
        forward_kinematics(model, &self.pose)
    }

    /// World position of the root body.
    pub fn root_position(&self, model: &Model) -> Result<Vector3<f64>> {
        Ok(self.frames(model)?.body_positions[0])
    }

    /// World orientation of the root body, projected onto the rotation group.
    pub fn root_orientation(&self, model: &Model) -> Result<Matrix3<f64>> {
        Ok(orthonormalize(&self.frames(model)?.body_rotations[0]))
    }
}

/// Energy bookkeeping for one physics substep.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergySample {
    pub before: f64,
    pub after: f64,
    /// Work by muscles and contact minus damping dissipation.
    pub external_work: f64,
    /// Work done by muscles alone.
    pub muscle_work: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepReport {
    pub energy: Vec<EnergySample>,
    /// Substeps in which the energy projection was applied.
    pub projections: usize,
}

/// Kinetic + gravitational + joint-spring energy.
pub fn mechanical_energy(model: &Model, pose: &Pose, gravity: &Vector3<f64>) -> f64 {
    let frames = frames_for_angles(model, &pose.angles, &BaseFrame::default());
    let m = mass_matrix(model, &frames);
    kinetic_energy(&m, &pose.velocities)
        + gravity_potential(model, &frames, gravity)
        + spring_potential(model, &pose.angles)
}

/// Advances one control step (`control_dt / physics_dt` substeps).
pub fn step(model: &Model, state: &SimState, excitations: &[f64], config: &SimConfig) -> Result<SimState> {
    step_with_report(model, state, excitations, config).map(|(s, _)| s)
}

pub fn step_with_report(
    model: &Model,
    state: &SimState,
    excitations: &[f64],
    config: &SimConfig,
) -> Result<(SimState, StepReport)> {
    if excitations.len() != model.muscles.len() {
        return Err(Error::Dimension {
            what: "excitations",
            expected: model.muscles.len(),
            got: excitations.len(),
        });
    }
    state.pose.check(model)?;
    let substeps = config.substeps()?;
    let mut next = state.clone();
    next.excitations = excitations.iter().map(|&u| clamp_excitation(u)).collect();
    let mut report = StepReport::default();
    for _ in 0..substeps {
        substep(model, &mut next, config, &mut report)?;
    }
    next.refresh(model)?;
    Ok((next, report))
}

fn substep(model: &Model, s: &mut SimState, config: &SimConfig, report: &mut StepReport) -> Result<()> {
    let dt = config.physics_dt;
    let n = model.joints.len();

    for ((muscle, state), &u) in model.muscles.iter().zip(&mut s.muscles).zip(&s.excitations) {
        state.activation = step_activation(state.activation, u, dt, &muscle.params)?;
    }

    let base = BaseFrame::default();
    let frames = frames_for_angles(model, &s.pose.angles, &base);
    let kin = muscle_kinematics(model, &s.pose)?;
    let mut arms = Vec::with_capacity(kin.len());
    let mut stiffness = Vec::with_capacity(kin.len());
    for (m, k) in kin.into_iter().enumerate() {
        let params = &model.muscles[m].params;
        let state = &mut s.muscles[m];
        state.length = params.normalized_length(k.length);
        state.velocity = params.normalized_velocity(k.lengthening_speed);
        s.forces[m] = muscle_force(state, params);
        // d(force)/d(lengthening speed), for the implicit damping term
        let h = 1e-6 * params.vmax.max(1.0);
        let mut fast = *state;
        let mut slow = *state;
        fast.velocity += h;
        slow.velocity -= h;
        let slope = (muscle_force(&fast, params) - muscle_force(&slow, params)) / (2.0 * h);
        stiffness.push(slope.max(0.0) / params.rest_length);
        arms.push(k.arms.derivatives);
    }
    let tau_muscle = if arms.is_empty() {
        vec![0.0; n]
    } else {
        joint_torques(&s.forces, &arms)?
    };

    let mut tau_contact = vec![0.0; n];
    for (site, f) in contact_forces(model, &frames, &s.pose.velocities, &config.contact) {
        let body = model.sites[site].body;
        let p = frames.site_positions[site];
        for &j in model.joint_chain(body) {
            tau_contact[j] += crate::kinematics::joint_point_column(model, &frames, j, &p).dot(&f);
        }
    }

    let mass = mass_matrix(model, &frames);
    let bias = bias_forces(model, &frames, &s.pose.velocities, &config.gravity);
    let energy_before = kinetic_energy(&mass, &s.pose.velocities)
        + gravity_potential(model, &frames, &config.gravity)
        + spring_potential(model, &s.pose.angles);

    let free: Vec<usize> = (0..n).filter(|&j| !model.joints[j].is_locked()).collect();
    let mut rhs = DVector::zeros(free.len());
    for (r, &j) in free.iter().enumerate() {
        let joint = &model.joints[j];
        let passive = -joint.stiffness * (s.pose.angles[j] - joint.default_angle)
            - joint.damping * s.pose.velocities[j];
        rhs[r] = tau_muscle[j] + tau_contact[j] + passive - bias[j];
    }
    // velocity damping (joint + muscle force-velocity) is taken implicitly:
    // (M + dt*D) dv = dt*rhs
    let mut damping = DMatrix::zeros(n, n);
    for (j, joint) in model.joints.iter().enumerate() {
        damping[(j, j)] = joint.damping;
    }
    for (c, d) in stiffness.iter().zip(&arms) {
        if *c > 0.0 {
            let d = DVector::from_column_slice(d);
            damping += *c * &d * d.transpose();
        }
    }
    let reduced = DMatrix::from_fn(free.len(), free.len(), |r, c| {
        mass[(free[r], free[c])] + dt * damping[(free[r], free[c])]
    });
    let delta = solve_spd(reduced, rhs * dt)?;

    let mut velocities = vec![0.0; n];
    let mut dv = DVector::zeros(n);
    for (r, &j) in free.iter().enumerate() {
        dv[j] = delta[r];
        velocities[j] = s.pose.velocities[j] + delta[r];
    }
    // torques actually applied over the step
    let tau_damping = &damping * &dv;
    let tau_muscle: Vec<f64> = (0..n)
        .map(|j| tau_muscle[j] - (tau_damping[j] - model.joints[j].damping * dv[j]))
        .collect();
    let mut angles = s.pose.angles.clone();
    for j in 0..n {
        angles[j] += dt * velocities[j];
    }
    let mut pose = Pose { angles, velocities };
    model.clamp_pose(&mut pose);

    let mut muscle_work = 0.0;
    let mut external_work = 0.0;
    for j in 0..n {
        let qd = pose.velocities[j];
        muscle_work += dt * qd * tau_muscle[j];
        external_work += dt * qd * (tau_muscle[j] + tau_contact[j]) - dt * model.joints[j].damping * qd * qd;
    }

    let frames_after = frames_for_angles(model, &pose.angles, &base);
    let mass_after = mass_matrix(model, &frames_after);
    let potential_after =
        gravity_potential(model, &frames_after, &config.gravity) + spring_potential(model, &pose.angles);
    let kinetic_after = kinetic_energy(&mass_after, &pose.velocities);
    let budget = energy_before + external_work;
    let mut energy_after = kinetic_after + potential_after;
    if energy_after > budget && kinetic_after > 0.0 {
        let target = budget - potential_after;
        let scale = if target > 0.0 {
            (target / kinetic_after).sqrt()
        } else {
            0.0
        };
        for v in &mut pose.velocities {
            *v *= scale;
        }
        energy_after = kinetic_energy(&mass_after, &pose.velocities) + potential_after;
        report.projections += 1;
    }
    report.energy.push(EnergySample {
        before: energy_before,
        after: energy_after,
        external_work,
        muscle_work,
    });

    for (j, joint) in model.joints.iter().enumerate() {
        if !pose.angles[j].is_finite() {
            return Err(Error::Diverged {
                quantity: format!("angle of joint `{}`", joint.name),
            });
        }
        if !pose.velocities[j].is_finite() {
            return Err(Error::Diverged {
                quantity: format!("velocity of joint `{}`", joint.name),
            });
        }
    }
    s.pose = pose;
    s.time += dt;
    Ok(())
}

fn solve_spd(m: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    if m.nrows() == 0 {
        return Ok(rhs);
    }
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    m.lu().solve(&rhs).ok_or_else(|| Error::Diverged {
        quantity: "joint-space mass matrix (singular)".into(),
    })
}

/// Outcome of the small-angle pendulum check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumReport {
    pub measured_period: f64,
    pub analytic_period: f64,
    pub relative_error: f64,
}

/// Rigid pendulum: a body of `mass` with its centre of mass `distance`
/// below a y-axis hinge.
pub fn pendulum_model(mass: f64, distance: f64, inertia_yy: f64) -> Result<Model> {
    ModelBuilder::new("pendulum")
        .body(BodySpec::new("pivot", None, [0.0, 0.0, 2.0], 1.0))
        .body(
            BodySpec::new("bob", Some("pivot"), [0.0; 3], mass)
                .inertia_diag([inertia_yy, inertia_yy, inertia_yy])
                .com([0.0, 0.0, -distance]),
        )
        .joint(JointSpec::hinge("swing", "bob", [0.0, 1.0, 0.0], (-3.1, 3.1)))
        .build()
}

/// Measures the oscillation period of a single-joint model released from
/// `amplitude` at rest, by interpolated zero crossings over `duration`
/// seconds.
pub fn measure_period(model: &Model, amplitude: f64, duration: f64, config: &SimConfig) -> Result<f64> {
    let mut pose = model.default_pose();
    pose.angles[0] = amplitude;
    let mut state = SimState::new(model, pose)?;
    let dt = config.physics_dt;
    let one_step = SimConfig {
        control_dt: dt,
        ..*config
    };
    let mut crossings = Vec::new();
    let mut prev = state.pose.angles[0];
    let steps = (duration / dt).round() as usize;
    for _ in 0..steps {
        let t0 = state.time;
        state = step(model, &state, &[], &one_step)?;
        let q = state.pose.angles[0];
        if prev > 0.0 && q <= 0.0 {
            crossings.push(t0 + dt * prev / (prev - q));
        }
        prev = q;
    }
    if crossings.len() < 2 {
        return Err(Error::InvalidArgument(
            "too few oscillations to measure a period".into(),
        ));
    }
    Ok((crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64)
}

pub fn pendulum_check(amplitude: f64, config: &SimConfig) -> Result<PendulumReport> {
    let (mass, distance, inertia) = (2.0, 0.5, 0.01);
    let model = pendulum_model(mass, distance, inertia)?;
    let g = config.gravity.norm();
    let pivot_inertia = inertia + mass * distance * distance;
    let analytic = 2.0 * std::f64::consts::PI * (pivot_inertia / (mass * g * distance)).sqrt();
    let measured = measure_period(&model, amplitude, 10.0 * analytic, config)?;
    Ok(PendulumReport {
        measured_period: measured,
        analytic_period: analytic,
        relative_error: (measured - analytic).abs() / analytic,
    })
}
