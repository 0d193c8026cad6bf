//! Muscle activation and contraction dynamics.
//!
//! Excitation `u` drives activation `a` through a first-order filter whose
//! time constant depends on whether the muscle is activating or relaxing.
//! Force follows the Hill-type law `F0 * (a * fl(l) * fv(ldot) + fp(l))`
//! with length and velocity normalised by the rest length `L0`.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::kinematics::forward_kinematics;
use crate::model::Model;
use crate::rng::{self, Stream};
use crate::routing::path_length;

pub const DEFAULT_TAU_ACT: f64 = 0.010;
pub const DEFAULT_TAU_DEACT: f64 = 0.040;
pub const DEFAULT_FV_MAX: f64 = 1.5;
pub const DEFAULT_VMAX: f64 = 10.0;

/// Active force-length support.
pub const FL_MIN: f64 = 0.5;
pub const FL_MAX: f64 = 1.6;
const FL_WIDTH: f64 = 0.6;
const FP_SCALE: f64 = 0.1;
/// Curvature of the concentric force-velocity hyperbola.
const FV_CURVATURE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct MuscleParams {
    pub name: String,
    pub tau_act: f64,
    pub tau_deact: f64,
    pub peak_force: f64,
    /// Actuator (muscle + tendon) length range, metres.
    pub length_range: (f64, f64),
    /// Operating range in units of `rest_length`.
    pub operating_range: (f64, f64),
    pub rest_length: f64,
    pub tendon_length: f64,
    pub fv_max: f64,
    /// Maximum shortening velocity in rest lengths per second.
    pub vmax: f64,
}

impl MuscleParams {
    /// Builds parameters and solves `L0`/`LT` from the length and operating
    /// ranges.
    pub fn new(
        name: impl Into<String>,
        peak_force: f64,
        length_range: (f64, f64),
        operating_range: (f64, f64),
    ) -> Result<Self> {
        let name = name.into();
        if !(peak_force > 0.0 && peak_force.is_finite()) {
            return Err(Error::invariant(
                format!("muscle `{name}`.f0"),
                "peak force must be positive",
            ));
        }
        let (rest_length, tendon_length) =
            solve_rest_lengths(length_range, operating_range).map_err(|e| match e {
                Error::NegativeTendon { tendon_length, .. } => Error::NegativeTendon {
                    muscle: name.clone(),
                    tendon_length,
                },
                other => other,
            })?;
        Ok(Self {
            name,
            tau_act: DEFAULT_TAU_ACT,
            tau_deact: DEFAULT_TAU_DEACT,
            peak_force,
            length_range,
            operating_range,
            rest_length,
            tendon_length,
            fv_max: DEFAULT_FV_MAX,
            vmax: DEFAULT_VMAX,
        })
    }

    /// Normalised fiber length for an actuator path length.
    pub fn normalized_length(&self, path_length: f64) -> f64 {
        (path_length - self.tendon_length) / self.rest_length
    }

    /// Normalised fiber velocity (rest lengths per second) for a path
    /// lengthening speed in m/s.
    pub fn normalized_velocity(&self, lengthening_speed: f64) -> f64 {
        lengthening_speed / self.rest_length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MuscleState {
    pub activation: f64,
    /// `(path_length - LT) / L0`.
    pub length: f64,
    /// Lengthening speed in `L0` per second.
    pub velocity: f64,
}

/// Clamps a raw excitation into `[0, 1]`. NaN maps to 0.
pub fn clamp_excitation(u: f64) -> f64 {
    if u.is_nan() {
        0.0
    } else {
        u.clamp(0.0, 1.0)
    }
}

pub fn activation_time_constant(u: f64, a: f64, params: &MuscleParams) -> f64 {
    if u > a {
        params.tau_act * (0.5 + 1.5 * a)
    } else {
        params.tau_deact / (0.5 + 1.5 * a)
    }
}

/// Advances activation by `dt` with the exponential step
/// `a' = u + (a - u) * exp(-dt / tau)`, `tau` frozen at the start of the step.
pub fn step_activation(a: f64, u: f64, dt: f64, params: &MuscleParams) -> Result<f64> {
    if !(a.is_finite() && u.is_finite() && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite activation step input (a={a}, u={u}, dt={dt})"
        )));
    }
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let u = clamp_excitation(u);
    let a = a.clamp(0.0, 1.0);
    let tau = activation_time_constant(u, a, params);
    let next = u + (a - u) * (-dt / tau).exp();
    Ok(next.clamp(0.0, 1.0))
}

/// Active force-length gain: quadratic bump peaking at `l = 1`, zero outside
/// `[0.5, 1.6]`.
pub fn active_fl(l: f64) -> f64 {
    if !(FL_MIN..=FL_MAX).contains(&l) {
        return 0.0;
    }
    let x = (l - 1.0) / FL_WIDTH;
    (1.0 - x * x).max(0.0)
}

/// Force-velocity gain. Hill hyperbola on the shortening side, quadratic
/// rise to the `fv_max` plateau on the lengthening side; C1 at zero.
pub fn active_fv(velocity: f64, params: &MuscleParams) -> f64 {
    let v = velocity / params.vmax;
    if v <= -1.0 {
        0.0
    } else if v <= 0.0 {
        (1.0 + v) / (1.0 - v / FV_CURVATURE)
    } else {
        let rise = params.fv_max - 1.0;
        if rise <= 0.0 {
            return params.fv_max;
        }
        // slope at zero matches the concentric branch: 1 + 1/curvature
        let v_sat = 2.0 * rise / (1.0 + 1.0 / FV_CURVATURE);
        if v >= v_sat {
            params.fv_max
        } else {
            let x = 1.0 - v / v_sat;
            params.fv_max - rise * x * x
        }
    }
}

pub fn passive_fp(l: f64) -> f64 {
    if l <= 1.0 {
        0.0
    } else {
        let x = (l - 1.0) / FL_WIDTH;
        FP_SCALE * x * x
    }
}

/// Tensile muscle force in newtons.
pub fn muscle_force(state: &MuscleState, params: &MuscleParams) -> f64 {
    let a = state.activation.clamp(0.0, 1.0);
    let gain = a * active_fl(state.length) * active_fv(state.velocity, params);
    (params.peak_force * (gain + passive_fp(state.length))).max(0.0)
}

/// Solves `(LRmin - LT) / L0 = Rmin` and `(LRmax - LT) / L0 = Rmax` for the
/// rest length `L0` and tendon length `LT`.
pub fn solve_rest_lengths(length_range: (f64, f64), operating_range: (f64, f64)) -> Result<(f64, f64)> {
    let (lr_min, lr_max) = length_range;
    let (r_min, r_max) = operating_range;
    let finite = [lr_min, lr_max, r_min, r_max].iter().all(|v| v.is_finite());
    if !finite || !(lr_min < lr_max) {
        return Err(Error::invariant(
            "length_range",
            format!("need finite min < max, got ({lr_min}, {lr_max})"),
        ));
    }
    if !(r_min < r_max) {
        return Err(Error::invariant(
            "operating_range",
            format!("need min < max, got ({r_min}, {r_max})"),
        ));
    }
    let rest = (lr_max - lr_min) / (r_max - r_min);
    let mut tendon = lr_min - r_min * rest;
    // absorb rounding when the tendon is meant to vanish
    if tendon < 0.0 && tendon > -1e-12 * lr_max.abs() {
        tendon = 0.0;
    }
    if tendon < 0.0 {
        return Err(Error::NegativeTendon {
            muscle: String::new(),
            tendon_length: tendon,
        });
    }
    Ok((rest, tendon))
}

/// Records the global extrema of a muscle's path length over `samples`
/// poses with every joint drawn uniformly within its range.
pub fn calibrate_length_ranges(model: &Model, muscle: &str, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let index = model.muscle_index(muscle).ok_or_else(|| Error::Unknown {
        kind: "muscle",
        name: muscle.to_string(),
    })?;
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let path = &model.muscles[index].path;
    let mut rng = rng::stream(seed, Stream::Calibration);
    let mut pose = model.default_pose();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for _ in 0..samples {
        for (q, joint) in pose.angles.iter_mut().zip(&model.joints) {
            let (lo, hi) = joint.range;
            *q = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        }
        let frames = forward_kinematics(model, &pose)?;
        let length = path_length(model, &frames, path)?.total_length;
        min = min.min(length);
        max = max.max(length);
    }
    Ok((min, max))
}
