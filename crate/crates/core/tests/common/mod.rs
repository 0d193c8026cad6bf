//! Fixtures and independent reference computations for the acceptance run.
#![allow(dead_code)]

use std::f64::consts::PI;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use musculo_core::model::{BodySpec, JointSpec, ModelBuilder, MuscleSpec, SiteSpec};
use musculo_core::Model;
use nalgebra::{Vector2, Vector3};

struct Objective<'a>(&'a dyn Fn(&[f64]) -> f64);

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        Ok((self.0)(p))
    }
}

/// Nelder-Mead from `start`, restarted from the incumbent with a shrinking
/// simplex so it does not stall on a collapsed one.
pub fn minimize(f: &dyn Fn(&[f64]) -> f64, start: &[f64], step: f64) -> (Vec<f64>, f64) {
    let mut best = start.to_vec();
    let mut value = f(start);
    let mut scale = step;
    for _ in 0..5 {
        let mut simplex = vec![best.clone()];
        for i in 0..best.len() {
            let mut v = best.clone();
            v[i] += scale;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex).with_sd_tolerance(1e-16).unwrap();
        let res = Executor::new(Objective(f), solver)
            .configure(|s| s.max_iters(3000))
            .run()
            .unwrap();
        let state = res.state();
        if state.get_best_cost() < value {
            value = state.get_best_cost();
            best = state.get_best_param().unwrap().clone();
        }
        scale *= 0.2;
    }
    (best, value)
}

fn perpendicular_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = n.cross(&helper).normalize();
    (u, n.cross(&u))
}

/// Shortest obstacle-avoiding path around a ball, found by direct search.
///
/// Candidates leave each endpoint along a straight segment to a contact
/// point in the cap visible from it, then follow the great-circle arc
/// between the two contact points. The search is seeded from a grid over
/// the contact azimuths.
pub fn sphere_path_oracle(p1: &Vector3<f64>, p2: &Vector3<f64>, center: &Vector3<f64>, r: f64) -> f64 {
    let a = p1 - center;
    let b = p2 - center;
    let chord = (b - a).norm();
    let t = (-a.dot(&(b - a)) / (b - a).norm_squared()).clamp(0.0, 1.0);
    if (a + (b - a) * t).norm() >= r {
        return chord;
    }
    let contact = |p: &Vector3<f64>, s: f64, psi: f64| {
        let d = p.norm();
        let n = p / d;
        let beta = (r / d).min(1.0).acos() * s.sin().powi(2);
        let (u, v) = perpendicular_basis(&n);
        (n * beta.cos() + (u * psi.cos() + v * psi.sin()) * beta.sin()) * r
    };
    let cost = |x: &[f64]| {
        let s1 = contact(&a, x[0], x[1]);
        let s2 = contact(&b, x[2], x[3]);
        let arc = s1.cross(&s2).norm().atan2(s1.dot(&s2));
        (a - s1).norm() + r * arc + (s2 - b).norm()
    };
    let grid = 24;
    let mut seed = vec![PI / 2.0, 0.0, PI / 2.0, 0.0];
    let mut seed_cost = f64::INFINITY;
    for i in 0..grid {
        for j in 0..grid {
            let x = [
                PI / 2.0,
                2.0 * PI * i as f64 / grid as f64,
                PI / 2.0,
                2.0 * PI * j as f64 / grid as f64,
            ];
            let c = cost(&x);
            if c < seed_cost {
                seed_cost = c;
                seed = x.to_vec();
            }
        }
    }
    minimize(&cost, &seed, 0.1).1
}

/// Shortest path around an infinite cylinder by direct search over the two
/// contact points (angle within the visible arc, free height) joined by a
/// helix developed flat on the surface, in either winding direction.
pub fn cylinder_path_oracle(
    p1: &Vector3<f64>,
    p2: &Vector3<f64>,
    center: &Vector3<f64>,
    axis: &Vector3<f64>,
    r: f64,
) -> f64 {
    let (e1, e2) = perpendicular_basis(axis);
    let local = |p: &Vector3<f64>| {
        let d = p - center;
        (Vector2::new(d.dot(&e1), d.dot(&e2)), d.dot(axis))
    };
    let (pa, za) = local(p1);
    let (pb, zb) = local(p2);
    let chord = (p2 - p1).norm();
    let ab = pb - pa;
    let t = (-pa.dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    if !(ab.norm_squared() > 0.0) || (pa + ab * t).norm() >= r {
        return chord;
    }
    let visible = |p: &Vector2<f64>, s: f64| p.y.atan2(p.x) + (r / p.norm()).min(1.0).acos() * s.sin();
    let mut best = f64::INFINITY;
    for winding in [1.0, -1.0] {
        let cost = |x: &[f64]| {
            let th1 = visible(&pa, x[0]);
            let th2 = visible(&pb, x[2]);
            let s1 = Vector2::new(th1.cos(), th1.sin()) * r;
            let s2 = Vector2::new(th2.cos(), th2.sin()) * r;
            let sweep = (winding * (th2 - th1)).rem_euclid(2.0 * PI);
            let leg1 = ((pa - s1).norm_squared() + (za - x[1]).powi(2)).sqrt();
            let leg2 = ((pb - s2).norm_squared() + (zb - x[3]).powi(2)).sqrt();
            leg1 + ((r * sweep).powi(2) + (x[3] - x[1]).powi(2)).sqrt() + leg2
        };
        let grid = 16;
        let mut seed = Vec::new();
        let mut seed_cost = f64::INFINITY;
        for i in 0..grid {
            for j in 0..grid {
                let s1 = -PI / 2.0 + PI * i as f64 / (grid - 1) as f64;
                let s2 = -PI / 2.0 + PI * j as f64 / (grid - 1) as f64;
                for f in [0.25, 0.5] {
                    let x = [s1, za + f * (zb - za), s2, zb - f * (zb - za)];
                    let c = cost(&x);
                    if c < seed_cost {
                        seed_cost = c;
                        seed = x.to_vec();
                    }
                }
            }
        }
        best = best.min(minimize(&cost, &seed, 0.05).1);
    }
    best
}

/// Three hinges, four muscles: a one-joint muscle, a two-joint muscle over
/// a waypoint, one wrapping a sphere at the knee and one wrapping a
/// cylinder about the last joint. Ranges keep both wraps short of the
/// half-turn where the shortest side flips.
pub fn wrapped_chain() -> Model {
    ModelBuilder::new("chain")
        .body(BodySpec::new("base", None, [0.0, 0.0, 1.0], 2.0))
        .body(BodySpec::new("thigh", Some("base"), [0.0; 3], 1.0).com([0.15, 0.0, 0.0]))
        .body(BodySpec::new("shank", Some("thigh"), [0.3, 0.0, 0.0], 0.8).com([0.12, 0.0, 0.0]))
        .body(BodySpec::new("foot", Some("shank"), [0.25, 0.0, 0.0], 0.3).com([0.07, 0.0, 0.0]))
        .joint(JointSpec::hinge("hip", "thigh", [0.0, 1.0, 0.0], (-1.2, 1.2)))
        .joint(JointSpec::hinge("knee", "shank", [0.0, 1.0, 0.0], (-1.0, 1.0)))
        .joint(JointSpec::hinge("ankle", "foot", [0.0, 0.0, 1.0], (-0.4, 0.4)))
        .sphere("knee_ball", "thigh", [0.3, 0.0, 0.0], 0.03)
        .cylinder("ankle_drum", "shank", [0.25, 0.0, 0.0], [0.0, 0.0, 1.0], 0.025)
        .site(SiteSpec::new("hip_o", "base", [-0.05, 0.0, 0.08]))
        .site(SiteSpec::new("hip_i", "thigh", [0.15, 0.0, 0.03]))
        .site(SiteSpec::new("long_o", "base", [0.0, 0.0, 0.1]))
        .site(SiteSpec::new("long_w", "thigh", [0.2, 0.0, 0.06]))
        .site(SiteSpec::new("long_i", "shank", [0.1, 0.0, 0.04]))
        .site(SiteSpec::new("knee_o", "thigh", [0.2, 0.0, -0.05]))
        .site(SiteSpec::new("knee_i", "shank", [0.1, 0.0, -0.05]))
        .site(SiteSpec::new("ankle_o", "shank", [0.05, 0.04, 0.0]))
        .site(SiteSpec::new("ankle_i", "foot", [0.15, 0.01, 0.02]))
        .muscle(MuscleSpec::new("hip_flexor", &["hip_o", "hip_i"], 400.0).length_range((0.15, 0.4)))
        .muscle(
            MuscleSpec::new("biarticular", &["long_o", "long_w", "long_i"], 300.0).length_range((0.15, 0.4)),
        )
        .muscle(
            MuscleSpec::new("knee_wrap", &["knee_o", "knee_i"], 300.0)
                .wrap(0, "knee_ball")
                .length_range((0.15, 0.4)),
        )
        .muscle(
            MuscleSpec::new("ankle_wrap", &["ankle_o", "ankle_i"], 150.0)
                .wrap(0, "ankle_drum")
                .length_range((0.15, 0.4)),
        )
        .build()
        .unwrap()
}

/// Four-joint chain with two markers per moving body and one on the base.
pub fn marker_chain() -> Model {
    let mut builder = ModelBuilder::new("markers")
        .body(BodySpec::new("base", None, [0.0, 0.0, 1.0], 1.0))
        .body(BodySpec::new("a", Some("base"), [0.0; 3], 1.0))
        .body(BodySpec::new("b", Some("a"), [0.3, 0.0, 0.0], 1.0))
        .body(BodySpec::new("c", Some("b"), [0.25, 0.0, 0.0], 1.0))
        .joint(JointSpec::hinge("j1", "a", [0.0, 0.0, 1.0], (-2.0, 2.0)))
        .joint(JointSpec::hinge("j2", "a", [0.0, 1.0, 0.0], (-2.0, 2.0)))
        .joint(JointSpec::hinge("j3", "b", [0.0, 1.0, 0.0], (-2.0, 2.0)))
        .joint(JointSpec::hinge("j4", "c", [1.0, 0.0, 0.0], (-2.0, 2.0)))
        .marker("base_m", "base", [0.0, 0.1, 0.0])
        .marker("a1", "a", [0.1, 0.03, 0.0])
        .marker("a2", "a", [0.25, -0.02, 0.04])
        .marker("b1", "b", [0.1, 0.0, 0.03])
        .marker("b2", "b", [0.2, 0.04, -0.02])
        .marker("c1", "c", [0.1, 0.03, 0.0])
        .marker("c2", "c", [0.2, -0.03, 0.02]);
    builder.reference_pose = vec![("j3".into(), 0.8), ("j4".into(), -0.2)];
    builder.build().unwrap()
}

/// Smooth joint-angle rows for `marker_chain`, different per clip.
pub fn chain_angles(clip: usize, frames: usize) -> Vec<Vec<f64>> {
    let phase = clip as f64 * 0.7;
    (0..frames)
        .map(|t| {
            let s = t as f64 * 0.1 + phase;
            vec![
                0.6 * s.sin(),
                0.4 * (1.3 * s).cos(),
                0.8 + 0.5 * (0.7 * s).sin(),
                0.5 * (0.9 * s).cos(),
            ]
        })
        .collect()
}

/// Walking-like marker signals: each returns a position for time `t`
/// seconds. They mix a stride-frequency oscillation, its harmonics, forward
/// progression and a flat-footed stance plateau.
pub fn benchmark_signals() -> Vec<(&'static str, fn(f64) -> Vector3<f64>)> {
    fn smoothstep(x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        x * x * (3.0 - 2.0 * x)
    }
    vec![
        ("pelvis_bob", |t| {
            Vector3::new(
                1.4 * t,
                0.02 * (2.0 * PI * 1.1 * t).sin(),
                1.0 + 0.03 * (4.0 * PI * 1.1 * t).cos(),
            )
        }),
        ("knee_swing", |t| {
            let w = 2.0 * PI * 1.1 * t;
            Vector3::new(
                1.4 * t + 0.2 * w.sin() + 0.05 * (2.0 * w).sin(),
                0.1,
                0.5 + 0.05 * w.cos(),
            )
        }),
        ("foot_stance", |t| {
            let phase = (t * 1.1).fract();
            let lift = if phase < 0.6 {
                0.0
            } else {
                (PI * (phase - 0.6) / 0.4).sin().powi(2)
            };
            let stride = (t * 1.1).floor() + smoothstep((phase - 0.6) / 0.4);
            Vector3::new(1.27 * stride, -0.1, 0.02 + 0.12 * lift)
        }),
        ("neck_sway", |t| {
            let w = 2.0 * PI * 1.1 * t;
            Vector3::new(
                1.4 * t + 0.4 + 0.03 * (w + 0.4).sin(),
                0.04 * (0.5 * w).sin(),
                1.8 + 0.04 * (w - 1.0).cos(),
            )
        }),
    ]
}

/// Contact sequence of `repeats` strides of `stance` frames down and
/// `swing` frames up.
pub fn contact_pattern(stance: usize, swing: usize, repeats: usize) -> Vec<bool> {
    (0..repeats)
        .flat_map(|_| std::iter::repeat_n(true, stance).chain(std::iter::repeat_n(false, swing)))
        .collect()
}
