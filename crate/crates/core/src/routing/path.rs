use nalgebra::Vector3;

use super::wrap::{wrap_cylinder, wrap_sphere, Segment};
use crate::error::{Error, Result};
use crate::kinematics::{frames_for_angles, BaseFrame, FrameSet};
use crate::model::{Model, Pose, WrapShape};

/// Finite-difference step for moment arms, radians (metres for slides).
pub const MOMENT_ARM_STEP: f64 = 1e-5;

/// Ordered sites from origin to insertion with an optional wrap geometry
/// per inter-site segment.
#[derive(Debug, Clone, PartialEq)]
pub struct MusclePath {
    pub sites: Vec<usize>,
    /// One entry per segment (`sites.len() - 1`).
    pub wraps: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSegment {
    pub from_site: usize,
    pub to_site: usize,
    pub segment: Segment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub total_length: f64,
    pub segments: Vec<PathSegment>,
}

pub fn path_length(model: &Model, frames: &FrameSet, path: &MusclePath) -> Result<PathResult> {
    let mut segments = Vec::with_capacity(path.sites.len().saturating_sub(1));
    let mut total = 0.0;
    for (k, pair) in path.sites.windows(2).enumerate() {
        let (s1, s2) = (pair[0], pair[1]);
        let p1 = frames.site_positions[s1];
        let p2 = frames.site_positions[s2];
        let segment = match path.wraps.get(k).copied().flatten() {
            None => Segment::Straight {
                length: (p2 - p1).norm(),
            },
            Some(g) => {
                let geom = &model.wraps[g];
                let rot = frames.body_rotations[geom.body];
                let center = frames.body_positions[geom.body] + rot * geom.center;
                let result = match geom.shape {
                    WrapShape::Sphere => wrap_sphere(&p1, &p2, &center, geom.radius),
                    WrapShape::Cylinder { axis } => {
                        wrap_cylinder(&p1, &p2, &center, &(rot * axis), geom.radius)
                    }
                };
                result.map_err(|_| {
                    let inside = if inside_geom(&p1, &center, geom.radius, &geom.shape, &rot) {
                        s1
                    } else {
                        s2
                    };
                    Error::SiteInsideWrap {
                        site: model.sites[inside].name.clone(),
                        geom: geom.name.clone(),
                    }
                })?
            }
        };
        total += segment.length();
        segments.push(PathSegment {
            from_site: s1,
            to_site: s2,
            segment,
        });
    }
    Ok(PathResult {
        total_length: total,
        segments,
    })
}

fn inside_geom(
    p: &Vector3<f64>,
    center: &Vector3<f64>,
    r: f64,
    shape: &WrapShape,
    rot: &nalgebra::Matrix3<f64>,
) -> bool {
    let d = p - center;
    match shape {
        WrapShape::Sphere => d.norm() < r,
        WrapShape::Cylinder { axis } => {
            let a = rot * axis;
            (d - a * d.dot(&a)).norm() < r
        }
    }
}

/// Joints whose motion can change the path: those between the path's bodies
/// and their lowest common ancestor. Every other joint moves the whole path
/// rigidly.
pub fn path_span(model: &Model, path: &MusclePath) -> Vec<usize> {
    let mut members: Vec<usize> = path.sites.iter().map(|&s| model.sites[s].body).collect();
    members.extend(path.wraps.iter().flatten().map(|&g| model.wraps[g].body));
    let lca = members
        .iter()
        .skip(1)
        .fold(members[0], |acc, &b| common_ancestor(model, acc, b));
    let mut span = Vec::new();
    for &m in &members {
        let mut cur = m;
        while cur != lca {
            span.extend_from_slice(&model.bodies[cur].joints);
            cur = model.bodies[cur].parent.expect("lca is an ancestor");
        }
    }
    span.sort_unstable();
    span.dedup();
    span
}

fn common_ancestor(model: &Model, a: usize, b: usize) -> usize {
    let mut cur = a;
    loop {
        if model.is_ancestor(cur, b) {
            return cur;
        }
        cur = model.bodies[cur].parent.expect("bodies share the root");
    }
}

/// Path-length derivatives with respect to each joint coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentArms {
    /// `dL/dq_j`; a muscle with force `f` produces torque `-f * dL/dq_j`.
    pub derivatives: Vec<f64>,
    /// Joints evaluated with a one-sided difference because the pose sits
    /// within one step of a range limit.
    pub one_sided: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stencil {
    Central,
    Forward,
    Backward,
}

fn stencil(model: &Model, j: usize, q: f64, h: f64) -> Stencil {
    let (lo, hi) = model.joints[j].range;
    let up = q + h <= hi;
    let down = q - h >= lo;
    match (down, up) {
        (true, true) | (false, false) => Stencil::Central,
        (true, false) => Stencil::Backward,
        (false, true) => Stencil::Forward,
    }
}

/// Offsets (in steps) and weights of each stencil.
fn stencil_terms(s: Stencil) -> &'static [(f64, f64)] {
    match s {
        Stencil::Central => &[(1.0, 0.5), (-1.0, -0.5)],
        Stencil::Forward => &[(0.0, -1.5), (1.0, 2.0), (2.0, -0.5)],
        Stencil::Backward => &[(0.0, 1.5), (-1.0, -2.0), (-2.0, 0.5)],
    }
}

pub fn moment_arms(model: &Model, pose: &Pose, path: &MusclePath) -> Result<MomentArms> {
    moment_arms_with_step(model, pose, path, MOMENT_ARM_STEP)
}

pub fn moment_arms_with_step(model: &Model, pose: &Pose, path: &MusclePath, h: f64) -> Result<MomentArms> {
    pose.check(model)?;
    let n = model.joints.len();
    let mut derivatives = vec![0.0; n];
    let mut one_sided = vec![false; n];
    let base = BaseFrame::default();
    let mut angles = pose.angles.clone();
    for j in path_span(model, path) {
        let s = stencil(model, j, pose.angles[j], h);
        one_sided[j] = s != Stencil::Central;
        let mut acc = 0.0;
        for &(offset, weight) in stencil_terms(s) {
            let length = if offset == 0.0 {
                let frames = frames_for_angles(model, &pose.angles, &base);
                path_length(model, &frames, path)?.total_length
            } else {
                angles[j] = pose.angles[j] + offset * h;
                let frames = frames_for_angles(model, &angles, &base);
                angles[j] = pose.angles[j];
                path_length(model, &frames, path)?.total_length
            };
            acc += weight * length;
        }
        derivatives[j] = acc / h;
    }
    Ok(MomentArms {
        derivatives,
        one_sided,
    })
}

/// Length, lengthening speed and moment arms of every muscle at a pose,
/// sharing forward-kinematics evaluations across muscles.
#[derive(Debug, Clone, PartialEq)]
pub struct MuscleKinematics {
    pub length: f64,
    /// m/s, positive when lengthening.
    pub lengthening_speed: f64,
    pub arms: MomentArms,
}

pub fn muscle_kinematics(model: &Model, pose: &Pose) -> Result<Vec<MuscleKinematics>> {
    pose.check(model)?;
    let base = BaseFrame::default();
    let n = model.joints.len();
    let h = MOMENT_ARM_STEP;
    let frames = frames_for_angles(model, &pose.angles, &base);
    let spans: Vec<Vec<usize>> = model.muscles.iter().map(|m| path_span(model, &m.path)).collect();
    let mut out = Vec::with_capacity(model.muscles.len());
    for m in &model.muscles {
        out.push(MuscleKinematics {
            length: path_length(model, &frames, &m.path)?.total_length,
            lengthening_speed: 0.0,
            arms: MomentArms {
                derivatives: vec![0.0; n],
                one_sided: vec![false; n],
            },
        });
    }
    let mut angles = pose.angles.clone();
    for j in 0..n {
        let users: Vec<usize> = (0..model.muscles.len())
            .filter(|&m| spans[m].contains(&j))
            .collect();
        if users.is_empty() {
            continue;
        }
        let s = stencil(model, j, pose.angles[j], h);
        let mut acc = vec![0.0; users.len()];
        for &(offset, weight) in stencil_terms(s) {
            if offset == 0.0 {
                for (a, &m) in acc.iter_mut().zip(&users) {
                    *a += weight * out[m].length;
                }
                continue;
            }
            angles[j] = pose.angles[j] + offset * h;
            let shifted = frames_for_angles(model, &angles, &base);
            angles[j] = pose.angles[j];
            for (a, &m) in acc.iter_mut().zip(&users) {
                *a += weight * path_length(model, &shifted, &model.muscles[m].path)?.total_length;
            }
        }
        for (a, &m) in acc.iter().zip(&users) {
            out[m].arms.derivatives[j] = a / h;
            out[m].arms.one_sided[j] = s != Stencil::Central;
        }
    }
    for k in &mut out {
        k.lengthening_speed = k
            .arms
            .derivatives
            .iter()
            .zip(&pose.velocities)
            .map(|(d, v)| d * v)
            .sum();
    }
    Ok(out)
}

/// Joint torques from tensile muscle forces: `tau_j = -sum_m dL_m/dq_j * f_m`.
pub fn joint_torques(forces: &[f64], arms: &[Vec<f64>]) -> Result<Vec<f64>> {
    if forces.len() != arms.len() {
        return Err(Error::Dimension {
            what: "muscle forces",
            expected: arms.len(),
            got: forces.len(),
        });
    }
    let n = arms.first().map_or(0, Vec::len);
    let mut torques = vec![0.0; n];
    for (f, arm) in forces.iter().zip(arms) {
        if arm.len() != n {
            return Err(Error::Dimension {
                what: "moment arm vector",
                expected: n,
                got: arm.len(),
            });
        }
        for (t, d) in torques.iter_mut().zip(arm) {
            *t -= d * f;
        }
    }
    Ok(torques)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::forward_kinematics;
    use crate::model::{BodySpec, JointSpec, ModelBuilder, MuscleSpec, SiteSpec};
    use approx::assert_relative_eq;

    fn collinear() -> Model {
        ModelBuilder::new("m")
            .body(BodySpec::new("root", None, [0.0; 3], 1.0))
            .site(SiteSpec::new("a", "root", [0.0, 0.0, 0.0]))
            .site(SiteSpec::new("b", "root", [0.5, 0.0, 0.0]))
            .site(SiteSpec::new("c", "root", [1.0, 0.0, 0.0]))
            .muscle(MuscleSpec::new("two", &["a", "c"], 10.0).length_range((0.5, 1.5)))
            .muscle(MuscleSpec::new("three", &["a", "b", "c"], 10.0).length_range((0.5, 1.5)))
            .build()
            .unwrap()
    }

    #[test]
    fn straight_and_additive_paths() {
        let m = collinear();
        let f = forward_kinematics(&m, &m.default_pose()).unwrap();
        let two = path_length(&m, &f, &m.muscles[0].path).unwrap();
        assert_eq!(two.total_length, 1.0);
        assert_eq!(two.segments.len(), 1);
        let three = path_length(&m, &f, &m.muscles[1].path).unwrap();
        assert_eq!(three.total_length, 1.0);
        assert_eq!(three.segments.len(), 2);
    }

    /// Planar hinge at the origin; origin site on the parent at (0, c),
    /// insertion at (d, 0) on the child.
    fn planar_arm(c: f64, d: f64) -> Model {
        ModelBuilder::new("arm")
            .body(BodySpec::new("parent", None, [0.0; 3], 1.0))
            .body(BodySpec::new("child", Some("parent"), [0.0; 3], 1.0))
            .joint(JointSpec::hinge("hinge", "child", [0.0, 0.0, 1.0], (-3.0, 3.0)))
            .site(SiteSpec::new("origin", "parent", [0.0, c, 0.0]))
            .site(SiteSpec::new("insertion", "child", [d, 0.0, 0.0]))
            .muscle(MuscleSpec::new("m", &["origin", "insertion"], 10.0).length_range((0.2, 0.5)))
            .build()
            .unwrap()
    }

    #[test]
    fn moment_arm_matches_symbolic_derivative() {
        let (c, d) = (0.3, 0.2);
        let m = planar_arm(c, d);
        for q in [-1.2, -0.3, 0.4, 1.1, 2.0] {
            let mut pose = m.default_pose();
            pose.angles[0] = q;
            let arms = moment_arms(&m, &pose, &m.muscles[0].path).unwrap();
            // L^2 = c^2 + d^2 - 2 c d sin q
            let l = (c * c + d * d - 2.0 * c * d * q.sin()).sqrt();
            let analytic = -c * d * q.cos() / l;
            assert!((arms.derivatives[0] - analytic).abs() < 1e-6, "q={q}");
            assert!(!arms.one_sided[0]);
        }
    }

    #[test]
    fn moment_arm_second_order_convergence() {
        let (c, d) = (0.3, 0.2);
        let m = planar_arm(c, d);
        let q: f64 = 0.7;
        let mut pose = m.default_pose();
        pose.angles[0] = q;
        let l = (c * c + d * d - 2.0 * c * d * q.sin()).sqrt();
        let analytic = -c * d * q.cos() / l;
        let h = 1e-2;
        let e1 = (moment_arms_with_step(&m, &pose, &m.muscles[0].path, h)
            .unwrap()
            .derivatives[0]
            - analytic)
            .abs();
        let e2 = (moment_arms_with_step(&m, &pose, &m.muscles[0].path, h / 2.0)
            .unwrap()
            .derivatives[0]
            - analytic)
            .abs();
        // h^2 model predicts a ratio of 4
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 4.0 * 0.05, "ratio {ratio}");
    }

    #[test]
    fn one_sided_at_limit() {
        let m = planar_arm(0.3, 0.2);
        let mut pose = m.default_pose();
        pose.angles[0] = 3.0;
        let arms = moment_arms(&m, &pose, &m.muscles[0].path).unwrap();
        assert!(arms.one_sided[0]);
        let l = (0.13f64 - 0.12 * 3f64.sin()).sqrt();
        assert!((arms.derivatives[0] - (-0.06 * 3f64.cos() / l)).abs() < 1e-6);
    }

    #[test]
    fn muscle_within_one_body_has_zero_arms() {
        let m = ModelBuilder::new("m")
            .body(BodySpec::new("a", None, [0.0; 3], 1.0))
            .body(BodySpec::new("b", Some("a"), [1.0, 0.0, 0.0], 1.0))
            .joint(JointSpec::hinge("j", "b", [0.0, 0.0, 1.0], (-1.0, 1.0)))
            .site(SiteSpec::new("s1", "b", [0.1, 0.2, 0.0]))
            .site(SiteSpec::new("s2", "b", [0.5, -0.2, 0.3]))
            .muscle(MuscleSpec::new("m", &["s1", "s2"], 10.0).length_range((0.4, 1.0)))
            .build()
            .unwrap();
        let mut pose = m.default_pose();
        pose.angles[0] = 0.4;
        let arms = moment_arms(&m, &pose, &m.muscles[0].path).unwrap();
        assert_eq!(arms.derivatives, vec![0.0]);
    }

    #[test]
    fn torque_examples() {
        assert_eq!(
            joint_torques(&[0.0, 0.0], &[vec![0.1; 4], vec![-0.2; 4]]).unwrap(),
            vec![0.0; 4]
        );
        let mut arm = vec![0.0; 5];
        arm[3] = -0.05;
        let t = joint_torques(&[100.0], &[arm]).unwrap();
        assert_relative_eq!(t[3], 5.0, epsilon = 1e-12);
        assert!(t.iter().enumerate().all(|(j, v)| j == 3 || *v == 0.0));
        let t = joint_torques(&[40.0, 40.0], &[vec![0.03], vec![-0.03]]).unwrap();
        assert_eq!(t[0], 0.0);
        assert!(joint_torques(&[1.0], &[]).is_err());
    }

    #[test]
    fn batch_kinematics_matches_single_path() {
        let m = planar_arm(0.3, 0.2);
        let mut pose = m.default_pose();
        pose.angles[0] = 0.5;
        pose.velocities[0] = 2.0;
        let k = muscle_kinematics(&m, &pose).unwrap();
        let single = moment_arms(&m, &pose, &m.muscles[0].path).unwrap();
        assert_eq!(k[0].arms, single);
        assert_relative_eq!(
            k[0].lengthening_speed,
            2.0 * single.derivatives[0],
            epsilon = 1e-15
        );
    }

    #[test]
    fn site_inside_wrap_is_reported() {
        let m = ModelBuilder::new("m")
            .body(BodySpec::new("a", None, [0.0; 3], 1.0))
            .site(SiteSpec::new("s1", "a", [0.1, 0.0, 0.0]))
            .site(SiteSpec::new("s2", "a", [2.0, 0.0, 0.0]))
            .sphere("ball", "a", [0.0; 3], 0.5)
            .muscle(
                MuscleSpec::new("m", &["s1", "s2"], 10.0)
                    .wrap(0, "ball")
                    .length_range((1.5, 3.0)),
            )
            .build();
        // calibration is skipped because the range is authored; evaluation fails
        let m = m.unwrap();
        let f = forward_kinematics(&m, &m.default_pose()).unwrap();
        match path_length(&m, &f, &m.muscles[0].path) {
            Err(Error::SiteInsideWrap { site, geom }) => {
                assert_eq!(site, "s1");
                assert_eq!(geom, "ball");
            }
            other => panic!("{other:?}"),
        }
    }
}
