//! Articulated model: bodies in a tree, hinge/slide joints, sites, wrap
//! geometry and muscles.
//!
//! Bodies are stored in topological order (every parent precedes its
//! children) and joints are numbered body by body in that order, keeping
//! the listed order within a body.

mod document;
pub mod mesh;

use log::warn;
use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::muscle::MuscleParams;
use crate::routing::MusclePath;

pub use document::{load_model, load_model_file, DocumentOptions};
pub use mesh::{mesh_inertia, parse_mesh, MassProperties, TriangleMesh};

pub const MODEL_VERSION: &str = "musculo-model/1";

/// Axis norms deviating from one by more than this are renormalised with a
/// warning.
pub const AXIS_WARN_TOLERANCE: f64 = 1e-6;
/// Axis norms deviating from one by this much are rejected.
pub const AXIS_ERROR_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Hinge,
    Slide,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub body: usize,
    pub kind: JointKind,
    /// Unit axis in the frame of the preceding joint (or the parent body).
    pub axis: Vector3<f64>,
    pub range: (f64, f64),
    pub stiffness: f64,
    pub damping: f64,
    pub default_angle: f64,
}

impl Joint {
    /// A joint whose range has zero width never moves.
    pub fn is_locked(&self) -> bool {
        self.range.1 <= self.range.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vector3<f64>,
    /// Indices into [`Model::joints`], in composition order.
    pub joints: Vec<usize>,
    pub mass: f64,
    /// Inertia about the centre of mass, body frame.
    pub inertia: Matrix3<f64>,
    pub com: Vector3<f64>,
    pub sites: Vec<usize>,
    pub tags: Vec<String>,
}

impl Body {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub name: String,
    pub body: usize,
    pub position: Vector3<f64>,
    pub tags: Vec<String>,
}

impl Site {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WrapShape {
    Sphere,
    /// Infinite cylinder along a unit axis (body frame).
    Cylinder {
        axis: Vector3<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WrapGeom {
    pub name: String,
    pub body: usize,
    pub shape: WrapShape,
    pub center: Vector3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Muscle {
    pub params: MuscleParams,
    pub path: MusclePath,
}

/// Marker bound to a body at a local offset.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerSpec {
    pub name: String,
    pub body: usize,
    pub offset: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    pub bodies: Vec<Body>,
    pub joints: Vec<Joint>,
    pub sites: Vec<Site>,
    pub wraps: Vec<WrapGeom>,
    pub muscles: Vec<Muscle>,
    pub markers: Vec<MarkerSpec>,
    /// Authored reference angles (e.g. the neck S pose) as (joint, angle).
    pub reference_pose: Vec<(usize, f64)>,
    /// For every body, the joints that move it, root first.
    pub(crate) body_joint_chain: Vec<Vec<usize>>,
}

/// Joint-space configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub angles: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl Pose {
    pub fn zeros(joints: usize) -> Self {
        Self {
            angles: vec![0.0; joints],
            velocities: vec![0.0; joints],
        }
    }

    pub fn check(&self, model: &Model) -> Result<()> {
        let n = model.joints.len();
        if self.angles.len() != n {
            return Err(Error::Dimension {
                what: "pose angles",
                expected: n,
                got: self.angles.len(),
            });
        }
        if self.velocities.len() != n {
            return Err(Error::Dimension {
                what: "pose velocities",
                expected: n,
                got: self.velocities.len(),
            });
        }
        Ok(())
    }
}

impl Model {
    pub fn body_index(&self, name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.name == name)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn site_index(&self, name: &str) -> Option<usize> {
        self.sites.iter().position(|s| s.name == name)
    }

    pub fn muscle_index(&self, name: &str) -> Option<usize> {
        self.muscles.iter().position(|m| m.params.name == name)
    }

    pub fn bodies_tagged<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.bodies
            .iter()
            .enumerate()
            .filter(move |(_, b)| b.has_tag(tag))
            .map(|(i, _)| i)
    }

    pub fn sites_tagged<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.sites
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.has_tag(tag))
            .map(|(i, _)| i)
    }

    /// Joints that move `body`, ordered from the root down.
    pub fn joint_chain(&self, body: usize) -> &[usize] {
        &self.body_joint_chain[body]
    }

    /// True when `ancestor` is `body` or lies above it in the tree.
    pub fn is_ancestor(&self, ancestor: usize, body: usize) -> bool {
        let mut cur = Some(body);
        while let Some(b) = cur {
            if b == ancestor {
                return true;
            }
            cur = self.bodies[b].parent;
        }
        false
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.mass).sum()
    }

    pub fn default_pose(&self) -> Pose {
        Pose {
            angles: self.joints.iter().map(|j| j.default_angle).collect(),
            velocities: vec![0.0; self.joints.len()],
        }
    }

    /// Default pose with the authored reference angles applied on top.
    pub fn reference_pose(&self) -> Pose {
        let mut pose = self.default_pose();
        for &(j, angle) in &self.reference_pose {
            pose.angles[j] = angle;
        }
        pose
    }

    /// Clamps every angle into its joint range, zeroing the velocity of any
    /// joint that was clamped. Returns the number of joints clamped.
    pub fn clamp_pose(&self, pose: &mut Pose) -> usize {
        let mut clamped = 0;
        for (j, joint) in self.joints.iter().enumerate() {
            let (lo, hi) = joint.range;
            let q = pose.angles[j];
            if q < lo || q > hi {
                pose.angles[j] = q.clamp(lo, hi);
                pose.velocities[j] = 0.0;
                clamped += 1;
            }
        }
        clamped
    }
}

// ---------------------------------------------------------------------------
// Builder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BodySpec {
    pub name: String,
    pub parent: Option<String>,
    pub offset: [f64; 3],
    pub mass: f64,
    pub inertia: [[f64; 3]; 3],
    pub com: [f64; 3],
    pub tags: Vec<String>,
}

impl BodySpec {
    pub fn new(name: &str, parent: Option<&str>, offset: [f64; 3], mass: f64) -> Self {
        let i = mass * 1e-3;
        Self {
            name: name.to_string(),
            parent: parent.map(str::to_string),
            offset,
            mass,
            inertia: [[i, 0.0, 0.0], [0.0, i, 0.0], [0.0, 0.0, i]],
            com: [0.0; 3],
            tags: Vec::new(),
        }
    }

    pub fn inertia_diag(mut self, d: [f64; 3]) -> Self {
        self.inertia = [[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]];
        self
    }

    pub fn com(mut self, com: [f64; 3]) -> Self {
        self.com = com;
        self
    }

    pub fn tags(mut self, tags: &[&str]) -> Self {
        self.tags = tags.iter().map(|t| t.to_string()).collect();
        self
    }
}

#[derive(Debug, Clone)]
pub struct JointSpec {
    pub name: String,
    pub body: String,
    pub kind: JointKind,
    pub axis: [f64; 3],
    pub range: (f64, f64),
    pub stiffness: f64,
    pub damping: f64,
    pub default_angle: f64,
}

impl JointSpec {
    pub fn hinge(name: &str, body: &str, axis: [f64; 3], range: (f64, f64)) -> Self {
        Self {
            name: name.to_string(),
            body: body.to_string(),
            kind: JointKind::Hinge,
            axis,
            range,
            stiffness: 0.0,
            damping: 0.0,
            default_angle: 0.0,
        }
    }

    pub fn slide(name: &str, body: &str, axis: [f64; 3], range: (f64, f64)) -> Self {
        Self {
            kind: JointKind::Slide,
            ..Self::hinge(name, body, axis, range)
        }
    }

    pub fn stiffness(mut self, k: f64) -> Self {
        self.stiffness = k;
        self
    }

    pub fn damping(mut self, d: f64) -> Self {
        self.damping = d;
        self
    }

    pub fn default_angle(mut self, q: f64) -> Self {
        self.default_angle = q;
        self
    }
}

#[derive(Debug, Clone)]
pub struct SiteSpec {
    pub name: String,
    pub body: String,
    pub position: [f64; 3],
    pub tags: Vec<String>,
}

impl SiteSpec {
    pub fn new(name: &str, body: &str, position: [f64; 3]) -> Self {
        Self {
            name: name.to_string(),
            body: body.to_string(),
            position,
            tags: Vec::new(),
        }
    }

    pub fn tags(mut self, tags: &[&str]) -> Self {
        self.tags = tags.iter().map(|t| t.to_string()).collect();
        self
    }
}

#[derive(Debug, Clone)]
pub struct WrapSpec {
    pub name: String,
    pub body: String,
    pub cylinder_axis: Option<[f64; 3]>,
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct MuscleSpec {
    pub name: String,
    pub sites: Vec<String>,
    /// (segment index, wrap geometry name)
    pub wraps: Vec<(usize, String)>,
    pub peak_force: f64,
    /// Computed by sampling when absent.
    pub length_range: Option<(f64, f64)>,
    pub operating_range: (f64, f64),
    pub tau_act: Option<f64>,
    pub tau_deact: Option<f64>,
    pub fv_max: Option<f64>,
    pub vmax: Option<f64>,
}

impl MuscleSpec {
    pub fn new(name: &str, sites: &[&str], peak_force: f64) -> Self {
        Self {
            name: name.to_string(),
            sites: sites.iter().map(|s| s.to_string()).collect(),
            wraps: Vec::new(),
            peak_force,
            length_range: None,
            operating_range: (0.5, 1.5),
            tau_act: None,
            tau_deact: None,
            fv_max: None,
            vmax: None,
        }
    }

    pub fn wrap(mut self, segment: usize, geom: &str) -> Self {
        self.wraps.push((segment, geom.to_string()));
        self
    }

    pub fn length_range(mut self, lr: (f64, f64)) -> Self {
        self.length_range = Some(lr);
        self
    }

    pub fn operating_range(mut self, r: (f64, f64)) -> Self {
        self.operating_range = r;
        self
    }
}

/// Programmatic model construction with the same validation as the document
/// loader.
#[derive(Debug, Clone, Default)]
pub struct ModelBuilder {
    pub name: String,
    pub bodies: Vec<BodySpec>,
    pub joints: Vec<JointSpec>,
    pub sites: Vec<SiteSpec>,
    pub wraps: Vec<WrapSpec>,
    pub muscles: Vec<MuscleSpec>,
    pub markers: Vec<(String, String, [f64; 3])>,
    pub reference_pose: Vec<(String, f64)>,
    /// Samples used when a muscle has no authored length range.
    pub calibration_samples: usize,
    pub calibration_seed: u64,
}

impl ModelBuilder {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            calibration_samples: 2000,
            ..Default::default()
        }
    }

    pub fn body(mut self, spec: BodySpec) -> Self {
        self.bodies.push(spec);
        self
    }

    pub fn joint(mut self, spec: JointSpec) -> Self {
        self.joints.push(spec);
        self
    }

    pub fn site(mut self, spec: SiteSpec) -> Self {
        self.sites.push(spec);
        self
    }

    pub fn sphere(mut self, name: &str, body: &str, center: [f64; 3], radius: f64) -> Self {
        self.wraps.push(WrapSpec {
            name: name.to_string(),
            body: body.to_string(),
            cylinder_axis: None,
            center,
            radius,
        });
        self
    }

    pub fn cylinder(mut self, name: &str, body: &str, center: [f64; 3], axis: [f64; 3], radius: f64) -> Self {
        self.wraps.push(WrapSpec {
            name: name.to_string(),
            body: body.to_string(),
            cylinder_axis: Some(axis),
            center,
            radius,
        });
        self
    }

    pub fn muscle(mut self, spec: MuscleSpec) -> Self {
        self.muscles.push(spec);
        self
    }

    pub fn marker(mut self, name: &str, body: &str, offset: [f64; 3]) -> Self {
        self.markers.push((name.to_string(), body.to_string(), offset));
        self
    }

    pub fn build(self) -> Result<Model> {
        let order = topological_order(&self.bodies)?;
        let name_to_body = |name: &str, path: String| -> Result<usize> {
            order
                .iter()
                .position(|&i| self.bodies[i].name == name)
                .ok_or(Error::DanglingReference {
                    path,
                    name: name.to_string(),
                })
        };

        let mut bodies = Vec::with_capacity(order.len());
        for &src in &order {
            let spec = &self.bodies[src];
            let path = format!("bodies[{src}]");
            let parent = match &spec.parent {
                Some(p) => Some(name_to_body(p, format!("{path}.parent"))?),
                None => None,
            };
            if !(spec.mass > 0.0 && spec.mass.is_finite()) {
                return Err(Error::invariant(format!("{path}.mass"), "mass must be positive"));
            }
            let inertia = Matrix3::from_fn(|r, c| spec.inertia[r][c]);
            check_inertia(&inertia, &format!("{path}.inertia"))?;
            bodies.push(Body {
                name: spec.name.clone(),
                parent,
                offset: Vector3::from(spec.offset),
                joints: Vec::new(),
                mass: spec.mass,
                inertia,
                com: Vector3::from(spec.com),
                sites: Vec::new(),
                tags: spec.tags.clone(),
            });
        }

        // joints grouped per body in topological order, listed order within
        let mut joint_specs: Vec<(usize, usize)> = Vec::new();
        for (k, spec) in self.joints.iter().enumerate() {
            let body = name_to_body(&spec.body, format!("joints[{k}].body"))?;
            joint_specs.push((body, k));
        }
        joint_specs.sort_by_key(|&(body, k)| (body, k));
        let mut joints = Vec::with_capacity(joint_specs.len());
        for &(body, k) in &joint_specs {
            let spec = &self.joints[k];
            let path = format!("joints[{k}]");
            if joints.iter().any(|j: &Joint| j.name == spec.name) {
                return Err(Error::invariant(format!("{path}.name"), "duplicate joint name"));
            }
            let axis = normalize_axis(spec.axis, &format!("{path}.axis"))?;
            let (lo, hi) = spec.range;
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::invariant(
                    format!("{path}.range"),
                    format!("need min <= max, got ({lo}, {hi})"),
                ));
            }
            if !(lo..=hi).contains(&spec.default_angle) {
                return Err(Error::invariant(
                    format!("{path}.default"),
                    format!("default {} outside range ({lo}, {hi})", spec.default_angle),
                ));
            }
            if spec.stiffness < 0.0 || spec.damping < 0.0 {
                return Err(Error::invariant(path, "stiffness and damping must be >= 0"));
            }
            bodies[body].joints.push(joints.len());
            joints.push(Joint {
                name: spec.name.clone(),
                body,
                kind: spec.kind,
                axis,
                range: spec.range,
                stiffness: spec.stiffness,
                damping: spec.damping,
                default_angle: spec.default_angle,
            });
        }

        let mut sites = Vec::with_capacity(self.sites.len());
        for (k, spec) in self.sites.iter().enumerate() {
            let body = name_to_body(&spec.body, format!("sites[{k}].body"))?;
            if sites.iter().any(|s: &Site| s.name == spec.name) {
                return Err(Error::invariant(
                    format!("sites[{k}].name"),
                    "duplicate site name",
                ));
            }
            bodies[body].sites.push(sites.len());
            sites.push(Site {
                name: spec.name.clone(),
                body,
                position: Vector3::from(spec.position),
                tags: spec.tags.clone(),
            });
        }

        let mut wraps = Vec::with_capacity(self.wraps.len());
        for (k, spec) in self.wraps.iter().enumerate() {
            let path = format!("wrap_geoms[{k}]");
            let body = name_to_body(&spec.body, format!("{path}.body"))?;
            if !(spec.radius > 0.0 && spec.radius.is_finite()) {
                return Err(Error::invariant(
                    format!("{path}.radius"),
                    "radius must be positive",
                ));
            }
            let shape = match spec.cylinder_axis {
                None => WrapShape::Sphere,
                Some(axis) => WrapShape::Cylinder {
                    axis: normalize_axis(axis, &format!("{path}.axis"))?,
                },
            };
            wraps.push(WrapGeom {
                name: spec.name.clone(),
                body,
                shape,
                center: Vector3::from(spec.center),
                radius: spec.radius,
            });
        }

        let mut markers = Vec::with_capacity(self.markers.len());
        for (k, (name, body, offset)) in self.markers.iter().enumerate() {
            let body = name_to_body(body, format!("markers[{k}].body"))?;
            markers.push(MarkerSpec {
                name: name.clone(),
                body,
                offset: Vector3::from(*offset),
            });
        }

        let mut reference_pose = Vec::new();
        for (name, angle) in &self.reference_pose {
            let j = joints
                .iter()
                .position(|j| &j.name == name)
                .ok_or_else(|| Error::DanglingReference {
                    path: "reference_pose".into(),
                    name: name.clone(),
                })?;
            reference_pose.push((j, *angle));
        }

        let body_joint_chain = joint_chains(&bodies);
        let mut model = Model {
            name: self.name.clone(),
            bodies,
            joints,
            sites,
            wraps,
            muscles: Vec::new(),
            markers,
            reference_pose,
            body_joint_chain,
        };

        // Muscles need routing on the finished skeleton for calibration.
        let mut paths = Vec::with_capacity(self.muscles.len());
        for (k, spec) in self.muscles.iter().enumerate() {
            let path = format!("muscles[{k}]");
            if spec.sites.len() < 2 {
                return Err(Error::invariant(format!("{path}.sites"), "need at least 2 sites"));
            }
            let mut site_ids = Vec::with_capacity(spec.sites.len());
            for (s, name) in spec.sites.iter().enumerate() {
                site_ids.push(model.site_index(name).ok_or_else(|| Error::DanglingReference {
                    path: format!("{path}.sites[{s}]"),
                    name: name.clone(),
                })?);
            }
            let mut segment_wraps = vec![None; site_ids.len() - 1];
            for (w, (segment, geom)) in spec.wraps.iter().enumerate() {
                let wpath = format!("{path}.wraps[{w}]");
                let g = model.wraps.iter().position(|g| &g.name == geom).ok_or_else(|| {
                    Error::DanglingReference {
                        path: format!("{wpath}.geom"),
                        name: geom.clone(),
                    }
                })?;
                let slot = segment_wraps.get_mut(*segment).ok_or_else(|| {
                    Error::invariant(format!("{wpath}.segment"), "segment index out of range")
                })?;
                if slot.is_some() {
                    return Err(Error::invariant(
                        format!("{wpath}.segment"),
                        "at most one wrap geometry per segment",
                    ));
                }
                *slot = Some(g);
            }
            paths.push(MusclePath {
                sites: site_ids,
                wraps: segment_wraps,
            });
        }

        for (k, (spec, path)) in self.muscles.iter().zip(paths).enumerate() {
            let mpath = format!("muscles[{k}]");
            if model.muscles.iter().any(|m| m.params.name == spec.name) {
                return Err(Error::invariant(format!("{mpath}.name"), "duplicate muscle name"));
            }
            let length_range = match spec.length_range {
                Some(lr) => lr,
                None => {
                    model.muscles.push(Muscle {
                        params: placeholder_params(&spec.name),
                        path: path.clone(),
                    });
                    let lr = crate::muscle::calibrate_length_ranges(
                        &model,
                        &spec.name,
                        self.calibration_samples.max(1),
                        self.calibration_seed,
                    )?;
                    model.muscles.pop();
                    if lr.1 <= lr.0 {
                        return Err(Error::invariant(
                            format!("{mpath}.length_range"),
                            "calibrated length range is degenerate; author it explicitly",
                        ));
                    }
                    lr
                }
            };
            if !(length_range.0 > 0.0) {
                return Err(Error::invariant(
                    format!("{mpath}.length_range"),
                    "minimum length must be positive",
                ));
            }
            let (r_min, r_max) = spec.operating_range;
            if !(r_min > 0.0 && r_min < 1.0 && r_max > 1.0) {
                return Err(Error::invariant(
                    format!("{mpath}.operating_range"),
                    format!("need 0 < Rmin < 1 < Rmax, got ({r_min}, {r_max})"),
                ));
            }
            let mut params = MuscleParams::new(
                spec.name.clone(),
                spec.peak_force,
                length_range,
                spec.operating_range,
            )
            .map_err(|e| match e {
                Error::Invariant { message, .. } => Error::invariant(mpath.clone(), message),
                other => other,
            })?;
            if let Some(t) = spec.tau_act {
                params.tau_act = t;
            }
            if let Some(t) = spec.tau_deact {
                params.tau_deact = t;
            }
            if let Some(v) = spec.fv_max {
                params.fv_max = v;
            }
            if let Some(v) = spec.vmax {
                params.vmax = v;
            }
            if !(params.tau_act > 0.0 && params.tau_deact > 0.0) {
                return Err(Error::invariant(mpath, "time constants must be positive"));
            }
            if !(params.vmax > 0.0 && params.fv_max >= 1.0) {
                return Err(Error::invariant(mpath, "need vmax > 0 and fv_max >= 1"));
            }
            model.muscles.push(Muscle { params, path });
        }
        Ok(model)
    }
}

fn placeholder_params(name: &str) -> MuscleParams {
    MuscleParams::new(name, 1.0, (1.0, 2.0), (0.5, 1.5)).expect("valid placeholder")
}

fn topological_order(bodies: &[BodySpec]) -> Result<Vec<usize>> {
    if bodies.is_empty() {
        return Err(Error::invariant("bodies", "model has no bodies"));
    }
    for (i, b) in bodies.iter().enumerate() {
        if bodies[..i].iter().any(|o| o.name == b.name) {
            return Err(Error::invariant(
                format!("bodies[{i}].name"),
                "duplicate body name",
            ));
        }
    }
    let roots: Vec<usize> = (0..bodies.len())
        .filter(|&i| bodies[i].parent.is_none())
        .collect();
    if roots.len() != 1 {
        return Err(Error::invariant(
            "bodies",
            format!("exactly one root body required, found {}", roots.len()),
        ));
    }
    let mut parent = Vec::with_capacity(bodies.len());
    for (i, b) in bodies.iter().enumerate() {
        parent.push(match &b.parent {
            None => None,
            Some(p) => {
                Some(
                    bodies
                        .iter()
                        .position(|o| &o.name == p)
                        .ok_or_else(|| Error::DanglingReference {
                            path: format!("bodies[{i}].parent"),
                            name: p.clone(),
                        })?,
                )
            }
        });
    }
    for start in 0..bodies.len() {
        let mut cur = parent[start];
        let mut steps = 0;
        while let Some(p) = cur {
            if p == start || steps > bodies.len() {
                return Err(Error::Cycle {
                    path: format!("bodies[{start}] ({})", bodies[start].name),
                });
            }
            cur = parent[p];
            steps += 1;
        }
    }
    // depth-first from the root, children in document order
    let mut order = Vec::with_capacity(bodies.len());
    let mut stack = vec![roots[0]];
    while let Some(b) = stack.pop() {
        order.push(b);
        let children: Vec<usize> = (0..bodies.len()).filter(|&c| parent[c] == Some(b)).collect();
        stack.extend(children.into_iter().rev());
    }
    Ok(order)
}

fn joint_chains(bodies: &[Body]) -> Vec<Vec<usize>> {
    let mut chains: Vec<Vec<usize>> = Vec::with_capacity(bodies.len());
    for body in bodies {
        let mut chain = match body.parent {
            Some(p) => chains[p].clone(),
            None => Vec::new(),
        };
        chain.extend_from_slice(&body.joints);
        chains.push(chain);
    }
    chains
}

fn normalize_axis(axis: [f64; 3], path: &str) -> Result<Vector3<f64>> {
    let v = Vector3::from(axis);
    let norm = v.norm();
    if !norm.is_finite() || (norm - 1.0).abs() >= AXIS_ERROR_TOLERANCE {
        return Err(Error::invariant(
            path,
            format!("axis norm {norm} is not within {AXIS_ERROR_TOLERANCE} of 1"),
        ));
    }
    if (norm - 1.0).abs() > AXIS_WARN_TOLERANCE {
        warn!("{path}: axis norm {norm} renormalised to 1");
    }
    Ok(v / norm)
}

fn check_inertia(inertia: &Matrix3<f64>, path: &str) -> Result<()> {
    if inertia.iter().any(|v| !v.is_finite()) {
        return Err(Error::invariant(path, "inertia must be finite"));
    }
    let scale = inertia.abs().max().max(1e-300);
    if (inertia - inertia.transpose()).abs().max() > 1e-9 * scale {
        return Err(Error::invariant(path, "inertia must be symmetric"));
    }
    let eig = inertia.symmetric_eigenvalues();
    if eig.min() < -1e-12 * scale {
        return Err(Error::invariant(path, "inertia must be positive semi-definite"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_links() -> ModelBuilder {
        ModelBuilder::new("t")
            .body(BodySpec::new("a", None, [0.0; 3], 1.0))
            .body(BodySpec::new("b", Some("a"), [1.0, 0.0, 0.0], 1.0))
    }

    #[test]
    fn single_root_no_joints() {
        let m = ModelBuilder::new("m")
            .body(BodySpec::new("root", None, [0.0; 3], 1.0))
            .build()
            .unwrap();
        assert_eq!(m.bodies.len(), 1);
        assert_eq!(m.joints.len(), 0);
    }

    #[test]
    fn axis_normalisation_rules() {
        let ok = two_links()
            .joint(JointSpec::hinge("j", "b", [0.0, 0.0, 1.0 + 1e-3], (-1.0, 1.0)))
            .build()
            .unwrap();
        assert!((ok.joints[0].axis.norm() - 1.0).abs() < 1e-15);
        let err = two_links()
            .joint(JointSpec::hinge("j", "b", [0.0, 0.0, 2.0], (-1.0, 1.0)))
            .build()
            .unwrap_err();
        assert!(err.to_string().contains("joints[0].axis"), "{err}");
    }

    #[test]
    fn self_parent_is_a_cycle() {
        let err = ModelBuilder::new("m")
            .body(BodySpec::new("root", None, [0.0; 3], 1.0))
            .body(BodySpec::new("b", Some("b"), [0.0; 3], 1.0))
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::Cycle { .. }), "{err}");
    }

    #[test]
    fn dangling_parent_and_bad_mass() {
        let err = ModelBuilder::new("m")
            .body(BodySpec::new("root", None, [0.0; 3], 1.0))
            .body(BodySpec::new("b", Some("nope"), [0.0; 3], 1.0))
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::DanglingReference { .. }));
        let err = ModelBuilder::new("m")
            .body(BodySpec::new("root", None, [0.0; 3], 0.0))
            .build()
            .unwrap_err();
        assert!(err.to_string().contains("bodies[0].mass"));
    }

    #[test]
    fn children_listed_before_parents_are_reordered() {
        let m = ModelBuilder::new("m")
            .body(BodySpec::new("c", Some("b"), [0.0; 3], 1.0))
            .body(BodySpec::new("b", Some("a"), [0.0; 3], 1.0))
            .body(BodySpec::new("a", None, [0.0; 3], 1.0))
            .joint(JointSpec::hinge("jc", "c", [0.0, 0.0, 1.0], (-1.0, 1.0)))
            .joint(JointSpec::hinge("jb", "b", [0.0, 0.0, 1.0], (-1.0, 1.0)))
            .build()
            .unwrap();
        let names: Vec<_> = m.bodies.iter().map(|b| b.name.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
        assert_eq!(m.joints[0].name, "jb");
        assert_eq!(m.joint_chain(2), &[0, 1]);
    }

    #[test]
    fn default_must_lie_in_range() {
        let err = two_links()
            .joint(JointSpec::hinge("j", "b", [0.0, 0.0, 1.0], (-1.0, 1.0)).default_angle(2.0))
            .build()
            .unwrap_err();
        assert!(err.to_string().contains("joints[0].default"));
    }

    #[test]
    fn asymmetric_inertia_rejected() {
        let mut spec = BodySpec::new("root", None, [0.0; 3], 1.0);
        spec.inertia[0][1] = 0.5;
        let err = ModelBuilder::new("m").body(spec).build().unwrap_err();
        assert!(err.to_string().contains("symmetric"));
    }
}
