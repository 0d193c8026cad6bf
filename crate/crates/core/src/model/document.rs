//! Model document loader.
//!
//! A model document is a TOML key/value tree whose `version` field must be
//! `musculo-model/1`. Sections: `bodies`, `joints`, `sites`, `wrap_geoms`,
//! `muscles`, plus optional `markers` and `reference_pose`.
//!
//! ```toml
//! version = "musculo-model/1"
//! name = "arm"
//!
//! [[bodies]]
//! name = "upper"
//! mass = 1.0
//! inertia = [0.01, 0.01, 0.001]      # diagonal, or a full 3x3 array
//!
//! [[bodies]]
//! name = "fore"
//! parent = "upper"
//! offset = [0.0, 0.0, -0.3]
//! mesh = "fore.mesh"                  # mass properties from the mesh
//! density = 1000.0
//!
//! [[joints]]
//! name = "elbow"
//! body = "fore"
//! axis = [0.0, 1.0, 0.0]
//! range = [0.0, 2.5]
//!
//! [[muscles]]
//! name = "biceps"
//! sites = ["biceps_origin", "biceps_insertion"]
//! wraps = [{ segment = 0, geom = "elbow_wrap" }]
//! f0 = 300.0
//! length_range = [0.25, 0.36]         # sampled from joint ranges if absent
//! operating_range = [0.5, 1.5]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{
    mesh, BodySpec, JointKind, JointSpec, Model, ModelBuilder, MuscleSpec, SiteSpec, WrapSpec, MODEL_VERSION,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct DocumentOptions {
    /// Directory that relative mesh paths resolve against.
    pub base_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    version: String,
    #[serde(default)]
    name: String,
    #[serde(default)]
    calibration_samples: Option<usize>,
    #[serde(default)]
    calibration_seed: Option<u64>,
    bodies: Vec<BodyDoc>,
    #[serde(default)]
    joints: Vec<JointDoc>,
    #[serde(default)]
    sites: Vec<SiteDoc>,
    #[serde(default)]
    wrap_geoms: Vec<WrapDoc>,
    #[serde(default)]
    muscles: Vec<MuscleDoc>,
    #[serde(default)]
    markers: Vec<MarkerDoc>,
    #[serde(default)]
    reference_pose: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum InertiaDoc {
    Diagonal([f64; 3]),
    Full([[f64; 3]; 3]),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BodyDoc {
    name: String,
    parent: Option<String>,
    #[serde(default)]
    offset: [f64; 3],
    mass: Option<f64>,
    inertia: Option<InertiaDoc>,
    com: Option<[f64; 3]>,
    mesh: Option<String>,
    density: Option<f64>,
    #[serde(default)]
    tags: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
enum JointKindDoc {
    Hinge,
    Slide,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    name: String,
    body: String,
    #[serde(rename = "type", default = "hinge")]
    kind: JointKindDoc,
    axis: [f64; 3],
    range: [f64; 2],
    #[serde(default)]
    stiffness: f64,
    #[serde(default)]
    damping: f64,
    #[serde(default)]
    default: Option<f64>,
}

fn hinge() -> JointKindDoc {
    JointKindDoc::Hinge
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SiteDoc {
    name: String,
    body: String,
    pos: [f64; 3],
    #[serde(default)]
    tags: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
enum WrapKindDoc {
    Sphere,
    Cylinder,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WrapDoc {
    name: String,
    body: String,
    #[serde(rename = "type")]
    kind: WrapKindDoc,
    #[serde(default)]
    center: [f64; 3],
    radius: f64,
    axis: Option<[f64; 3]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WrapAssignDoc {
    segment: usize,
    geom: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MuscleDoc {
    name: String,
    sites: Vec<String>,
    #[serde(default)]
    wraps: Vec<WrapAssignDoc>,
    f0: f64,
    length_range: Option<[f64; 2]>,
    #[serde(default = "default_operating_range")]
    operating_range: [f64; 2],
    tau_act: Option<f64>,
    tau_deact: Option<f64>,
    fv_max: Option<f64>,
    vmax: Option<f64>,
}

fn default_operating_range() -> [f64; 2] {
    [0.5, 1.5]
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MarkerDoc {
    name: String,
    body: String,
    #[serde(default)]
    offset: [f64; 3],
}

/// Parses and validates a model document.
pub fn load_model(text: &str, options: &DocumentOptions) -> Result<Model> {
    let doc: Document = toml::from_str(text).map_err(|e| {
        let start = e.span().map(|s| s.start.min(text.len()));
        let line = start.map(|s| text[..s].matches('\n').count() + 1).unwrap_or(0);
        // the key on the offending line, or the enclosing table header
        let field = start
            .and_then(|s| {
                text[..s]
                    .lines()
                    .last()
                    .map(str::to_string)
                    .or(Some(String::new()))
            })
            .map(|prefix| {
                let whole = text.lines().nth(line.saturating_sub(1)).unwrap_or(&prefix);
                match whole.split_once('=') {
                    Some((key, _)) => key.trim().to_string(),
                    None => whole.trim().trim_matches(['[', ']']).to_string(),
                }
            })
            .unwrap_or_default();
        Error::Parse {
            line,
            field,
            message: e.message().to_string(),
        }
    })?;
    if doc.version != MODEL_VERSION {
        return Err(Error::invariant(
            "version",
            format!("expected `{MODEL_VERSION}`, found `{}`", doc.version),
        ));
    }

    let mut builder = ModelBuilder::new(&doc.name);
    if let Some(n) = doc.calibration_samples {
        builder.calibration_samples = n;
    }
    if let Some(s) = doc.calibration_seed {
        builder.calibration_seed = s;
    }

    for (i, b) in doc.bodies.into_iter().enumerate() {
        let path = format!("bodies[{i}]");
        let from_mesh = match &b.mesh {
            Some(file) => {
                let density = b
                    .density
                    .ok_or_else(|| Error::invariant(format!("{path}.density"), "mesh requires a density"))?;
                let full = match &options.base_dir {
                    Some(dir) => dir.join(file),
                    None => PathBuf::from(file),
                };
                let text = std::fs::read_to_string(&full).map_err(|e| Error::io(&full, e))?;
                let m = mesh::parse_mesh(&text)?;
                Some(
                    mesh::mesh_inertia(&m, density)
                        .map_err(|e| Error::invariant(format!("{path}.mesh"), e.to_string()))?,
                )
            }
            None => None,
        };
        let mass = match (b.mass, &from_mesh) {
            (Some(m), _) => m,
            (None, Some(p)) => p.mass,
            (None, None) => return Err(Error::invariant(format!("{path}.mass"), "mass or mesh required")),
        };
        let inertia = match (b.inertia, &from_mesh) {
            (Some(InertiaDoc::Diagonal(d)), _) => [[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]],
            (Some(InertiaDoc::Full(m)), _) => m,
            // mesh inertia scales with mass when mass is given explicitly
            (None, Some(p)) => {
                let s = mass / p.mass;
                let i = p.inertia * s;
                [
                    [i[(0, 0)], i[(0, 1)], i[(0, 2)]],
                    [i[(1, 0)], i[(1, 1)], i[(1, 2)]],
                    [i[(2, 0)], i[(2, 1)], i[(2, 2)]],
                ]
            }
            (None, None) => {
                return Err(Error::invariant(
                    format!("{path}.inertia"),
                    "inertia or mesh required",
                ))
            }
        };
        let com = match (b.com, &from_mesh) {
            (Some(c), _) => c,
            (None, Some(p)) => [p.com.x, p.com.y, p.com.z],
            (None, None) => [0.0; 3],
        };
        builder.bodies.push(BodySpec {
            name: b.name,
            parent: b.parent,
            offset: b.offset,
            mass,
            inertia,
            com,
            tags: b.tags,
        });
    }

    for j in doc.joints {
        let kind = match j.kind {
            JointKindDoc::Hinge => JointKind::Hinge,
            JointKindDoc::Slide => JointKind::Slide,
        };
        let range = (j.range[0], j.range[1]);
        let default = j
            .default
            .unwrap_or_else(|| 0f64.clamp(range.0.min(range.1), range.1.max(range.0)));
        builder.joints.push(JointSpec {
            name: j.name,
            body: j.body,
            kind,
            axis: j.axis,
            range,
            stiffness: j.stiffness,
            damping: j.damping,
            default_angle: default,
        });
    }

    for s in doc.sites {
        builder.sites.push(SiteSpec {
            name: s.name,
            body: s.body,
            position: s.pos,
            tags: s.tags,
        });
    }

    for (i, w) in doc.wrap_geoms.into_iter().enumerate() {
        let cylinder_axis = match (w.kind, w.axis) {
            (WrapKindDoc::Sphere, _) => None,
            (WrapKindDoc::Cylinder, Some(a)) => Some(a),
            (WrapKindDoc::Cylinder, None) => {
                return Err(Error::invariant(
                    format!("wrap_geoms[{i}].axis"),
                    "cylinder requires an axis",
                ))
            }
        };
        builder.wraps.push(WrapSpec {
            name: w.name,
            body: w.body,
            cylinder_axis,
            center: w.center,
            radius: w.radius,
        });
    }

    for m in doc.muscles {
        builder.muscles.push(MuscleSpec {
            name: m.name,
            sites: m.sites,
            wraps: m.wraps.into_iter().map(|w| (w.segment, w.geom)).collect(),
            peak_force: m.f0,
            length_range: m.length_range.map(|r| (r[0], r[1])),
            operating_range: (m.operating_range[0], m.operating_range[1]),
            tau_act: m.tau_act,
            tau_deact: m.tau_deact,
            fv_max: m.fv_max,
            vmax: m.vmax,
        });
    }

    for mk in doc.markers {
        builder.markers.push((mk.name, mk.body, mk.offset));
    }
    builder.reference_pose = doc.reference_pose.into_iter().collect();

    builder.build()
}

/// Reads a model document from disk; mesh paths resolve relative to it.
pub fn load_model_file(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_model(
        &text,
        &DocumentOptions {
            base_dir: path.parent().map(Path::to_path_buf),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = "musculo-model/1"
name = "minimal"

[[bodies]]
name = "root"
mass = 1.0
inertia = [0.1, 0.1, 0.1]
"#;

    #[test]
    fn minimal_document() {
        let m = load_model(MINIMAL, &DocumentOptions::default()).unwrap();
        assert_eq!(m.bodies.len(), 1);
        assert_eq!(m.joints.len(), 0);
    }

    #[test]
    fn wrong_version() {
        let text = MINIMAL.replace("musculo-model/1", "musculo-model/9");
        let err = load_model(&text, &DocumentOptions::default()).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn parse_error_reports_line_and_field() {
        let text = format!(
            "{MINIMAL}\n[[joints]]\nname = \"j\"\nbody = \"root\"\naxis = \"up\"\nrange = [0.0, 1.0]\n"
        );
        match load_model(&text, &DocumentOptions::default()).unwrap_err() {
            Error::Parse { line, field, .. } => {
                assert!(line >= 10, "line {line}");
                assert!(field.contains("axis") || field.contains("joints"), "{field}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn axis_auto_normalised_or_rejected() {
        let body = "\n[[bodies]]\nname = \"b\"\nparent = \"root\"\nmass = 1.0\ninertia = [0.1, 0.1, 0.1]\n";
        let joint = |axis: &str| {
            format!("{MINIMAL}{body}\n[[joints]]\nname = \"j\"\nbody = \"b\"\naxis = {axis}\nrange = [-1.0, 1.0]\n")
        };
        let m = load_model(&joint("[0.0, 0.0, 1.000001]"), &DocumentOptions::default()).unwrap();
        assert!((m.joints[0].axis.z - 1.0).abs() < 1e-15);
        let err = load_model(&joint("[0.0, 0.0, 2.0]"), &DocumentOptions::default()).unwrap_err();
        assert!(err.to_string().contains("joints[0].axis"));
    }

    #[test]
    fn self_parent_cycle() {
        let text = format!(
            "{MINIMAL}\n[[bodies]]\nname = \"b\"\nparent = \"b\"\nmass = 1.0\ninertia = [0.1, 0.1, 0.1]\n"
        );
        let err = load_model(&text, &DocumentOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Cycle { .. }));
    }

    #[test]
    fn mesh_reference_and_explicit_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let cube = mesh::box_mesh([1.0; 3]);
        let mut text = String::new();
        for v in &cube.vertices {
            text.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
        }
        for f in &cube.triangles {
            text.push_str(&format!("f {} {} {}\n", f[0], f[1], f[2]));
        }
        std::fs::write(dir.path().join("cube.mesh"), text).unwrap();
        let doc = r#"
version = "musculo-model/1"
[[bodies]]
name = "root"
mesh = "cube.mesh"
density = 2.0

[[bodies]]
name = "explicit"
parent = "root"
mesh = "cube.mesh"
density = 2.0
inertia = [1.0, 2.0, 3.0]
"#;
        std::fs::write(dir.path().join("m.model"), doc).unwrap();
        let m = load_model_file(dir.path().join("m.model")).unwrap();
        assert!((m.bodies[0].mass - 2.0).abs() < 1e-12);
        assert!((m.bodies[0].inertia[(0, 0)] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.bodies[1].inertia[(2, 2)], 3.0);
    }

    #[test]
    fn muscle_section_and_dangling_site() {
        let text = format!(
            "{MINIMAL}\n[[sites]]\nname = \"a\"\nbody = \"root\"\npos = [0.0, 0.0, 0.0]\n\
             [[sites]]\nname = \"b\"\nbody = \"root\"\npos = [0.3, 0.0, 0.0]\n\
             [[muscles]]\nname = \"m\"\nsites = [\"a\", \"b\"]\nf0 = 50.0\nlength_range = [0.2, 0.3]\n"
        );
        let m = load_model(&text, &DocumentOptions::default()).unwrap();
        assert!((m.muscles[0].params.rest_length - 0.1).abs() < 1e-12);
        let bad = text.replace("[\"a\", \"b\"]", "[\"a\", \"zz\"]");
        let err = load_model(&bad, &DocumentOptions::default()).unwrap_err();
        assert!(err.to_string().contains("muscles[0].sites[1]"), "{err}");
    }
}
