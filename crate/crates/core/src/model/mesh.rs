//! Triangle meshes and constant-density mass properties.
//!
//! Volume, centre of mass and inertia come from summing signed tetrahedra
//! formed by each triangle and the origin.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MassProperties {
    pub volume: f64,
    pub mass: f64,
    pub com: Vector3<f64>,
    /// Inertia tensor about `com`.
    pub inertia: Matrix3<f64>,
}

/// Parses the line-oriented mesh format: `v x y z` and `f i j k` records
/// with zero-based indices. Blank lines and `#` comments are ignored.
pub fn parse_mesh(text: &str) -> Result<TriangleMesh> {
    let mut mesh = TriangleMesh::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap_or_default();
        let rest: Vec<&str> = parts.collect();
        let bad = |msg: &str| Error::Parse {
            line: n + 1,
            field: tag.to_string(),
            message: msg.to_string(),
        };
        if rest.len() != 3 {
            return Err(bad("expected three values"));
        }
        match tag {
            "v" => {
                let mut v = [0.0; 3];
                for (slot, s) in v.iter_mut().zip(&rest) {
                    *slot = s.parse().map_err(|_| bad("invalid coordinate"))?;
                }
                mesh.vertices.push(Vector3::from(v));
            }
            "f" => {
                let mut f = [0usize; 3];
                for (slot, s) in f.iter_mut().zip(&rest) {
                    *slot = s.parse().map_err(|_| bad("invalid vertex index"))?;
                }
                mesh.triangles.push(f);
            }
            _ => return Err(bad("unknown record, expected `v` or `f`")),
        }
    }
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if tri.iter().any(|&i| i >= mesh.vertices.len()) {
            return Err(Error::Mesh(format!("triangle {t} references a missing vertex")));
        }
    }
    Ok(mesh)
}

pub fn mesh_inertia(mesh: &TriangleMesh, density: f64) -> Result<MassProperties> {
    if !(density > 0.0 && density.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "density must be positive, got {density}"
        )));
    }
    if mesh.triangles.is_empty() {
        return Err(Error::Mesh("mesh has no triangles".into()));
    }
    check_closed(mesh)?;

    let scale = mesh
        .vertices
        .iter()
        .map(|v| v.amax())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let mut volume6 = 0.0;
    let mut first = Vector3::zeros();
    let mut second = Matrix3::zeros();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = tri.map(|i| mesh.vertices[i]);
        if (b - a).cross(&(c - a)).norm() <= 1e-14 * scale * scale {
            return Err(Error::Mesh(format!("triangle {t} is degenerate")));
        }
        let det = a.dot(&b.cross(&c));
        let s = a + b + c;
        volume6 += det;
        first += s * (det / 24.0);
        second +=
            (a * a.transpose() + b * b.transpose() + c * c.transpose() + s * s.transpose()) * (det / 120.0);
    }
    // orientation fix: an inward-facing mesh yields the negated integrals
    let sign = volume6.signum();
    let volume = sign * volume6 / 6.0;
    if !(volume > 0.0) {
        return Err(Error::Mesh("mesh encloses no volume".into()));
    }
    let first = first * sign;
    let second = second * sign;
    let com = first / volume;
    let mass = density * volume;
    let second_com = (second - com * com.transpose() * volume) * density;
    let mut inertia = Matrix3::identity() * second_com.trace() - second_com;
    inertia = (inertia + inertia.transpose()) * 0.5;
    Ok(MassProperties {
        volume,
        mass,
        com,
        inertia,
    })
}

fn check_closed(mesh: &TriangleMesh) -> Result<()> {
    let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
    for tri in &mesh.triangles {
        for k in 0..3 {
            let (i, j) = (tri[k], tri[(k + 1) % 3]);
            if i == j {
                return Err(Error::Mesh("triangle repeats a vertex".into()));
            }
            // +1 for i<j direction, -1 for the reverse
            let (key, dir) = if i < j { ((i, j), 1) } else { ((j, i), -1) };
            *edges.entry(key).or_default() += dir;
        }
    }
    // every edge must be used once in each direction
    if edges.values().any(|&v| v != 0) {
        return Err(Error::Mesh(
            "mesh is open or inconsistently oriented (signed-volume check fails)".into(),
        ));
    }
    Ok(())
}

/// Axis-aligned box centred at the origin.
pub fn box_mesh(size: [f64; 3]) -> TriangleMesh {
    let [hx, hy, hz] = size.map(|s| s / 2.0);
    let vertices = (0..8)
        .map(|i| {
            Vector3::new(
                if i & 1 == 0 { -hx } else { hx },
                if i & 2 == 0 { -hy } else { hy },
                if i & 4 == 0 { -hz } else { hz },
            )
        })
        .collect();
    let triangles = vec![
        [0, 2, 1],
        [1, 2, 3], // -z
        [4, 5, 6],
        [5, 7, 6], // +z
        [0, 1, 4],
        [1, 5, 4], // -y
        [2, 6, 3],
        [3, 6, 7], // +y
        [0, 4, 2],
        [2, 4, 6], // -x
        [1, 3, 5],
        [3, 7, 5], // +x
    ];
    TriangleMesh { vertices, triangles }
}

/// Icosphere of radius `radius` after `subdivisions` rounds of midpoint
/// subdivision.
pub fn icosphere(radius: f64, subdivisions: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vector3::from(*v).normalize())
    .collect();
    let mut triangles = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for [a, b, c] in triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    for v in &mut vertices {
        *v *= radius;
    }
    TriangleMesh { vertices, triangles }
}
