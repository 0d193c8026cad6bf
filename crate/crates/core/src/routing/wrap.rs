//! Closed-form shortest paths around spheres and infinite cylinders.
//!
//! A wrapped path is tangent line, arc, tangent line. For a sphere the arc
//! lies on the great circle through both endpoints; for a cylinder the
//! planar wrap in the cross-section is lifted to a helix, which is the
//! geodesic once the surface is developed flat.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};

/// Endpoints within this distance of the surface count as tangent.
pub const TANGENCY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Straight { length: f64 },
    Wrapped { length: f64, arc_angle: f64 },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length } | Segment::Wrapped { length, .. } => length,
        }
    }

    pub fn is_wrapped(&self) -> bool {
        matches!(self, Segment::Wrapped { .. })
    }
}

fn check_outside(d: f64, r: f64, which: &str) -> Result<()> {
    if d < r - TANGENCY_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "{which} endpoint at distance {d} lies inside wrap radius {r}"
        )));
    }
    Ok(())
}

/// Distance from the origin to the segment `a`–`b`.
fn segment_distance<const D: usize>(a: &nalgebra::SVector<f64, D>, b: &nalgebra::SVector<f64, D>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        (-a.dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * t).norm()
}

/// Tangent-arc-tangent length around a circle of radius `r` centred at the
/// origin, for endpoints at distances `d1`, `d2` separated by angle `phi`.
/// Returns `None` when the arc would be empty.
fn circle_wrap(d1: f64, d2: f64, phi: f64, r: f64) -> Option<(f64, f64)> {
    let alpha1 = (r / d1).min(1.0).acos();
    let alpha2 = (r / d2).min(1.0).acos();
    let theta = phi - alpha1 - alpha2;
    if theta <= 0.0 {
        return None;
    }
    let t1 = (d1 * d1 - r * r).max(0.0).sqrt();
    let t2 = (d2 * d2 - r * r).max(0.0).sqrt();
    Some((t1 + t2 + r * theta, theta))
}

pub fn wrap_sphere(p1: &Vector3<f64>, p2: &Vector3<f64>, center: &Vector3<f64>, r: f64) -> Result<Segment> {
    let a = p1 - center;
    let b = p2 - center;
    let (d1, d2) = (a.norm(), b.norm());
    check_outside(d1, r, "first")?;
    check_outside(d2, r, "second")?;
    let chord = (p2 - p1).norm();
    if d1 <= r + TANGENCY_TOLERANCE || d2 <= r + TANGENCY_TOLERANCE || segment_distance(&a, &b) >= r {
        return Ok(Segment::Straight { length: chord });
    }
    let phi = a.cross(&b).norm().atan2(a.dot(&b));
    Ok(match circle_wrap(d1, d2, phi, r) {
        Some((length, arc_angle)) => Segment::Wrapped {
            length: length.max(chord),
            arc_angle,
        },
        None => Segment::Straight { length: chord },
    })
}

/// Wrap around an infinite cylinder through `center` along unit `axis`.
///
/// Of the two winding directions the shorter one is used; the tie at exactly
/// opposite endpoints resolves to the right-handed winding about `axis`,
/// which has the same length.
pub fn wrap_cylinder(
    p1: &Vector3<f64>,
    p2: &Vector3<f64>,
    center: &Vector3<f64>,
    axis: &Vector3<f64>,
    r: f64,
) -> Result<Segment> {
    let a = p1 - center;
    let b = p2 - center;
    let (z1, z2) = (a.dot(axis), b.dot(axis));
    let a3 = a - axis * z1;
    let b3 = b - axis * z2;
    // planar coordinates in the cross-section
    let e1 = if a3.norm() > 0.0 {
        a3.normalize()
    } else {
        axis.cross(&Vector3::x())
            .try_normalize(1e-12)
            .unwrap_or_else(|| axis.cross(&Vector3::y()).normalize())
    };
    let e2 = axis.cross(&e1);
    let pa = Vector2::new(a3.dot(&e1), a3.dot(&e2));
    let pb = Vector2::new(b3.dot(&e1), b3.dot(&e2));
    let (d1, d2) = (pa.norm(), pb.norm());
    check_outside(d1, r, "first")?;
    check_outside(d2, r, "second")?;
    let chord = (p2 - p1).norm();
    if d1 <= r + TANGENCY_TOLERANCE || d2 <= r + TANGENCY_TOLERANCE || segment_distance(&pa, &pb) >= r {
        return Ok(Segment::Straight { length: chord });
    }
    // the wrap length grows with the swept angle, so the shorter winding is
    // the one through the smaller angle; when even that arc is empty the
    // segment only grazes the circle and stays straight
    let phi_short = pa.perp(&pb).abs().atan2(pa.dot(&pb));
    let dz = z2 - z1;
    Ok(match circle_wrap(d1, d2, phi_short, r) {
        Some((planar, arc_angle)) => Segment::Wrapped {
            length: (planar * planar + dz * dz).sqrt().max(chord),
            arc_angle,
        },
        None => Segment::Straight { length: chord },
    })
}
