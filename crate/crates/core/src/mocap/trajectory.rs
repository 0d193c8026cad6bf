//! Joint-space trajectories: velocity inference, CSV and cyclic clips.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::dynamics::io::NumericTable;
use crate::error::{Error, Result};
use crate::kinematics::{frames_for_angles, orthonormalize, BaseFrame};
use crate::model::{Model, Pose};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rate: f64,
    /// `angles[t][j]`
    pub angles: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub root_positions: Vec<Vector3<f64>>,
    pub root_orientations: Vec<Matrix3<f64>>,
}

impl Trajectory {
    /// Trajectory from angles alone: root placement from forward kinematics,
    /// velocities by forward differences.
    pub fn from_angles(model: &Model, rate: f64, angles: Vec<Vec<f64>>) -> Result<Self> {
        if angles.len() < 2 {
            return Err(Error::InvalidArgument(
                "a trajectory needs at least 2 frames".into(),
            ));
        }
        if let Some(row) = angles.iter().find(|r| r.len() != model.joints.len()) {
            return Err(Error::Dimension {
                what: "trajectory joints",
                expected: model.joints.len(),
                got: row.len(),
            });
        }
        let mut traj = Self {
            rate,
            velocities: Vec::new(),
            root_positions: Vec::with_capacity(angles.len()),
            root_orientations: Vec::with_capacity(angles.len()),
            angles,
        };
        for q in &traj.angles {
            let f = frames_for_angles(model, q, &BaseFrame::default());
            traj.root_positions.push(f.body_positions[0]);
            traj.root_orientations.push(orthonormalize(&f.body_rotations[0]));
        }
        infer_velocities(&mut traj)?;
        Ok(traj)
    }

    pub fn frames(&self) -> usize {
        self.angles.len()
    }

    pub fn pose(&self, t: usize) -> Pose {
        Pose {
            angles: self.angles[t].clone(),
            velocities: self.velocities[t].clone(),
        }
    }

    /// Reads `time,q_<joint>...` (extra columns ignored); velocities are
    /// re-inferred.
    pub fn from_reader<R: Read>(model: &Model, reader: R) -> Result<Self> {
        let table = NumericTable::from_reader(reader)?;
        let time = table.column("time").ok_or_else(|| Error::Unknown {
            kind: "column",
            name: "time".into(),
        })?;
        let columns = model
            .joints
            .iter()
            .map(|j| {
                let name = format!("q_{}", j.name);
                table
                    .header
                    .iter()
                    .position(|h| *h == name)
                    .ok_or(Error::Unknown { kind: "column", name })
            })
            .collect::<Result<Vec<_>>>()?;
        let angles = table
            .rows
            .iter()
            .map(|r| columns.iter().map(|&c| r[c]).collect())
            .collect();
        let rate = if time.len() >= 2 && time[1] > time[0] {
            let r = 1.0 / (time[1] - time[0]);
            if (r - r.round()).abs() < 1e-6 * r {
                r.round()
            } else {
                r
            }
        } else {
            return Err(Error::InvalidArgument(
                "trajectory time column must increase".into(),
            ));
        };
        Self::from_angles(model, rate, angles)
    }

    pub fn read(model: &Model, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(model, file)
    }

    /// Writes `time,q_<joint>...,qd_<joint>...`.
    pub fn to_writer<W: Write>(&self, model: &Model, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        header.extend(model.joints.iter().map(|j| format!("q_{}", j.name)));
        header.extend(model.joints.iter().map(|j| format!("qd_{}", j.name)));
        w.write_record(&header)?;
        for t in 0..self.frames() {
            let mut rec = vec![(t as f64 / self.rate).to_string()];
            rec.extend(self.angles[t].iter().map(f64::to_string));
            rec.extend(self.velocities[t].iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<trajectory>", e))?;
        Ok(())
    }

    pub fn write(&self, model: &Model, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_writer(model, std::io::BufWriter::new(file))
    }
}

/// Forward differences `(q[t+1] - q[t]) * rate`; the last frame repeats the
/// one before it.
pub fn infer_velocities(traj: &mut Trajectory) -> Result<()> {
    let n = traj.angles.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "velocity inference needs at least 2 frames".into(),
        ));
    }
    let mut v: Vec<Vec<f64>> = traj
        .angles
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| (b - a) * traj.rate).collect())
        .collect();
    v.push(v[n - 2].clone());
    traj.velocities = v;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CyclicOptions {
    pub period_frames: usize,
    pub crossfade_frames: usize,
    pub repeats: usize,
    /// Joints (e.g. forward root translation) that keep progressing: each
    /// repeat is offset by the displacement over one period instead of
    /// snapping back.
    pub advance_joints: Vec<usize>,
}

/// Takes the middle `period_frames` of `traj`, blends its last
/// `crossfade_frames` linearly (reaching full weight on the last frame)
/// toward the frames that precede the section
/// (linear extrapolation backwards when the section starts at frame 0) and
/// tiles it `repeats` times.
pub fn make_cyclic(model: &Model, traj: &Trajectory, opts: &CyclicOptions) -> Result<Trajectory> {
    let (p, c) = (opts.period_frames, opts.crossfade_frames);
    let len = traj.frames();
    if p < 2 || p > len {
        return Err(Error::InvalidArgument(format!(
            "period of {p} frames must be between 2 and the trajectory length {len}"
        )));
    }
    if 2 * c >= p {
        return Err(Error::InvalidArgument(format!(
            "crossfade of {c} frames must be shorter than half the period ({p})"
        )));
    }
    if opts.repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let start = (len - p) / 2;
    let q = &traj.angles;
    let joints = model.joints.len();
    let advance: Vec<f64> = (0..joints)
        .map(|j| {
            if !opts.advance_joints.contains(&j) {
                0.0
            } else if start + p < len {
                q[start + p][j] - q[start][j]
            } else {
                (q[start + p - 1][j] - q[start][j]) * p as f64 / (p - 1) as f64
            }
        })
        .collect();
    // what frame k of the section would be if the section were preceded by
    // its own end: the original frames just before the section start
    let predecessor = |k: usize, j: usize| -> f64 {
        let back = p - k;
        if start >= back {
            q[start - back][j] + advance[j]
        } else {
            let slope = q[start + 1][j] - q[start][j];
            q[start][j] - back as f64 * slope + advance[j]
        }
    };
    let mut section: Vec<Vec<f64>> = q[start..start + p].to_vec();
    for i in 0..c {
        let k = p - c + i;
        let w = (i + 1) as f64 / c as f64;
        for j in 0..joints {
            section[k][j] = (1.0 - w) * section[k][j] + w * predecessor(k, j);
        }
    }
    let mut angles = Vec::with_capacity(p * opts.repeats);
    for r in 0..opts.repeats {
        for row in &section {
            angles.push(row.iter().zip(&advance).map(|(v, d)| v + r as f64 * d).collect());
        }
    }
    Trajectory::from_angles(model, traj.rate, angles)
}

/// Largest per-joint jump across the wrap from the last frame of a section
/// back to its first.
pub fn seam_jump(section: &[Vec<f64>]) -> f64 {
    let (first, last) = (&section[0], &section[section.len() - 1]);
    first
        .iter()
        .zip(last)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BodySpec, JointSpec, ModelBuilder};

    fn two_joint() -> Model {
        ModelBuilder::new("m")
            .body(BodySpec::new("a", None, [0.0; 3], 1.0))
            .body(BodySpec::new("b", Some("a"), [0.0, 0.0, 0.5], 1.0))
            .joint(JointSpec::slide("x", "a", [1.0, 0.0, 0.0], (-100.0, 100.0)))
            .joint(JointSpec::hinge("h", "b", [0.0, 1.0, 0.0], (-3.0, 3.0)))
            .build()
            .unwrap()
    }

    fn traj(model: &Model, f: impl Fn(usize) -> Vec<f64>, n: usize) -> Trajectory {
        Trajectory::from_angles(model, 240.0, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn velocities_by_forward_difference() {
        let m = two_joint();
        let t = traj(&m, |_| vec![0.2, -0.1], 5);
        assert!(t.velocities.iter().flatten().all(|&v| v == 0.0));
        let t = traj(&m, |i| vec![0.0, 0.001 * i as f64], 5);
        for v in &t.velocities {
            assert!((v[1] - 0.24).abs() < 1e-12);
        }
        let mut single = t.clone();
        single.angles.truncate(1);
        assert!(infer_velocities(&mut single).is_err());
    }

    #[test]
    fn periodic_section_is_plain_tiling() {
        let m = two_joint();
        let p = 48;
        let wave = |i: usize| vec![0.0, (2.0 * std::f64::consts::PI * i as f64 / p as f64).sin()];
        let t = traj(&m, wave, 4 * p);
        let opts = CyclicOptions {
            period_frames: p,
            crossfade_frames: 12,
            repeats: 3,
            advance_joints: vec![],
        };
        let c = make_cyclic(&m, &t, &opts).unwrap();
        let start = (4 * p - p) / 2;
        for (k, row) in c.angles.iter().enumerate() {
            assert!((row[1] - t.angles[start + k % p][1]).abs() < 1e-12);
        }
    }

    #[test]
    fn crossfade_shrinks_seam() {
        let m = two_joint();
        // slow drift makes the section non-periodic
        let t = traj(&m, |i| vec![0.0, (i as f64 * 0.05).sin() + 0.004 * i as f64], 200);
        let p = 100;
        let start = 50;
        let raw = seam_jump(&t.angles[start..start + p]);
        let opts = CyclicOptions {
            period_frames: p,
            crossfade_frames: 12,
            repeats: 2,
            advance_joints: vec![],
        };
        let c = make_cyclic(&m, &t, &opts).unwrap();
        for k in 0..p {
            assert_eq!(c.angles[k], c.angles[k + p]);
        }
        let smooth = seam_jump(&c.angles[..p]);
        assert!(smooth < raw / 10.0, "{smooth} vs {raw}");
    }

    #[test]
    fn advancing_joint_keeps_progressing() {
        let m = two_joint();
        let t = traj(&m, |i| vec![0.01 * i as f64, 0.0], 200);
        let opts = CyclicOptions {
            period_frames: 100,
            crossfade_frames: 10,
            repeats: 3,
            advance_joints: vec![0],
        };
        let c = make_cyclic(&m, &t, &opts).unwrap();
        for w in c.angles.windows(2) {
            assert!((w[1][0] - w[0][0] - 0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn period_longer_than_clip_errors() {
        let m = two_joint();
        let t = traj(&m, |_| vec![0.0, 0.0], 10);
        let opts = CyclicOptions {
            period_frames: 11,
            crossfade_frames: 2,
            repeats: 1,
            advance_joints: vec![],
        };
        assert!(make_cyclic(&m, &t, &opts).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = two_joint();
        let t = traj(&m, |i| vec![0.01 * i as f64, 0.3], 6);
        let mut buf = Vec::new();
        t.to_writer(&m, &mut buf).unwrap();
        let back = Trajectory::from_reader(&m, buf.as_slice()).unwrap();
        assert_eq!(back.angles, t.angles);
        assert_eq!(back.rate, 240.0);
    }
}
