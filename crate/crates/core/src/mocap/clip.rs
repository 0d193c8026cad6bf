//! Marker clips and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::dynamics::io::NumericTable;
use crate::error::{Error, Result};

pub const DEFAULT_RATE: f64 = 240.0;

/// Marker names of the standard 14-marker bird layout.
pub const MARKER_LAYOUT: [&str; 14] = [
    "head", "spine", "breast_l", "breast_r", "hip_l", "hip_r", "knee_l", "knee_r", "ankle_l", "ankle_r",
    "mtp_l", "mtp_r", "toe_l", "toe_r",
];

/// Time-indexed marker coordinates. Missing entries hold NaN and a false
/// mask bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub rate: f64,
    pub markers: Vec<String>,
    /// `data[t][m]`, metres.
    pub data: Vec<Vec<Vector3<f64>>>,
    pub mask: Vec<Vec<bool>>,
}

impl Clip {
    /// Builds a clip, deriving the mask from which entries are finite.
    pub fn new(rate: f64, markers: Vec<String>, data: Vec<Vec<Vector3<f64>>>) -> Result<Self> {
        let mask = data
            .iter()
            .map(|row| row.iter().map(|p| p.iter().all(|v| v.is_finite())).collect())
            .collect();
        let clip = Self {
            rate,
            markers,
            data,
            mask,
        };
        clip.check()?;
        Ok(clip)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "clip rate {} must be positive",
                self.rate
            )));
        }
        let m = self.markers.len();
        if self.mask.len() != self.data.len() {
            return Err(Error::Dimension {
                what: "clip mask frames",
                expected: self.data.len(),
                got: self.mask.len(),
            });
        }
        for (t, (row, mask)) in self.data.iter().zip(&self.mask).enumerate() {
            if row.len() != m || mask.len() != m {
                return Err(Error::Dimension {
                    what: "markers per frame",
                    expected: m,
                    got: row.len().min(mask.len()),
                });
            }
            for (k, (p, &present)) in row.iter().zip(mask).enumerate() {
                if present && !p.iter().all(|v| v.is_finite()) {
                    return Err(Error::invariant(
                        format!("frame {t}, marker `{}`", self.markers[k]),
                        "present entry is not finite",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.data.len()
    }

    pub fn duration(&self) -> f64 {
        self.frames() as f64 / self.rate
    }

    pub fn present_count(&self, t: usize) -> usize {
        self.mask[t].iter().filter(|&&p| p).count()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|row| row.iter().all(|&p| p))
    }

    /// Frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Clip {
        Clip {
            rate: self.rate,
            markers: self.markers.clone(),
            data: self.data[start..end].to_vec(),
            mask: self.mask[start..end].to_vec(),
        }
    }

    /// Reads `time,<marker>_x,<marker>_y,<marker>_z,...`. The rate comes from
    /// the first time step, or 240 Hz for single-row files.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let table = NumericTable::from_reader(reader)?;
        let time = table.column("time").ok_or_else(|| Error::Unknown {
            kind: "column",
            name: "time".into(),
        })?;
        let mut markers = Vec::new();
        let mut columns = Vec::new();
        for h in &table.header {
            if let Some(name) = h.strip_suffix("_x") {
                let idx = |axis: &str| {
                    table
                        .header
                        .iter()
                        .position(|c| *c == format!("{name}_{axis}"))
                        .ok_or_else(|| Error::Parse {
                            line: 1,
                            field: format!("{name}_{axis}"),
                            message: "missing coordinate column".into(),
                        })
                };
                let x = table.header.iter().position(|c| c == h).unwrap_or_default();
                columns.push([x, idx("y")?, idx("z")?]);
                markers.push(name.to_string());
            }
        }
        let data = table
            .rows
            .iter()
            .map(|row| {
                columns
                    .iter()
                    .map(|c| Vector3::new(row[c[0]], row[c[1]], row[c[2]]))
                    .collect()
            })
            .collect();
        let rate = if time.len() >= 2 && time[1] > time[0] {
            let r = 1.0 / (time[1] - time[0]);
            // time columns are usually printed with limited precision
            if (r - r.round()).abs() < 1e-6 * r {
                r.round()
            } else {
                r
            }
        } else {
            DEFAULT_RATE
        };
        Clip::new(rate, markers, data)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        for m in &self.markers {
            header.extend([format!("{m}_x"), format!("{m}_y"), format!("{m}_z")]);
        }
        w.write_record(&header)?;
        for (t, (row, mask)) in self.data.iter().zip(&self.mask).enumerate() {
            let mut rec = vec![(t as f64 / self.rate).to_string()];
            for (p, &present) in row.iter().zip(mask) {
                for v in p.iter() {
                    rec.push(if present { v.to_string() } else { "NaN".into() });
                }
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<clip>", e))?;
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_writer(std::io::BufWriter::new(file))
    }
}

/// Longest window `(start, end)` (end exclusive) in which every frame has
/// at least `min_markers` markers present and which lasts at least
/// `min_duration` seconds. Ties go to the earliest window.
pub fn select_interval(clip: &Clip, min_markers: usize, min_duration: f64) -> Option<(usize, usize)> {
    let min_frames = ((min_duration * clip.rate) - 1e-9).ceil().max(1.0) as usize;
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for t in 0..=clip.frames() {
        let ok = t < clip.frames() && clip.present_count(t) >= min_markers;
        match (ok, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                if t - s >= min_frames && best.is_none_or(|(bs, be)| t - s > be - bs) {
                    best = Some((s, t));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

/// Multiplies every coordinate by `factor`.
pub fn rescale(clip: &Clip, factor: f64) -> Result<Clip> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "rescale factor {factor} must be positive"
        )));
    }
    let mut out = clip.clone();
    for row in &mut out.data {
        for p in row {
            *p *= factor;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip_with_mask(mask: Vec<Vec<bool>>) -> Clip {
        let m = mask[0].len();
        let data = mask
            .iter()
            .enumerate()
            .map(|(t, row)| {
                row.iter()
                    .enumerate()
                    .map(|(k, &p)| {
                        if p {
                            Vector3::new(t as f64, k as f64, 1.0)
                        } else {
                            Vector3::repeat(f64::NAN)
                        }
                    })
                    .collect()
            })
            .collect();
        Clip::new(240.0, (0..m).map(|k| format!("m{k}")).collect(), data).unwrap()
    }

    #[test]
    fn full_clip_is_selected_whole() {
        let c = clip_with_mask(vec![vec![true; 14]; 480]);
        assert_eq!(select_interval(&c, 10, 1.0), Some((0, 480)));
    }

    #[test]
    fn too_few_markers() {
        let mut row = vec![false; 14];
        row[..9].fill(true);
        let c = clip_with_mask(vec![row; 480]);
        assert_eq!(select_interval(&c, 10, 1.0), None);
    }

    #[test]
    fn picks_longest_window() {
        let mut mask = vec![vec![true; 14]; 288 + 10 + 480];
        for row in &mut mask[288..298] {
            row[..6].fill(false);
        }
        let c = clip_with_mask(mask);
        assert_eq!(select_interval(&c, 10, 1.0), Some((298, 778)));
    }

    #[test]
    fn csv_round_trip_keeps_nan_mask() {
        let mut mask = vec![vec![true; 3]; 5];
        mask[2][1] = false;
        let c = clip_with_mask(mask);
        let mut buf = Vec::new();
        c.to_writer(&mut buf).unwrap();
        let back = Clip::from_reader(buf.as_slice()).unwrap();
        assert_eq!(back.rate, 240.0);
        assert_eq!(back.mask, c.mask);
        assert_eq!(back.data[3], c.data[3]);
        assert!(back.data[2][1].x.is_nan());
    }

    #[test]
    fn rescale_rules() {
        let c = clip_with_mask(vec![vec![true; 3]; 4]);
        assert_eq!(rescale(&c, 1.0).unwrap(), c);
        let d = rescale(&c, 2.0).unwrap();
        let dist = |c: &Clip| (c.data[1][0] - c.data[1][2]).norm();
        assert_eq!(dist(&d), 2.0 * dist(&c));
        assert!(rescale(&c, 0.0).is_err());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn interval_matches_exhaustive_scan(
            mask in prop::collection::vec(prop::collection::vec(prop::bool::weighted(0.8), 4), 1..60),
            need in 0usize..5,
            frames in 1usize..20,
        ) {
            let c = clip_with_mask(mask);
            let duration = frames as f64 / c.rate;
            let n = c.frames();
            let good = |s: usize, e: usize| (s..e).all(|t| c.present_count(t) >= need);
            let mut best: Option<(usize, usize)> = None;
            for len in (frames.max(1)..=n).rev() {
                if let Some(s) = (0..=n - len).find(|&s| good(s, s + len)) {
                    best = Some((s, s + len));
                    break;
                }
            }
            prop_assert_eq!(select_interval(&c, need, duration), best);
        }
    }
}
