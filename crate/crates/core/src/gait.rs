//! Gait segmentation from foot contact and phase-normalised excitation
//! profiles.
//!
//! A stride runs from one touchdown (rising contact edge) to the next and
//! is split at lift-off into stance and swing. Traces are resampled onto a
//! fixed grid whose stance/swing split follows the mean stance fraction, so
//! gaits at different speeds and duty factors line up.

use std::io::Read;
use std::path::Path;

use crate::dynamics::io::NumericTable;
use crate::error::{Error, Result};

pub const DEFAULT_DEBOUNCE: usize = 3;
pub const DEFAULT_GRID: usize = 200;
/// Normalised excess above the reference that counts as over-excitation.
pub const EXCESS_MARGIN: f64 = 0.2;
/// Fraction of the grid that must exceed the margin to raise the flag.
pub const EXCESS_FRACTION: f64 = 0.15;

/// Frame indices of one complete stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stride {
    pub stance_start: usize,
    pub swing_start: usize,
    /// Next touchdown (exclusive end).
    pub stride_end: usize,
}

impl Stride {
    pub fn stance_fraction(&self) -> f64 {
        (self.swing_start - self.stance_start) as f64 / (self.stride_end - self.stance_start) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitProfile {
    pub grid: usize,
    pub stance_fraction: f64,
    pub strides: Vec<Stride>,
    /// (muscle, trace on the grid); the first `stance_points()` entries are
    /// stance.
    pub traces: Vec<(String, Vec<f64>)>,
}

impl GaitProfile {
    pub fn stance_points(&self) -> usize {
        stance_points(self.grid, self.stance_fraction)
    }

    pub fn trace(&self, muscle: &str) -> Option<&[f64]> {
        self.traces
            .iter()
            .find(|(n, _)| n == muscle)
            .map(|(_, t)| t.as_slice())
    }
}

fn stance_points(grid: usize, stance_fraction: f64) -> usize {
    ((stance_fraction * grid as f64).round() as usize).clamp(1, grid - 1)
}

/// Flips interior contact runs shorter than `min_phase_frames`, merging
/// them into the surrounding phase.
pub fn debounce(contact: &[bool], min_phase_frames: usize) -> Vec<bool> {
    let mut out = contact.to_vec();
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=contact.len() {
        if i == contact.len() || contact[i] != contact[start] {
            runs.push((start, i));
            start = i;
        }
    }
    if runs.len() > 2 {
        for &(s, e) in &runs[1..runs.len() - 1] {
            if e - s < min_phase_frames {
                for c in &mut out[s..e] {
                    *c = !*c;
                }
            }
        }
    }
    out
}

/// Complete strides in a per-frame contact sequence. Contact at frame 0
/// counts as a touchdown.
pub fn segment_gait(contact: &[bool], min_phase_frames: usize) -> Result<Vec<Stride>> {
    if contact.is_empty() {
        return Err(Error::InvalidArgument("empty contact sequence".into()));
    }
    let c = debounce(contact, min_phase_frames);
    let touchdowns: Vec<usize> = (0..c.len()).filter(|&i| c[i] && (i == 0 || !c[i - 1])).collect();
    let strides: Vec<Stride> = touchdowns
        .windows(2)
        .filter_map(|w| {
            let swing = (w[0]..w[1]).find(|&i| !c[i])?;
            Some(Stride {
                stance_start: w[0],
                swing_start: swing,
                stride_end: w[1],
            })
        })
        .collect();
    if strides.is_empty() {
        return Err(Error::NoStride);
    }
    Ok(strides)
}

pub fn mean_stance_fraction(strides: &[Stride]) -> f64 {
    strides.iter().map(Stride::stance_fraction).sum::<f64>() / strides.len() as f64
}

fn lerp_at(trace: &[f64], x: f64) -> f64 {
    let i = (x.floor() as usize).min(trace.len() - 1);
    let f = x - i as f64;
    if f == 0.0 || i + 1 >= trace.len() {
        trace[i]
    } else {
        trace[i] + f * (trace[i + 1] - trace[i])
    }
}

/// Resamples `trace` stride by stride onto `grid` points, stance first, and
/// averages over strides.
pub fn phase_normalize(trace: &[f64], strides: &[Stride], grid: usize) -> Result<Vec<f64>> {
    if strides.is_empty() {
        return Err(Error::NoStride);
    }
    if grid < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 points".into()));
    }
    if let Some(s) = strides.iter().find(|s| s.stride_end > trace.len()) {
        return Err(Error::InvalidArgument(format!(
            "stride ending at frame {} exceeds trace of {} frames",
            s.stride_end,
            trace.len()
        )));
    }
    let n_stance = stance_points(grid, mean_stance_fraction(strides));
    let n_swing = grid - n_stance;
    let mut out = vec![0.0; grid];
    for s in strides {
        let stance_len = (s.swing_start - s.stance_start) as f64;
        let swing_len = (s.stride_end - s.swing_start) as f64;
        for (k, v) in out.iter_mut().enumerate() {
            let x = if k < n_stance {
                s.stance_start as f64 + stance_len * k as f64 / n_stance as f64
            } else {
                s.swing_start as f64 + swing_len * (k - n_stance) as f64 / n_swing as f64
            };
            *v += lerp_at(trace, x);
        }
    }
    let n = strides.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// Builds a profile for several named traces sharing one contact sequence.
pub fn build_profile(
    contact: &[bool],
    traces: &[(String, Vec<f64>)],
    min_phase_frames: usize,
    grid: usize,
) -> Result<GaitProfile> {
    let strides = segment_gait(contact, min_phase_frames)?;
    let traces = traces
        .iter()
        .map(|(name, t)| Ok((name.clone(), phase_normalize(t, &strides, grid)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GaitProfile {
        grid,
        stance_fraction: mean_stance_fraction(&strides),
        strides,
        traces,
    })
}

/// Profile of the excitation columns (`u_<muscle>`) of a simulation dump,
/// segmented on the `contact_<foot>` column.
pub fn profile_from_dump(table: &NumericTable, foot: &str, grid: usize) -> Result<GaitProfile> {
    let column = format!("contact_{foot}");
    let contact: Vec<bool> = table
        .column(&column)
        .ok_or_else(|| Error::Unknown {
            kind: "contact column",
            name: column.clone(),
        })?
        .into_iter()
        .map(|v| v > 0.5)
        .collect();
    let traces: Vec<(String, Vec<f64>)> = table
        .header
        .iter()
        .filter_map(|h| h.strip_prefix("u_"))
        .map(|m| (m.to_string(), table.column(&format!("u_{m}")).unwrap_or_default()))
        .collect();
    build_profile(&contact, &traces, DEFAULT_DEBOUNCE, grid)
}

/// Reference profile from a wide CSV `phase,<muscle>,...` with phase in
/// percent of stride. Values are linearly interpolated onto the grid.
pub fn read_reference<R: Read>(reader: R, grid: usize, stance_fraction: f64) -> Result<GaitProfile> {
    if !(stance_fraction > 0.0 && stance_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "stance fraction {stance_fraction} outside (0, 1)"
        )));
    }
    let table = NumericTable::from_reader(reader)?;
    let phase = table.column("phase").ok_or_else(|| Error::Unknown {
        kind: "column",
        name: "phase".into(),
    })?;
    if phase.len() < 2 || phase.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "phase column must be strictly increasing".into(),
        ));
    }
    let mut traces = Vec::new();
    for name in table.header.iter().filter(|h| h.as_str() != "phase") {
        let values = table.column(name).unwrap_or_default();
        let trace = (0..grid)
            .map(|k| interp(&phase, &values, 100.0 * k as f64 / grid as f64))
            .collect();
        traces.push((name.clone(), trace));
    }
    Ok(GaitProfile {
        grid,
        stance_fraction,
        strides: Vec::new(),
        traces,
    })
}

pub fn read_reference_file(path: impl AsRef<Path>, grid: usize, stance_fraction: f64) -> Result<GaitProfile> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_reference(file, grid, stance_fraction)
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let k = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] + t * (ys[k + 1] - ys[k])
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuscleComparison {
    pub muscle: String,
    /// Peak of sim minus peak of reference, percent of stride, wrapped to
    /// [-50, 50).
    pub peak_shift_percent: f64,
    pub correlation: f64,
    pub excess: bool,
}

fn min_max(t: &[f64]) -> (f64, f64) {
    t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

fn normalize_by(t: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    t.iter()
        .map(|&v| if span > 0.0 { (v - lo) / span } else { v - lo })
        .collect()
}

fn argmax(t: &[f64]) -> usize {
    t.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > t[best] { i } else { best })
}

/// Pearson correlation at zero lag; two flat traces correlate 1 when equal.
fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Per-muscle comparison over the muscles both profiles share.
pub fn compare_profiles(sim: &GaitProfile, reference: &GaitProfile) -> Result<Vec<MuscleComparison>> {
    if sim.grid != reference.grid {
        return Err(Error::Dimension {
            what: "profile grid",
            expected: reference.grid,
            got: sim.grid,
        });
    }
    let grid = sim.grid;
    let out: Vec<MuscleComparison> = sim
        .traces
        .iter()
        .filter_map(|(name, s)| {
            let r = reference.trace(name)?;
            let (slo, shi) = min_max(s);
            let (rlo, rhi) = min_max(r);
            let sn = normalize_by(s, slo, shi);
            let rn = normalize_by(r, rlo, rhi);
            let mut shift = argmax(s) as f64 - argmax(r) as f64;
            if shift >= grid as f64 / 2.0 {
                shift -= grid as f64;
            } else if shift < -(grid as f64) / 2.0 {
                shift += grid as f64;
            }
            let over_ref = normalize_by(s, rlo, rhi);
            let above = over_ref
                .iter()
                .zip(&rn)
                .filter(|(a, b)| *a - *b > EXCESS_MARGIN)
                .count();
            Some(MuscleComparison {
                muscle: name.clone(),
                peak_shift_percent: 100.0 * shift / grid as f64,
                correlation: correlation(&sn, &rn),
                excess: above as f64 > EXCESS_FRACTION * grid as f64,
            })
        })
        .collect();
    if out.is_empty() {
        return Err(Error::InvalidArgument("profiles share no muscles".into()));
    }
    Ok(out)
}
