//! Gap filling for missing markers and the masking evaluation protocol.

use nalgebra::Vector3;
use rand::Rng as _;

use super::clip::Clip;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Fills one coordinate series over time. Implementations must return the
/// same length and may only be trusted for the missing samples; the caller
/// keeps present samples as they were.
pub trait Imputer: Sync {
    fn fill(&self, values: &[f64], present: &[bool]) -> Vec<f64>;
}

/// Natural cubic spline through the present samples, held constant beyond
/// the first and last of them.
#[derive(Debug, Clone, Copy, Default)]
pub struct SplineImputer;

/// Repeats the last present sample (the first one before any is seen).
#[derive(Debug, Clone, Copy, Default)]
pub struct HoldImputer;

impl Imputer for SplineImputer {
    fn fill(&self, values: &[f64], present: &[bool]) -> Vec<f64> {
        let xs: Vec<f64> = (0..values.len())
            .filter(|&t| present[t])
            .map(|t| t as f64)
            .collect();
        let ys: Vec<f64> = (0..values.len())
            .filter(|&t| present[t])
            .map(|t| values[t])
            .collect();
        if xs.is_empty() {
            return values.to_vec();
        }
        let spline = NaturalSpline::new(&xs, &ys);
        (0..values.len())
            .map(|t| {
                if present[t] {
                    values[t]
                } else {
                    spline.eval(t as f64)
                }
            })
            .collect()
    }
}

impl Imputer for HoldImputer {
    fn fill(&self, values: &[f64], present: &[bool]) -> Vec<f64> {
        let Some(first) = present.iter().position(|&p| p) else {
            return values.to_vec();
        };
        let mut last = values[first];
        values
            .iter()
            .zip(present)
            .map(|(&v, &p)| {
                if p {
                    last = v;
                    v
                } else {
                    last
                }
            })
            .collect()
    }
}

/// Natural cubic spline (zero second derivative at both ends).
struct NaturalSpline<'a> {
    xs: &'a [f64],
    ys: &'a [f64],
    m: Vec<f64>,
}

impl<'a> NaturalSpline<'a> {
    fn new(xs: &'a [f64], ys: &'a [f64]) -> Self {
        let n = xs.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives (Thomas)
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            let mut upper = vec![0.0; k];
            for i in 0..k {
                let h0 = xs[i + 1] - xs[i];
                let h1 = xs[i + 2] - xs[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h1 - (ys[i + 1] - ys[i]) / h0);
            }
            for i in 1..k {
                let lower = xs[i + 1] - xs[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Self { xs, ys, m }
    }

    fn eval(&self, x: f64) -> f64 {
        let (xs, ys) = (self.xs, self.ys);
        let n = xs.len();
        if x <= xs[0] {
            return ys[0];
        }
        if x >= xs[n - 1] {
            return ys[n - 1];
        }
        let i = xs.partition_point(|&v| v <= x) - 1;
        let h = xs[i + 1] - xs[i];
        let a = (xs[i + 1] - x) / h;
        let b = (x - xs[i]) / h;
        a * ys[i]
            + b * ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Fills every missing entry of `clip`. Present entries are copied bitwise.
pub fn impute(clip: &Clip, imputer: &dyn Imputer) -> Result<Clip> {
    clip.check()?;
    let frames = clip.frames();
    let mut out = clip.clone();
    for (k, name) in clip.markers.iter().enumerate() {
        let present: Vec<bool> = (0..frames).map(|t| clip.mask[t][k]).collect();
        if !present.iter().any(|&p| p) {
            return Err(Error::InvalidArgument(format!(
                "marker `{name}` is never observed"
            )));
        }
        if present.iter().all(|&p| p) {
            continue;
        }
        for axis in 0..3 {
            let series: Vec<f64> = (0..frames).map(|t| clip.data[t][k][axis]).collect();
            let filled = imputer.fill(&series, &present);
            for t in (0..frames).filter(|&t| !present[t]) {
                out.data[t][k][axis] = filled[t];
            }
        }
    }
    for row in &mut out.mask {
        row.fill(true);
    }
    Ok(out)
}

/// Masks present entries with probability `mask_prob` on consecutive
/// segments of `segment_len` frames, imputes each segment and returns the
/// mean Euclidean error over the masked entries. A marker never loses its
/// last present entry in a segment. Returns 0 when nothing was masked.
pub fn evaluate_imputer(
    clip: &Clip,
    imputer: &dyn Imputer,
    mask_prob: f64,
    segment_len: usize,
    seed: u64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&mask_prob) {
        return Err(Error::InvalidArgument(format!(
            "mask probability {mask_prob} outside [0, 1]"
        )));
    }
    if segment_len < 2 {
        return Err(Error::InvalidArgument("segment length must be at least 2".into()));
    }
    let mut rng = stream(seed, Stream::Imputation);
    let (mut total, mut count) = (0.0, 0usize);
    let mut start = 0;
    while start < clip.frames() {
        let end = (start + segment_len).min(clip.frames());
        if end - start < 2 {
            break;
        }
        let segment = clip.slice(start, end);
        let mut masked = segment.clone();
        let mut hidden: Vec<(usize, usize)> = Vec::new();
        for k in 0..segment.markers.len() {
            let present: Vec<usize> = (0..segment.frames()).filter(|&t| segment.mask[t][k]).collect();
            let mut chosen: Vec<usize> = present
                .iter()
                .copied()
                .filter(|_| rng.random::<f64>() < mask_prob)
                .collect();
            if !present.is_empty() && chosen.len() == present.len() {
                chosen.remove(0);
            }
            for t in chosen {
                masked.mask[t][k] = false;
                masked.data[t][k] = Vector3::repeat(f64::NAN);
                hidden.push((t, k));
            }
        }
        if !hidden.is_empty() {
            let filled = impute_partial(&masked, imputer)?;
            for (t, k) in hidden {
                total += (filled.data[t][k] - segment.data[t][k]).norm();
                count += 1;
            }
        }
        start = end;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Like [`impute`] but skips markers that are absent from the whole clip.
fn impute_partial(clip: &Clip, imputer: &dyn Imputer) -> Result<Clip> {
    let observed: Vec<usize> = (0..clip.markers.len())
        .filter(|&k| clip.mask.iter().any(|row| row[k]))
        .collect();
    let sub = Clip {
        rate: clip.rate,
        markers: observed.iter().map(|&k| clip.markers[k].clone()).collect(),
        data: clip
            .data
            .iter()
            .map(|row| observed.iter().map(|&k| row[k]).collect())
            .collect(),
        mask: clip
            .mask
            .iter()
            .map(|row| observed.iter().map(|&k| row[k]).collect())
            .collect(),
    };
    let filled = impute(&sub, imputer)?;
    let mut out = clip.clone();
    for (i, &k) in observed.iter().enumerate() {
        for t in 0..clip.frames() {
            out.data[t][k] = filled.data[t][i];
            out.mask[t][k] = true;
        }
    }
    Ok(out)
}
