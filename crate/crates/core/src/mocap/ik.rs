//! Batch inverse kinematics: marker attachments shared by all clips and
//! per-frame joint angles, fitted together by preconditioned gradient
//! descent on the mean marker distance.

use nalgebra::{DMatrix, DVector, Vector3};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::clip::Clip;
use super::trajectory::Trajectory;
use crate::error::{Error, Result};
use crate::kinematics::{frames_for_angles, joint_point_column, BaseFrame};
use crate::model::Model;
use crate::rng::{stream, Stream};

pub const DEFAULT_REGULARIZER_WEIGHT: f64 = 1e-2;
/// Halvings tried before an iteration is rejected.
pub const MAX_HALVINGS: usize = 20;
/// Consecutive rejected iterations that count as divergence.
pub const MAX_REJECTIONS: usize = 10;
const STEP_GROWTH: f64 = 1.2;
/// Residuals shorter than this get the weight of one this long.
const MIN_RESIDUAL: f64 = 1e-9;
/// Relative diagonal damping of the Gauss-Newton system.
const DAMPING: f64 = 1e-9;
/// Loss below which a stalled search counts as converged.
const CONVERGED_LOSS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct IkConfig {
    pub regularizer_weight: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Standard deviation of Gaussian noise added to the initial angles.
    pub init_noise: f64,
    /// Markers whose attachment offsets are held at their model values.
    pub fixed_markers: Vec<String>,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            regularizer_weight: DEFAULT_REGULARIZER_WEIGHT,
            iterations: 500,
            learning_rate: 0.01,
            seed: 0,
            init_noise: 0.0,
            fixed_markers: Vec::new(),
        }
    }
}

/// Optimisation variables.
#[derive(Debug, Clone, PartialEq)]
pub struct IkParams {
    /// One local offset per model marker.
    pub attachments: Vec<Vector3<f64>>,
    /// `angles[clip][frame][joint]`
    pub angles: Vec<Vec<Vec<f64>>>,
}

impl IkParams {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.attachments.iter().flat_map(|a| a.iter().copied()).collect();
        v.extend(self.angles.iter().flatten().flatten());
        v
    }

    /// Inverse of [`to_vec`](Self::to_vec), using `self` for the shape.
    pub fn from_vec(&self, v: &[f64]) -> Self {
        let mut out = self.clone();
        let mut it = v.iter().copied();
        for a in &mut out.attachments {
            for x in a.iter_mut() {
                *x = it.next().unwrap_or_default();
            }
        }
        for q in out.angles.iter_mut().flatten().flatten() {
            *q = it.next().unwrap_or_default();
        }
        out
    }
}

/// Angle outside its joint range after fitting, before clamping.
#[derive(Debug, Clone, PartialEq)]
pub struct ClampViolation {
    pub clip: usize,
    pub frame: usize,
    pub joint: String,
    /// Radians (or metres for slide joints) beyond the range.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkFit {
    pub attachments: Vec<Vector3<f64>>,
    pub trajectories: Vec<Trajectory>,
    pub loss: f64,
    /// Loss after every iteration, starting with the initial loss.
    pub history: Vec<f64>,
    pub violations: Vec<ClampViolation>,
}

impl IkFit {
    /// Copy of `model` with the fitted attachments.
    pub fn apply_attachments(&self, model: &Model) -> Model {
        let mut m = model.clone();
        for (spec, a) in m.markers.iter_mut().zip(&self.attachments) {
            spec.offset = *a;
        }
        m
    }
}

/// The objective: mean Euclidean marker error plus a squared penalty toward
/// the model's reference angles.
pub struct IkProblem<'a> {
    model: &'a Model,
    clips: &'a [Clip],
    /// For every clip, the model marker index of each clip marker.
    marker_map: Vec<Vec<usize>>,
    free_marker: Vec<bool>,
    free_joint: Vec<bool>,
    weight: f64,
    observations: f64,
    frames: f64,
}

struct FrameTerms {
    loss: f64,
    angles: Vec<f64>,
    attachments: Vec<(usize, Vector3<f64>)>,
}

impl<'a> IkProblem<'a> {
    pub fn new(model: &'a Model, clips: &'a [Clip], config: &IkConfig) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::InvalidArgument("no clips to fit".into()));
        }
        let mut marker_map = Vec::with_capacity(clips.len());
        for (c, clip) in clips.iter().enumerate() {
            clip.check()?;
            if !clip.is_complete() {
                return Err(Error::InvalidArgument(format!(
                    "clip {c} has missing markers; impute it first"
                )));
            }
            let map = clip
                .markers
                .iter()
                .map(|name| {
                    model
                        .markers
                        .iter()
                        .position(|m| m.name == *name)
                        .ok_or_else(|| Error::Unknown {
                            kind: "marker",
                            name: name.clone(),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            marker_map.push(map);
        }
        for name in &config.fixed_markers {
            if !model.markers.iter().any(|m| m.name == *name) {
                return Err(Error::Unknown {
                    kind: "marker",
                    name: name.clone(),
                });
            }
        }
        let observations: usize = clips.iter().map(|c| c.frames() * c.markers.len()).sum();
        let frames: usize = clips.iter().map(Clip::frames).sum();
        if observations == 0 {
            return Err(Error::InvalidArgument("clips contain no observations".into()));
        }
        Ok(Self {
            model,
            clips,
            marker_map,
            free_marker: model
                .markers
                .iter()
                .map(|m| !config.fixed_markers.contains(&m.name))
                .collect(),
            free_joint: model.joints.iter().map(|j| !j.is_locked()).collect(),
            weight: config.regularizer_weight,
            observations: observations as f64,
            frames: frames as f64,
        })
    }

    /// Model attachments and reference angles in every frame.
    pub fn initial_params(&self) -> IkParams {
        let reference = self.model.reference_pose().angles;
        IkParams {
            attachments: self.model.markers.iter().map(|m| m.offset).collect(),
            angles: self
                .clips
                .iter()
                .map(|c| vec![reference.clone(); c.frames()])
                .collect(),
        }
    }

    fn frame_terms(&self, params: &IkParams, c: usize, t: usize, gradient: bool) -> FrameTerms {
        let model = self.model;
        let q = &params.angles[c][t];
        let frames = frames_for_angles(model, q, &BaseFrame::default());
        let n = self.observations;
        let mut out = FrameTerms {
            loss: 0.0,
            angles: if gradient { vec![0.0; q.len()] } else { Vec::new() },
            attachments: Vec::new(),
        };
        for (k, &m) in self.marker_map[c].iter().enumerate() {
            let body = model.markers[m].body;
            let r = frames.body_rotations[body];
            let x = frames.body_positions[body] + r * params.attachments[m];
            let e = x - self.clips[c].data[t][k];
            let dist = e.norm();
            out.loss += dist / n;
            if !gradient || dist == 0.0 {
                continue;
            }
            let u = e / (dist * n);
            if self.free_marker[m] {
                out.attachments.push((m, r.transpose() * u));
            }
            for &j in model.joint_chain(body) {
                out.angles[j] += joint_point_column(model, &frames, j, &x).dot(&u);
            }
        }
        for &(j, target) in &model.reference_pose {
            let d = q[j] - target;
            out.loss += self.weight * d * d / self.frames;
            if gradient {
                out.angles[j] += 2.0 * self.weight * d / self.frames;
            }
        }
        if gradient {
            for (g, &free) in out.angles.iter_mut().zip(&self.free_joint) {
                if !free {
                    *g = 0.0;
                }
            }
        }
        out
    }

    fn frame_index(&self) -> Vec<(usize, usize)> {
        self.clips
            .iter()
            .enumerate()
            .flat_map(|(c, clip)| (0..clip.frames()).map(move |t| (c, t)))
            .collect()
    }

    pub fn loss(&self, params: &IkParams) -> f64 {
        let terms: Vec<f64> = self
            .frame_index()
            .into_par_iter()
            .map(|(c, t)| self.frame_terms(params, c, t, false).loss)
            .collect();
        terms.iter().sum()
    }

    /// Loss and its exact gradient. Frames are evaluated in parallel and
    /// reduced in a fixed order.
    pub fn loss_and_gradient(&self, params: &IkParams) -> (f64, IkParams) {
        let index = self.frame_index();
        let terms: Vec<FrameTerms> = index
            .par_iter()
            .map(|&(c, t)| self.frame_terms(params, c, t, true))
            .collect();
        let mut grad = IkParams {
            attachments: vec![Vector3::zeros(); params.attachments.len()],
            angles: Vec::with_capacity(params.angles.len()),
        };
        let mut loss = 0.0;
        let mut terms = terms.into_iter();
        for clip in self.clips {
            let mut rows = Vec::with_capacity(clip.frames());
            for _ in 0..clip.frames() {
                let ft = terms.next().expect("one term per frame");
                loss += ft.loss;
                for (m, g) in ft.attachments {
                    grad.attachments[m] += g;
                }
                rows.push(ft.angles);
            }
            grad.angles.push(rows);
        }
        (loss, grad)
    }

    /// Diagonal preconditioner in [`IkParams::to_vec`] order, rescaling
    /// the gradient so attachment and per-frame angle blocks move at
    /// comparable rates. Fixed markers and locked joints get zero.
    fn scaling(&self, params: &IkParams) -> Vec<f64> {
        let markers = self.marker_map.iter().map(Vec::len).max().unwrap_or(1) as f64;
        let mut d = Vec::with_capacity(params.attachments.len() * 3);
        for &free in &self.free_marker {
            d.extend([if free { markers } else { 0.0 }; 3]);
        }
        for _ in params.angles.iter().flatten() {
            d.extend(self.free_joint.iter().map(|&f| if f { self.frames } else { 0.0 }));
        }
        d
    }

    /// Solves `H d = -g`, where `H` weights each marker's squared residual
    /// by the inverse of its current length (so its gradient matches the
    /// loss). Per-frame angle blocks are eliminated first, leaving a dense
    /// system in the free attachments. `None` if a factorisation fails.
    fn newton_direction(&self, params: &IkParams) -> Option<Vec<f64>> {
        let nm = params.attachments.len();
        let nq = self.model.joints.len();
        let index = self.frame_index();
        let blocks: Vec<Option<FrameBlock>> = index
            .par_iter()
            .map(|&(c, t)| self.frame_block(params, c, t))
            .collect();
        let mut s = DMatrix::<f64>::zeros(3 * nm, 3 * nm);
        let mut rhs = DVector::<f64>::zeros(3 * nm);
        for block in &blocks {
            let b = block.as_ref()?;
            for (i, &mi) in b.markers.iter().enumerate() {
                let row = b.schur.rows(3 * i, 3);
                for (k, &mk) in b.markers.iter().enumerate() {
                    let mut target = s.view_mut((3 * mi, 3 * mk), (3, 3));
                    target -= row.columns(3 * k, 3);
                }
                let mut target = rhs.rows_mut(3 * mi, 3);
                target -= b.reduced.rows(3 * i, 3);
                for d in 0..3 {
                    s[(3 * mi + d, 3 * mi + d)] += b.weights[i];
                }
                target += b.attachment_grad.rows(3 * i, 3);
            }
        }
        for i in 0..3 * nm {
            if s[(i, i)] <= 0.0 || !self.free_marker[i / 3] {
                s.row_mut(i).fill(0.0);
                s.column_mut(i).fill(0.0);
                s[(i, i)] = 1.0;
                rhs[i] = 0.0;
            } else {
                s[(i, i)] *= 1.0 + DAMPING;
            }
        }
        let da = s.cholesky()?.solve(&rhs);
        let mut dir: Vec<f64> = da.iter().map(|v| -v).collect();
        for b in blocks.iter().flatten() {
            let mut g = b.angle_grad.clone();
            for (i, &m) in b.markers.iter().enumerate() {
                g -= b.cross.rows(3 * i, 3).transpose() * da.rows(3 * m, 3);
            }
            let dq = b.angle_factor.solve(&g);
            dir.extend(dq.iter().map(|v| -v));
        }
        debug_assert_eq!(dir.len(), 3 * nm + index.len() * nq);
        Some(dir)
    }

    fn frame_block(&self, params: &IkParams, c: usize, t: usize) -> Option<FrameBlock> {
        let model = self.model;
        let nq = model.joints.len();
        let q = &params.angles[c][t];
        let frames = frames_for_angles(model, q, &BaseFrame::default());
        let n = self.observations;
        let mut h = DMatrix::<f64>::zeros(nq, nq);
        let mut angle_grad = DVector::<f64>::zeros(nq);
        let mut markers = Vec::new();
        let mut weights = Vec::new();
        let mut cross_rows: Vec<DMatrix<f64>> = Vec::new();
        let mut attachment_grad = Vec::new();
        for (k, &m) in self.marker_map[c].iter().enumerate() {
            let body = model.markers[m].body;
            let r = frames.body_rotations[body];
            let x = frames.body_positions[body] + r * params.attachments[m];
            let e = x - self.clips[c].data[t][k];
            let dist = e.norm();
            let w = 1.0 / (dist.max(MIN_RESIDUAL) * n);
            let grad_scale = if dist == 0.0 { 0.0 } else { 1.0 / (dist * n) };
            let mut jac = DMatrix::<f64>::zeros(3, nq);
            for &j in model.joint_chain(body) {
                if self.free_joint[j] {
                    jac.set_column(j, &joint_point_column(model, &frames, j, &x));
                }
            }
            let ev = DVector::from_column_slice(e.as_slice());
            h += w * jac.transpose() * &jac;
            angle_grad += grad_scale * jac.transpose() * &ev;
            if self.free_marker[m] {
                let rt = r.transpose();
                let rt = DMatrix::from_fn(3, 3, |i, j| rt[(i, j)]);
                cross_rows.push(w * &rt * &jac);
                attachment_grad.extend((grad_scale * rt * &ev).iter().copied());
                markers.push(m);
                weights.push(w);
            }
        }
        for &(j, target) in &model.reference_pose {
            if self.free_joint[j] {
                h[(j, j)] += 2.0 * self.weight / self.frames;
                angle_grad[j] += 2.0 * self.weight * (q[j] - target) / self.frames;
            }
        }
        for j in 0..nq {
            if h[(j, j)] <= 0.0 {
                h.row_mut(j).fill(0.0);
                h.column_mut(j).fill(0.0);
                h[(j, j)] = 1.0;
                angle_grad[j] = 0.0;
            } else {
                h[(j, j)] *= 1.0 + DAMPING;
            }
        }
        let mut cross = DMatrix::<f64>::zeros(3 * markers.len(), nq);
        for (i, row) in cross_rows.iter().enumerate() {
            cross.rows_mut(3 * i, 3).copy_from(row);
        }
        let angle_factor = h.cholesky()?;
        let solved = angle_factor.solve(&cross.transpose());
        Some(FrameBlock {
            schur: &cross * &solved,
            reduced: &cross * angle_factor.solve(&angle_grad),
            attachment_grad: DVector::from_vec(attachment_grad),
            angle_factor,
            angle_grad,
            cross,
            markers,
            weights,
        })
    }
}

/// One frame's share of the Gauss-Newton system. `cross` couples the
/// frame's angles with the attachments of `markers`.
struct FrameBlock {
    markers: Vec<usize>,
    weights: Vec<f64>,
    cross: DMatrix<f64>,
    angle_grad: DVector<f64>,
    attachment_grad: DVector<f64>,
    angle_factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// `cross * H_qq^-1 * cross^T`
    schur: DMatrix<f64>,
    /// `cross * H_qq^-1 * angle_grad`
    reduced: DVector<f64>,
}

/// Fits from the model's attachments and reference angles (plus optional
/// seeded noise).
pub fn ik_fit(model: &Model, clips: &[Clip], config: &IkConfig) -> Result<IkFit> {
    let problem = IkProblem::new(model, clips, config)?;
    let mut init = problem.initial_params();
    if config.init_noise > 0.0 {
        let normal = Normal::new(0.0, config.init_noise)
            .map_err(|e| Error::InvalidArgument(format!("init noise: {e}")))?;
        let mut rng = stream(config.seed, Stream::Ik);
        for q in init.angles.iter_mut().flatten() {
            for (j, v) in q.iter_mut().enumerate() {
                if problem.free_joint[j] {
                    *v += normal.sample(&mut rng);
                }
            }
        }
    }
    ik_fit_from(&problem, init, config)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backtracking descent: each iteration halves the step until the loss
/// decreases (at most [`MAX_HALVINGS`] times). The direction is the
/// gradient preconditioned by the reweighted Gauss-Newton matrix, tried
/// first at unit length; if that system cannot be factored the plain
/// diagonally scaled gradient is used with an adaptive step starting at
/// the learning rate.
pub fn ik_fit_from(problem: &IkProblem<'_>, init: IkParams, config: &IkConfig) -> Result<IkFit> {
    if !(config.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }
    let mut params = init;
    let (mut loss, grad) = problem.loss_and_gradient(&params);
    if !loss.is_finite() {
        return Err(Error::Optimization(format!("initial loss is {loss}")));
    }
    let scale = problem.scaling(&params);
    let mut g = grad.to_vec();
    let mut history = vec![loss];
    let mut step = config.learning_rate;
    let mut newton_step = 1.0;
    let mut rejections = 0;
    for iteration in 0..config.iterations {
        let grad_norm = dot(&g, &g).sqrt();
        if grad_norm == 0.0 {
            break;
        }
        let x = params.to_vec();
        let (dir, newton) = match problem.newton_direction(&params) {
            Some(d) if dot(&d, &g) < 0.0 => (d, true),
            _ => (
                g.iter().zip(&scale).map(|(gi, di)| -gi * di).collect::<Vec<_>>(),
                false,
            ),
        };
        let mut trial_step = if newton { newton_step } else { step };
        let mut accepted = None;
        let mut last_trial = f64::NAN;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + trial_step * di).collect();
            let candidate = params.from_vec(&trial);
            last_trial = problem.loss(&candidate);
            if last_trial < loss {
                accepted = Some(candidate);
                break;
            }
            trial_step *= 0.5;
        }
        let grown = trial_step * STEP_GROWTH;
        match accepted {
            Some(candidate) => {
                if newton {
                    newton_step = grown.min(1.0);
                } else {
                    step = grown;
                }
                let (next_loss, next_grad) = problem.loss_and_gradient(&candidate);
                params = candidate;
                loss = next_loss;
                g = next_grad.to_vec();
                rejections = 0;
            }
            None => {
                if loss < CONVERGED_LOSS {
                    break;
                }
                rejections += 1;
                if newton {
                    newton_step = trial_step;
                } else {
                    step = trial_step;
                }
                if rejections >= MAX_REJECTIONS {
                    return Err(Error::Optimization(format!(
                        "no decrease for {MAX_REJECTIONS} iterations at iteration {iteration}: \
                         loss {loss:.6e}, last trial {last_trial:.6e}, gradient norm {grad_norm:.3e}, step {trial_step:.3e}"
                    )));
                }
            }
        }
        history.push(loss);
    }
    finish(problem, params, loss, history)
}

fn finish(problem: &IkProblem<'_>, params: IkParams, loss: f64, history: Vec<f64>) -> Result<IkFit> {
    let model = problem.model;
    let mut violations = Vec::new();
    let mut trajectories = Vec::with_capacity(params.angles.len());
    for (c, mut rows) in params.angles.into_iter().enumerate() {
        for (t, q) in rows.iter_mut().enumerate() {
            for (j, joint) in model.joints.iter().enumerate() {
                let (lo, hi) = joint.range;
                let excess = if q[j] < lo { lo - q[j] } else { q[j] - hi };
                if excess > 0.0 {
                    violations.push(ClampViolation {
                        clip: c,
                        frame: t,
                        joint: joint.name.clone(),
                        excess,
                    });
                    q[j] = q[j].clamp(lo, hi);
                }
            }
        }
        trajectories.push(Trajectory::from_angles(model, problem.clips[c].rate, rows)?);
    }
    Ok(IkFit {
        attachments: params.attachments,
        trajectories,
        loss,
        history,
        violations,
    })
}

/// Synthetic clip: the model's markers placed by forward kinematics for
/// each row of `angles`.
pub fn synthesize_clip(model: &Model, rate: f64, angles: &[Vec<f64>]) -> Result<Clip> {
    let data = angles
        .iter()
        .map(|q| {
            if q.len() != model.joints.len() {
                return Err(Error::Dimension {
                    what: "pose angles",
                    expected: model.joints.len(),
                    got: q.len(),
                });
            }
            let f = frames_for_angles(model, q, &BaseFrame::default());
            Ok(model
                .markers
                .iter()
                .map(|m| f.body_positions[m.body] + f.body_rotations[m.body] * m.offset)
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Clip::new(rate, model.markers.iter().map(|m| m.name.clone()).collect(), data)
}
