//! Episode loop shared by the three tasks, plus scripted policies.

use nalgebra::Vector3;
use rand::Rng as _;

use crate::dynamics::io::NumericTable;
use crate::dynamics::{step, SimConfig, SimState};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::{substream, Rng, Stream};

use super::neck::RESET_PERIOD;
use super::{
    action_map, neck_control_step, run_forward_step, tracking_step, EpisodeStatus, NeckTask, RunForwardTask,
    TerminationReason, TrackingTask,
};

pub const DEFAULT_HORIZON: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    RunForward(RunForwardTask),
    Tracking(Box<TrackingTask>),
    Neck(NeckTask),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub sim: SimConfig,
    /// Control steps before an episode is cut off (not a termination).
    pub horizon: usize,
    pub seed: u64,
    /// Distinguishes parallel environments sharing a seed.
    pub index: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            horizon: DEFAULT_HORIZON,
            seed: 0,
            index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub status: EpisodeStatus,
    /// Horizon reached without termination.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn episode_over(&self) -> bool {
        self.status.terminated || self.truncated
    }
}

pub struct Env<'a> {
    model: &'a Model,
    task: Task,
    config: EnvConfig,
    state: SimState,
    /// Control step within the episode; for tracking, the reference step.
    t: usize,
    steps: usize,
    episodes: usize,
    target: Vector3<f64>,
    init_rng: Rng,
    target_rng: Rng,
}

impl<'a> Env<'a> {
    pub fn new(model: &'a Model, task: Task, config: EnvConfig) -> Result<Self> {
        config.sim.substeps()?;
        let state = SimState::new(model, model.default_pose())?;
        Ok(Self {
            init_rng: substream(config.seed, Stream::TaskInit, config.index),
            target_rng: substream(config.seed, Stream::NeckTarget, config.index),
            model,
            task,
            config,
            state,
            t: 0,
            steps: 0,
            episodes: 0,
            target: Vector3::zeros(),
        })
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn target(&self) -> Vector3<f64> {
        self.target
    }

    pub fn episodes_started(&self) -> usize {
        self.episodes
    }

    /// Starts a new episode and returns its first observation.
    pub fn reset(&mut self) -> Result<Vec<f64>> {
        let model = self.model;
        match &self.task {
            Task::RunForward(_) => {
                self.state = SimState::new(model, model.default_pose())?;
                self.t = 0;
            }
            Task::Tracking(task) => {
                let (t0, state) = task.initial_state(model, &mut self.init_rng)?;
                self.state = state;
                self.t = t0;
            }
            Task::Neck(task) => {
                // the neck carries its final state into the next episode
                // except on every RESET_PERIOD-th one
                if self.episodes % RESET_PERIOD == 0 {
                    self.state = SimState::new(model, model.reference_pose())?;
                }
                self.state.time = 0.0;
                self.target = task.sample_target(&mut self.target_rng)?;
                self.t = 0;
            }
        }
        self.steps = 0;
        self.episodes += 1;
        self.observe()
    }

    pub fn observe(&self) -> Result<Vec<f64>> {
        match &self.task {
            Task::RunForward(task) => task.observe(self.model, &self.state),
            Task::Tracking(task) => task.observe(self.model, &self.state, self.t),
            Task::Neck(task) => task.observe(self.model, &self.state, &self.target),
        }
    }

    /// Applies policy actions in [-1, 1] for one control step.
    pub fn step(&mut self, actions: &[f64]) -> Result<StepOutcome> {
        let excitations = action_map(actions);
        self.state = step(self.model, &self.state, &excitations, &self.config.sim)?;
        self.t += 1;
        self.steps += 1;
        let status = match &self.task {
            Task::RunForward(task) => run_forward_step(self.model, task, &self.state)?,
            Task::Tracking(task) => tracking_step(self.model, &self.state, task, self.t)?,
            Task::Neck(task) => neck_control_step(self.model, &self.state, &self.target, task)?,
        };
        let observation = self.observe()?;
        if let Some(bad) = observation.iter().position(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                quantity: format!("observation entry {bad}"),
            });
        }
        Ok(StepOutcome {
            observation,
            truncated: !status.terminated && self.steps >= self.config.horizon,
            status,
        })
    }
}

pub trait Policy {
    fn act(&mut self, observation: &[f64], actions: &mut [f64]);
}

/// Independent uniform actions in [-1, 1].
pub struct RandomPolicy {
    rng: Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64, index: u64) -> Self {
        Self {
            rng: substream(seed, Stream::Policy, index),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _: &[f64], actions: &mut [f64]) {
        for a in actions {
            *a = self.rng.random_range(-1.0..=1.0);
        }
    }
}

/// The same action for every muscle at every step.
pub struct ConstantPolicy(pub f64);

impl Policy for ConstantPolicy {
    fn act(&mut self, _: &[f64], actions: &mut [f64]) {
        actions.fill(self.0);
    }
}

/// Replays recorded actions row by row, cycling at the end.
pub struct ReplayPolicy {
    rows: Vec<Vec<f64>>,
    next: usize,
}

impl ReplayPolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("replay file has no rows".into()));
        }
        Ok(Self { rows, next: 0 })
    }

    /// Reads actions from a table with one column per muscle, named after
    /// the muscle, or the `u_<muscle>` excitation columns of a dump (mapped
    /// back to actions).
    pub fn from_table(model: &Model, table: &NumericTable) -> Result<Self> {
        let names: Vec<&str> = model.muscles.iter().map(|m| m.params.name.as_str()).collect();
        let direct: Option<Vec<Vec<f64>>> = names.iter().map(|n| table.column(n)).collect();
        let rows_by_muscle = match direct {
            Some(cols) => cols,
            None => names
                .iter()
                .map(|n| {
                    table
                        .column(&format!("u_{n}"))
                        .map(|c| c.into_iter().map(|u| 2.0 * u - 1.0).collect())
                        .ok_or_else(|| Error::Unknown {
                            kind: "replay column",
                            name: n.to_string(),
                        })
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let frames = table.rows.len();
        let rows = (0..frames)
            .map(|t| rows_by_muscle.iter().map(|c| c[t]).collect())
            .collect();
        Self::new(rows)
    }
}

impl Policy for ReplayPolicy {
    fn act(&mut self, _: &[f64], actions: &mut [f64]) {
        let row = &self.rows[self.next % self.rows.len()];
        for (a, v) in actions.iter_mut().zip(row) {
            *a = *v;
        }
        self.next += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub steps: usize,
    /// Episodes that ended by termination or truncation.
    pub episodes: usize,
    pub mean_reward: f64,
    pub mean_episode_length: f64,
    /// (reason, count) for terminated episodes.
    pub terminations: Vec<(TerminationReason, usize)>,
}

/// Runs `steps` control steps, resetting whenever an episode ends. The
/// callback sees the state after every step.
pub fn run(
    env: &mut Env<'_>,
    policy: &mut dyn Policy,
    steps: usize,
    mut on_step: impl FnMut(&SimState, &StepOutcome) -> Result<()>,
) -> Result<RunSummary> {
    let mut actions = vec![0.0; env.model().muscles.len()];
    let mut observation = env.reset()?;
    let mut summary = RunSummary::default();
    let (mut total_reward, mut lengths, mut current) = (0.0, Vec::new(), 0usize);
    for k in 0..steps {
        policy.act(&observation, &mut actions);
        let outcome = env.step(&actions)?;
        on_step(env.state(), &outcome)?;
        total_reward += outcome.status.reward;
        current += 1;
        observation = outcome.observation.clone();
        if outcome.episode_over() {
            lengths.push(current);
            current = 0;
            if outcome.status.terminated {
                let reason = outcome.status.reason;
                match summary.terminations.iter_mut().find(|(r, _)| *r == reason) {
                    Some((_, n)) => *n += 1,
                    None => summary.terminations.push((reason, 1)),
                }
            }
            if k + 1 < steps {
                observation = env.reset()?;
            }
        }
    }
    summary.steps = steps;
    summary.episodes = lengths.len();
    summary.mean_reward = if steps > 0 {
        total_reward / steps as f64
    } else {
        0.0
    };
    if current > 0 {
        lengths.push(current);
    }
    summary.mean_episode_length = if lengths.is_empty() {
        0.0
    } else {
        lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
    };
    Ok(summary)
}
