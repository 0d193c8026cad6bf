use std::path::{Component, Path, PathBuf};

use rayon::prelude::*;

use musculo_core::dynamics::io::{DumpWriter, NumericTable};
use musculo_core::dynamics::{pendulum_check, step, SimConfig, SimState};
use musculo_core::gait::{compare_profiles, profile_from_dump, read_reference};
use musculo_core::mocap::{
    evaluate_imputer, ik_fit, impute, make_cyclic, rescale, select_interval, Clip, CyclicOptions,
    HoldImputer, IkConfig, Imputer, SplineImputer, Trajectory,
};
use musculo_core::model::{load_model, mesh_inertia, parse_mesh, DocumentOptions, Model};
use musculo_core::muscle::{calibrate_length_ranges, solve_rest_lengths};
use musculo_core::tasks::{
    run, ConstantPolicy, Env, EnvConfig, NeckTask, Policy, RandomPolicy, ReplayPolicy, RunForwardTask, Task,
    TrackingTask,
};
use musculo_core::{assets, Error};

use crate::manifest::RunManifest;
use crate::{
    Command, EnvCmd, Failure, GaitCmd, ImputerKind, MocapCmd, ModelCmd, MuscleCmd, SimCmd, TaskKind,
};

type Res<T = ()> = Result<T, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

/// Directory that receives the manifest and every output of `cmd`.
fn out_dir(cmd: &Command) -> PathBuf {
    match cmd {
        Command::Model(ModelCmd::Validate { out, .. } | ModelCmd::Inertia { out, .. })
        | Command::Sim(SimCmd::Step { out, .. } | SimCmd::PendulumCheck { out, .. })
        | Command::Mocap(
            MocapCmd::Select { out, .. }
            | MocapCmd::Impute { out, .. }
            | MocapCmd::Evaluate { out, .. }
            | MocapCmd::Ik { out, .. }
            | MocapCmd::Cyclic { out, .. },
        )
        | Command::Muscle(MuscleCmd::SolveLengths { out, .. } | MuscleCmd::Calibrate { out, .. }) => {
            out.out.clone()
        }
        Command::Env(EnvCmd::Run { out, dump, .. }) => match (out, dump) {
            (Some(o), _) => o.clone(),
            (None, Some(d)) => parent_or_cwd(d),
            (None, None) => PathBuf::from("."),
        },
        Command::Gait(GaitCmd::Analyze { out, .. }) => parent_or_cwd(out),
    }
}

fn parent_or_cwd(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Resolves an output file inside `dir`, refusing anything that escapes it.
fn output_path(dir: &Path, name: &Path) -> Res<PathBuf> {
    let relative = if name.is_absolute() {
        let base = std::path::absolute(dir).map_err(|e| io_failure(dir, e))?;
        name.strip_prefix(&base)
            .map_err(|_| {
                Failure::Usage(format!(
                    "{} is outside the output directory {}",
                    name.display(),
                    dir.display()
                ))
            })?
            .to_path_buf()
    } else {
        name.to_path_buf()
    };
    if relative.as_os_str().is_empty() || relative.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(Failure::Usage(format!(
            "{} must name a file inside the output directory {}",
            name.display(),
            dir.display()
        )));
    }
    Ok(dir.join(relative))
}

fn write_file(path: &Path, bytes: &[u8]) -> Res {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_failure(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn csv_bytes<I, R>(header: &[&str], rows: I) -> Res<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let data = |e: csv::Error| Failure::Data(e.to_string());
    w.write_record(header).map_err(data)?;
    for row in rows {
        w.write_record(row).map_err(data)?;
    }
    w.into_inner().map_err(|e| Failure::Data(e.to_string()))
}

/// Reads an input file and records its hash.
fn read_input(path: &Path, manifest: &mut RunManifest) -> Res<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| io_failure(path, e))?;
    manifest.input(path, &bytes);
    Ok(bytes)
}

/// Loads a model from a path or `builtin:<name>`.
fn model_arg(spec: &str, manifest: &mut RunManifest) -> Res<Model> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        let text = assets::source(name).ok_or_else(|| {
            Failure::Usage(format!(
                "unknown built-in model `{name}` (have {})",
                assets::NAMES.join(", ")
            ))
        })?;
        manifest.model(text);
        return Ok(load_model(text, &DocumentOptions::default())?);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    manifest.model(&text);
    Ok(load_model(
        &text,
        &DocumentOptions {
            base_dir: path.parent().map(Path::to_path_buf),
        },
    )?)
}

fn clip_arg(path: &Path, manifest: &mut RunManifest) -> Res<Clip> {
    Ok(Clip::from_reader(read_input(path, manifest)?.as_slice())?)
}

fn imputer(kind: ImputerKind) -> &'static dyn Imputer {
    match kind {
        ImputerKind::Spline => &SplineImputer,
        ImputerKind::Hold => &HoldImputer,
    }
}

/// Shortest decimal that survives a round trip at 12 significant digits.
fn short(v: f64) -> String {
    format!("{v:.11e}").parse::<f64>().unwrap_or(v).to_string()
}

/// Runs `cmd`, then writes the manifest whether or not it succeeded.
pub fn dispatch(cmd: Command, manifest: &mut RunManifest) -> Res {
    let dir = out_dir(&cmd);
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    let result = execute(cmd, &dir, manifest);
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(Failure::Usage(m) | Failure::Data(m)) => format!("error: {m}"),
    };
    manifest
        .write(&dir, &status)
        .map_err(|e| io_failure(&dir.join(crate::manifest::FILE_NAME), e))?;
    result
}

fn execute(cmd: Command, dir: &Path, manifest: &mut RunManifest) -> Res {
    match cmd {
        Command::Model(c) => model_cmd(c, dir, manifest),
        Command::Sim(c) => sim_cmd(c, dir, manifest),
        Command::Mocap(c) => mocap_cmd(c, dir, manifest),
        Command::Env(c) => env_cmd(c, dir, manifest),
        Command::Gait(c) => gait_cmd(c, dir, manifest),
        Command::Muscle(c) => muscle_cmd(c, dir, manifest),
    }
}

fn model_cmd(cmd: ModelCmd, dir: &Path, manifest: &mut RunManifest) -> Res {
    match cmd {
        ModelCmd::Validate { model, .. } => {
            let m = model_arg(&model, manifest)?;
            println!(
                "ok: model `{}` with {} bodies, {} joints, {} sites, {} wraps, {} muscles, {} markers",
                m.name,
                m.bodies.len(),
                m.joints.len(),
                m.sites.len(),
                m.wraps.len(),
                m.muscles.len(),
                m.markers.len()
            );
            Ok(())
        }
        ModelCmd::Inertia { mesh, density, .. } => {
            let bytes = read_input(&mesh, manifest)?;
            let text = String::from_utf8(bytes)
                .map_err(|_| Failure::Data(format!("{} is not UTF-8", mesh.display())))?;
            let p = mesh_inertia(&parse_mesh(&text)?, density)?;
            let i = &p.inertia;
            let values = [
                p.volume,
                p.mass,
                p.com.x,
                p.com.y,
                p.com.z,
                i[(0, 0)],
                i[(1, 1)],
                i[(2, 2)],
                i[(0, 1)],
                i[(0, 2)],
                i[(1, 2)],
            ];
            println!(
                "volume={} mass={} com=({}, {}, {})",
                p.volume, p.mass, p.com.x, p.com.y, p.com.z
            );
            let header = [
                "volume", "mass", "com_x", "com_y", "com_z", "ixx", "iyy", "izz", "ixy", "ixz", "iyz",
            ];
            let bytes = csv_bytes(&header, [values.map(|v| v.to_string())])?;
            write_file(&output_path(dir, Path::new("inertia.csv"))?, &bytes)
        }
    }
}

fn sim_cmd(cmd: SimCmd, dir: &Path, manifest: &mut RunManifest) -> Res {
    match cmd {
        SimCmd::Step {
            model,
            steps,
            excitation,
            physics_dt,
            control_dt,
            dump,
            ..
        } => {
            let target = output_path(dir, &dump)?;
            let m = model_arg(&model, manifest)?;
            let config = SimConfig {
                physics_dt,
                control_dt,
                ..SimConfig::default()
            };
            let u = vec![excitation; m.muscles.len()];
            let mut state = SimState::new(&m, m.default_pose())?;
            let mut writer = DumpWriter::new(&m, Vec::new())?;
            writer.write(&state)?;
            for _ in 0..steps {
                state = step(&m, &state, &u, &config)?;
                writer.write(&state)?;
            }
            write_file(&target, &writer.finish()?)?;
            println!("simulated {steps} control steps to t={}", state.time);
            Ok(())
        }
        SimCmd::PendulumCheck {
            amplitude,
            physics_dt,
            ..
        } => {
            let config = SimConfig {
                physics_dt,
                control_dt: physics_dt,
                ..SimConfig::default()
            };
            let r = pendulum_check(amplitude, &config)?;
            println!(
                "measured_period={} analytic_period={} relative_error={}",
                r.measured_period, r.analytic_period, r.relative_error
            );
            let bytes = csv_bytes(
                &[
                    "amplitude",
                    "measured_period",
                    "analytic_period",
                    "relative_error",
                ],
                [
                    [amplitude, r.measured_period, r.analytic_period, r.relative_error]
                        .map(|v| v.to_string()),
                ],
            )?;
            write_file(&output_path(dir, Path::new("pendulum.csv"))?, &bytes)
        }
    }
}

fn clip_bytes(clip: &Clip) -> Res<Vec<u8>> {
    let mut buf = Vec::new();
    clip.to_writer(&mut buf)?;
    Ok(buf)
}

fn trajectory_bytes(model: &Model, traj: &Trajectory) -> Res<Vec<u8>> {
    let mut buf = Vec::new();
    traj.to_writer(model, &mut buf)?;
    Ok(buf)
}

fn mocap_cmd(cmd: MocapCmd, dir: &Path, manifest: &mut RunManifest) -> Res {
    match cmd {
        MocapCmd::Select {
            clip,
            min_markers,
            min_duration,
            ..
        } => {
            let c = clip_arg(&clip, manifest)?;
            match select_interval(&c, min_markers, min_duration) {
                Some((start, end)) => {
                    println!(
                        "interval frames {start}..{end} ({} s to {} s)",
                        start as f64 / c.rate,
                        end as f64 / c.rate
                    );
                    write_file(
                        &output_path(dir, Path::new("interval.csv"))?,
                        &csv_bytes(&["start", "end"], [[start.to_string(), end.to_string()]])?,
                    )?;
                    write_file(
                        &output_path(dir, Path::new("selected.csv"))?,
                        &clip_bytes(&c.slice(start, end))?,
                    )
                }
                None => {
                    println!("none: no window of {min_duration} s with {min_markers} markers present");
                    write_file(
                        &output_path(dir, Path::new("interval.csv"))?,
                        &csv_bytes(&["start", "end"], std::iter::empty::<[String; 2]>())?,
                    )
                }
            }
        }
        MocapCmd::Impute {
            clip, method, scale, ..
        } => {
            let c = clip_arg(&clip, manifest)?;
            let mut filled = impute(&c, imputer(method))?;
            if scale != 1.0 {
                filled = rescale(&filled, scale)?;
            }
            write_file(
                &output_path(dir, Path::new("imputed.csv"))?,
                &clip_bytes(&filled)?,
            )
        }
        MocapCmd::Evaluate {
            clip,
            method,
            mask_prob,
            segment_len,
            seed,
            ..
        } => {
            manifest.seed(seed);
            let c = clip_arg(&clip, manifest)?;
            let err = evaluate_imputer(&c, imputer(method), mask_prob, segment_len, seed)?;
            let name = match method {
                ImputerKind::Spline => "spline",
                ImputerKind::Hold => "hold",
            };
            println!("{name} mean_error_m={err}");
            let bytes = csv_bytes(
                &["method", "mask_prob", "segment_len", "seed", "mean_error_m"],
                [[
                    name.to_string(),
                    mask_prob.to_string(),
                    segment_len.to_string(),
                    seed.to_string(),
                    err.to_string(),
                ]],
            )?;
            write_file(&output_path(dir, Path::new("evaluation.csv"))?, &bytes)
        }
        MocapCmd::Ik {
            model,
            clip,
            scale,
            iterations,
            learning_rate,
            regularizer,
            init_noise,
            fixed_markers,
            seed,
            ..
        } => {
            manifest.seed(seed);
            let m = model_arg(&model, manifest)?;
            let clips = clip
                .iter()
                .map(|p| {
                    let c = clip_arg(p, manifest)?;
                    if scale == 1.0 {
                        Ok(c)
                    } else {
                        Ok(rescale(&c, scale)?)
                    }
                })
                .collect::<Res<Vec<_>>>()?;
            let config = IkConfig {
                regularizer_weight: regularizer,
                iterations,
                learning_rate,
                seed,
                init_noise,
                fixed_markers,
            };
            let fit = ik_fit(&m, &clips, &config)?;
            for (i, traj) in fit.trajectories.iter().enumerate() {
                let name = format!("trajectory_{i}.csv");
                write_file(&output_path(dir, Path::new(&name))?, &trajectory_bytes(&m, traj)?)?;
            }
            let rows = m.markers.iter().zip(&fit.attachments).map(|(spec, a)| {
                [
                    spec.name.clone(),
                    m.bodies[spec.body].name.clone(),
                    a.x.to_string(),
                    a.y.to_string(),
                    a.z.to_string(),
                ]
            });
            write_file(
                &output_path(dir, Path::new("attachments.csv"))?,
                &csv_bytes(&["marker", "body", "x", "y", "z"], rows)?,
            )?;
            let rows = fit
                .history
                .iter()
                .enumerate()
                .map(|(k, l)| [k.to_string(), l.to_string()]);
            write_file(
                &output_path(dir, Path::new("loss.csv"))?,
                &csv_bytes(&["iteration", "loss"], rows)?,
            )?;
            let rows = fit.violations.iter().map(|v| {
                [
                    v.clip.to_string(),
                    v.frame.to_string(),
                    v.joint.clone(),
                    v.excess.to_string(),
                ]
            });
            write_file(
                &output_path(dir, Path::new("clamped.csv"))?,
                &csv_bytes(&["clip", "frame", "joint", "excess"], rows)?,
            )?;
            if !fit.violations.is_empty() {
                log::warn!(
                    "{} fitted angles were clamped into joint ranges",
                    fit.violations.len()
                );
            }
            println!("loss={} iterations={}", fit.loss, fit.history.len() - 1);
            Ok(())
        }
        MocapCmd::Cyclic {
            model,
            traj,
            period,
            crossfade,
            repeats,
            advance,
            ..
        } => {
            let m = model_arg(&model, manifest)?;
            let t = Trajectory::from_reader(&m, read_input(&traj, manifest)?.as_slice())?;
            let advance_joints = advance
                .iter()
                .map(|name| {
                    m.joint_index(name)
                        .ok_or_else(|| Failure::Usage(format!("--advance: unknown joint `{name}`")))
                })
                .collect::<Res<Vec<_>>>()?;
            let opts = CyclicOptions {
                period_frames: period,
                crossfade_frames: crossfade,
                repeats,
                advance_joints,
            };
            let cyclic = make_cyclic(&m, &t, &opts)?;
            write_file(
                &output_path(dir, Path::new("cyclic.csv"))?,
                &trajectory_bytes(&m, &cyclic)?,
            )
        }
    }
}

fn policy_arg(spec: &str, model: &Model, seed: u64, manifest: &mut RunManifest) -> Res<Box<dyn Policy>> {
    if spec == "random" {
        return Ok(Box::new(RandomPolicy::new(seed, 0)));
    }
    if spec == "constant" {
        return Ok(Box::new(ConstantPolicy(0.0)));
    }
    if let Some(v) = spec.strip_prefix("constant:") {
        let a: f64 = v
            .parse()
            .map_err(|_| Failure::Usage(format!("--policy constant:<action> needs a number, got `{v}`")))?;
        return Ok(Box::new(ConstantPolicy(a)));
    }
    if let Some(path) = spec.strip_prefix("replay:") {
        let bytes = read_input(Path::new(path), manifest)?;
        let table = NumericTable::from_reader(bytes.as_slice())?;
        return Ok(Box::new(ReplayPolicy::from_table(model, &table)?));
    }
    Err(Failure::Usage(format!(
        "--policy must be random, constant[:<action>] or replay:<file>, got `{spec}`"
    )))
}

fn env_cmd(cmd: EnvCmd, dir: &Path, manifest: &mut RunManifest) -> Res {
    let EnvCmd::Run {
        task,
        model,
        clip,
        policy,
        steps,
        horizon,
        seed,
        dump,
        out,
    } = cmd;
    manifest.seed(seed);
    let dump_path = match (&dump, &out) {
        (Some(d), Some(_)) => Some(output_path(dir, d)?),
        (Some(d), None) => Some(output_path(dir, Path::new(d.file_name().unwrap_or_default()))?),
        (None, _) => None,
    };
    let m = model_arg(&model, manifest)?;
    let config = EnvConfig {
        horizon,
        seed,
        ..EnvConfig::default()
    };
    let task = match task {
        TaskKind::RunForward => Task::RunForward(RunForwardTask::new(&m)?),
        TaskKind::Neck => Task::Neck(NeckTask::new(&m)?),
        TaskKind::Tracking => {
            let path =
                clip.ok_or_else(|| Failure::Usage("--clip is required for the tracking task".into()))?;
            let reference = Trajectory::from_reader(&m, read_input(&path, manifest)?.as_slice())?;
            Task::Tracking(Box::new(TrackingTask::new(&m, reference, config.sim.control_dt)?))
        }
    };
    let mut policy = policy_arg(&policy, &m, seed, manifest)?;
    let mut env = Env::new(&m, task, config)?;
    let mut writer = match dump_path {
        Some(_) => Some(DumpWriter::new(&m, Vec::new())?),
        None => None,
    };
    let summary = run(&mut env, policy.as_mut(), steps, |state, _| {
        match writer.as_mut() {
            Some(w) => w.write(state),
            None => Ok::<(), Error>(()),
        }
    })?;
    if let (Some(w), Some(path)) = (writer, dump_path) {
        write_file(&path, &w.finish()?)?;
    }
    let terminations: Vec<String> = summary
        .terminations
        .iter()
        .map(|(r, n)| format!("{}:{n}", r.as_str()))
        .collect();
    println!(
        "steps={} episodes={} mean_reward={} mean_episode_length={} terminations={}",
        summary.steps,
        summary.episodes,
        summary.mean_reward,
        summary.mean_episode_length,
        if terminations.is_empty() {
            "none".to_string()
        } else {
            terminations.join(",")
        }
    );
    Ok(())
}

fn gait_cmd(cmd: GaitCmd, dir: &Path, manifest: &mut RunManifest) -> Res {
    let GaitCmd::Analyze {
        traj,
        foot,
        emg,
        out,
        grid,
    } = cmd;
    let report_name = PathBuf::from(
        out.file_name()
            .ok_or_else(|| Failure::Usage(format!("--out {} must name a CSV file", out.display())))?,
    );
    let stem = report_name
        .file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned();
    let report_path = output_path(dir, &report_name)?;
    let profile_path = output_path(dir, Path::new(&format!("{stem}_profile.csv")))?;
    let table = NumericTable::from_reader(read_input(&traj, manifest)?.as_slice())?;
    let profile = profile_from_dump(&table, &foot, grid)?;
    let reference = read_reference(
        read_input(&emg, manifest)?.as_slice(),
        grid,
        profile.stance_fraction,
    )?;
    let comparisons = compare_profiles(&profile, &reference)?;

    let mut header = vec!["phase_percent".to_string(), "phase".to_string()];
    header.extend(profile.traces.iter().map(|(n, _)| n.clone()));
    let stance = profile.stance_points();
    let rows = (0..grid).map(|k| {
        let mut row = vec![
            (100.0 * k as f64 / grid as f64).to_string(),
            if k < stance { "stance" } else { "swing" }.to_string(),
        ];
        row.extend(profile.traces.iter().map(|(_, t)| t[k].to_string()));
        row
    });
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_file(&profile_path, &csv_bytes(&header_refs, rows)?)?;

    let rows = comparisons.iter().map(|c| {
        [
            c.muscle.clone(),
            c.peak_shift_percent.to_string(),
            c.correlation.to_string(),
            c.excess.to_string(),
        ]
    });
    write_file(
        &report_path,
        &csv_bytes(&["muscle", "peak_shift_percent", "correlation", "excess"], rows)?,
    )?;
    println!(
        "strides={} stance_fraction={} muscles_compared={}",
        profile.strides.len(),
        profile.stance_fraction,
        comparisons.len()
    );
    Ok(())
}

fn muscle_cmd(cmd: MuscleCmd, dir: &Path, manifest: &mut RunManifest) -> Res {
    match cmd {
        MuscleCmd::SolveLengths { lr, r, .. } => {
            let pair = |v: &[f64], flag: &str| match v {
                [a, b] => Ok((*a, *b)),
                _ => Err(Failure::Usage(format!(
                    "--{flag} takes two comma-separated values"
                ))),
            };
            let (l0, lt) = solve_rest_lengths(pair(&lr, "lr")?, pair(&r, "r")?)?;
            println!("L0={} LT={}", short(l0), short(lt));
            Ok(())
        }
        MuscleCmd::Calibrate {
            model, samples, seed, ..
        } => {
            manifest.seed(seed);
            let m = model_arg(&model, manifest)?;
            let ranges = m
                .muscles
                .par_iter()
                .map(|mu| calibrate_length_ranges(&m, &mu.params.name, samples, seed))
                .collect::<Result<Vec<_>, _>>()?;
            let rows = m.muscles.iter().zip(&ranges).map(|(mu, (lo, hi))| {
                println!("{} {} {}", mu.params.name, lo, hi);
                [mu.params.name.clone(), lo.to_string(), hi.to_string()]
            });
            let bytes = csv_bytes(&["muscle", "length_min", "length_max"], rows)?;
            write_file(&output_path(dir, Path::new("length_ranges.csv"))?, &bytes)
        }
    }
}
