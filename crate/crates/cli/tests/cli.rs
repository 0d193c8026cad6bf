use std::path::Path;
use std::process::{Command, Output};

use musculo_core::assets;
use musculo_core::mocap::synthesize_clip;

fn musculo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_musculo"))
        .args(args)
        .current_dir(dir)
        .env_remove("MUSCULO_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest_rows(path: &Path) -> Vec<(String, String)> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].to_string())
        })
        .collect()
}

#[test]
fn validate_model_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("good.model"), assets::PLANAR_LEG).unwrap();
    let o = musculo(dir.path(), &["model", "validate", "good.model"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("10 joints"));
    let rows = manifest_rows(&dir.path().join("run_manifest.csv"));
    assert!(rows.iter().any(|(k, v)| k == "model_sha256" && v.len() == 64));
    assert!(rows.iter().any(|(k, v)| k == "status" && v == "ok"));
}

#[test]
fn invalid_model_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let broken = assets::PLANAR_LEG.replacen("musculo-model/1", "musculo-model/9", 1);
    std::fs::write(dir.path().join("bad.model"), broken).unwrap();
    let o = musculo(dir.path(), &["model", "validate", "bad.model"]);
    assert_eq!(o.status.code(), Some(2));
    let rows = manifest_rows(&dir.path().join("run_manifest.csv"));
    assert!(rows.iter().any(|(k, v)| k == "status" && v.starts_with("error")));
}

#[test]
fn solve_lengths_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let o = musculo(
        dir.path(),
        &["muscle", "solve-lengths", "--lr", "0.2,0.3", "--r", "0.5,1.5"],
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "L0=0.1 LT=0.15");
}

#[test]
fn solve_lengths_negative_tendon() {
    let dir = tempfile::tempdir().unwrap();
    let o = musculo(
        dir.path(),
        &["muscle", "solve-lengths", "--lr", "0.1,0.5", "--r", "0.5,1.0"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
}

#[test]
fn tracking_without_clip_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = musculo(dir.path(), &["env", "run", "--task", "tracking"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--clip"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = musculo(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(musculo(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = musculo(
        dir.path(),
        &["mocap", "impute", "--clip", "absent.csv", "--out", "o"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn env_run_is_byte_identical_across_runs() {
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let o = musculo(
                dir.path(),
                &[
                    "--threads",
                    "2",
                    "env",
                    "run",
                    "--task",
                    "run_forward",
                    "--policy",
                    "random",
                    "--steps",
                    "60",
                    "--seed",
                    "7",
                    "--dump",
                    "out/dump.csv",
                ],
            );
            assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
            assert!(stdout(&o).contains("mean_reward="));
            assert!(stdout(&o).contains("mean_episode_length="));
            let dump = std::fs::read(dir.path().join("out/dump.csv")).unwrap();
            let manifest = manifest_rows(&dir.path().join("out/run_manifest.csv"));
            (dir, dump, manifest)
        })
        .collect();
    assert_eq!(runs[0].1, runs[1].1);
    let stable = |rows: &[(String, String)]| -> Vec<(String, String)> {
        rows.iter()
            .filter(|(k, _)| k != "duration_s" && k != "started_unix")
            .cloned()
            .collect()
    };
    assert_eq!(stable(&runs[0].2), stable(&runs[1].2));
    assert!(runs[0].2.iter().any(|(k, v)| k == "seed" && v == "7"));
}

#[test]
fn neck_task_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = musculo(
        dir.path(),
        &[
            "env",
            "run",
            "--task",
            "neck",
            "--model",
            "builtin:neck",
            "--steps",
            "30",
            "--horizon",
            "10",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("episodes=3"));
}

#[test]
fn dump_outside_out_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("o")).unwrap();
    let o = musculo(
        dir.path(),
        &[
            "env",
            "run",
            "--task",
            "run_forward",
            "--steps",
            "2",
            "--out",
            "o",
            "--dump",
            "../escape.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("escape.csv").exists());
}

#[test]
fn mocap_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let model = assets::load("planar_leg").unwrap();
    let n = model.joints.len();
    let hip = model.joint_index("hip").unwrap();
    let knee = model.joint_index("knee").unwrap();
    let angles: Vec<Vec<f64>> = (0..240)
        .map(|t| {
            let phase = t as f64 / 240.0 * std::f64::consts::TAU;
            let mut q = vec![0.0; n];
            q[1] = 1.0;
            q[hip] = 0.3 * phase.sin();
            q[knee] = -0.4 - 0.3 * phase.cos();
            q
        })
        .collect();
    let mut clip = synthesize_clip(&model, 240.0, &angles).unwrap();
    for t in (10..200).step_by(37) {
        clip.data[t][2].x = f64::NAN;
    }
    let clip = musculo_core::mocap::Clip::new(clip.rate, clip.markers, clip.data).unwrap();
    clip.write(dir.path().join("raw.csv")).unwrap();

    let o = musculo(
        dir.path(),
        &[
            "mocap",
            "select",
            "--clip",
            "raw.csv",
            "--min-markers",
            "7",
            "--out",
            "sel",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = musculo(
        dir.path(),
        &[
            "mocap",
            "select",
            "--clip",
            "raw.csv",
            "--min-markers",
            "6",
            "--out",
            "sel6",
        ],
    );
    assert!(stdout(&o).contains("0..240"));

    let o = musculo(
        dir.path(),
        &["mocap", "impute", "--clip", "raw.csv", "--out", "imp"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let filled = musculo_core::mocap::Clip::read(dir.path().join("imp/imputed.csv")).unwrap();
    assert!(filled.is_complete());

    let eval = |out: &str| {
        let o = musculo(
            dir.path(),
            &[
                "mocap",
                "evaluate",
                "--clip",
                "imp/imputed.csv",
                "--seed",
                "3",
                "--out",
                out,
            ],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read(dir.path().join(out).join("evaluation.csv")).unwrap()
    };
    assert_eq!(eval("e1"), eval("e2"));

    let o = musculo(
        dir.path(),
        &[
            "mocap",
            "ik",
            "--model",
            "builtin:planar_leg",
            "--clip",
            "imp/imputed.csv",
            "--iterations",
            "5",
            "--out",
            "ik",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["trajectory_0.csv", "attachments.csv", "loss.csv", "clamped.csv"] {
        assert!(dir.path().join("ik").join(f).exists(), "{f}");
    }

    let o = musculo(
        dir.path(),
        &[
            "mocap",
            "cyclic",
            "--model",
            "builtin:planar_leg",
            "--traj",
            "ik/trajectory_0.csv",
            "--period",
            "120",
            "--crossfade",
            "10",
            "--repeats",
            "3",
            "--advance",
            "root_x",
            "--out",
            "cyc",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cyc = musculo_core::mocap::Trajectory::read(&model, dir.path().join("cyc/cyclic.csv")).unwrap();
    assert_eq!(cyc.frames(), 360);

    let o = musculo(
        dir.path(),
        &[
            "env",
            "run",
            "--task",
            "tracking",
            "--clip",
            "cyc/cyclic.csv",
            "--policy",
            "constant",
            "--steps",
            "20",
            "--out",
            "trk",
            "--dump",
            "d.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("trk/d.csv").exists());
}

#[test]
fn gait_analyze_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut dump = String::from("time,u_flexor,contact_toe\n");
    for t in 0..250 {
        let k = t % 50;
        let contact = if k < 30 { 1 } else { 0 };
        let u = (k as f64 / 50.0 * std::f64::consts::TAU).sin().max(0.0);
        dump.push_str(&format!("{},{u},{contact}\n", t as f64 / 240.0));
    }
    std::fs::write(dir.path().join("dump.csv"), dump).unwrap();
    let mut emg = String::from("phase,flexor\n");
    for p in 0..=100 {
        let u = (p as f64 / 100.0 * std::f64::consts::TAU).sin().max(0.0);
        emg.push_str(&format!("{p},{u}\n"));
    }
    std::fs::write(dir.path().join("emg.csv"), emg).unwrap();
    let o = musculo(
        dir.path(),
        &[
            "gait",
            "analyze",
            "--traj",
            "dump.csv",
            "--foot",
            "toe",
            "--emg",
            "emg.csv",
            "--out",
            "g/report.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("stance_fraction=0.6"));
    let report = std::fs::read_to_string(dir.path().join("g/report.csv")).unwrap();
    assert!(report.starts_with("muscle,peak_shift_percent,correlation,excess"));
    assert!(report.contains("flexor,"));
    assert!(dir.path().join("g/report_profile.csv").exists());
    assert!(dir.path().join("g/run_manifest.csv").exists());
}

#[test]
fn inertia_and_pendulum_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cube = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n\
                f 0 2 1\nf 0 3 2\nf 4 5 6\nf 4 6 7\nf 0 1 5\nf 0 5 4\nf 1 2 6\nf 1 6 5\n\
                f 2 3 7\nf 2 7 6\nf 3 0 4\nf 3 4 7\n";
    std::fs::write(dir.path().join("cube.mesh"), cube).unwrap();
    let o = musculo(
        dir.path(),
        &["model", "inertia", "cube.mesh", "--density", "1", "--out", "m"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("m/inertia.csv")).unwrap();
    assert!(
        text.lines().nth(1).unwrap().starts_with("1,1,0.5,0.5,0.5,"),
        "{text}"
    );

    let o = musculo(dir.path(), &["sim", "pendulum-check", "--out", "p"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = musculo(
        dir.path(),
        &[
            "sim",
            "step",
            "--model",
            "builtin:planar_leg",
            "--steps",
            "4",
            "--excitation",
            "0.3",
            "--out",
            "s",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("s/trajectory.csv")).unwrap();
    assert_eq!(text.lines().count(), 6);
}
