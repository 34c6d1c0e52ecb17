use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use psotrack::imaging::{textured_image, write_pgm};

fn psotrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psotrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Base image plus a short generated sequence.
fn fixture(dir: &Path, frames: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    let base = dir.join("base.pgm");
    write_pgm(&base, &textured_image(160, 120, 8)).unwrap();
    let seq = dir.join("seq");
    let out = psotrack(&[
        "generate",
        "--base",
        path(&base),
        "--frames",
        frames,
        "--max-step",
        "0.005",
        "--dof",
        "2",
        "--seed",
        "3",
        "--out",
        path(&seq),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    (base, seq)
}

#[test]
fn generate_writes_base_plus_frames_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (_, seq) = fixture(dir.path(), "100");
    let pgms = fs::read_dir(&seq)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert_eq!(pgms, 101);
    let truth = fs::read_to_string(seq.join("truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 102);
    assert!(truth.starts_with("frame,h11,"));
}

#[test]
fn track_writes_errors_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let (base, seq) = fixture(dir.path(), "4");
    let run = |out: &Path| {
        psotrack(&[
            "track",
            "--ref",
            path(&base),
            "--seq",
            path(&seq),
            "--region",
            "50,30,60,60",
            "--measure",
            "mi",
            "--dof",
            "2",
            "--seed",
            "42",
            "--stride",
            "2",
            "--translation-bound",
            "0.02",
            "--out",
            path(out),
        ])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = run(&a);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("tracked 5 frames"));
    assert!(run(&b).status.success());
    for name in ["errors_run.csv", "poses_run.csv"] {
        let first = fs::read(a.join(name)).unwrap();
        assert_eq!(first, fs::read(b.join(name)).unwrap(), "{name}");
    }
    let errors = fs::read_to_string(a.join("errors_run.csv")).unwrap();
    assert!(errors.starts_with("frame,trans_err,rot_err,corner_rmse,fitness,iterations\n"));
    assert_eq!(errors.lines().count(), 6);
}

#[test]
fn missing_region_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (base, seq) = fixture(dir.path(), "1");
    let out = psotrack(&["track", "--ref", path(&base), "--seq", path(&seq)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("ERROR: "), "{}", stderr(&out));
    assert!(stderr(&out).contains("region"));
}

#[test]
fn config_file_errors_name_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# settings\nmeasure = ncc\nbins = 1\n").unwrap();
    let out = psotrack(&["track", "--config", path(&cfg), "--ref", "r.pgm", "--seq", "s", "--region", "1,1,9,9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
    assert!(stderr(&out).contains("bins"));

    fs::write(&cfg, "measure = ncc\nflavour = sweet\n").unwrap();
    let out = psotrack(&["experiment", "--config", path(&cfg), "--seq", "s", "--region", "1,1,9,9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2: unknown key `flavour`"), "{}", stderr(&out));
}

#[test]
fn unknown_flag_is_a_config_error() {
    let out = psotrack(&["track", "--colour", "red"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("ERROR: "));
}

#[test]
fn unreadable_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.pgm");
    let out = psotrack(&["track", "--ref", path(&missing), "--seq", path(dir.path()), "--region", "1,1,9,9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("ERROR: "));
}

#[test]
fn lost_track_exits_zero_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let (base, _) = fixture(dir.path(), "1");
    let seq = dir.path().join("blank");
    fs::create_dir_all(&seq).unwrap();
    write_pgm(&seq.join("frame_0000.pgm"), &psotrack::imaging::GrayImage::filled(160, 120, 0.0)).unwrap();
    let out = psotrack(&[
        "track", "--ref", path(&base), "--seq", path(&seq), "--region", "50,30,60,60", "--dof", "2",
        "--measure", "ncc", "--max-iterations", "10", "--out", path(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("WARN: track lost at frame 0"), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("lost=true"));
}

#[test]
fn surface_and_experiment_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (base, seq) = fixture(dir.path(), "2");
    let out_dir = dir.path().join("surf");
    let out = psotrack(&[
        "surface", "--ref", path(&base), "--seq", path(&seq), "--region", "50,30,60,60", "--measure",
        "ssd,ncc,mi", "--dof", "2", "--cells", "5", "--span", "0.01", "--out", path(&out_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for m in ["ssd", "ncc", "mi"] {
        let text = fs::read_to_string(out_dir.join(format!("surface_{m}.csv"))).unwrap();
        assert!(text.starts_with("row,col,dim1,dim2,fitness\n"));
        assert_eq!(text.lines().count(), 26);
    }

    let exp_dir = dir.path().join("exp");
    let out = psotrack(&[
        "experiment", "--seq", path(&seq), "--region", "50,30,60,60", "--measure", "ncc,mi", "--dof",
        "2", "--seed", "1,2", "--stride", "2", "--max-iterations", "20", "--out", path(&exp_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = fs::read_to_string(exp_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("run,dof,measure,preset,seed,mean_corner_rmse,nrmse,frames_tracked\n"));
    assert_eq!(summary.lines().count(), 5);
    assert!(exp_dir.join("errors_mi_dof2_common_s2.csv").exists());

    let out = psotrack(&["experiment", "--seq", path(&dir.path().join("absent")), "--region", "50,30,60,60"]);
    assert_eq!(out.status.code(), Some(2));
}
