use std::fs;
use std::path::Path;

use clap::Parser;
use cofcn_cli::{exit_code, main_with_args, run, Cli, Stage, ValidationFailure, Workdir};

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("project.toml");
    fs::write(&p, format!("[paths]\nslides = \"slides\"\nworkdir = \"work\"\n{body}")).unwrap();
    p
}

fn run_args(args: &[&str]) -> anyhow::Result<()> {
    run(Cli::try_parse_from(args).unwrap())
}

#[test]
fn stage_out_of_order_names_earliest_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let work = Workdir::new(&dir.path().join("work"));
    for s in [Stage::Prepare, Stage::TrainAe] {
        fs::create_dir_all(work.dir(s)).unwrap();
        fs::write(work.path(s, "stage.json"), "{}").unwrap();
    }
    let err = run_args(&["cofcn", "--config", cfg.to_str().unwrap(), "cluster"]).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("run embed first"), "{msg}");
    assert_eq!(exit_code(&err), 1);
}

#[test]
fn nothing_run_yet_points_at_prepare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let err = run_args(&["cofcn", "--config", cfg.to_str().unwrap(), "select", "--k", "8"]).unwrap_err();
    assert!(format!("{err:#}").contains("run prepare first"));
}

#[test]
fn invalid_shot_count_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nshots = [3]\n");
    let err = run_args(&["cofcn", "--config", cfg.to_str().unwrap(), "validate"]).unwrap_err();
    let v = err.downcast_ref::<ValidationFailure>().expect("validation failure");
    assert!(v.0.iter().any(|m| m.contains("k=3")), "{:?}", v.0);
    assert_eq!(exit_code(&err), 2);
    assert_eq!(main_with_args(["cofcn", "--config", cfg.to_str().unwrap(), "validate"]), 2);
}

#[test]
fn overlapping_centers_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[centers]\ntrain = [0, 1, 3]\ntest = [3, 4]\n");
    assert_eq!(main_with_args(["cofcn", "--config", cfg.to_str().unwrap(), "validate"]), 2);
}

#[test]
fn unknown_key_and_bad_override_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nshotz = [8]\n");
    assert_eq!(main_with_args(["cofcn", "--config", cfg.to_str().unwrap(), "validate"]), 2);
    assert_eq!(main_with_args(["cofcn", "--set", "selection.components=0", "validate"]), 2);
}

#[test]
fn default_and_shipped_configs_validate() {
    assert_eq!(main_with_args(["cofcn", "validate"]), 0);
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic_e2e.toml");
    assert_eq!(main_with_args(["cofcn", "--config", shipped.to_str().unwrap(), "validate"]), 0);
}

#[test]
fn standalone_prepare_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[synthetic]\nwidth = 512\nheight = 512\nlesion_count = 2\nlesion_radius = [40.0, 60.0]\n");
    let c = cfg.to_str().unwrap();
    assert_eq!(main_with_args(["cofcn", "--config", c, "synth"]), 0);
    let out = dir.path().join("m.jsonl");
    let o = out.to_str().unwrap();
    let args = ["cofcn", "--config", c, "prepare", "--out", o, "--drop-fraction", "0", "--seed", "5", "--labeling", "eval"];
    assert_eq!(main_with_args(args), 0);
    let first = fs::read(&out).unwrap();
    assert!(!first.is_empty());
    assert_eq!(main_with_args(args), 0);
    assert_eq!(fs::read(&out).unwrap(), first);
    // Standalone mode leaves the work directory untouched.
    assert!(!dir.path().join("work").join("prepare-v1").exists());
}

#[test]
fn trainer_flags_reach_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    // Out-of-range values surface as validation failures, proving the flags are folded in.
    let c = cfg.to_str().unwrap();
    assert_eq!(main_with_args(["cofcn", "--config", c, "train-cofcn", "--k", "8", "--wl", "0"]), 2);
    assert_eq!(main_with_args(["cofcn", "--config", c, "train-unet", "--lr=-1"]), 2);
    assert_eq!(main_with_args(["cofcn", "--config", c, "train-cofcn", "--k", "3"]), 2);
    let err = run_args(&["cofcn", "--config", c, "train-cofcn", "--k", "8", "--wl", "4.0", "--w", "0.2", "--lr", "0.001", "--patience", "3"])
        .unwrap_err();
    assert!(format!("{err:#}").contains("run prepare first"), "{err:#}");
}
