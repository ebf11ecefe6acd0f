use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::Parser;
use mtrace_cli::{execute, Cli, Stage};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn mtrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtrace"))
        .args(args)
        .output()
        .expect("spawn mtrace")
}

fn cli(config: &Path, out: &Path, rest: &[&str]) -> Cli {
    let mut args = vec![
        "mtrace".to_owned(),
        "--config".to_owned(),
        config.display().to_string(),
        "--output-dir".to_owned(),
        out.display().to_string(),
    ];
    args.extend(rest.iter().map(|s| s.to_string()));
    Cli::try_parse_from(args).unwrap()
}

/// Writes a config next to the bundled corpus with the given extra engine table.
fn write_config(dir: &Path, trajectory_engine: &str, engines: &str) -> PathBuf {
    let corpus = fixtures().join("corpus.jsonl");
    let text = format!(
        "seed = 7\n\n[corpus]\npaths = [{corpus:?}]\n\n{engines}\n[trajectory]\nengine = \"{trajectory_engine}\"\n\n[scorer]\nkind = \"offline\"\n"
    );
    let path = dir.join("mtrace.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn select_on_scored_fixture_writes_verdicts() {
    let out = tempfile::tempdir().unwrap();
    let config = fixtures().join("config.toml");
    for stage in ["ingest", "trajectory", "score"] {
        execute(&cli(&config, out.path(), &["run", "--stage", stage])).unwrap();
    }
    assert!(!out.path().join("verdicts.jsonl").exists());
    let o = mtrace(&[
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        out.path().to_str().unwrap(),
        "run",
        "--stage",
        "select",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let verdicts = std::fs::read_to_string(out.path().join("verdicts.jsonl")).unwrap();
    assert_eq!(verdicts.lines().count(), 20);
}

#[test]
fn rerun_of_completed_stages_sends_no_requests() {
    let out = tempfile::tempdir().unwrap();
    let config = fixtures().join("config.toml");
    let first = execute(&cli(&config, out.path(), &["run"])).unwrap();
    let traj = first.iter().find(|r| r.stage == Stage::Trajectory).unwrap();
    assert_eq!(traj.engine_requests, 80);
    let second = execute(&cli(&config, out.path(), &["run"])).unwrap();
    for r in &second {
        assert_eq!(r.engine_requests, 0, "{r}");
        assert_eq!(r.failures, 0, "{r}");
    }
    let traj = second.iter().find(|r| r.stage == Stage::Trajectory).unwrap();
    assert_eq!(traj.reused, 20);
    for stage in ["eval", "inject", "analyze-traces"] {
        let a = execute(&cli(&config, out.path(), &[stage])).unwrap();
        assert!(a[0].engine_requests > 0);
        let b = execute(&cli(&config, out.path(), &[stage])).unwrap();
        assert_eq!(b[0].engine_requests, 0, "{stage}");
        assert!(b[0].up_to_date, "{stage}");
    }
}

#[test]
fn rerun_adds_nothing_to_the_replay_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("replay");
    let engines = format!("[engines.rec]\nendpoint = \"fixture:\"\nmodel_name = \"rec\"\nreplay_dir = {:?}\n", log);
    let config = write_config(dir.path(), "rec", &engines);
    let out = dir.path().join("out");
    execute(&cli(&config, &out, &["ingest"])).unwrap();
    let first = execute(&cli(&config, &out, &["trajectory"])).unwrap();
    assert_eq!(first[0].engine_requests, 80);
    let recorded = std::fs::read_dir(&log).unwrap().count();
    assert!(recorded > 0);
    let second = execute(&cli(&config, &out, &["trajectory"])).unwrap();
    assert_eq!(second[0].engine_requests, 0);
    assert_eq!(std::fs::read_dir(&log).unwrap().count(), recorded);
}

#[test]
fn changed_engine_settings_invalidate_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), "fx", "[engines.fx]\nendpoint = \"fixture:\"\nmodel_name = \"fx\"\n");
    execute(&cli(&config, &out, &["ingest"])).unwrap();
    execute(&cli(&config, &out, &["trajectory"])).unwrap();
    let config = write_config(
        dir.path(),
        "fx",
        "[engines.fx]\nendpoint = \"fixture:\"\nmodel_name = \"fx\"\nmax_tokens = 1024\n",
    );
    let again = execute(&cli(&config, &out, &["trajectory"])).unwrap();
    assert_eq!(again[0].reused, 0);
    assert_eq!(again[0].engine_requests, 80);
}

#[test]
fn unknown_stage_prints_usage() {
    let o = mtrace(&["run", "--stage", "polish"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("invalid value 'polish'"), "{err}");
    assert!(err.contains("Usage:"), "{err}");
    assert!(err.contains("build-traces"), "{err}");
}

#[test]
fn unknown_command_prints_usage() {
    let o = mtrace(&["polish"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage:"));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "missing", "[engines.fx]\nendpoint = \"fixture:\"\nmodel_name = \"fx\"\n");
    let o = mtrace(&["--config", config.to_str().unwrap(), "validate"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("trajectory.engine"), "{err}");

    std::fs::write(&config, "seed = 1\nbogus = true\n").unwrap();
    let o = mtrace(&["--config", config.to_str().unwrap(), "ingest"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn valid_config_validates() {
    let o = mtrace(&["--config", fixtures().join("config.toml").to_str().unwrap(), "validate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn partial_failure_exits_nonzero_and_keeps_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // nothing listens on port 9 of the loopback interface
    let engines = "[engines.down]\nendpoint = \"http://127.0.0.1:9\"\nmodel_name = \"down\"\nretry = { attempts = 1, backoff_ms = 0 }\n";
    let config = write_config(dir.path(), "down", engines);
    let args = |stage: &str| {
        vec![
            "--config".to_owned(),
            config.display().to_string(),
            "--output-dir".to_owned(),
            out.display().to_string(),
            "--limit".to_owned(),
            "3".to_owned(),
            stage.to_owned(),
        ]
    };
    let run = |stage: &str| {
        Command::new(env!("CARGO_BIN_EXE_mtrace"))
            .args(args(stage))
            .output()
            .unwrap()
    };
    assert!(run("ingest").status.success());
    let o = run("trajectory");
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("documents.jsonl").exists());
    let traj = std::fs::read_to_string(out.join("trajectories.jsonl")).unwrap();
    assert_eq!(traj.lines().count(), 3);
}

#[test]
fn limit_caps_ingested_documents() {
    let out = tempfile::tempdir().unwrap();
    let config = fixtures().join("config.toml");
    let r = execute(&cli(&config, out.path(), &["--limit", "5", "ingest"])).unwrap();
    assert_eq!(r[0].items, 5);
}

#[test]
fn seed_override_changes_traces_but_not_trajectories() {
    let config = fixtures().join("config.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    execute(&cli(&config, a.path(), &["run"])).unwrap();
    execute(&cli(&config, b.path(), &["--seed", "99", "run"])).unwrap();
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(a.path(), "trajectories.jsonl"), read(b.path(), "trajectories.jsonl"));
    assert_ne!(read(a.path(), "traces.jsonl"), read(b.path(), "traces.jsonl"));
}

#[test]
fn foreign_traces_are_not_regenerated_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let engines = "[engines.fx]\nendpoint = \"fixture:\"\nmodel_name = \"fx\"\n\n[engines.other]\nendpoint = \"fixture:\"\nmodel_name = \"other\"\n";
    let config = write_config(dir.path(), "fx", engines);
    let mut text = std::fs::read_to_string(&config).unwrap();
    text.push_str("\n[traces]\nkind = \"foreign\"\nforeign_engine = \"other\"\n");
    std::fs::write(&config, text).unwrap();
    let first = execute(&cli(&config, &out, &["run"])).unwrap();
    let build = first.iter().find(|r| r.stage == Stage::BuildTraces).unwrap();
    assert!(build.items > 0);
    assert_eq!(build.engine_requests as usize, build.items);
    let traces: Vec<serde_json::Value> = mtrace_core::jsonl::read(&out.join("traces.jsonl")).unwrap();
    assert!(traces.iter().all(|t| t["kind"] == "foreign" && t["provenance"] == "other"));
    let second = execute(&cli(&config, &out, &["run"])).unwrap();
    assert!(second.iter().all(|r| r.engine_requests == 0));
}
