use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use hitl_cli::commands::{replay, train_offline_cli, validate, ReplayOptions};
use hitl_core::agents::{AgentKind, AgentSnapshot};
use hitl_core::env::{ActionLabel, EnvConfig, EnvId};
use hitl_core::protocol::{ClientMessage, ControlVerb, ServerMessage};
use hitl_core::recorder::LocalDirSink;
use hitl_core::session::{reason, InteractionMode, ProjectConfig, Session, TrialStore};

fn repo_configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Drives a short human-control grid session and returns the stored log path.
fn recorded_demo(dir: &Path) -> PathBuf {
    let mut project = ProjectConfig::new("demo", EnvConfig::new(EnvId::GridWorld, 5).with_render_size(64, 64));
    project.mode = InteractionMode::HumanControl;
    let store = TrialStore {
        spool_dir: dir.join("spool"),
        sink: Arc::new(LocalDirSink::new(dir.join("data"))),
    };
    let mut now = Instant::now();
    let mut s = Session::new(Arc::new(project), "u", store, now).unwrap();
    s.handle_client_message(
        ClientMessage::Connect {
            project_id: "demo".into(),
            user_id: "u".into(),
        },
        now,
    );
    s.handle_client_message(ClientMessage::Control { verb: ControlVerb::Start }, now);
    let mut frames = 0;
    while s.counters().episodes < 2 && frames < 200 {
        now += Duration::from_millis(100);
        if let Some(ServerMessage::Frame(f)) = s.tick(now) {
            frames += 1;
            let obs = s.environment().observation().features;
            let action = if obs[0] < 4.0 { ActionLabel::Right } else { ActionLabel::Down };
            s.handle_client_message(ClientMessage::Command { action, frame_id: f.frame_id }, now);
        }
    }
    s.terminate(reason::STOP, now);
    s.stored_trial().unwrap().log_path().to_path_buf()
}

#[test]
fn shipped_configs_validate() {
    for name in ["mc_tamer.toml", "mc_coach.toml", "grid_qlearning.toml", "grid_demo.toml"] {
        let mut out = Vec::new();
        validate(&repo_configs().join(name), &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("ok projects=1"), "{name}");
    }
}

#[test]
fn invalid_config_is_reported_with_its_class() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[[projects]]\nprojectId = \"x\"\n[projects.envConfig]\nenvId = \"pong\"\nseed = 1\n").unwrap();
    let err = validate(&path, &mut Vec::new()).unwrap_err();
    assert_eq!(err.class, "config_invalid");
    assert_eq!(err.exit_code(), 3);
    assert!(!err.message.contains('\n'));
}

#[test]
fn replay_counts_match_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = recorded_demo(dir.path());
    let frames = dir.path().join("png");
    let mut out = Vec::new();
    let opts = ReplayOptions {
        frames_dir: Some(frames.clone()),
        render: (64, 64),
        ..ReplayOptions::default()
    };
    let summary = replay(&log, &opts, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(summary.episodes, 2);
    assert_eq!(summary.steps, summary.episode_steps);
    assert_eq!(summary.images_written, summary.frames);
    assert_eq!(std::fs::read_dir(&frames).unwrap().count() as u64, summary.frames);
    assert_eq!(text.lines().count(), summary.events + 2);
    assert!(text.lines().last().unwrap().starts_with("summary events="));
}

#[test]
fn replay_rejects_bad_speed_and_corrupt_lines() {
    let dir = tempfile::tempdir().unwrap();
    let log = recorded_demo(dir.path());
    let bad_speed = ReplayOptions {
        speed: -1.0,
        ..ReplayOptions::default()
    };
    assert_eq!(replay(&log, &bad_speed, &mut Vec::new()).unwrap_err().class, "usage");

    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{not json";
    let corrupt = dir.path().join("corrupt.log");
    std::fs::write(&corrupt, lines.join("\n") + "\n").unwrap();
    let err = replay(&corrupt, &ReplayOptions::default(), &mut Vec::new()).unwrap_err();
    assert_eq!(err.class, "corrupt_log");
    assert_eq!(err.exit_code(), 4);
    assert!(err.message.contains("line 4"), "{}", err.message);
}

#[test]
fn train_offline_writes_a_loadable_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let log = recorded_demo(dir.path());
    let out = dir.path().join("bc.snapshot");
    assert_eq!(train_offline_cli(&log, AgentKind::Bc, &out).unwrap(), EnvId::GridWorld);
    let snap = AgentSnapshot::parse(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(snap.env, EnvId::GridWorld);
    assert_eq!(snap.agent.kind(), AgentKind::Bc);
}

#[test]
fn train_offline_without_feedback_is_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = recorded_demo(dir.path());
    let err = train_offline_cli(&log, AgentKind::Tamer, &dir.path().join("t.snapshot")).unwrap_err();
    assert_eq!(err.class, "empty_log");
    assert_eq!(err.exit_code(), 4);
    assert!(!dir.path().join("t.snapshot").exists());
}
