use std::hint::black_box;
use std::sync::Arc;
use std::time::{Duration, Instant};

use criterion::{criterion_group, criterion_main, Criterion};
use hitl_core::agents::{AgentKind, Feedback, TileCoder};
use hitl_core::env::{EnvConfig, EnvId, Environment};
use hitl_core::protocol::{decode_client, encode_png_base64, encode_server, ClientMessage, ControlVerb, ServerMessage, UiConfig};
use hitl_core::recorder::LocalDirSink;
use hitl_core::session::{InteractionMode, ProjectConfig, Session, TrialStore};

fn tile_features(c: &mut Criterion) {
    let coder = TileCoder::for_env(EnvId::MountainCar);
    c.bench_function("tile_features/mountain_car", |b| b.iter(|| coder.tile_features(black_box(&[-0.5, 0.01])).unwrap()));
}

fn render(c: &mut Criterion) {
    let env = Environment::new(EnvConfig::new(EnvId::MountainCar, 1)).unwrap();
    c.bench_function("render/mountain_car_320x240", |b| b.iter(|| black_box(env.render())));
    let frame = env.render();
    c.bench_function("render/png_base64_320x240", |b| b.iter(|| encode_png_base64(black_box(&frame))));
}

fn protocol(c: &mut Criterion) {
    let text = r#"{"type":"feedback","value":1,"frameId":1234}"#;
    c.bench_function("protocol/decode_feedback", |b| b.iter(|| decode_client(black_box(text)).unwrap()));
    let msg = ServerMessage::UiConfig(UiConfig {
        v: 1,
        buttons: vec!["good".into(), "bad".into()],
        show_budget: true,
        budget_max: 50,
        frame_rate_hz: 10.0,
        mode: "agent_control_feedback".into(),
        page: "game".into(),
    });
    c.bench_function("protocol/encode_ui_config", |b| b.iter(|| encode_server(black_box(&msg))));
}

fn session_tick(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let mut project = ProjectConfig::new("bench", EnvConfig::new(EnvId::MountainCar, 3).with_render_size(64, 48));
    project.agent_kind = Some(AgentKind::Tamer);
    project.mode = InteractionMode::AgentControlFeedback;
    let store = TrialStore {
        spool_dir: dir.path().join("spool"),
        sink: Arc::new(LocalDirSink::new(dir.path().join("data"))),
    };
    let mut now = Instant::now();
    let mut session = Session::new(Arc::new(project), "bench-user", store, now).unwrap();
    session.handle_client_message(
        ClientMessage::Connect {
            project_id: "bench".into(),
            user_id: "bench-user".into(),
        },
        now,
    );
    session.handle_client_message(ClientMessage::Control { verb: ControlVerb::Start }, now);
    c.bench_function("session/tick_and_feedback_64x48", |b| {
        b.iter(|| {
            now += Duration::from_millis(100);
            if let Some(ServerMessage::Frame(f)) = session.tick(now) {
                black_box(session.handle_client_message(
                    ClientMessage::Feedback {
                        value: Feedback::Good,
                        frame_id: f.frame_id,
                    },
                    now,
                ));
            }
        })
    });
}

criterion_group!(benches, tile_features, render, protocol, session_tick);
criterion_main!(benches);
