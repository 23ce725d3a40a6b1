//! Random message and clock sequences against the session state machine.

use std::sync::Arc;
use std::time::{Duration, Instant};

use hitl_core::agents::{AgentKind, Feedback};
use hitl_core::env::{ActionLabel, EnvConfig, EnvId};
use hitl_core::protocol::{ClientMessage, ControlVerb, ErrorCode, ServerMessage};
use hitl_core::recorder::{load_trial, verify_trial, EventPayload, LocalDirSink};
use hitl_core::session::{FrameRateConfig, InteractionMode, ProjectConfig, Session, SessionState, TrialStore};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Input {
    Msg(ClientMessage),
    Advance(u64),
}

fn message() -> impl Strategy<Value = ClientMessage> {
    let frame = 0u64..40;
    prop_oneof![
        (prop::bool::ANY, prop::bool::ANY).prop_map(|(p, u)| ClientMessage::Connect {
            project_id: if p { "p1".into() } else { "nope".into() },
            user_id: if u { "u1".into() } else { "u2".into() },
        }),
        (prop::sample::select(ActionLabel::ALL.to_vec()), frame.clone())
            .prop_map(|(action, frame_id)| ClientMessage::Command { action, frame_id }),
        (prop::bool::ANY, frame.clone()).prop_map(|(g, frame_id)| ClientMessage::Feedback {
            value: if g { Feedback::Good } else { Feedback::Bad },
            frame_id,
        }),
        (0u32..100, 0u32..100, frame).prop_map(|(x, y, frame_id)| ClientMessage::Click { x, y, frame_id }),
        prop::sample::select(ControlVerb::ALL.to_vec()).prop_map(|verb| ClientMessage::Control { verb }),
        Just(ClientMessage::Disconnect {}),
        "[a-z ]{0,12}".prop_map(|text| ClientMessage::Info { text }),
    ]
}

fn input() -> impl Strategy<Value = Input> {
    prop_oneof![
        6 => message().prop_map(Input::Msg),
        // Start and Connect dominate real traffic; bias toward them so runs get going
        2 => Just(Input::Msg(ClientMessage::Control { verb: ControlVerb::Start })),
        1 => Just(Input::Msg(ClientMessage::Connect { project_id: "p1".into(), user_id: "u1".into() })),
        3 => (1u64..400).prop_map(Input::Advance),
    ]
}

fn project(kind: Option<AgentKind>, mode: InteractionMode, budget: Option<u64>, pages: bool) -> ProjectConfig {
    let mut p = ProjectConfig::new("p1", EnvConfig::new(EnvId::GridWorld, 9).with_render_size(64, 64).with_horizon(12));
    p.agent_kind = kind;
    p.mode = mode;
    p.budget_max = budget;
    p.idle_timeout = Duration::from_secs(3);
    p.max_session = Duration::from_secs(20);
    p.frame_rate = FrameRateConfig { min: 2.0, max: 50.0, default: 10.0, multiplier: 2.0 };
    if pages {
        p.pages = vec!["consent".into(), "game".into()];
    }
    p
}

fn arb_project() -> impl Strategy<Value = ProjectConfig> {
    (
        prop::option::of(prop::sample::select(vec![AgentKind::Tamer, AgentKind::Coach, AgentKind::Qlearning])),
        prop::bool::ANY,
        prop::option::of(0u64..6),
        prop::bool::ANY,
    )
        .prop_map(|(kind, feedback_mode, budget, pages)| {
            let mode = if feedback_mode && kind.is_some() {
                InteractionMode::AgentControlFeedback
            } else {
                InteractionMode::HumanControl
            };
            project(kind, mode, budget, pages)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn state_machine_invariants(p in arb_project(), inputs in prop::collection::vec(input(), 1..120)) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("data")).unwrap();
        let store = TrialStore {
            spool_dir: dir.path().join("spool"),
            sink: Arc::new(LocalDirSink::new(dir.path().join("data"))),
        };
        let budget = p.budget_max;
        let t0 = Instant::now();
        let mut now = t0;
        let mut s = Session::new(Arc::new(p), "u1", store, t0).unwrap();
        let mut last_frame = 0u64;
        for inp in inputs {
            let before = s.state();
            let seen = s.history().len();
            let mut out = Vec::new();
            match inp {
                Input::Msg(m) => out = s.handle_client_message(m, now),
                Input::Advance(ms) => {
                    now += Duration::from_millis(ms);
                    while let Some(f) = s.tick(now) {
                        out.push(f);
                    }
                    out.extend(s.check_timeout(now));
                }
            }
            for w in s.history()[seen - 1..].windows(2) {
                prop_assert!(w[0].can_transition_to(w[1]), "{} -> {}", w[0], w[1]);
            }
            if before == SessionState::Ended {
                let absorbed = out
                    .iter()
                    .all(|m| matches!(m, ServerMessage::Error { code: ErrorCode::IllegalTransition, .. }));
                prop_assert!(absorbed);
            }
            for m in &out {
                if let ServerMessage::Frame(f) = m {
                    prop_assert!(f.frame_id > last_frame);
                    last_frame = f.frame_id;
                }
                if let ServerMessage::BudgetUpdate { used, max } = m {
                    prop_assert!(used <= max);
                }
            }
            if let Some(max) = budget {
                prop_assert!(s.feedback_updates() <= max);
                prop_assert!(s.budget_used() <= max);
            }
        }
        let live = s.state() != SessionState::Ended;
        s.terminate("server_shutdown", now);
        prop_assert_eq!(s.history().iter().filter(|st| **st == SessionState::Ended).count(), 1);
        let trial = load_trial(s.stored_trial().unwrap().log_path()).unwrap();
        prop_assert!(verify_trial(&trial).is_empty());
        prop_assert!(trial.truncated_at.is_none());
        let ends = trial.events.iter().filter(|e| matches!(e.payload, EventPayload::SessionEnd { .. })).count();
        prop_assert_eq!(ends, 1);
        if live {
            prop_assert_eq!(s.end_reason(), Some("server_shutdown"));
        }
    }
}
