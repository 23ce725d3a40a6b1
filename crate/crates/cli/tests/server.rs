use std::time::Duration;

use futures::StreamExt;
use hitl_cli::server::Server;
use hitl_cli::sim_client::WireClient;
use hitl_core::config::ProjectCatalog;
use hitl_core::env::{EnvConfig, EnvId};
use hitl_core::protocol::{decode_server, ClientMessage, ControlVerb, ErrorCode, ServerMessage};
use hitl_core::recorder::{load_trial, EventPayload};
use hitl_core::session::ProjectConfig;
use tokio_tungstenite::tungstenite::Message;

async fn start(dir: &std::path::Path) -> Server {
    let project = ProjectConfig::new("p", EnvConfig::new(EnvId::GridWorld, 1).with_render_size(64, 64));
    Server::start(ProjectCatalog::from_projects([project]), "127.0.0.1:0", dir.to_path_buf())
        .await
        .unwrap()
}

/// First text message, then whether the server closed the socket.
async fn first_reply(url: String) -> (ServerMessage, bool) {
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let first = loop {
        match ws.next().await.unwrap().unwrap() {
            Message::Text(t) => break decode_server(t.as_str()).unwrap(),
            _ => continue,
        }
    };
    let closed = tokio::time::timeout(Duration::from_secs(2), async {
        loop {
            match ws.next().await {
                None | Some(Ok(Message::Close(_))) | Some(Err(_)) => return true,
                Some(Ok(_)) => {}
            }
        }
    })
    .await
    .unwrap_or(false);
    (first, closed)
}

#[tokio::test]
async fn missing_query_parameters_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path()).await;
    let (reply, closed) = first_reply(format!("{}?projectId=p", server.session_url())).await;
    assert!(matches!(reply, ServerMessage::Error { code: ErrorCode::InvalidValue, .. }), "{reply:?}");
    assert!(closed);
    assert!(server.registry().is_empty());
    server.shutdown().await;
}

#[tokio::test]
async fn unknown_project_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path()).await;
    let (reply, closed) = first_reply(format!("{}?projectId=nope&userId=u", server.session_url())).await;
    assert!(matches!(reply, ServerMessage::Error { code: ErrorCode::UnknownProject, .. }), "{reply:?}");
    assert!(closed);
    server.shutdown().await;
}

#[tokio::test]
async fn shutdown_finalizes_open_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path()).await;
    let mut clients = Vec::new();
    for i in 0..3 {
        let user = format!("u{i}");
        let mut c = WireClient::connect(&server.session_url(), "p", &user, false).await.unwrap();
        c.send(&ClientMessage::Connect {
            project_id: "p".into(),
            user_id: user,
        })
        .await
        .unwrap();
        c.send(&ClientMessage::Control { verb: ControlVerb::Start }).await.unwrap();
        assert!(matches!(c.recv().await.unwrap(), Some(Ok(ServerMessage::UiConfig(_)))));
        clients.push(c);
    }
    while server.registry().len() < 3 {
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    let data = server.data_dir().to_path_buf();
    assert_eq!(server.shutdown().await, 3);
    for mut c in clients {
        let end = loop {
            match c.recv().await.unwrap() {
                Some(Ok(ServerMessage::SessionEnd { reason, .. })) => break reason,
                Some(_) => {}
                None => panic!("closed without sessionEnd"),
            }
        };
        assert_eq!(end, "server_shutdown");
    }
    let logs: Vec<_> = std::fs::read_dir(data.join("p"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "log"))
        .collect();
    assert_eq!(logs.len(), 3);
    for log in logs {
        let trial = load_trial(&log).unwrap();
        assert!(matches!(&trial.events.last().unwrap().payload, EventPayload::SessionEnd { reason } if reason == "server_shutdown"));
    }
}
