use std::sync::Arc;

use raschcat_client::{Client, ClientError};
use raschcat_core::api::{ApiSession, WhatIf};
use raschcat_core::session::BankSource;
use raschcat_core::{
    Item, ItemBank, LossSpec, PriorSpec, Response, SelectionRule, SessionConfig, SessionState,
    ThetaBounds,
};
use raschcat_service::{serve, AppState};

async fn spawn(data_dir: Option<std::path::PathBuf>) -> (Client, tokio::task::JoinHandle<()>) {
    let bank = ItemBank::dense(-4.0, 4.0, 0.1).unwrap();
    let state = Arc::new(AppState::new(bank, data_dir).await.unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = tokio::spawn(async move {
        serve(listener, state).await.unwrap();
    });
    (Client::new(format!("http://{addr}")), handle)
}

fn config() -> SessionConfig {
    serde_json::from_str("{}").unwrap()
}

/// Deterministic answers from a fixed "examinee": correct iff b < 0.7.
fn answer_for(difficulty: f64) -> Response {
    Response::from(difficulty < 0.7)
}

fn trapezoid(nodes: &[f64], density: &[f64]) -> f64 {
    nodes
        .windows(2)
        .zip(density.windows(2))
        .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
        .sum()
}

fn status(err: ClientError) -> u16 {
    err.status().expect("api error").as_u16()
}

#[tokio::test]
async fn thirty_answers_finish_with_an_estimate() {
    let (client, _server) = spawn(None).await;
    let mut s = client.create_session(&config()).await.unwrap();
    assert_eq!(s.phase, "awaiting-response");
    assert_eq!(s.max_trials, 30);
    while let Some(item) = s.current_item.clone() {
        s = client
            .answer(&s.session_id, &item.id, answer_for(item.difficulty))
            .await
            .unwrap();
    }
    assert!(s.is_finished());
    assert_eq!(s.trials_used, 30);
    let est = s.estimate.expect("finished sessions carry an estimate");
    assert!(est.value > 0.0 && est.value < 1.5, "{est:?}");

    let post = client.posterior(&s.session_id).await.unwrap();
    assert!((trapezoid(&post.nodes, &post.density) - 1.0).abs() < 1e-9);
    assert!((post.mean - est.value).abs() < 1e-12);
    assert!(post.mode.is_some());
}

#[tokio::test]
async fn stale_item_is_a_conflict_and_leaves_state_unchanged() {
    let (client, _server) = spawn(None).await;
    let s = client.create_session(&config()).await.unwrap();
    let first = s.current_item.clone().unwrap();
    let s = client
        .answer(&s.session_id, &first.id, Response::Correct)
        .await
        .unwrap();
    let before = client.session(&s.session_id).await.unwrap();
    let err = client
        .answer(&s.session_id, &first.id, Response::Correct)
        .await
        .unwrap_err();
    assert_eq!(status(err), 409);
    let after = client.session(&s.session_id).await.unwrap();
    assert_eq!(before, after);
}

#[tokio::test]
async fn unknown_ids_and_bad_bodies() {
    let (client, _server) = spawn(None).await;
    assert_eq!(status(client.session("nope").await.unwrap_err()), 404);
    assert_eq!(status(client.posterior("nope").await.unwrap_err()), 404);
    assert_eq!(status(client.what_if("nope").await.unwrap_err()), 404);
    assert_eq!(status(client.delete("nope").await.unwrap_err()), 404);

    let bad = SessionConfig {
        max_trials: 0,
        ..config()
    };
    match client.create_session(&bad).await.unwrap_err() {
        ClientError::Api { status, code, .. } => {
            assert_eq!(status.as_u16(), 400);
            assert_eq!(code, "invalid-config");
        }
        other => panic!("unexpected {other:?}"),
    }
    let by_path = SessionConfig {
        bank: Some(BankSource::Path("/etc/passwd".into())),
        ..config()
    };
    assert_eq!(
        status(client.create_session(&by_path).await.unwrap_err()),
        400
    );

    let http = reqwest::Client::new();
    let resp = http
        .post(format!("{}/sessions", client.base_url()))
        .header("content-type", "application/json")
        .body("{\"rule\": \"no-such-rule\"}")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let body: serde_json::Value = resp.json().await.unwrap();
    assert_eq!(body["code"], "bad-request");
    assert!(body["message"].as_str().unwrap().contains("no-such-rule"));

    let s = client.create_session(&config()).await.unwrap();
    let resp = http
        .post(format!(
            "{}/sessions/{}/responses",
            client.base_url(),
            s.session_id
        ))
        .header("content-type", "application/json")
        .body("{\"item_id\": \"x\", \"response\": 2}")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
}

#[tokio::test]
async fn what_if_matches_a_direct_replay() {
    let (client, _server) = spawn(None).await;
    let cfg = SessionConfig {
        rule: SelectionRule::BayesRisk(LossSpec::Absolute),
        prior: PriorSpec::uniform(ThetaBounds::default()),
        ..config()
    };
    let mut s = client.create_session(&cfg).await.unwrap();
    for _ in 0..6 {
        let item = s.current_item.clone().unwrap();
        s = client
            .answer(&s.session_id, &item.id, answer_for(item.difficulty))
            .await
            .unwrap();
    }
    let remote = client.what_if(&s.session_id).await.unwrap();
    assert_eq!(remote.entries.len(), SelectionRule::ALL.len());
    assert!(remote.entries.iter().all(|e| e.criterion.is_finite()));

    let local_cfg = SessionConfig {
        bank: Some(BankSource::Inline(ItemBank::dense(-4.0, 4.0, 0.1).unwrap())),
        ..cfg
    };
    let replayed = SessionState::replay(s.session_id.clone(), local_cfg, &s.history).unwrap();
    let local = WhatIf::from_state(&replayed).unwrap();
    assert_eq!(remote, local);

    // Read-only: asking again changes nothing.
    let again = client.session(&s.session_id).await.unwrap();
    assert_eq!(again, s);
}

#[tokio::test]
async fn restart_restores_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let (client, server) = spawn(Some(dir.path().to_path_buf())).await;
    let mut s = client.create_session(&config()).await.unwrap();
    for _ in 0..5 {
        let item = s.current_item.clone().unwrap();
        s = client
            .answer(&s.session_id, &item.id, answer_for(item.difficulty))
            .await
            .unwrap();
    }
    let posterior = client.posterior(&s.session_id).await.unwrap();
    let what_if = client.what_if(&s.session_id).await.unwrap();
    server.abort();
    let _ = server.await;

    let (client, _server) = spawn(Some(dir.path().to_path_buf())).await;
    let restored: ApiSession = client.session(&s.session_id).await.unwrap();
    assert_eq!(restored, s);
    assert_eq!(client.posterior(&s.session_id).await.unwrap(), posterior);
    assert_eq!(client.what_if(&s.session_id).await.unwrap(), what_if);

    client.delete(&s.session_id).await.unwrap();
    assert_eq!(
        status(client.session(&s.session_id).await.unwrap_err()),
        404
    );
    assert!(!dir.path().join(format!("{}.json", s.session_id)).exists());
}

#[tokio::test]
async fn concurrent_answers_to_one_item_are_linearized() {
    let (client, _server) = spawn(None).await;
    let s = client.create_session(&config()).await.unwrap();
    let item = s.current_item.clone().unwrap();
    let tasks: Vec<_> = (0..8)
        .map(|_| {
            let client = client.clone();
            let id = s.session_id.clone();
            let item_id = item.id.clone();
            tokio::spawn(async move { client.answer(&id, &item_id, Response::Correct).await })
        })
        .collect();
    let mut ok = 0;
    for t in tasks {
        match t.await.unwrap() {
            Ok(_) => ok += 1,
            Err(e) => assert_eq!(status(e), 409),
        }
    }
    assert_eq!(ok, 1);
    assert_eq!(client.session(&s.session_id).await.unwrap().trials_used, 1);
}

#[tokio::test]
async fn consuming_bank_exhausts_into_finished() {
    let (client, _server) = spawn(None).await;
    let cfg = SessionConfig {
        bank: Some(BankSource::Items(vec![
            Item::new("a", -1.0),
            Item::new("b", 0.0),
            Item::new("c", 1.0),
        ])),
        ..config()
    };
    let mut s = client.create_session(&cfg).await.unwrap();
    while let Some(item) = s.current_item.clone() {
        s = client
            .answer(&s.session_id, &item.id, Response::Incorrect)
            .await
            .unwrap();
    }
    assert!(s.is_finished());
    assert!(s.exhausted);
    assert_eq!(s.trials_used, 3);
    let err = client.what_if(&s.session_id).await.unwrap_err();
    assert_eq!(status(err), 409);
}
