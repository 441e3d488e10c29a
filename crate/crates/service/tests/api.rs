use std::sync::Arc;

use avn_core::evaluation::{cohens_kappa, macro_f1};
use avn_core::phantom::{generate_phantom, HeadSpec, PhantomSpec};
use avn_core::pipeline::{diagnose_radiograph, radiograph_payload, Models};
use avn_core::{ImageF32, Side, Stage, View};
use avn_service::cases::{Case, CaseLibrary};
use avn_service::sessions::SessionStore;
use avn_service::{leak, router, AppState, ServiceConfig};
use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const BOUNDARY: &str = "avn-test-boundary";

fn phantom(stage: Stage, seed: u64) -> ImageF32 {
    let heads = vec![HeadSpec::new(stage, Vec::new(), Side::Left), HeadSpec::absence(Side::Right)];
    generate_phantom(&PhantomSpec::new(heads, View::AP, seed).with_size(256)).unwrap().image
}

fn library() -> CaseLibrary {
    let stages = [Stage::Absence, Stage::II, Stage::III, Stage::IV, Stage::II, Stage::Absence];
    CaseLibrary::new(
        stages
            .iter()
            .enumerate()
            .map(|(i, &s)| Case { case_id: format!("case{i}"), image: phantom(s, i as u64), truth: s })
            .collect(),
    )
}

/// Random weights with a permissive score threshold so some boxes survive.
fn models() -> Models {
    let mut m = Models::untrained(11, 32, 0.0625).unwrap();
    m.detector.inference.score_thresh = 0.0;
    m.config.cam = true;
    m
}

struct Fixture {
    app: Router,
    _dir: tempfile::TempDir,
}

fn fixture(models: Option<Models>) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let config =
        ServiceConfig { session_dir: dir.path().to_path_buf(), bootstrap_resamples: 500, ..ServiceConfig::default() };
    let sessions = SessionStore::open(dir.path()).unwrap();
    let state = AppState::new(models, library(), sessions, config);
    Fixture { app: router(Arc::new(state)), _dir: dir }
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req =
        Request::post(uri).header(header::CONTENT_TYPE, "application/json").body(Body::from(body.to_string())).unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn multipart(parts: &[(&str, Option<&str>, Option<&str>, &[u8])]) -> Request<Body> {
    let mut body = Vec::new();
    for (name, file, ct, data) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"").as_bytes());
        if let Some(f) = file {
            body.extend_from_slice(format!("; filename=\"{f}\"").as_bytes());
        }
        body.extend_from_slice(b"\r\n");
        if let Some(c) = ct {
            body.extend_from_slice(format!("Content-Type: {c}\r\n").as_bytes());
        }
        body.extend_from_slice(b"\r\n");
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    Request::post("/api/v1/diagnose")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

#[tokio::test]
async fn diagnose_rejects_bad_uploads() {
    let f = fixture(Some(models()));
    let (s, b) = send(&f.app, multipart(&[("image", Some("notes.txt"), Some("text/plain"), b"hello")])).await;
    assert_eq!(s, StatusCode::UNSUPPORTED_MEDIA_TYPE, "{}", String::from_utf8_lossy(&b));
    let (s, _) =
        send(&f.app, multipart(&[("image", Some("x.png"), Some("image/png"), b"\x89PNG\r\n\x1a\nbroken")])).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = send(&f.app, multipart(&[("subject_id", None, None, b"p1")])).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let req =
        Request::post("/api/v1/diagnose").header(header::CONTENT_TYPE, "text/plain").body(Body::from("x")).unwrap();
    assert_eq!(send(&f.app, req).await.0, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let tiny = ImageF32::filled(8, 8, 0.5).encode_png().unwrap();
    let (s, b) = send(&f.app, multipart(&[("image", Some("t.png"), Some("image/png"), &tiny)])).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{}", String::from_utf8_lossy(&b));
}

#[tokio::test]
async fn diagnose_without_models_is_unavailable() {
    let f = fixture(None);
    let png = phantom(Stage::II, 1).encode_png().unwrap();
    let (s, b) = send(&f.app, multipart(&[("image", Some("a.png"), Some("image/png"), &png)])).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["error"], "models_not_loaded");
    let (s, v) = get_json(&f.app, "/api/v1/health").await;
    assert_eq!((s, v["models_loaded"].as_bool()), (StatusCode::OK, Some(false)));
}

#[tokio::test]
async fn blank_image_gets_advisory() {
    let mut m = models();
    m.detector.inference.score_thresh = 1.0;
    let f = fixture(Some(m));
    let png = ImageF32::filled(256, 256, 0.0).encode_png().unwrap();
    let (s, b) = send(&f.app, multipart(&[("image", Some("blank.png"), Some("image/png"), &png)])).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["results"][0]["image_id"], "blank");
    assert_eq!(v["results"][0]["heads"].as_array().unwrap().len(), 0);
    assert_eq!(v["results"][0]["advisory"], "no FH detected");
}

#[tokio::test]
async fn diagnose_matches_direct_pipeline_bytes() {
    let m = models();
    let f = fixture(Some(m.clone()));
    for seed in 0..3 {
        let img = phantom(Stage::III, 40 + seed);
        let png = img.encode_png().unwrap();
        let id = format!("img{seed}");
        let (s, body) = send(
            &f.app,
            multipart(&[
                ("image", Some("upload.png"), Some("image/png"), &png),
                ("image_id", None, None, id.as_bytes()),
            ]),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
        let decoded = ImageF32::decode(&png).unwrap();
        let direct = radiograph_payload(&diagnose_radiograph(&decoded, &id, &m).unwrap()).unwrap();
        assert!(!direct.heads.is_empty() && direct.heads.iter().all(|h| h.cam.is_some()));
        let expected =
            serde_json::to_vec(&avn_core::pipeline::DiagnosePayload { results: vec![direct], subject: None }).unwrap();
        assert_eq!(body, expected);
    }
}

#[tokio::test]
async fn subject_aggregate_over_uploads() {
    let f = fixture(Some(models()));
    let a = phantom(Stage::II, 3).encode_png().unwrap();
    let b = phantom(Stage::IV, 4).encode_png().unwrap();
    let (s, body) = send(
        &f.app,
        multipart(&[
            ("image", Some("ap.png"), Some("image/png"), &a),
            ("image", Some("fl.png"), Some("image/png"), &b),
            ("subject_id", None, None, b"p7"),
        ]),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["results"].as_array().unwrap().len(), 2);
    let stages: Vec<Stage> = v["results"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|r| {
            r["heads"].as_array().unwrap().iter().map(|h| serde_json::from_value(h["stage"].clone()).unwrap())
        })
        .collect();
    if let Some(max) = stages.iter().max() {
        assert_eq!(v["subject"]["subject_id"], "p7");
        assert_eq!(serde_json::from_value::<Stage>(v["subject"]["final_stage"].clone()).unwrap(), *max);
    } else {
        assert!(v["subject"].is_null());
    }
}

async fn read_all(app: &Router, sid: &str, stages: &[Stage]) -> Vec<String> {
    let mut order = Vec::new();
    for st in stages {
        let (s, next) = get_json(app, &format!("/api/v1/sessions/{sid}/next")).await;
        assert_eq!(s, StatusCode::OK);
        let case = next["case_id"].as_str().unwrap().to_string();
        let (s, acc) = post_json(
            app,
            &format!("/api/v1/sessions/{sid}/readings"),
            json!({"case_id": case, "stage": st, "elapsed": 1.5}),
        )
        .await;
        assert_eq!(s, StatusCode::CREATED, "{acc}");
        order.push(case);
    }
    order
}

#[tokio::test]
async fn assisted_sessions_carry_ai_and_unassisted_do_not() {
    let f = fixture(Some(models()));
    let (s, a) = post_json(&f.app, "/api/v1/sessions", json!({"reader_id": "r1", "mode": "assisted"})).await;
    assert_eq!(s, StatusCode::CREATED);
    let (_, u) = post_json(&f.app, "/api/v1/sessions", json!({"reader_id": "r2", "mode": "unassisted"})).await;
    let (_, na) = get_json(&f.app, &format!("/api/v1/sessions/{}/next", a["session_id"].as_str().unwrap())).await;
    let (_, nu) = get_json(&f.app, &format!("/api/v1/sessions/{}/next", u["session_id"].as_str().unwrap())).await;
    assert!(na["ai"].is_object());
    assert!(na["ai"]["heads"].is_array());
    assert!(nu.get("ai").is_none());
    assert_eq!(na["case_id"], nu["case_id"]);
    let png =
        base64::Engine::decode(&base64::engine::general_purpose::STANDARD, nu["image"].as_str().unwrap()).unwrap();
    assert_eq!(ImageF32::decode(&png).unwrap().width(), 256);
}

#[tokio::test]
async fn session_errors() {
    let f = fixture(None);
    let (s, _) = post_json(&f.app, "/api/v1/sessions", json!({"reader_id": "r", "mode": "assisted"})).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    let (s, _) =
        post_json(&f.app, "/api/v1/sessions", json!({"reader_id": "r", "mode": "unassisted", "cases": ["nope"]})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = get_json(&f.app, "/api/v1/sessions/missing/next").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (_, info) = post_json(
        &f.app,
        "/api/v1/sessions",
        json!({"reader_id": "r", "mode": "unassisted", "cases": ["case1", "case2"]}),
    )
    .await;
    let sid = info["session_id"].as_str().unwrap();
    let url = format!("/api/v1/sessions/{sid}/readings");
    // Not yet served.
    let (s, _) = post_json(&f.app, &url, json!({"case_id": "case1", "stage": "II", "elapsed": 1.0})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    get_json(&f.app, &format!("/api/v1/sessions/{sid}/next")).await;
    let (s, _) = post_json(&f.app, &url, json!({"case_id": "case1", "stage": "II", "elapsed": 0.0})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = post_json(&f.app, &url, json!({"case_id": "case1", "stage": "V", "elapsed": 1.0})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = post_json(&f.app, &url, json!({"case_id": "case1", "stage": "II", "elapsed": 1.0})).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, _) = post_json(&f.app, &url, json!({"case_id": "case1", "stage": "III", "elapsed": 1.0})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, rep) = get_json(&f.app, &format!("/api/v1/sessions/{sid}/report")).await;
    assert_eq!((rep["complete"].as_bool(), rep["n_read"].as_u64()), (Some(false), Some(1)));
}

#[tokio::test]
async fn scripted_readers_match_direct_statistics() {
    let f = fixture(None);
    let lib = library();
    let truth: Vec<Stage> = lib.ids().iter().map(|c| lib.get(c).unwrap().truth).collect();
    let script = [Stage::Absence, Stage::II, Stage::II, Stage::IV, Stage::III, Stage::Absence];
    let mut ids = Vec::new();
    for reader in ["r1", "r2"] {
        let (_, info) = post_json(&f.app, "/api/v1/sessions", json!({"reader_id": reader, "mode": "unassisted"})).await;
        let sid = info["session_id"].as_str().unwrap().to_string();
        let order = read_all(&f.app, &sid, &script).await;
        assert_eq!(order, lib.ids());
        let (_, done) = get_json(&f.app, &format!("/api/v1/sessions/{sid}/next")).await;
        assert_eq!(done["done"], true);
        ids.push(sid);
    }
    let (s, body) =
        send(&f.app, Request::get(format!("/api/v1/sessions/{}/report", ids[0])).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let rep: Value = serde_json::from_slice(&body).unwrap();
    let p: Vec<usize> = script.iter().map(|s| s.index()).collect();
    let t: Vec<usize> = truth.iter().map(|s| s.index()).collect();
    assert_eq!(rep["f1"].as_f64(), macro_f1(&p, &t, Stage::COUNT));
    assert_eq!(rep["kappa_vs_truth"]["kappa"].as_f64().unwrap(), cohens_kappa(&script, &truth).unwrap().kappa);
    assert_eq!(rep["accuracy"].as_f64().unwrap(), 4.0 / 6.0);
    assert_eq!(rep["complete"], true);
    let ci = &rep["f1_ci"];
    assert!(
        ci["lo"].as_f64().unwrap() <= rep["f1"].as_f64().unwrap()
            && rep["f1"].as_f64().unwrap() <= ci["hi"].as_f64().unwrap()
    );

    // Stable bytes across repeated requests.
    let (_, again) =
        send(&f.app, Request::get(format!("/api/v1/sessions/{}/report", ids[0])).body(Body::empty()).unwrap()).await;
    assert_eq!(body, again);

    let (_, study) = get_json(&f.app, "/api/v1/report").await;
    let pair = study["kappa"]
        .as_array()
        .unwrap()
        .iter()
        .find(|k| k["rater_a"] == ids[0].as_str() && k["rater_b"] == ids[1].as_str())
        .unwrap();
    assert_eq!(pair["kappa"]["kappa"].as_f64(), Some(1.0));
    assert!(study["model"].is_null());
    assert_eq!(study["by_mode"][0]["n_sessions"], 2);
}

#[tokio::test]
async fn reports_survive_restart_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let make = || {
        let config = ServiceConfig {
            session_dir: dir.path().to_path_buf(),
            bootstrap_resamples: 300,
            ..ServiceConfig::default()
        };
        let sessions = SessionStore::open(dir.path()).unwrap();
        router(Arc::new(AppState::new(None, library(), sessions, config)))
    };
    let app = make();
    let (_, info) = post_json(&app, "/api/v1/sessions", json!({"reader_id": "r", "mode": "unassisted"})).await;
    read_all(&app, info["session_id"].as_str().unwrap(), &[Stage::II; 6]).await;
    let (_, before) = send(&app, Request::get("/api/v1/report").body(Body::empty()).unwrap()).await;
    let app2 = make();
    let (_, after) = send(&app2, Request::get("/api/v1/report").body(Body::empty()).unwrap()).await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn no_endpoint_leaks_ground_truth() {
    let f = fixture(Some(models()));
    let mut bodies: Vec<Value> = Vec::new();
    bodies.push(get_json(&f.app, "/api/v1/health").await.1);
    let png = phantom(Stage::IV, 9).encode_png().unwrap();
    let (_, b) =
        send(&f.app, multipart(&[("image", Some("a.png"), Some("image/png"), &png), ("subject_id", None, None, b"s")]))
            .await;
    bodies.push(serde_json::from_slice(&b).unwrap());
    for mode in ["assisted", "unassisted"] {
        let (_, info) =
            post_json(&f.app, "/api/v1/sessions", json!({"reader_id": "r", "mode": mode, "cases": ["case0", "case3"]}))
                .await;
        let sid = info["session_id"].as_str().unwrap().to_string();
        bodies.push(info);
        for _ in 0..2 {
            let (_, next) = get_json(&f.app, &format!("/api/v1/sessions/{sid}/next")).await;
            let case = next["case_id"].clone();
            bodies.push(next);
            bodies.push(
                post_json(
                    &f.app,
                    &format!("/api/v1/sessions/{sid}/readings"),
                    json!({"case_id": case, "stage": "III", "elapsed": 2.0}),
                )
                .await
                .1,
            );
        }
        bodies.push(get_json(&f.app, &format!("/api/v1/sessions/{sid}")).await.1);
        bodies.push(get_json(&f.app, &format!("/api/v1/sessions/{sid}/next")).await.1);
        bodies.push(get_json(&f.app, &format!("/api/v1/sessions/{sid}/report")).await.1);
    }
    bodies.push(get_json(&f.app, "/api/v1/report").await.1);
    for b in &bodies {
        assert!(leak::scan(b).is_empty(), "{b}");
    }
}

#[tokio::test]
async fn token_guards_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        session_dir: dir.path().to_path_buf(),
        api_token: Some("s3cret".into()),
        ..ServiceConfig::default()
    };
    let app = router(Arc::new(AppState::new(None, library(), SessionStore::open(dir.path()).unwrap(), config)));
    assert_eq!(
        send(&app, Request::get("/api/v1/health").body(Body::empty()).unwrap()).await.0,
        StatusCode::UNAUTHORIZED
    );
    let ok = Request::get("/api/v1/health").header(header::AUTHORIZATION, "Bearer s3cret").body(Body::empty()).unwrap();
    assert_eq!(send(&app, ok).await.0, StatusCode::OK);
}

#[tokio::test]
async fn openapi_lists_every_route() {
    let f = fixture(None);
    let (s, b) = send(&f.app, Request::get("/api/v1/openapi.yaml").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(b).unwrap();
    for path in [
        "/health:",
        "/diagnose:",
        "/sessions:",
        "/sessions/{id}/next:",
        "/sessions/{id}/readings:",
        "/sessions/{id}/report:",
        "/report:",
    ] {
        assert!(text.contains(path), "{path}");
    }
}
