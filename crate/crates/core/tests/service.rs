use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use echolab::compression::{compress_echoes, CompressionConfig};
use echolab::display::{rescale_for_display, RescaleMode};
use echolab::filters::{build_filter, FilterSpec};
use echolab::pgm::{decode_pgm, encode_pgm};
use echolab::service::{router, AppState, ServiceConfig};
use echolab::test_images;

const BOUNDARY: &str = "echolab-test-boundary";

fn multipart(fields: &[(&str, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, data) in fields {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{name}\"\r\n").as_bytes());
        body.extend_from_slice(b"Content-Type: application/octet-stream\r\n\r\n");
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

fn app() -> Router {
    router(AppState::new(ServiceConfig::default()))
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn create(app: &Router, fields: &[(&str, &[u8])]) -> (StatusCode, Value) {
    let req = Request::post("/sessions")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(fields)))
        .unwrap();
    let (status, bytes) = send(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, bytes) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn cumulative(app: &Router, id: &str, body: Value) -> Value {
    let req = Request::post(format!("/sessions/{id}/cumulative"))
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, bytes) = send(app, req).await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_slice(&bytes).unwrap()
}

fn raw(v: &Value) -> Vec<f64> {
    B64.decode(v["raw"].as_str().unwrap())
        .unwrap()
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn pm_filter() -> Value {
    json!({"method": "nld", "diffusivity": "pm", "lambda": 12.0, "sigma": 0.125, "time": 11.875})
}

#[tokio::test]
async fn session_lifecycle() {
    let app = app();
    let img = encode_pgm(&test_images::phantom(64));
    let filter = pm_filter().to_string();
    let compression = json!({"rank_fraction": 0.025, "seed": 3}).to_string();
    let (status, s) = create(
        &app,
        &[("image", &img), ("filter", filter.as_bytes()), ("compression", compression.as_bytes())],
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{s}");
    assert_eq!(s["k"], 102);
    assert_eq!((s["nx"].as_u64(), s["ny"].as_u64()), (Some(64), Some(64)));
    let id = s["id"].as_str().unwrap().to_string();
    assert_eq!(s["spectrum_url"], format!("/sessions/{id}/spectrum"));

    let (status, bytes) = send(&app, Request::get(format!("/sessions/{id}/spectrum")).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(bytes).unwrap();
    let rows = text.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).count();
    assert_eq!(rows, 102);

    let (status, e) = get_json(&app, &format!("/sessions/{id}/echo?x=20&y=30&direction=source")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(e["location"]["index"], 30 * 64 + 20);
    assert_eq!(e["rank"], 102);
    let echo = raw(&e);
    assert_eq!(echo.len(), 4096);
    assert_eq!(B64.decode(e["raster"].as_str().unwrap()).unwrap().len(), 4096);

    // Singleton cumulative equals the echo; disjoint sets add up.
    let single = cumulative(&app, &id, json!({"pixels": [[20, 30]]})).await;
    assert_eq!(raw(&single), echo);
    let a = raw(&cumulative(&app, &id, json!({"pixels": [[1, 2], [40, 40]]})).await);
    let b = raw(&cumulative(&app, &id, json!({"pixels": [[10, 50]]})).await);
    let ab = raw(&cumulative(&app, &id, json!({"pixels": [[1, 2], [40, 40], [10, 50]]})).await);
    for k in 0..ab.len() {
        assert!((ab[k] - a[k] - b[k]).abs() < 1e-12);
    }

    // Source and drain differ at an edge pixel of a nonlinear filter.
    let (_, d) = get_json(&app, &format!("/sessions/{id}/echo?x=6&y=32&direction=drain")).await;
    let (_, s) = get_json(&app, &format!("/sessions/{id}/echo?x=6&y=32&direction=source")).await;
    assert_ne!(d["raster"], s["raster"]);

    let (status, img) = get_json(&app, &format!("/sessions/{id}/image?which=filtered")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(raw(&img).len(), 4096);

    let (status, _) = get_json(&app, &format!("/sessions/{id}/echo?x=64&y=0")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = get_json(&app, &format!("/sessions/{id}/echo?x=1&y=1&rank=500")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = get_json(&app, "/sessions/nope/echo?x=1&y=1").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = get_json(&app, "/sessions/nope/spectrum").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn full_rank_echo_matches_direct_reconstruction() {
    let app = app();
    let img = encode_pgm(&test_images::phantom(32));
    let f = decode_pgm(&img).unwrap();
    let filter = pm_filter();
    let cfg = json!({"rank": 20, "seed": 5});
    let (status, s) = create(
        &app,
        &[("image", &img), ("filter", filter.to_string().as_bytes()), ("compression", cfg.to_string().as_bytes())],
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    let id = s["id"].as_str().unwrap();

    let spec: FilterSpec = serde_json::from_value(filter).unwrap();
    let (_, op) = build_filter(&f, &spec).unwrap();
    let c = compress_echoes(&op, 32, 32, 1, &serde_json::from_value::<CompressionConfig>(cfg).unwrap()).unwrap();
    let expected = c.reconstruct_source(5 * 32 + 7, None).unwrap();
    let raster = rescale_for_display(&[&expected], RescaleMode::Joint).unwrap().pop().unwrap();

    let (_, e) = get_json(&app, &format!("/sessions/{id}/echo?x=7&y=5&rank=20")).await;
    assert_eq!(raw(&e), expected);
    assert_eq!(B64.decode(e["raster"].as_str().unwrap()).unwrap(), raster);

    let (_, e1) = get_json(&app, &format!("/sessions/{id}/echo?x=7&y=5&rank=1")).await;
    assert_eq!(raw(&e1), c.reconstruct_source(5 * 32 + 7, Some(1)).unwrap());
}

#[tokio::test]
async fn excluded_pixels_answer_with_an_impulse() {
    let app = app();
    let f = test_images::stripes(16, 16, 2);
    let img = encode_pgm(&f);
    let filter = json!({"method": "nld", "diffusivity": "weickert", "lambda": 5.0, "time": 100.0});
    let cfg = json!({"rank": 4, "epsilon": 0.1});
    let (status, s) = create(
        &app,
        &[("image", &img), ("filter", filter.to_string().as_bytes()), ("compression", cfg.to_string().as_bytes())],
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{s}");
    assert!(s["exclusions"].as_u64().unwrap() > 0);
    let id = s["id"].as_str().unwrap();
    let mut found = false;
    for x in 0..16 {
        let (_, e) = get_json(&app, &format!("/sessions/{id}/echo?x={x}&y=8")).await;
        if e["excluded"] == true {
            let r = raw(&e);
            let k = 8 * 16 + x;
            assert_eq!(r[k], 1.0);
            assert_eq!(r.iter().sum::<f64>(), 1.0);
            found = true;
        }
    }
    assert!(found);
}

#[tokio::test]
async fn creation_errors() {
    let app = app();
    let img = encode_pgm(&test_images::phantom(16));
    let filter = pm_filter().to_string();

    let (status, _) = create(&app, &[("image", b""), ("filter", filter.as_bytes())]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = create(&app, &[("image", b"P5 garbage"), ("filter", filter.as_bytes())]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = create(&app, &[("filter", filter.as_bytes())]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = create(&app, &[("image", &img), ("filter", b"{not json")]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = create(&app, &[("image", &img), ("filter", br#"{"method":"nld","lambda":3}"#)]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let bad = json!({"method": "nld", "diffusivity": "pm", "lambda": -1.0, "time": 5.0}).to_string();
    let (status, _) = create(&app, &[("image", &img), ("filter", bad.as_bytes())]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let small = router(AppState::new(ServiceConfig {
        max_sessions: 4,
        memory_budget_bytes: 1 << 20,
    }));
    let big = encode_pgm(&test_images::phantom(64));
    let cfg = json!({"rank_fraction": 0.9}).to_string();
    let (status, body) = create(&small, &[("image", &big), ("filter", filter.as_bytes()), ("compression", cfg.as_bytes())]).await;
    assert_eq!(status, StatusCode::INSUFFICIENT_STORAGE, "{body}");
}

#[tokio::test]
async fn least_recently_used_session_is_evicted() {
    let app = router(AppState::new(ServiceConfig {
        max_sessions: 2,
        ..ServiceConfig::default()
    }));
    let img = encode_pgm(&test_images::phantom(8));
    let filter = json!({"method": "hd", "time": 5.0}).to_string();
    let cfg = json!({"rank": 2}).to_string();
    let mut ids = Vec::new();
    for _ in 0..2 {
        let (_, s) = create(&app, &[("image", &img), ("filter", filter.as_bytes()), ("compression", cfg.as_bytes())]).await;
        ids.push(s["id"].as_str().unwrap().to_string());
    }
    // Touch the first so the second becomes the eviction candidate.
    assert_eq!(get_json(&app, &format!("/sessions/{}/echo?x=0&y=0", ids[0])).await.0, StatusCode::OK);
    let (_, s) = create(&app, &[("image", &img), ("filter", filter.as_bytes()), ("compression", cfg.as_bytes())]).await;
    ids.push(s["id"].as_str().unwrap().to_string());
    assert_eq!(get_json(&app, &format!("/sessions/{}/echo?x=0&y=0", ids[0])).await.0, StatusCode::OK);
    assert_eq!(get_json(&app, &format!("/sessions/{}/echo?x=0&y=0", ids[1])).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&app, &format!("/sessions/{}/echo?x=0&y=0", ids[2])).await.0, StatusCode::OK);
}

#[tokio::test]
async fn explorer_round_trip_timing() {
    let app = app();
    let img = encode_pgm(&test_images::phantom(64));
    let (status, s) = create(&app, &[("image", &img), ("filter", pm_filter().to_string().as_bytes())]).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = s["id"].as_str().unwrap();
    for i in 0..10 {
        let t = std::time::Instant::now();
        let (status, _) = get_json(&app, &format!("/sessions/{id}/echo?x={}&y={}", 5 * i + 3, 60 - 4 * i)).await;
        assert_eq!(status, StatusCode::OK);
        assert!(t.elapsed() < std::time::Duration::from_millis(200));
    }
}
