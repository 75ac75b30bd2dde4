mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use factlogic::rules::render;
use factlogic_cli::engine::{Engine, Mode, Settings};
use factlogic_cli::service::router;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{oracle, EXIT_VECTOR};

fn engine(mode: Mode) -> Arc<Engine> {
    let fx = oracle();
    let settings = Settings {
        mode,
        ..Settings::default()
    };
    Arc::new(Engine::new(&fx.checkpoint, Some(fx.rules), settings).unwrap())
}

async fn call(app: &Router, method: &str, path: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{path}: {e}: {bytes:?}"));
    (status, value)
}

async fn post(app: &Router, path: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", path, Some(body.to_string())).await
}

fn posterior(v: &Value) -> Vec<f64> {
    v["posterior"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match rng.random_range(0..4) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random::<f64>(),
        })
        .collect()
}

#[tokio::test]
async fn metadata_endpoints() {
    let engine = engine(Mode::Model);
    let app = router(engine.clone());
    let (status, health) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["status"], "ok");
    assert_eq!(health["facts"], 8);

    let (_, model) = call(&app, "GET", "/model", None).await;
    assert_eq!(model["facts"][2], "caregiver_near");
    assert_eq!(model["classes"].as_array().unwrap().len(), 4);
    assert_eq!(model["classes"][2]["risk"], true);
    assert_eq!(model["dims"]["rules"], 20);

    let (_, rules) = call(&app, "GET", "/rules", None).await;
    assert_eq!(rules, serde_json::to_value(engine.rules_document()).unwrap());
}

#[tokio::test]
async fn infer_on_confidences_equals_in_process_reasoning() {
    let engine = engine(Mode::Model);
    let app = router(engine.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let c = random_vector(&mut rng, 8);
        let (status, body) = post(&app, "/infer", json!({ "confidences": c })).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let expected = engine.model().infer_facts(&c).unwrap();
        let got = posterior(&body);
        assert_eq!(got.len(), expected.posterior.len());
        for (a, b) in got.iter().zip(&expected.posterior) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(body["predicted"], expected.predicted);
    }
}

#[tokio::test]
async fn infer_on_views_runs_fusion() {
    let fx = oracle();
    let engine = engine(Mode::Model);
    let app = router(engine.clone());
    for s in fx.generator.generate(20) {
        let (status, body) = post(&app, "/infer", json!({ "views": s.views })).await;
        assert_eq!(status, StatusCode::OK);
        let expected = engine.model().infer(&s.views).unwrap();
        assert_eq!(posterior(&body), expected.posterior);
        let attribution = body["fact_graph"]["attribution"].as_array().unwrap();
        assert_eq!(attribution.len(), 8);
        for row in attribution {
            let sum: f64 = row.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
            // the denominator carries the attribution epsilon (1e-8)
            assert!(sum <= 1.0 + 1e-12 && sum > 1.0 - 1e-8 - 1e-12, "{row}");
        }
    }
}

#[tokio::test]
async fn explanation_traces_render_like_the_rule_set() {
    let engine = engine(Mode::Model);
    let app = router(engine.clone());
    let (_, body) = post(&app, "/infer", json!({ "confidences": EXIT_VECTOR })).await;
    assert_eq!(body["predicted_class"], "unattended_exit_risk");
    assert_eq!(body["risk"], true);
    let fired = body["fired_rules"].as_array().unwrap();
    assert!(!fired.is_empty());
    let vocab = engine.vocabulary();
    for trace in fired {
        let rule = engine
            .rule_set()
            .find(trace["index"].as_u64().unwrap() as usize)
            .unwrap();
        assert_eq!(trace["text"].as_str().unwrap(), render(rule, vocab).unwrap());
        assert!(trace["strength"].as_f64().unwrap() > 0.5);
    }
    assert_eq!(
        fired[0]["text"],
        "unattended_exit_risk \u{2190} rail_down \u{2227} edge_sitting \u{2227} \u{ac}caregiver_near"
    );
    let cf = &body["counterfactual"];
    assert_eq!(cf["status"], "exact");
    assert_eq!(cf["result"]["cardinality"], 1);
    assert_eq!(body["sensitivity"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn no_firing_rule_gives_empty_trace() {
    let app = router(engine(Mode::Model));
    let (status, body) = post(&app, "/infer", json!({ "confidences": vec![0.5; 8] })).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["fired_rules"].as_array().unwrap().is_empty());
    assert_eq!(posterior(&body).len(), 4);
}

#[tokio::test]
async fn whatif_caregiver_lowers_risk() {
    let engine = engine(Mode::Model);
    let app = router(engine.clone());
    let (status, body) = post(
        &app,
        "/whatif",
        json!({ "confidences": EXIT_VECTOR, "intervention": { "fact": "caregiver_near", "value": 1.0 } }),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let before = body["before"]["risk_mass"].as_f64().unwrap();
    let after = body["after"]["risk_mass"].as_f64().unwrap();
    assert!(after < before, "{before} -> {after}");
    let mut c = EXIT_VECTOR.to_vec();
    c[2] = 1.0;
    let direct = engine.model().infer_facts(&c).unwrap();
    assert_eq!(posterior(&body["after"]), direct.posterior);
    assert_eq!(body["fact_index"], 2);
    assert_eq!(body["previous_value"], 0.0);
    let changed = body["rules"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| (r["before"].as_f64().unwrap() - r["after"].as_f64().unwrap()).abs() > 0.05)
        .count();
    assert!(changed >= 1);
    // the fact can also be named by index
    let (_, by_index) = post(
        &app,
        "/whatif",
        json!({ "confidences": EXIT_VECTOR, "intervention": { "fact": 2, "value": 1.0 } }),
    )
    .await;
    assert_eq!(by_index, body);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_counterfactuals_agree() {
    let app = router(engine(Mode::Model));
    let body = json!({ "confidences": EXIT_VECTOR, "options": { "exact": true, "max_card": 3 } });
    let (a, b) = tokio::join!(post(&app, "/counterfactual", body.clone()), post(&app, "/counterfactual", body));
    assert_eq!(a.0, StatusCode::OK);
    assert_eq!(a, b);
    assert_eq!(a.1["complete"], true);
    assert_eq!(a.1["result"]["exact"], true);
    assert_eq!(a.1["result"]["original_class_id"], "unattended_exit_risk");
}

fn random_request(rng: &mut ChaCha8Rng) -> (&'static str, Value) {
    let c = random_vector(rng, 8);
    match rng.random_range(0..3) {
        0 => ("/infer", json!({ "confidences": c, "top_k": rng.random_range(1..6) })),
        1 => (
            "/counterfactual",
            json!({ "confidences": c, "options": { "exact": rng.random::<bool>(), "max_card": rng.random_range(1..4) } }),
        ),
        _ => (
            "/whatif",
            json!({ "confidences": c, "intervention": { "fact": rng.random_range(0..8usize), "value": rng.random::<f64>() } }),
        ),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn interleaved_requests_match_serial_execution() {
    let app = router(engine(Mode::Model));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let requests: Vec<(&str, Value)> = (0..100).map(|_| random_request(&mut rng)).collect();
    let handles: Vec<_> = requests
        .iter()
        .cloned()
        .map(|(path, body)| {
            let app = app.clone();
            tokio::spawn(async move { post(&app, path, body).await })
        })
        .collect();
    let mut interleaved = Vec::new();
    for h in handles {
        interleaved.push(h.await.unwrap());
    }
    for ((path, body), concurrent) in requests.into_iter().zip(interleaved) {
        let serial = post(&app, path, body).await;
        assert_eq!(serial, concurrent, "{path}");
    }
}

#[tokio::test]
async fn malformed_bodies_are_rejected_with_the_field() {
    let app = router(engine(Mode::Model));
    let (status, body) = call(&app, "POST", "/infer", Some("{".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["kind"], "malformed_body");

    let (status, body) = post(&app, "/infer", json!({ "confidences": "high" })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["field"], "confidences");

    let (status, body) = post(&app, "/infer", json!({})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["field"], "confidences");

    let mut c = EXIT_VECTOR.to_vec();
    c[7] = 1.5;
    let (status, body) = post(&app, "/infer", json!({ "confidences": c })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["field"], "confidences.lights_on");

    let (status, body) = post(&app, "/counterfactual", json!({ "options": {} })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["message"].as_str().unwrap().contains("confidences"));

    let (status, body) = post(
        &app,
        "/whatif",
        json!({ "confidences": EXIT_VECTOR, "intervention": { "fact": "rail_down", "value": 3 } }),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["field"], "intervention.value");
}

#[tokio::test]
async fn vocabulary_mismatch_is_unprocessable() {
    let app = router(engine(Mode::Model));
    let (status, body) = post(&app, "/infer", json!({ "confidences": vec![0.5; 7] })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["kind"], "vocabulary_mismatch");

    let (status, body) = post(&app, "/infer", json!({ "confidences": { "rail_down": 1.0, "wheelchair": 0.0 } })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["field"], "confidences.wheelchair");

    let (status, _) = post(&app, "/infer", json!({ "confidences": { "rail_down": 1.0 } })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = post(&app, "/infer", json!({ "views": [[0.0, 1.0]] })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = post(
        &app,
        "/whatif",
        json!({ "confidences": EXIT_VECTOR, "intervention": { "fact": "wheelchair", "value": 1.0 } }),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn named_confidences_match_positional() {
    let engine = engine(Mode::Model);
    let app = router(engine.clone());
    let named: serde_json::Map<String, Value> = engine
        .vocabulary()
        .facts
        .iter()
        .zip(EXIT_VECTOR)
        .map(|(f, x)| (f.id.clone(), json!(x)))
        .collect();
    let (_, a) = post(&app, "/infer", json!({ "confidences": named })).await;
    let (_, b) = post(&app, "/infer", json!({ "confidences": EXIT_VECTOR })).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn search_timeout_returns_partial_result() {
    let ckpt = common::inert_wide();
    let settings = Settings {
        cf_budget: Duration::ZERO,
        ..Settings::default()
    };
    let app = router(Arc::new(Engine::new(&ckpt, None, settings).unwrap()));
    let (status, body) = post(
        &app,
        "/counterfactual",
        json!({ "confidences": vec![0.5; 20], "options": { "exact": true, "max_card": 4 } }),
    )
    .await;
    assert_eq!(status, StatusCode::GATEWAY_TIMEOUT);
    assert_eq!(body["complete"], false);
    assert_eq!(body["status"], "timeout");

    // greedy is not bounded by the budget
    let (status, body) = post(
        &app,
        "/counterfactual",
        json!({ "confidences": vec![0.5; 20], "options": { "exact": false, "max_card": 4 } }),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "not_found");
    assert!(body["result"].is_null());
}

#[tokio::test]
async fn frozen_rule_set_serves_its_own_scores() {
    let engine = engine(Mode::Rules);
    let app = router(engine.clone());
    let set = engine.rule_set().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let c = random_vector(&mut rng, 8);
        let (_, body) = post(&app, "/infer", json!({ "confidences": c })).await;
        let scores = set.scores(&c);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        for (p, s) in posterior(&body).iter().zip(&scores) {
            assert!((p - (s - max).exp() / z).abs() < 1e-12);
        }
        assert_eq!(body["mode"], "rules");
    }
    let (_, body) = post(&app, "/infer", json!({ "confidences": EXIT_VECTOR })).await;
    assert_eq!(body["predicted_class"], "unattended_exit_risk");
}
