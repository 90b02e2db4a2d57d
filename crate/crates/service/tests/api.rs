mod common;

use std::sync::Arc;

use axum::http::{Method, StatusCode};
use common::*;
use freightrec::Engine;
use serde_json::{json, Value};

fn athens_patra_request() -> Value {
    json!({"origin": "ATHENS", "destination": "PATRA", "quantity": 10, "plan": "economic"})
}

async fn athens_patra_session() -> (tempfile::TempDir, Api, String) {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(engine_with(dir.path(), ATHENS_PATRA));
    let reply = api.post("/api/requests", athens_patra_request()).await;
    assert_eq!(reply.status, StatusCode::OK);
    let id = reply.json()["request_id"].as_str().unwrap().to_string();
    (dir, api, id)
}

fn totals(view: &Value) -> Vec<(f64, f64)> {
    view["solutions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| (s["total_cost"].as_f64().unwrap(), s["total_duration"].as_f64().unwrap()))
        .collect()
}

fn itinerary_with_cost(view: &Value, cost: f64) -> String {
    view["solutions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["total_cost"] == json!(cost))
        .unwrap()["itinerary_id"]
        .as_str()
        .unwrap()
        .to_string()
}

#[tokio::test]
async fn ingest_accepts_json_raw_and_multipart() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(Arc::new(Engine::open(dir.path()).unwrap()));

    let reply = api.post("/api/network", json!({"csv": ATHENS_PATRA})).await;
    assert_eq!(reply.status, StatusCode::OK);
    assert_eq!(reply.json(), json!({"snapshot_id": 1, "arcs": 3, "terminals": 3}));

    // Same content keeps the snapshot.
    let raw = api
        .send(
            Method::POST,
            "/api/network",
            Some("text/csv"),
            ATHENS_PATRA.as_bytes().to_vec(),
        )
        .await;
    assert_eq!(raw.json()["snapshot_id"], 1);

    let path = dir.path().join("two.csv");
    std::fs::write(&path, TWO_CARRIERS).unwrap();
    let by_path = api.post("/api/network", json!({"path": path})).await;
    assert_eq!(by_path.json(), json!({"snapshot_id": 2, "arcs": 3, "terminals": 3}));

    let boundary = "XBOUNDARY";
    let body = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"network\"; filename=\"network.csv\"\r\n\
         Content-Type: text/csv\r\n\r\n{ATHENS_PATRA}\r\n--{boundary}--\r\n"
    );
    let multipart = api
        .send(
            Method::POST,
            "/api/network",
            Some(&format!("multipart/form-data; boundary={boundary}")),
            body.into_bytes(),
        )
        .await;
    assert_eq!(multipart.status, StatusCode::OK);
    assert_eq!(multipart.json()["snapshot_id"], 3);
}

#[tokio::test]
async fn ingest_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(Arc::new(Engine::open(dir.path()).unwrap()));
    let bad = api.post("/api/network", json!({"csv": "a,b\n1,2\n"})).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    assert_eq!(bad.json()["error"], "invalid_network");
    let both = api
        .post("/api/network", json!({"csv": ATHENS_PATRA, "path": "x"}))
        .await;
    assert_eq!(both.status, StatusCode::BAD_REQUEST);
    let missing = api.post("/api/network", json!({"path": "/nonexistent/net.csv"})).await;
    assert!(missing.status.is_server_error());
}

#[tokio::test]
async fn request_before_ingest_is_a_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(Arc::new(Engine::open(dir.path()).unwrap()));
    let reply = api.post("/api/requests", athens_patra_request()).await;
    assert_eq!(reply.status, StatusCode::CONFLICT);
    assert_eq!(reply.json()["error"], "no_network");
}

#[tokio::test]
async fn athens_patra_reference_request() {
    let (_dir, api, id) = athens_patra_session().await;
    let view = api.get(&format!("/api/requests/{id}/solutions")).await.json();
    assert_eq!(view["state"], "open");
    assert_eq!(totals(&view), vec![(110.0, 10.0), (130.0, 7.5)]);
    let first = &view["solutions"][0];
    assert_eq!(first["safety"], "average");
    assert_eq!(first["dependability"], "average");
    assert!(first["itinerary_id"].as_str().unwrap().starts_with('T'));

    let by_duration = api
        .get(&format!("/api/requests/{id}/solutions?sort=duration"))
        .await
        .json();
    assert_eq!(totals(&by_duration), vec![(130.0, 7.5), (110.0, 10.0)]);
    let by_score = api
        .get(&format!("/api/requests/{id}/solutions?sort=final_score"))
        .await
        .json();
    assert_eq!(totals(&by_score), vec![(110.0, 10.0), (130.0, 7.5)]);
    let bad = api.get(&format!("/api/requests/{id}/solutions?sort=colour")).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);

    // Re-posting the same request gives the same id.
    let again = api.post("/api/requests", athens_patra_request()).await.json();
    assert_eq!(again["request_id"], id);
}

#[tokio::test]
async fn request_validation_and_no_solution() {
    let (_dir, api, _) = athens_patra_session().await;
    let same = api
        .post(
            "/api/requests",
            json!({"origin": "ATHENS", "destination": "athens", "plan": "economic"}),
        )
        .await;
    assert_eq!(same.status, StatusCode::BAD_REQUEST);
    assert_eq!(same.json()["error"], "invalid_request");

    let unknown = api
        .post(
            "/api/requests",
            json!({"origin": "ATHENS", "destination": "SPARTA", "plan": "economic"}),
        )
        .await;
    assert_eq!(unknown.status, StatusCode::BAD_REQUEST);
    assert_eq!(unknown.json()["error"], "unknown_terminal");

    let malformed = api.post("/api/requests", json!({"origin": "ATHENS"})).await;
    assert_eq!(malformed.status, StatusCode::BAD_REQUEST);

    let unreachable = api
        .post(
            "/api/requests",
            json!({"origin": "PATRA", "destination": "ATHENS", "plan": "economic"}),
        )
        .await;
    assert_eq!(unreachable.status, StatusCode::UNPROCESSABLE_ENTITY);
    let body = unreachable.json();
    assert_eq!(body["error"], "no_solution");
    assert_eq!(body["diagnostic"]["reachable"], false);

    let too_cheap = api
        .post(
            "/api/requests",
            json!({"origin": "ATHENS", "destination": "PATRA", "plan": "safe", "max_cost": 120}),
        )
        .await;
    assert_eq!(too_cheap.status, StatusCode::UNPROCESSABLE_ENTITY);
    let body = too_cheap.json();
    assert_eq!(body["diagnostic"]["rejected_by"], json!({"max_cost": 1, "safety": 1}));
    // The session exists and keeps reporting its diagnostic.
    let id = body["request_id"].as_str().unwrap();
    let later = api.get(&format!("/api/requests/{id}/solutions")).await;
    assert_eq!(later.status, StatusCode::UNPROCESSABLE_ENTITY);
    let recs = api.get(&format!("/api/requests/{id}/recommendations")).await;
    assert_eq!(recs.status, StatusCode::NOT_FOUND);

    let missing = api.get("/api/requests/Rnope/solutions").await;
    assert_eq!(missing.status, StatusCode::NOT_FOUND);
    assert_eq!(missing.json()["error"], "unknown_request");
}

#[tokio::test]
async fn user_defined_plan_through_the_api() {
    let (_dir, api, _) = athens_patra_session().await;
    let reply = api
        .post(
            "/api/requests",
            json!({
                "origin": "ATHENS", "destination": "PATRA", "plan": "user_defined",
                "user_constraints": {"max_duration": 8.0, "min_safety": "medium"},
                "coefficients": {"a": 0.5, "b": 1.0, "c": 1.0}
            }),
        )
        .await;
    assert_eq!(reply.status, StatusCode::OK);
    assert_eq!(totals(&reply.json()), vec![(130.0, 7.5)]);

    let without = api
        .post(
            "/api/requests",
            json!({"origin": "ATHENS", "destination": "PATRA", "plan": "user_defined"}),
        )
        .await;
    assert_eq!(without.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn details_mirror_the_sub_route_table() {
    let (_dir, api, id) = athens_patra_session().await;
    let view = api.get(&format!("/api/requests/{id}/solutions")).await.json();
    let two_leg = itinerary_with_cost(&view, 130.0);
    let details = api.get(&format!("/api/solutions/{two_leg}/details")).await.json();
    assert_eq!(details["status"], "proposed");
    assert_eq!(
        details["subroutes"],
        json!([
            {"subroute_number": 1, "leg_id": "A1", "loading": "ATHENS", "delivery": "AIGIO", "cost": 120.0,
             "duration": 5.0, "safety": "average", "dependability": "average", "carrier_id": "3"},
            {"subroute_number": 2, "leg_id": "A2", "loading": "AIGIO", "delivery": "PATRA", "cost": 10.0,
             "duration": 2.5, "safety": "average", "dependability": "average", "carrier_id": "2"}
        ])
    );
    assert_eq!(
        api.get("/api/solutions/Tnope/details").await.status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn cold_start_recommendations() {
    let (_dir, api, id) = athens_patra_session().await;
    let body = api.get(&format!("/api/requests/{id}/recommendations")).await.json();
    let recs = body["recommendations"].as_array().unwrap();
    assert_eq!(recs.len(), 2);
    for r in recs {
        assert_eq!(r["scores"]["o_total"], 3.0);
        assert_eq!(r["scores"]["popularity"], 0);
        for leg in r["legs"].as_array().unwrap() {
            assert_eq!(leg["applied"], "cf");
        }
    }
    // Smaller cost penalty, larger key.
    assert_eq!(recs[0]["itinerary"]["total_cost"], 110.0);
    assert_eq!(recs[0]["scores"]["o_cost"], 1.0);
    assert_eq!(recs[0]["scores"]["f"], 1);
    assert_eq!(recs[1]["scores"]["f"], 1);
    assert!(recs[0]["scores"]["ranking_key"].as_f64() > recs[1]["scores"]["ranking_key"].as_f64());
}

#[tokio::test]
async fn top_carriers_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let engine = engine_with(dir.path(), TWO_CARRIERS);
    let api = Api::new(engine.clone());

    let cold = api.get("/api/legs/S3/top-carriers").await.json();
    assert_eq!(cold["origin"], "ATHENS");
    let ids: Vec<&str> = cold["carriers"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["carrier_id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["2", "3"]);

    // Two ratings from one user: 5 * 0.7 on every dimension.
    for q in 0..2 {
        trade(
            &engine,
            "alice",
            freightrec_core::Plan::Safe,
            "ATHENS",
            "AIGIO",
            f64::from(q),
            &["S3"],
            Some(5),
        );
    }
    let top = api.get("/api/legs/S2/top-carriers?n=1").await.json();
    assert_eq!(
        top["carriers"],
        json!([{"carrier_id": "3", "composite_rating": 3.5, "arc_id": "S3",
                                        "cost": 120.0, "duration": 5.0}])
    );

    let same = api.get("/api/legs/S3/compare/3").await.json();
    assert_eq!(
        same,
        json!({"leg_id": "S3", "carrier_id": "3", "delta_cost": 0.0, "delta_duration": 0.0, "delta_rating": 0.0})
    );
    let other = api.get("/api/legs/S3/compare/2").await.json();
    assert_eq!(other["delta_cost"], -20.0);
    assert_eq!(other["delta_duration"], 1.0);
    assert_eq!(other["delta_rating"], -0.5);

    assert_eq!(api.get("/api/legs/ZZ/top-carriers").await.status, StatusCode::NOT_FOUND);
    let absent = api.get("/api/legs/S3/compare/9").await;
    assert_eq!(absent.status, StatusCode::NOT_FOUND);
    assert_eq!(absent.json()["error"], "unknown_carrier");
}

#[tokio::test]
async fn transaction_lifecycle() {
    let (_dir, api, id) = athens_patra_session().await;
    let view = api.get(&format!("/api/requests/{id}/solutions")).await.json();
    let direct = itinerary_with_cost(&view, 110.0);
    let two_leg = itinerary_with_cost(&view, 130.0);

    let early = api.post_empty(&format!("/api/transactions/{direct}/complete")).await;
    assert_eq!(early.status, StatusCode::CONFLICT);

    let selected = api.post_empty(&format!("/api/solutions/{two_leg}/select")).await;
    assert_eq!(
        selected.json(),
        json!({"transaction_id": two_leg, "status": "selected"})
    );
    let state = api.get(&format!("/api/requests/{id}/solutions")).await.json();
    assert_eq!(state["state"], "selected");

    let second = api.post_empty(&format!("/api/solutions/{direct}/select")).await;
    assert_eq!(second.status, StatusCode::CONFLICT);
    assert_eq!(second.json()["error"], "already_selected");

    let rating = json!({
        "user_id": "alice",
        "carrier_scores": [{"time": 5, "safety": 4, "dependability": 5}, {"time": 4, "safety": 4, "dependability": 4}],
        "transaction_scores": {"time": 5, "safety": 5, "dependability": 5}
    });
    let too_soon = api
        .post(&format!("/api/transactions/{two_leg}/ratings"), rating.clone())
        .await;
    assert_eq!(too_soon.status, StatusCode::CONFLICT);

    let done = api.post_empty(&format!("/api/transactions/{two_leg}/complete")).await;
    assert_eq!(done.json()["status"], "completed");
    assert_eq!(
        api.get(&format!("/api/requests/{id}/solutions")).await.json()["state"],
        "completed"
    );

    let rated = api
        .post(&format!("/api/transactions/{two_leg}/ratings"), rating.clone())
        .await;
    assert_eq!(
        rated.json(),
        json!({"transaction_id": two_leg, "user_id": "alice", "ratings_count": 1, "ur": 0.6})
    );
    assert_eq!(
        api.get(&format!("/api/requests/{id}/solutions")).await.json()["state"],
        "rated"
    );

    let dup = api.post(&format!("/api/transactions/{two_leg}/ratings"), rating).await;
    assert_eq!(dup.status, StatusCode::CONFLICT);

    let bad_score = json!({
        "user_id": "bob",
        "carrier_scores": [{"time": 6, "safety": 4, "dependability": 5}, {"time": 4, "safety": 4, "dependability": 4}],
        "transaction_scores": {"time": 5, "safety": 5, "dependability": 5}
    });
    let bad = api
        .post(&format!("/api/transactions/{two_leg}/ratings"), bad_score)
        .await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);

    let wrong_legs = json!({
        "user_id": "bob",
        "carrier_scores": [{"time": 4, "safety": 4, "dependability": 5}],
        "transaction_scores": {"time": 5, "safety": 5, "dependability": 5}
    });
    let short = api
        .post(&format!("/api/transactions/{two_leg}/ratings"), wrong_legs)
        .await;
    assert_eq!(short.status, StatusCode::BAD_REQUEST);
    assert_eq!(short.json()["error"], "invalid_rating");

    // The completed route now counts as popular.
    let recs = api.get(&format!("/api/requests/{id}/recommendations")).await.json();
    let popular = recs["recommendations"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["itinerary_id"] == json!(two_leg))
        .unwrap();
    assert_eq!(popular["scores"]["popularity"], 1);

    assert_eq!(
        api.post_empty("/api/solutions/Tnope/select").await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        api.post_empty("/api/transactions/Tnope/complete").await.status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn ratings_import() {
    let dir = tempfile::tempdir().unwrap();
    let engine = engine_with(dir.path(), TWO_CARRIERS);
    let api = Api::new(engine.clone());
    let tid = trade(
        &engine,
        "alice",
        freightrec_core::Plan::Safe,
        "ATHENS",
        "AIGIO",
        0.0,
        &["S3"],
        None,
    );

    let csv = format!(
        "user_id,transaction_id,carrier_id,origin,destination,score_time,score_safety,score_dependability\n\
         carol,{tid},3,ATHENS,AIGIO,5,5,4\n"
    );
    let reply = api
        .send(
            Method::POST,
            "/api/ratings/import",
            Some("text/csv"),
            csv.clone().into_bytes(),
        )
        .await;
    assert_eq!(reply.json(), json!({"imported": 1}));
    let again = api
        .send(Method::POST, "/api/ratings/import", Some("text/csv"), csv.into_bytes())
        .await;
    assert_eq!(again.status, StatusCode::CONFLICT);
    assert_eq!(engine.snapshot().carrier_ratings().len(), 1);
}

#[tokio::test]
async fn rules_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let engine = engine_with(dir.path(), TWO_CARRIERS);
    let api = Api::new(engine.clone());

    let empty = api.post_empty("/api/rules/mine").await.json();
    assert_eq!(empty, json!({"count": 0, "rules": []}));

    seed_rule_history(&engine, 5);
    let mined = api
        .post("/api/rules/mine", json!({"min_support": 0.05, "min_confidence": 0.7}))
        .await
        .json();
    assert_eq!(mined["count"], 1);
    let rule = &mined["rules"][0];
    assert_eq!(rule["rule_id"], "ATHENS:AIGIO:safe:3");
    assert_eq!(rule["support"], 0.8);
    assert_eq!(rule["confidence"], 1.0);
    assert_eq!(api.get("/api/rules").await.json(), mined);

    let strict = api.post("/api/rules/mine", json!({"min_support": 0.9})).await.json();
    assert_eq!(strict["count"], 0);
    let invalid = api.post("/api/rules/mine", json!({"min_support": 0.0})).await;
    assert_eq!(invalid.status, StatusCode::BAD_REQUEST);
    let unknown = api.post("/api/rules/mine", json!({"support": 0.1})).await;
    assert_eq!(unknown.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn rule_overrides_cf_in_recommendations() {
    let dir = tempfile::tempdir().unwrap();
    let engine = engine_with(dir.path(), TWO_CARRIERS);
    let api = Api::new(engine.clone());
    seed_override_history(&engine);
    assert_eq!(api.post_empty("/api/rules/mine").await.json()["count"], 1);

    let session = api
        .post(
            "/api/requests",
            json!({"origin": "ATHENS", "destination": "AIGIO", "plan": "safe", "user_id": "dora"}),
        )
        .await
        .json();
    let id = session["request_id"].as_str().unwrap();
    let recs = api.get(&format!("/api/requests/{id}/recommendations")).await.json();
    for r in recs["recommendations"].as_array().unwrap() {
        let leg = &r["legs"][0];
        assert_eq!(leg["cf_suggested"], "2");
        assert_eq!(leg["applied"], "rule");
        assert_eq!(leg["suggestion"], "3");
        assert_eq!(leg["rule_id"], "ATHENS:AIGIO:safe:3");
    }
}

#[tokio::test]
async fn gets_are_replayable() {
    let (_dir, api, id) = athens_patra_session().await;
    let view = api.get(&format!("/api/requests/{id}/solutions")).await.json();
    let two_leg = itinerary_with_cost(&view, 130.0);
    for uri in [
        format!("/api/requests/{id}/solutions"),
        format!("/api/requests/{id}/solutions?sort=safety"),
        format!("/api/requests/{id}/recommendations"),
        format!("/api/solutions/{two_leg}/details"),
        "/api/legs/A1/top-carriers?n=10".to_string(),
        "/api/legs/A1/compare/3".to_string(),
        "/api/rules".to_string(),
    ] {
        let a = api.get(&uri).await;
        let b = api.get(&uri).await;
        assert_eq!(a.status, StatusCode::OK, "{uri}");
        assert_eq!(a.bytes, b.bytes, "{uri}");
    }
}

#[tokio::test]
async fn state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (id, before) = {
        let api = Api::new(engine_with(dir.path(), ATHENS_PATRA));
        let id = api.post("/api/requests", athens_patra_request()).await.json()["request_id"]
            .as_str()
            .unwrap()
            .to_string();
        let two_leg = itinerary_with_cost(&api.get(&format!("/api/requests/{id}/solutions")).await.json(), 130.0);
        api.post_empty(&format!("/api/solutions/{two_leg}/select")).await;
        api.post_empty("/api/rules/mine").await;
        (
            id.clone(),
            api.get(&format!("/api/requests/{id}/recommendations")).await.bytes,
        )
    };
    let api = Api::new(Arc::new(Engine::open(dir.path()).unwrap()));
    let after = api.get(&format!("/api/requests/{id}/recommendations")).await;
    assert_eq!(after.bytes, before);
    assert_eq!(
        api.get(&format!("/api/requests/{id}/solutions")).await.json()["state"],
        "selected"
    );
}
