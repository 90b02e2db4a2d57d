#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use freightrec::Engine;
use freightrec_core::store::ScoreTriple;
use freightrec_core::{Plan, TransportRequest};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const ATHENS_PATRA: &str = "arc_id,origin,destination,carrier_id,cost_eur,duration_h,safety,dependability
A1,ATHENS,AIGIO,3,120.0,5.0,average,average
A2,AIGIO,PATRA,2,10.0,2.5,average,average
A3,ATHENS,PATRA,1,110.0,10.0,average,average
";

/// Two carriers on ATHENS->AIGIO, both safe enough for the Safe plan.
pub const TWO_CARRIERS: &str = "arc_id,origin,destination,carrier_id,cost_eur,duration_h,safety,dependability
S2,ATHENS,AIGIO,2,100.0,6.0,high,average
S3,ATHENS,AIGIO,3,120.0,5.0,high,average
P2,AIGIO,PATRA,2,10.0,2.5,high,average
";

pub struct Api {
    pub router: Router,
}

pub struct Reply {
    pub status: StatusCode,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes)
            .unwrap_or_else(|e| panic!("body is not JSON ({e}): {}", String::from_utf8_lossy(&self.bytes)))
    }
}

impl Api {
    pub fn new(engine: Arc<Engine>) -> Self {
        Api {
            router: freightrec::api::router(engine),
        }
    }

    pub async fn send(&self, method: Method, uri: &str, content_type: Option<&str>, body: Vec<u8>) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(ct) = content_type {
            req = req.header("content-type", ct);
        }
        let res = self
            .router
            .clone()
            .oneshot(req.body(Body::from(body)).unwrap())
            .await
            .unwrap();
        let status = res.status();
        let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply { status, bytes }
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.send(Method::GET, uri, None, Vec::new()).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> Reply {
        self.send(
            Method::POST,
            uri,
            Some("application/json"),
            body.to_string().into_bytes(),
        )
        .await
    }

    pub async fn post_empty(&self, uri: &str) -> Reply {
        self.send(Method::POST, uri, None, Vec::new()).await
    }
}

pub fn triple(s: i64) -> ScoreTriple {
    ScoreTriple::new(s, s, s).unwrap()
}

/// Requests `origin -> destination`, selects the solution using `arcs`,
/// completes it and, when `score` is given, rates every leg with it.
#[allow(clippy::too_many_arguments)]
pub fn trade(
    engine: &Engine,
    user: &str,
    plan: Plan,
    origin: &str,
    destination: &str,
    quantity: f64,
    arcs: &[&str],
    score: Option<i64>,
) -> String {
    let mut request = TransportRequest::new(origin, destination, plan);
    request.user_id = user.to_string();
    request.quantity = quantity;
    let view = engine.create_request(request).unwrap();
    let chosen = view
        .solutions
        .iter()
        .find(|s| s.arc_ids == arcs)
        .unwrap_or_else(|| panic!("no solution over {arcs:?}"))
        .itinerary_id
        .clone();
    engine.select(&chosen).unwrap();
    engine.complete(&chosen).unwrap();
    if let Some(s) = score {
        let input = freightrec::engine::RatingInput {
            user_id: user.to_string(),
            carrier_scores: vec![triple(s); arcs.len()],
            transaction_scores: triple(s),
        };
        engine.rate(&chosen, &input).unwrap();
    }
    chosen
}

/// Ten completed Safe-plan legs ATHENS->AIGIO: eight by carrier 3 rated
/// `good`, two by carrier 2 rated 3. Every rater is a one-off user.
pub fn seed_rule_history(engine: &Engine, good: i64) {
    for i in 0..8 {
        trade(
            engine,
            &format!("shipper{i}"),
            Plan::Safe,
            "ATHENS",
            "AIGIO",
            1.0,
            &["S3"],
            Some(good),
        );
    }
    for i in 0..2 {
        trade(
            engine,
            &format!("other{i}"),
            Plan::Safe,
            "ATHENS",
            "AIGIO",
            1.0,
            &["S2"],
            Some(3),
        );
    }
}

/// The rule history plus a prolific user whose ratings lift carrier 2 to the
/// head of the ATHENS->AIGIO table without creating further rules.
pub fn seed_override_history(engine: &Engine) {
    for i in 0..8 {
        trade(
            engine,
            &format!("shipper{i}"),
            Plan::Safe,
            "ATHENS",
            "AIGIO",
            1.0,
            &["S3"],
            Some(5),
        );
    }
    for q in 0..2 {
        trade(
            engine,
            "broker",
            Plan::Safe,
            "ATHENS",
            "AIGIO",
            f64::from(q),
            &["S2"],
            Some(3),
        );
    }
    for q in 0..8 {
        trade(
            engine,
            "broker",
            Plan::Economic,
            "AIGIO",
            "PATRA",
            f64::from(q),
            &["P2"],
            Some(3),
        );
    }
}

pub fn engine_with(dir: &std::path::Path, csv: &str) -> Arc<Engine> {
    let engine = Engine::open(dir).unwrap();
    engine.ingest(csv.as_bytes()).unwrap();
    Arc::new(engine)
}
