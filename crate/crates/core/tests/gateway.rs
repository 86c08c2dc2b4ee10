use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use ledgernet::chain::ChainHead;
use ledgernet::gateway::{self, desk_scenario, Client, DeskConfig, DeskHandle};
use ledgernet::intent::{IntentRequest, Preference, Verb};
use ledgernet::sched::SEC;
use ledgernet::simnet::ScenarioSpec;
use serde_json::Value;
use tower::ServiceExt;

fn manual(ring: usize) -> DeskHandle {
    gateway::desk::start(DeskConfig { scenario: desk_scenario(7), speed: 0.0, ring, ..Default::default() }).unwrap()
}

async fn call(desk: &DeskHandle, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty)).unwrap();
    let resp = gateway::router(desk.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

/// Reads SSE `data:` payloads until `n` have arrived.
async fn sse(desk: &DeskHandle, from: u64, n: usize) -> Vec<Value> {
    let req = Request::get(format!("/events?from_seq={from}")).body(Body::empty()).unwrap();
    let resp = gateway::router(desk.clone()).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let mut body = resp.into_body();
    let mut buf = String::new();
    let mut out = Vec::new();
    while out.len() < n {
        let frame = tokio::time::timeout(Duration::from_secs(10), body.frame()).await.expect("sse stalled");
        let Some(Ok(frame)) = frame else { break };
        if let Ok(data) = frame.into_data() {
            buf.push_str(std::str::from_utf8(&data).unwrap());
        }
        while let Some(end) = buf.find("\n\n") {
            let chunk: String = buf.drain(..end + 2).collect();
            for line in chunk.lines() {
                if let Some(d) = line.strip_prefix("data:") {
                    out.push(serde_json::from_str(d.trim()).unwrap());
                }
            }
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread")]
async fn head_matches_last_block() {
    let desk = manual(10_000);
    desk.advance(2 * SEC).await.unwrap();
    let (st, head) = call(&desk, "GET", "/chain/head", None).await;
    assert_eq!(st, StatusCode::OK);
    let head: ChainHead = serde_json::from_value(head).unwrap();
    let (st, block) = call(&desk, "GET", &format!("/chain/blocks/{}", head.height), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(block["block_hash"], serde_json::to_value(head.block_hash).unwrap());
    let tx_hash = block["txs"][0]["tx_hash"].as_str().map(str::to_owned);
    if let Some(h) = tx_hash {
        let (st, rec) = call(&desk, "GET", &format!("/chain/tx/{h}"), None).await;
        assert_eq!(st, StatusCode::OK);
        assert_eq!(rec["block_height"], head.height);
    }
    let (st, err) = call(&desk, "GET", &format!("/chain/blocks/{}", head.height + 1), None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "NotFound");
    let (st, err) = call(&desk, "GET", "/chain/tx/zz", None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "BadHash");
    let (st, _) = call(&desk, "GET", &format!("/chain/tx/{}", "ab".repeat(32)), None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn registry_topology_and_mapping() {
    let desk = manual(10_000);
    desk.advance(SEC).await.unwrap();
    let (_, reg) = call(&desk, "GET", "/registry", None).await;
    let (_, topo) = call(&desk, "GET", "/topology", None).await;
    let (_, map) = call(&desk, "GET", "/mapping", None).await;
    let n_switches = topo["switches"].as_array().unwrap().len();
    let n_ctrl = topo["controllers"].as_array().map(|a| a.len()).unwrap_or(0);
    assert!(reg.as_array().unwrap().len() >= n_switches + n_ctrl);
    assert_eq!(map.as_object().unwrap().len(), n_switches);
}

#[tokio::test(flavor = "multi_thread")]
async fn intent_submission_reaches_validated() {
    let desk = manual(10_000);
    desk.advance(SEC).await.unwrap();
    let req = serde_json::json!({"verb": "RemoveDevice", "target": "S3", "preference": "None"});
    let (st, v) = call(&desk, "POST", "/intents", Some(req)).await;
    assert_eq!(st, StatusCode::ACCEPTED);
    let id = v["intent_id"].as_u64().unwrap();
    desk.advance(6 * SEC).await.unwrap();
    let (st, rep) = call(&desk, "GET", &format!("/intents/{id}/report"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(rep["status"], "Validated", "{rep}");
    assert!(rep["history"].as_array().unwrap().len() >= 4);

    let (st, err) = call(&desk, "POST", "/intents", Some(serde_json::json!({"verb": "RemoveDevice", "target": "S99"}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "UnknownTarget");
    let (st, err) = call(&desk, "GET", "/intents/999/report", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "UnknownIntent");
}

#[tokio::test(flavor = "multi_thread")]
async fn remap_and_evict_validation() {
    let desk = manual(10_000);
    desk.advance(SEC).await.unwrap();
    let (st, err) = call(&desk, "POST", "/mapping/remap", Some(serde_json::json!({"switch": "S1", "controller": "C9"}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "RemapRejected");
    let (st, err) = call(&desk, "POST", "/elements/X7/evict", None).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "EvictRejected");
    let (st, v) = call(&desk, "POST", "/elements/S2/evict", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["evicted"], "S2");
    desk.advance(SEC).await.unwrap();
    let (_, map) = call(&desk, "GET", "/mapping", None).await;
    assert!(map.get("S2").is_none(), "{map}");
}

#[tokio::test(flavor = "multi_thread")]
async fn events_replay_in_order() {
    let desk = manual(10_000);
    desk.advance(2 * SEC).await.unwrap();
    let next = desk.bus().next_seq();
    assert!(next > 5);
    let evs = sse(&desk, 0, next as usize).await;
    let seqs: Vec<u64> = evs.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (0..next).collect::<Vec<_>>());
    assert!(evs.iter().any(|e| e["kind"] == "block_committed"));
    let tail = sse(&desk, next - 2, 2).await;
    assert_eq!(tail[0]["seq"], next - 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn events_live_after_replay() {
    let desk = manual(10_000);
    desk.advance(SEC).await.unwrap();
    let from = desk.bus().next_seq();
    let d2 = desk.clone();
    let reader = tokio::spawn(async move { sse(&d2, from, 2).await });
    tokio::time::sleep(Duration::from_millis(100)).await;
    // An idle network emits one metrics tick per second.
    desk.advance(2 * SEC).await.unwrap();
    let got = reader.await.unwrap();
    assert_eq!(got[0]["seq"], from);
    assert_eq!(got[1]["kind"], "metrics_tick");
}

#[tokio::test(flavor = "multi_thread")]
async fn evicted_sequence_is_gone() {
    let desk = manual(16);
    desk.advance(3 * SEC).await.unwrap();
    assert!(desk.bus().oldest_seq() > 0);
    let (st, err) = call(&desk, "GET", "/events?from_seq=0", None).await;
    assert_eq!(st, StatusCode::GONE);
    assert_eq!(err["error"], "SeqTooOld");
    let ahead = desk.bus().next_seq() + 5;
    let (st, err) = call(&desk, "GET", &format!("/events?from_seq={ahead}"), None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "SeqAhead");
}

#[tokio::test(flavor = "multi_thread")]
async fn subscribers_do_not_perturb_the_run() {
    let a = manual(10_000);
    let b = manual(10_000);
    let watcher = b.clone();
    let reader = tokio::spawn(async move { sse(&watcher, 0, 24).await });
    for _ in 0..4 {
        a.advance(SEC).await.unwrap();
        b.advance(SEC).await.unwrap();
    }
    assert_eq!(reader.await.unwrap().len(), 24);
    assert_eq!(a.snapshot().head, b.snapshot().head);
    let ea = a.bus().snapshot_from(0).unwrap();
    let eb = b.bus().snapshot_from(0).unwrap();
    assert_eq!(ea.len(), eb.len());
    assert!(ea.iter().zip(&eb).all(|(x, y)| x.seq == y.seq && x.payload == y.payload));
}

#[tokio::test(flavor = "multi_thread")]
async fn scenario_run_endpoint() {
    let desk = manual(64);
    let mut spec = ScenarioSpec::ddos_basic(Default::default(), 3);
    spec.duration_ms = 4000;
    let (st, v) = call(&desk, "POST", "/scenarios/run?seed=11", Some(serde_json::to_value(&spec).unwrap())).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["summary"]["seed"], 11);
    assert!(v["metrics_csv"].as_str().unwrap().starts_with("t_s"));
    let mut bad = serde_json::to_value(&spec).unwrap();
    bad["version"] = serde_json::json!(99);
    let (st, err) = call(&desk, "POST", "/scenarios/run", Some(bad)).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "InvalidScenario");
}

#[test]
fn blocking_client_over_tcp() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let desk = manual(10_000);
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    rt.block_on(desk.advance(SEC)).unwrap();
    rt.spawn(gateway::serve_on(listener, desk.clone()));

    let c = Client::new(&addr);
    let head: ChainHead = serde_json::from_value(c.chain_head().unwrap()).unwrap();
    assert_eq!(head, desk.snapshot().head);
    let id = c
        .submit_intent(&IntentRequest { verb: Verb::RecalculatePaths, target: "S1".into(), preference: Preference::None })
        .unwrap()["intent_id"]
        .as_u64()
        .unwrap();
    rt.block_on(desk.advance(2 * SEC)).unwrap();
    let rep = c.report(id).unwrap();
    assert!(rep["status"].is_string());
    let err = c.block(head.height + 10_000).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let mut seen = 0;
    c.events(0, |_| {
        seen += 1;
        seen < 5
    })
    .unwrap();
    assert_eq!(seen, 5);
}
