mod common;

use std::collections::BTreeMap;

use common::*;
use reqwest::StatusCode;
use serde_json::{json, Value};
use trajlab_core::aggregation::MergeDecision;
use trajlab_core::autoann::{run_autoann, AutoAnnConfig};
use trajlab_core::model::{AnnotationLayer, Phase, SegmentType, TrajectoryPoint};
use trajlab_core::synth::trajectory_from_speeds;
use trajlab_service::store::TripSummary;

struct Fixture {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
    base: String,
    http: reqwest::Client,
}

async fn fixture(count: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    write_fixture_corpus(&root, count);
    let base = spawn(open_store(&root)).await;
    Fixture {
        _dir: dir,
        root,
        base,
        http: reqwest::Client::new(),
    }
}

impl Fixture {
    async fn get(&self, path: &str) -> reqwest::Response {
        self.http.get(format!("{}{path}", self.base)).send().await.unwrap()
    }

    async fn post(&self, path: &str, body: Value) -> reqwest::Response {
        self.http.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap()
    }

    async fn assign(&self, trips: &[&str], annotators: &[&str]) {
        let r = self.post("/assignments", json!({"trips": trips, "annotators": annotators, "seed": 1})).await;
        assert_eq!(r.status(), StatusCode::OK);
    }

    async fn mark(&self, trip: &str, author: &str, step: u32, kind: &str, types: &[&str]) -> reqwest::Response {
        self.post(
            &format!("/trips/{trip}/marks"),
            json!({"author": author, "time_step": step, "annotation_type": kind, "segment_types": types}),
        )
        .await
    }
}

#[tokio::test]
async fn catalog_and_points() {
    let f = fixture(3).await;
    let trips: Vec<TripSummary> = f.get("/trips").await.json().await.unwrap();
    let ids: Vec<&str> = trips.iter().map(|t| t.trip_id.as_str()).collect();
    assert_eq!(ids, ["peak", "strict-only", "trip-01", "trip-02", "trip-03"]);
    assert_eq!(trips[0].n, 13);
    assert!(trips[0].start < trips[0].end);

    let points: Vec<TrajectoryPoint> = f.get("/trips/peak").await.json().await.unwrap();
    assert_eq!(points.len(), 13);
    assert_eq!(points[5].speed, 20.0);
    assert_eq!(f.get("/trips/nope").await.status(), StatusCode::NOT_FOUND);
    assert_eq!(f.get("/trips/nope/layers").await.status(), StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn assignment_over_http() {
    let f = fixture(50).await;
    let trips: Vec<String> = (1..=50).map(|i| format!("trip-{i:02}")).collect();
    let people: Vec<String> = (1..=7).map(|i| format!("ann{i}")).collect();
    let body = json!({"trips": trips, "annotators": people, "seed": 2024});
    let first: Vec<Value> = f.post("/assignments", body.clone()).await.json().await.unwrap();
    let second: Vec<Value> = f.post("/assignments", body).await.json().await.unwrap();
    assert_eq!(first, second);
    assert_eq!(first.len(), 50);
    let mut load: BTreeMap<String, usize> = BTreeMap::new();
    for a in &first {
        let pair = a["annotators"].as_array().unwrap();
        assert_eq!(pair.len(), 2);
        assert_ne!(pair[0], pair[1]);
        for p in pair {
            *load.entry(p.as_str().unwrap().to_string()).or_default() += 1;
        }
    }
    assert_eq!(load.values().sum::<usize>(), 100);
    let r = f.post("/assignments", json!({"trips": ["trip-01"], "annotators": ["solo"], "seed": 1})).await;
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    let r = f.post("/assignments", json!({"trips": ["ghost"], "annotators": ["a", "b"], "seed": 1})).await;
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn upsert_and_undo() {
    let f = fixture(1).await;
    f.assign(&["trip-01"], &["alice", "bob"]).await;

    let layer: AnnotationLayer = f.mark("trip-01", "alice", 12, "Segment", &["Turn"]).await.json().await.unwrap();
    assert_eq!(layer.get(12).unwrap().segment_types, [SegmentType::Turn].into());
    let layer: AnnotationLayer = f.mark("trip-01", "alice", 12, "Non-Segment", &[]).await.json().await.unwrap();
    assert!(layer.get(12).is_none());

    f.mark("trip-01", "alice", 12, "Segment", &["Speed-Up"]).await;
    let layer: AnnotationLayer = f.mark("trip-01", "alice", 12, "Segment", &["Merge"]).await.json().await.unwrap();
    assert_eq!(layer.len(), 1);
    assert_eq!(layer.get(12).unwrap().segment_types, [SegmentType::Merge].into());

    // idempotent repeat
    let again: AnnotationLayer = f.mark("trip-01", "alice", 12, "Segment", &["Merge"]).await.json().await.unwrap();
    assert_eq!(again, layer);

    // undo on a bare point is a successful no-op
    let r = f.mark("trip-01", "alice", 40, "Non-Segment", &[]).await;
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.json::<AnnotationLayer>().await.unwrap(), layer);

    let layers: Vec<AnnotationLayer> = f.get("/trips/trip-01/layers?author=alice").await.json().await.unwrap();
    assert_eq!(layers, vec![layer]);
    let bob: Vec<AnnotationLayer> = f.get("/trips/trip-01/layers?author=bob").await.json().await.unwrap();
    assert!(bob.is_empty());
}

#[tokio::test]
async fn mark_errors() {
    let f = fixture(1).await;
    f.assign(&["trip-01"], &["alice", "bob"]).await;
    assert_eq!(f.mark("trip-01", "mallory", 3, "Segment", &["Turn"]).await.status(), StatusCode::FORBIDDEN);
    assert_eq!(f.mark("trip-01", "alice", 999, "Segment", &["Turn"]).await.status(), StatusCode::NOT_FOUND);
    assert_eq!(f.mark("ghost", "alice", 1, "Segment", &["Turn"]).await.status(), StatusCode::NOT_FOUND);
    assert_eq!(f.mark("trip-01", "alice", 3, "Segment", &[]).await.status(), StatusCode::BAD_REQUEST);
    // the aggregator may write without an assignment
    assert_eq!(f.mark("trip-02", "aggregator", 3, "Segment", &["Turn"]).await.status(), StatusCode::NOT_FOUND);
    assert_eq!(f.mark("peak", "aggregator", 3, "Maybe-Segment", &["Turn"]).await.status(), StatusCode::OK);
}

#[tokio::test]
async fn suggestions_pass_through() {
    let f = fixture(0).await;
    let v: Value = f.get("/trips/peak/suggestions?profile=strict").await.json().await.unwrap();
    let expected = run_autoann(&trajectory_from_speeds(&SPEEDUP_FIXTURE), &AutoAnnConfig::default()).unwrap();
    let marks: Vec<u64> = v["autoann"]["layer"]["marks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["time_step"].as_u64().unwrap())
        .collect();
    let want: Vec<u64> = expected.layer.marks().iter().map(|m| m.time_step as u64).collect();
    assert_eq!(marks, want);

    let strict: Value = f.get("/trips/strict-only/suggestions?profile=strict").await.json().await.unwrap();
    assert_eq!(strict["candidates"].as_array().unwrap().len(), 1);
    let easy: Value = f.get("/trips/strict-only/suggestions?profile=easy").await.json().await.unwrap();
    assert!(easy["candidates"].as_array().unwrap().is_empty());
    assert_eq!(f.get("/trips/ghost/suggestions").await.status(), StatusCode::NOT_FOUND);
    assert_eq!(f.get("/trips/peak/suggestions?profile=lax").await.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn finalize_identity_and_conflict() {
    let f = fixture(1).await;
    f.assign(&["trip-01"], &["alice", "bob"]).await;
    f.mark("trip-01", "alice", 40, "Segment", &["Exit"]).await;
    f.mark("trip-01", "alice", 60, "Maybe-Segment", &["Merge", "Speed-Up"]).await;
    f.mark("trip-01", "bob", 42, "Segment", &["Exit"]).await;
    f.mark("trip-01", "bob", 60, "Segment", &["Merge"]).await;

    let decisions = vec![
        MergeDecision::accept_mark("alice", 40),
        MergeDecision::reject_mark("bob", 42),
        MergeDecision::accept_mark("alice", 60),
    ];
    let r = f.post("/trips/trip-01/finalize", json!({"phase": "strict", "decisions": decisions})).await;
    assert_eq!(r.status(), StatusCode::OK);
    let merged: AnnotationLayer = r.json().await.unwrap();
    assert_eq!(merged.author(), "aggregator");
    let steps: Vec<u32> = merged.marks().iter().map(|m| m.time_step).collect();
    assert_eq!(steps, [40, 60]);
    assert_eq!(merged.get(60).unwrap().segment_types.len(), 2);
    assert!(f.root.join("finalized/strict/trip-01.json").is_file());

    let clash = vec![MergeDecision::accept_mark("alice", 60), MergeDecision::accept_mark("bob", 60)];
    let r = f.post("/trips/trip-01/finalize", json!({"phase": "strict", "decisions": clash})).await;
    assert_eq!(r.status(), StatusCode::CONFLICT);
    let body: Value = r.json().await.unwrap();
    assert!(body["error"].as_str().unwrap().contains("tie-break"));

    let unknown = vec![MergeDecision::accept_mark("carol", 1)];
    let r = f.post("/trips/trip-01/finalize", json!({"phase": "easy", "decisions": unknown})).await;
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    let r = f.post("/trips/trip-01/finalize", json!({"phase": "expert", "decisions": []})).await;
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn reload_reproduces_state() {
    let f = fixture(2).await;
    f.assign(&["trip-01", "trip-02"], &["alice", "bob", "carol"]).await;
    let pairs: Vec<[String; 2]> = {
        let store = open_store(&f.root);
        vec![store.assignment("trip-01").unwrap(), store.assignment("trip-02").unwrap()]
    };
    let who = &pairs[0][0];
    f.mark("trip-01", who, 5, "Segment", &["Turn", "Exit"]).await;
    f.mark("trip-01", who, 9, "Maybe-Segment", &["Other"]).await;
    f.mark("trip-01", who, 9, "Non-Segment", &[]).await;
    f.post(
        "/trips/trip-01/finalize",
        json!({"phase": "easy", "decisions": [MergeDecision::accept_mark(who, 5)]}),
    )
    .await;

    let before: Vec<AnnotationLayer> = f.get("/trips/trip-01/layers").await.json().await.unwrap();
    let reopened = open_store(&f.root);
    assert_eq!(reopened.layers("trip-01", None).unwrap(), before);
    assert_eq!(reopened.assignment("trip-01").unwrap(), pairs[0]);
    assert_eq!(reopened.assignment("trip-02").unwrap(), pairs[1]);
    assert_eq!(reopened.finalized("trip-01", Phase::Easy).unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_marks_all_land() {
    let f = fixture(1).await;
    f.assign(&["trip-01"], &["alice", "bob"]).await;
    let mut tasks = Vec::new();
    for author in ["alice", "bob"] {
        for step in 1..=40u32 {
            let http = f.http.clone();
            let url = format!("{}/trips/trip-01/marks", f.base);
            tasks.push(tokio::spawn(async move {
                let body = json!({"author": author, "time_step": step, "annotation_type": "Segment", "segment_types": ["Other"]});
                http.post(url).json(&body).send().await.unwrap().status()
            }));
        }
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let layers: Vec<AnnotationLayer> = f.get("/trips/trip-01/layers").await.json().await.unwrap();
    assert_eq!(layers.len(), 2);
    assert!(layers.iter().all(|l| l.len() == 40));
    let reopened = open_store(&f.root);
    assert_eq!(reopened.layers("trip-01", None).unwrap(), layers);
}
