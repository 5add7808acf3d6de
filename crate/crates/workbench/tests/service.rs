use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use tsxil_core::feedback::Feedback;
use tsxil_core::models::Network;
use tsxil_core::presets;
use tsxil_core::synthetic::BumpTask;
use tsxil_core::train::{evaluate, train};
use tsxil_workbench::checkpoint::Checkpoint;
use tsxil_workbench::dataset::Dataset;
use tsxil_workbench::service::{router, AppState, ServiceConfig};
use tsxil_workbench::store::Store;

/// Data root with a spatially decoyed bump set "toy" and a plain model
/// "base" trained on it.
fn fixture(root: &Path) -> Store {
    fixture_with(root, 120, 15)
}

fn fixture_with(root: &Path, samples: usize, epochs: usize) -> Store {
    let store = Store::open(root).unwrap();
    let task = BumpTask { samples, ..BumpTask::default() };
    let clean = Dataset::prepare_classification(task.generate(1).unwrap(), 1).unwrap();
    let (mut toy, masks) = clean.apply_decoy(&presets::spatial_decoy(), Some(1)).unwrap();
    if let Dataset::Classification(d) = &mut toy {
        d.header.name = "toy".into();
    }
    store.save_dataset("toy", &toy).unwrap();
    std::fs::write(store.dataset_dir("toy").unwrap().join("masks.json"), masks.to_bytes()).unwrap();

    let mut tc = presets::training(toy.task());
    tc.epochs = epochs;
    let (samples, _) = toy.training_set(&Feedback::none()).unwrap();
    let model = Network::new(presets::classifier(2), 0).unwrap();
    let outcome = train(&model, &samples, &Feedback::none(), &tc).unwrap();
    store.save_model("base", &Checkpoint::new(outcome.model, Some(toy.header().clone()))).unwrap();
    store
}

fn app(store: Store) -> Router {
    router(AppState::new(store, ServiceConfig { explain_steps: 16, ..ServiceConfig::default() }).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: impl Into<Body>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json").body(body.into()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, "GET", uri, Body::empty()).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn post_json(app: &Router, uri: &str, body: &[u8]) -> (StatusCode, Value) {
    let (s, b) = call(app, "POST", uri, body.to_vec()).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn wait_done(app: &Router, id: &str) -> Value {
    for _ in 0..600 {
        let (s, job) = get_json(app, &format!("/jobs/{id}?wait=2")).await;
        assert_eq!(s, StatusCode::OK);
        if job["state"] == "done" || job["state"] == "failed" {
            return job;
        }
    }
    panic!("job {id} did not finish");
}

fn first_train_sample(store: &Store) -> usize {
    let d = store.load_dataset("toy").unwrap();
    d.indices(tsxil_core::data::SplitTag::Train)[0]
}

#[tokio::test(flavor = "multi_thread")]
async fn datasets_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(fixture(dir.path()));
    let (s, list) = get_json(&app, "/datasets").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list[0]["id"], "toy");
    assert_eq!(list[0]["samples"], 120);
    assert_eq!(list[0]["len"], 64);
    assert_eq!(list[0]["decoys"], json!(["cls_spatial"]));

    let (s, sample) = get_json(&app, "/datasets/toy/samples/3").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(sample["values"].as_array().unwrap().len(), 64);
    assert!(sample["label"].is_string());

    assert_eq!(get_json(&app, "/datasets/toy/samples/120").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&app, "/datasets/nope/samples/0").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&app, "/models").await.1, json!(["base"]));
}

#[tokio::test(flavor = "multi_thread")]
async fn explain_both_domains() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(fixture(dir.path()));
    let (s, t) = get_json(&app, "/explain/base/5?domain=time").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(t["sample_id"], 5);
    assert_eq!(t["values"].as_array().unwrap().len(), 64);
    let (_, f) = get_json(&app, "/explain/base/5?domain=freq").await;
    assert_eq!(f["re"].as_array().unwrap().len(), 64);
    assert_eq!(f["im"].as_array().unwrap().len(), 64);
    assert!(f.get("values").is_none());

    assert_eq!(get_json(&app, "/explain/missing/5").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&app, "/explain/base/999").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&app, "/explain/base/5?domain=space").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get_json(&app, "/jobs/job-77").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&app, "/masks/m99").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn explained_interval_round_trips_as_mask() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixture(dir.path());
    let n = first_train_sample(&store);
    let app = app(store);
    let (_, e) = get_json(&app, &format!("/explain/base/{n}")).await;
    let values: Vec<f64> = serde_json::from_value(e["values"].clone()).unwrap();
    let top = (0..values.len()).max_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs())).unwrap();
    let (start, end) = (top.saturating_sub(2), (top + 3).min(values.len()));

    // non-canonical spacing must come back untouched
    let body = format!("[ {{\"sample_id\": {n}, \"domain\": \"time\", \"intervals\": [[{start}, {end}]]}} ]");
    let (s, posted) = post_json(&app, "/masks?dataset=toy", body.as_bytes()).await;
    assert_eq!(s, StatusCode::OK, "{posted}");
    let id = posted["id"].as_str().unwrap();
    let (s, echoed) = call(&app, "GET", &format!("/masks/{id}"), Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(echoed, body.as_bytes());
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_masks_list_fields() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixture(dir.path());
    let d = store.load_dataset("toy").unwrap();
    let test = d.indices(tsxil_core::data::SplitTag::Test)[0];
    let app = app(store);

    let body = br#"[{"sample_id":"x","domain":"time","intervals":[[0]]},{"sample_id":1,"domain":"freq"}]"#;
    let (s, err) = post_json(&app, "/masks?dataset=toy", body).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let fields: Vec<&str> = err["fields"].as_array().unwrap().iter().map(|f| f["field"].as_str().unwrap()).collect();
    for f in ["[0].sample_id", "[0].intervals[0]", "[1].re_bins"] {
        assert!(fields.contains(&f), "{f} missing from {fields:?}");
    }

    let body = br#"[{"sample_id":0,"domain":"time","intervals":[[10,80]]}]"#;
    let (s, err) = post_json(&app, "/masks?dataset=toy", body).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["fields"][0]["field"], "[0].intervals[0]");

    let body = format!(r#"[{{"sample_id":{test},"domain":"time","intervals":[[0,4]]}}]"#);
    let (s, err) = post_json(&app, "/masks?dataset=toy", body.as_bytes()).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{err}");
    assert!(err["fields"][0]["message"].as_str().unwrap().contains("training split"));

    assert_eq!(post_json(&app, "/masks?dataset=toy", b"{not json").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post_json(&app, "/masks?dataset=nope", b"[]").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn noop_revision_keeps_base_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixture(dir.path());
    let base = store.load_model("base").unwrap();
    let d = store.load_dataset("toy").unwrap();
    let test_metric = evaluate(&base.model, &d.split_samples(tsxil_core::data::SplitTag::Test)).unwrap().value();
    let app = app(store.clone());

    let (s, posted) = post_json(&app, "/masks?dataset=toy", b"[]").await;
    assert_eq!(s, StatusCode::OK);
    let req = json!({ "model": "base", "masks": posted["id"], "lambda_sp": 0.0, "lambda_fr": 0.0 });
    let (s, job) = post_json(&app, "/revise", req.to_string().as_bytes()).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let job = wait_done(&app, job["id"].as_str().unwrap()).await;
    assert_eq!(job["state"], "done", "{job}");
    assert_eq!(job["noop"], true);
    assert_eq!(job["before"], job["after"]);
    assert_eq!(job["after"]["test"].as_f64().unwrap(), test_metric);
    assert_eq!(job["checkpoint_sha256"].as_str().unwrap(), base.hash());
}

#[tokio::test(flavor = "multi_thread")]
async fn revision_moves_attribution_off_the_mask() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixture_with(dir.path(), 400, 40);
    let n = first_train_sample(&store);
    let masks = std::fs::read(store.dataset_dir("toy").unwrap().join("masks.json")).unwrap();
    let app = app(store);

    let (s, posted) = post_json(&app, "/masks?dataset=toy", &masks).await;
    assert_eq!(s, StatusCode::OK, "{posted}");
    let req = json!({ "model": "base", "masks": posted["id"] });
    let (s, job) = post_json(&app, "/revise", req.to_string().as_bytes()).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let job = wait_done(&app, job["id"].as_str().unwrap()).await;
    assert_eq!(job["state"], "done", "{job}");
    assert_eq!(job["noop"], false);
    let epochs = presets::training(tsxil_core::losses::TaskKind::Classification).epochs;
    assert_eq!(job["progress"]["log"].as_array().unwrap().len(), epochs);
    let before = &job["before"];
    let after = &job["after"];
    let (m0, m1) = (before["mask_mass"].as_f64().unwrap(), after["mask_mass"].as_f64().unwrap());
    assert!(m1 < 0.5 * m0, "mask mass {m0} -> {m1}");
    assert!(after["test"].as_f64().unwrap() > before["test"].as_f64().unwrap() + 0.05, "{before} -> {after}");

    let id = job["id"].as_str().unwrap();
    let (s, e) = get_json(&app, &format!("/jobs/{id}/explain/{n}?domain=time")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(e["sample_id"], n);
    let (s, e) = get_json(&app, &format!("/explain/{}/{n}?domain=time", job["result_model"].as_str().unwrap())).await;
    assert_eq!(s, StatusCode::OK, "{e}");
    assert_eq!(get_json(&app, "/models").await.1.as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn identical_jobs_give_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let store = fixture(dir.path());
    let masks = std::fs::read(store.dataset_dir("toy").unwrap().join("masks.json")).unwrap();
    let app = app(store);
    let (_, posted) = post_json(&app, "/masks?dataset=toy", &masks).await;
    let mut train = presets::training(tsxil_core::losses::TaskKind::Classification);
    train.epochs = 3;
    let mut hashes = Vec::new();
    for init in ["fresh", "fresh", "base"] {
        let req = json!({ "model": "base", "masks": posted["id"], "train": train, "lambda_sp": 10.0, "init": init });
        let (s, job) = post_json(&app, "/revise", req.to_string().as_bytes()).await;
        assert_eq!(s, StatusCode::ACCEPTED);
        let job = wait_done(&app, job["id"].as_str().unwrap()).await;
        assert_eq!(job["state"], "done", "{job}");
        assert_eq!(job["progress"]["epoch"], 3);
        assert_eq!(job["progress"]["log"].as_array().unwrap().len(), 3);
        hashes.push(job["checkpoint_sha256"].as_str().unwrap().to_string());
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_ne!(hashes[0], hashes[2], "fine-tuning starts from the base weights");
}

#[tokio::test(flavor = "multi_thread")]
async fn revise_rejects_unknown_references() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(fixture(dir.path()));
    let (s, _) = post_json(&app, "/revise", json!({ "model": "nope" }).to_string().as_bytes()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = post_json(&app, "/revise", json!({ "model": "base", "masks": "m41" }).to_string().as_bytes()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = post_json(&app, "/revise", json!({ "model": "base", "dataset": "../x" }).to_string().as_bytes()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = post_json(&app, "/revise", b"{").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}
