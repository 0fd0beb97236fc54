use std::collections::BTreeSet;
use std::path::Path;

use movekit::classifier::{
    examples_from_corpus, train, EncoderConfig, ModelConfig, TrainConfig, Variant,
};
use movekit::corpus::{write_jsonl, AnnotatedAbstract, Span};
use movekit::ingest::SegmenterConfig;
use movekit::review::ReviewStore;
use movekit::synthetic::confound_abstracts;
use movekit::MoveLabel;
use movekit_server::{spawn, ServerConfig, ServerHandle};
use reqwest::StatusCode;
use serde_json::{json, Value};
use tempfile::TempDir;

fn toy_model_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig::toy(200),
        ..ModelConfig::for_variant(Variant::Plain)
    }
}

fn quick_train() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        learning_rate: 3e-3,
        patience: None,
        ..TrainConfig::default()
    }
}

/// Trains a small plain model on synthetic abstracts and saves it under `dir`.
fn save_model(dir: &Path) {
    let corpus = confound_abstracts(40, 11);
    let (examples, _) = examples_from_corpus(&corpus, &SegmenterConfig::default(), 1).unwrap();
    let model = train(&examples, None, &quick_train(), &toy_model_config()).unwrap();
    model.save(dir).unwrap();
}

fn unlabeled(n: usize, seed: u64, first_id: i64) -> Vec<AnnotatedAbstract> {
    confound_abstracts(n, seed)
        .into_iter()
        .enumerate()
        .map(|(i, aa)| {
            let mut doc = aa.doc;
            doc.id = (first_id + i as i64).into();
            AnnotatedAbstract::unlabeled(doc)
        })
        .collect()
}

fn doccano_values(records: &[AnnotatedAbstract]) -> Vec<Value> {
    write_jsonl(records)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

struct Fixture {
    dir: TempDir,
    server: ServerHandle,
    http: reqwest::Client,
}

impl Fixture {
    async fn start(tune: impl FnOnce(&mut ServerConfig, &Path)) -> Fixture {
        let dir = TempDir::new().unwrap();
        let model_dir = dir.path().join("seed-model");
        let md = model_dir.clone();
        tokio::task::spawn_blocking(move || save_model(&md))
            .await
            .unwrap();
        let mut cfg = ServerConfig {
            port: 0,
            data_dir: dir.path().join("data"),
            model_dir: dir.path().join("models"),
            initial_model: Some(model_dir),
            train: quick_train(),
            model: toy_model_config(),
            ..ServerConfig::default()
        };
        tune(&mut cfg, dir.path());
        let server = spawn(cfg).await.unwrap();
        Fixture {
            dir,
            server,
            http: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.server.url())
    }

    async fn get(&self, path: &str) -> reqwest::Response {
        self.http.get(self.url(path)).send().await.unwrap()
    }

    async fn post(&self, path: &str, body: Value) -> reqwest::Response {
        self.http
            .post(self.url(path))
            .json(&body)
            .send()
            .await
            .unwrap()
    }

    async fn put(&self, path: &str, body: Value) -> reqwest::Response {
        self.http
            .put(self.url(path))
            .json(&body)
            .send()
            .await
            .unwrap()
    }

    async fn enqueue(&self, records: &[AnnotatedAbstract]) -> Value {
        let resp = self
            .post("/api/tasks", json!({ "records": doccano_values(records) }))
            .await;
        assert_eq!(resp.status(), StatusCode::CREATED);
        resp.json().await.unwrap()
    }

    async fn next(&self, reviewer: &str) -> Option<Value> {
        let resp = self
            .get(&format!("/api/tasks/next?reviewer={reviewer}"))
            .await;
        match resp.status() {
            StatusCode::NO_CONTENT => None,
            StatusCode::OK => Some(resp.json().await.unwrap()),
            other => panic!("unexpected status {other}"),
        }
    }
}

fn spans_of(view: &Value) -> Vec<Span> {
    serde_json::from_value(view["label"].clone()).unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn enqueue_is_idempotent_and_skips_labeled_records() {
    let f = Fixture::start(|_, _| {}).await;
    let batch = unlabeled(10, 1, 1);
    let r = f.enqueue(&batch).await;
    assert_eq!(r["created"], 10);
    let again = f.enqueue(&batch).await;
    assert_eq!(again["created"], 0);
    assert_eq!(again["skipped_queued"].as_array().unwrap().len(), 10);

    // 3 records with reviewed labels, 7 without.
    let mut mixed = unlabeled(7, 2, 100);
    let mut labeled = confound_abstracts(3, 3);
    for (i, aa) in labeled.iter_mut().enumerate() {
        aa.doc.id = (200 + i as i64).into();
    }
    mixed.extend(labeled);
    let r = f.enqueue(&mixed).await;
    assert_eq!(r["created"], 7);
    assert_eq!(r["skipped_labeled"].as_array().unwrap().len(), 3);

    let stats: Value = f.get("/api/stats").await.json().await.unwrap();
    assert_eq!(stats["tasks"]["pending"], 17);
    f.server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn invalid_records_are_reported_not_fatal() {
    let f = Fixture::start(|_, _| {}).await;
    let mut values = doccano_values(&unlabeled(2, 1, 1));
    values.push(json!({"id": 9, "data": "Short text.", "label": [[0, 99, "BAC"]]}));
    values.push(json!({"id": 10, "data": "   "}));
    let resp = f.post("/api/tasks", json!({ "records": values })).await;
    let r: Value = resp.json().await.unwrap();
    assert_eq!(r["created"], 2);
    let invalid = r["invalid"].as_array().unwrap();
    assert_eq!(invalid.len(), 2);
    assert_eq!(invalid[0][0], 2);
    assert_eq!(invalid[1][0], 3);
    f.server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn tasks_come_out_oldest_first_and_never_twice() {
    let f = Fixture::start(|_, _| {}).await;
    assert!(f.next("a").await.is_none());
    f.enqueue(&unlabeled(5, 4, 1)).await;

    let first = f.next("a").await.unwrap();
    assert_eq!(first["id"], 1);
    assert_eq!(first["task"]["status"], "in_review");
    assert_eq!(first["task"]["reviewer"], "a");

    let (x, y) = tokio::join!(f.next("b"), f.next("c"));
    let ids: BTreeSet<i64> = [x, y]
        .iter()
        .map(|v| v.as_ref().unwrap()["id"].as_i64().unwrap())
        .collect();
    assert_eq!(ids, BTreeSet::from([2, 3]));

    let rest: Vec<i64> = [f.next("a").await, f.next("a").await]
        .iter()
        .map(|v| v.as_ref().unwrap()["id"].as_i64().unwrap())
        .collect();
    assert_eq!(rest, vec![4, 5]);
    assert!(f.next("a").await.is_none());
    f.server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn abstract_view_carries_doccano_fields_and_sentences() {
    let f = Fixture::start(|_, _| {}).await;
    f.enqueue(&unlabeled(1, 5, 42)).await;
    let v: Value = f.get("/api/abstracts/42").await.json().await.unwrap();
    assert_eq!(v["id"], 42);
    assert_eq!(v["status"], "auto");
    assert!(v["model_version"].as_str().unwrap().starts_with("plain-"));
    let label = v["label"].as_array().unwrap();
    let sentences = v["sentences"].as_array().unwrap();
    assert_eq!(label.len(), sentences.len());
    for (span, s) in label.iter().zip(sentences) {
        assert_eq!(span[0], s["start"]);
        assert_eq!(span[1], s["end"]);
        assert!(span[2].as_str().unwrap().parse::<MoveLabel>().is_ok());
    }
    assert!(v["provenance"]
        .as_array()
        .unwrap()
        .iter()
        .all(|p| p == "auto"));
    assert_eq!(v["task"]["version"], 0);
    assert_eq!(v["task"]["status"], "pending");

    let missing = f.get("/api/abstracts/999").await;
    assert_eq!(missing.status(), StatusCode::NOT_FOUND);
    let body: Value = missing.json().await.unwrap();
    assert!(body["error"].as_str().unwrap().contains("999"));
    f.server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn corrections_use_optimistic_versions_and_validation() {
    let f = Fixture::start(|_, _| {}).await;
    f.enqueue(&unlabeled(1, 6, 7)).await;

    // Not yet in review.
    let v: Value = f.get("/api/abstracts/7").await.json().await.unwrap();
    let mut spans = spans_of(&v);
    let resp = f
        .put(
            "/api/abstracts/7/annotation",
            json!({"label": spans, "expected_version": 0}),
        )
        .await;
    assert_eq!(resp.status(), StatusCode::CONFLICT);

    let v = f.next("r1").await.unwrap();
    let version = v["task"]["version"].as_u64().unwrap();
    spans[0].label = if spans[0].label == MoveLabel::Gap {
        MoveLabel::Purpose
    } else {
        MoveLabel::Gap
    };
    let resp = f
        .put(
            "/api/abstracts/7/annotation",
            json!({"label": spans, "expected_version": version, "reviewer": "r1"}),
        )
        .await;
    assert_eq!(resp.status(), StatusCode::OK);
    let updated: Value = resp.json().await.unwrap();
    assert_eq!(updated["task"]["version"], version + 1);
    assert_eq!(updated["provenance"][0], "corrected");
    assert_eq!(updated["provenance"][1], "auto");

    // A stale version is refused and the current version reported.
    let resp = f
        .put(
            "/api/abstracts/7/annotation",
            json!({"label": spans, "expected_version": version}),
        )
        .await;
    assert_eq!(resp.status(), StatusCode::CONFLICT);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["current_version"], version + 1);

    // Overlapping spans are a validation error and change nothing.
    let text_len = updated["data"].as_str().unwrap().chars().count();
    let bad =
        json!({"label": [[0, 10, "BAC"], [5, text_len, "GAP"]], "expected_version": version + 1});
    let resp = f.put("/api/abstracts/7/annotation", bad).await;
    assert_eq!(resp.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["violations"][0]["rule"], "overlap");
    let after: Value = f.get("/api/abstracts/7").await.json().await.unwrap();
    assert_eq!(after["label"], updated["label"]);
    assert_eq!(after["task"]["version"], version + 1);

    // Malformed triples are rejected by the body parser.
    let resp = f
        .put(
            "/api/abstracts/7/annotation",
            json!({"label": [[0, 4, "XYZ"]], "expected_version": 1}),
        )
        .await;
    assert!(resp.status().is_client_error());

    let resp = f
        .put(
            "/api/abstracts/nope/annotation",
            json!({"label": spans, "expected_version": 0}),
        )
        .await;
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    f.server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn finalize_marks_reviewed_and_feeds_the_confusion_report() {
    let f = Fixture::start(|_, _| {}).await;
    f.enqueue(&unlabeled(3, 7, 1)).await;
    let mut relabels = Vec::new();
    for _ in 0..3 {
        let v = f.next("r").await.unwrap();
        let id = v["id"].as_i64().unwrap();
        let mut spans = spans_of(&v);
        let old = spans[0].label;
        let new = if old == MoveLabel::Method {
            MoveLabel::Purpose
        } else {
            MoveLabel::Method
        };
        spans[0].label = new;
        relabels.push((old, new));
        let resp = f
            .put(
                &format!("/api/abstracts/{id}/annotation"),
                json!({"label": spans, "expected_version": v["task"]["version"]}),
            )
            .await;
        assert_eq!(resp.status(), StatusCode::OK);
        let resp = f
            .post(
                &format!("/api/abstracts/{id}/finalize"),
                json!({"reviewer": "r"}),
            )
            .await;
        assert_eq!(resp.status(), StatusCode::OK);
        let done: Value = resp.json().await.unwrap();
        assert_eq!(done["status"], "reviewed");
        assert_eq!(done["task"]["status"], "done");
        assert!(done["provenance"]
            .as_array()
            .unwrap()
            .iter()
            .all(|p| p == "corrected"));
        let again = f
            .post(&format!("/api/abstracts/{id}/finalize"), json!({}))
            .await;
        assert_eq!(again.status(), StatusCode::CONFLICT);
    }

    let report: Value = f.get("/api/reports/confusion").await.json().await.unwrap();
    let mut expected = std::collections::BTreeMap::new();
    for (o, n) in &relabels {
        *expected
            .entry((o.code().to_string(), n.code().to_string()))
            .or_insert(0u64) += 1;
    }
    let got: std::collections::BTreeMap<(String, String), u64> = report["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            (
                (
                    r["old"].as_str().unwrap().to_string(),
                    r["new"].as_str().unwrap().to_string(),
                ),
                r["count"].as_u64().unwrap(),
            )
        })
        .collect();
    assert_eq!(got, expected);

    let stats: Value = f.get("/api/stats").await.json().await.unwrap();
    assert_eq!(stats["tasks"]["done"], 3);
    assert_eq!(stats["reviewed_total"], 3);
    assert_eq!(stats["corpus"]["aggregates"]["all"]["abstracts"], 3);
    let by_field = f.get("/api/stats?partition=field").await;
    assert_eq!(by_field.status(), StatusCode::OK);
    let bad = f.get("/api/stats?partition=planet").await;
    assert_eq!(bad.status(), StatusCode::BAD_REQUEST);
    f.server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn saliency_payload_has_exactly_words_values_label() {
    let f = Fixture::start(|_, _| {}).await;
    f.enqueue(&unlabeled(1, 8, 3)).await;
    let resp = f.get("/api/saliency/3/0").await;
    assert_eq!(resp.status(), StatusCode::OK);
    let v: Value = resp.json().await.unwrap();
    let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, BTreeSet::from(["words", "values", "label"]));
    let words = v["words"].as_array().unwrap();
    let values = v["values"].as_array().unwrap();
    assert_eq!(words.len(), values.len());
    assert!(values
        .iter()
        .all(|x| (-1.0..=1.0).contains(&x.as_f64().unwrap())));

    let out_of_range = f.get("/api/saliency/3/99").await;
    assert_eq!(out_of_range.status(), StatusCode::NOT_FOUND);
    f.server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn labels_static_ui_and_unknown_routes() {
    let f = Fixture::start(|cfg, dir| {
        let ui = dir.join("ui");
        std::fs::create_dir_all(&ui).unwrap();
        std::fs::write(ui.join("index.html"), "<html>review ui</html>").unwrap();
        cfg.ui_dir = Some(ui);
    })
    .await;
    let labels: Value = f.get("/api/labels").await.json().await.unwrap();
    let labels = labels.as_array().unwrap();
    assert_eq!(labels.len(), 8);
    let colours: BTreeSet<&str> = labels
        .iter()
        .map(|l| l["color"].as_str().unwrap())
        .collect();
    assert_eq!(colours.len(), 8);

    let index = f.get("/").await;
    assert_eq!(index.status(), StatusCode::OK);
    assert!(index.text().await.unwrap().contains("review ui"));

    let missing = f.get("/api/nothing-here").await;
    assert_eq!(missing.status(), StatusCode::NOT_FOUND);
    let body: Value = missing.json().await.unwrap();
    assert!(body["error"].is_string());
    f.server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn placeholder_page_without_ui_bundle() {
    let f = Fixture::start(|_, _| {}).await;
    let index = f.get("/").await;
    assert_eq!(index.status(), StatusCode::OK);
    assert!(index.text().await.unwrap().contains("/api/"));
    f.server.shutdown().await.unwrap();
}

async fn review_all(f: &Fixture) {
    while let Some(v) = f.next("r").await {
        let id = v["id"].as_i64().unwrap();
        let resp = f
            .post(&format!("/api/abstracts/{id}/finalize"), json!({}))
            .await;
        assert_eq!(resp.status(), StatusCode::OK);
    }
}

/// Enqueues gold abstracts without labels, then "reviews" them by submitting the gold
/// spans, so the reviewed data is learnable.
async fn review_with_gold(f: &Fixture, gold: &[AnnotatedAbstract]) {
    let stripped: Vec<_> = gold
        .iter()
        .map(|g| AnnotatedAbstract::unlabeled(g.doc.clone()))
        .collect();
    f.enqueue(&stripped).await;
    while let Some(v) = f.next("r").await {
        let id = v["id"].as_i64().unwrap();
        let g = gold
            .iter()
            .find(|g| g.id().to_string() == id.to_string())
            .unwrap();
        let resp = f
            .put(
                &format!("/api/abstracts/{id}/annotation"),
                json!({"label": g.spans(), "expected_version": v["task"]["version"]}),
            )
            .await;
        assert_eq!(resp.status(), StatusCode::OK);
        let resp = f
            .post(&format!("/api/abstracts/{id}/finalize"), json!({}))
            .await;
        assert_eq!(resp.status(), StatusCode::OK);
    }
}

fn write_dev_file(dir: &Path) -> std::path::PathBuf {
    let dev: Vec<_> = confound_abstracts(20, 99)
        .into_iter()
        .enumerate()
        .map(|(i, mut aa)| {
            aa.doc.id = (5000 + i as i64).into();
            aa
        })
        .collect();
    let path = dir.join("dev.jsonl");
    std::fs::write(&path, write_jsonl(&dev)).unwrap();
    path
}

#[tokio::test(flavor = "multi_thread")]
async fn retrain_respects_threshold_and_promotes_a_sound_candidate() {
    let f = Fixture::start(|cfg, dir| {
        cfg.retrain_threshold = 4;
        cfg.dev_file = Some(write_dev_file(dir));
    })
    .await;
    let before: Value = f.get("/api/stats").await.json().await.unwrap();
    let seed_version = before["active_model"].as_str().unwrap().to_string();

    let resp = f.post("/api/retrain", json!({})).await;
    assert_eq!(resp.status(), StatusCode::CONFLICT);

    review_with_gold(&f, &confound_abstracts(30, 21)).await;
    let status: Value = f.get("/api/retrain").await.json().await.unwrap();
    assert_eq!(status["reviewed_since_training"], 30);
    assert_eq!(status["running"], false);

    let resp = f.post("/api/retrain?wait=true", json!({})).await;
    assert_eq!(resp.status(), StatusCode::OK);
    let status: Value = resp.json().await.unwrap();
    let last = &status["last"];
    assert_eq!(last["parent_version"], seed_version.as_str());
    assert_eq!(status["reviewed_since_training"], 0);
    let cand = last["candidate_dev_f1"].as_f64().unwrap();
    let active = last["active_dev_f1"].as_f64().unwrap();
    let eps = last["epsilon"].as_f64().unwrap();
    assert_eq!(last["promoted"].as_bool().unwrap(), cand >= active - eps);

    let after: Value = f.get("/api/stats").await.json().await.unwrap();
    let expected_active = if last["promoted"].as_bool().unwrap() {
        last["candidate_version"].as_str().unwrap()
    } else {
        seed_version.as_str()
    };
    assert_eq!(after["active_model"], expected_active);

    // Lineage and the decision log are on disk.
    let models = f.dir.path().join("models");
    let log = std::fs::read_to_string(models.join("retrain_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    let version = last["candidate_version"].as_str().unwrap();
    assert!(models
        .join("versions")
        .join(version)
        .join("weights.bin")
        .exists());

    // Below threshold again.
    let resp = f.post("/api/retrain", json!({})).await;
    assert_eq!(resp.status(), StatusCode::CONFLICT);
    f.server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn crippled_candidate_is_archived_not_promoted() {
    let f = Fixture::start(|cfg, dir| {
        cfg.retrain_threshold = 1;
        cfg.dev_file = Some(write_dev_file(dir));
        cfg.train.learning_rate = 0.0;
        cfg.epsilon = 0.5;
    })
    .await;
    let seed: Value = f.get("/api/stats").await.json().await.unwrap();
    review_with_gold(&f, &confound_abstracts(10, 31)).await;
    let resp = f.post("/api/retrain?wait=true", json!({})).await;
    assert_eq!(resp.status(), StatusCode::OK);
    let status: Value = resp.json().await.unwrap();
    let last = &status["last"];
    assert_eq!(last["promoted"], false, "{last}");
    assert!(
        last["candidate_dev_f1"].as_f64().unwrap() < last["active_dev_f1"].as_f64().unwrap() - 0.5
    );
    let after: Value = f.get("/api/stats").await.json().await.unwrap();
    assert_eq!(after["active_model"], seed["active_model"]);
    let archived = f
        .dir
        .path()
        .join("models/versions")
        .join(last["candidate_version"].as_str().unwrap());
    assert!(archived.exists());
    f.server.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_reproduces_state_after_shutdown() {
    let f = Fixture::start(|_, _| {}).await;
    f.enqueue(&unlabeled(4, 9, 1)).await;
    let v = f.next("r").await.unwrap();
    let mut spans = spans_of(&v);
    spans[0].label = MoveLabel::Contribution;
    f.put(
        "/api/abstracts/1/annotation",
        json!({"label": spans, "expected_version": 1}),
    )
    .await;
    review_all(&f).await;
    let before: Vec<Value> = views_of(&f, 1..=4).await;
    let data = f.dir.path().join("data");
    let Fixture { dir, server, .. } = f;
    server.shutdown().await.unwrap();

    // The snapshot and the raw log replay agree with what the service served.
    let reopened = ReviewStore::open(&data).unwrap();
    let replayed = ReviewStore::replay_log(&data.join("events.jsonl")).unwrap();
    assert!(reopened.same_state(&replayed));
    for (id, view) in (1..=4).zip(&before) {
        let rec = reopened.record(&id.into()).unwrap();
        assert_eq!(serde_json::to_value(rec.spans()).unwrap(), view["label"]);
        assert_eq!(rec.status.to_string(), view["status"].as_str().unwrap());
    }
    drop(reopened);
    drop(dir);
}

async fn views_of(f: &Fixture, ids: std::ops::RangeInclusive<i64>) -> Vec<Value> {
    let mut out = Vec::new();
    for id in ids {
        out.push(
            f.get(&format!("/api/abstracts/{id}"))
                .await
                .json()
                .await
                .unwrap(),
        );
    }
    out
}
