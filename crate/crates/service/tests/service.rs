use std::path::PathBuf;

use grip_core::pipeline::{Config, ObjectConfig, ObjectModel, Shape};
use grip_core::materials::MaterialParams;
use grip_service::api::*;
use grip_service::work;

fn tiny_config() -> Config {
    let mut config = Config {
        candidates_per_object: 1,
        ..Default::default()
    };
    config.metrics.samples = 1000;
    config.objects.push(ObjectConfig {
        name: "cube".into(),
        shape: Shape::Cube { size: 0.05, cells: 2 },
        model: ObjectModel::Rigid,
        material: MaterialParams {
            young_modulus: 1e9,
            density: 800.0,
            ..MaterialParams::soft_object()
        },
        sdf_resolution: 32,
    });
    config
}

async fn start() -> String {
    let (addr, _) = grip_service::spawn(([127, 0, 0, 1], 0).into()).await.unwrap();
    format!("http://{addr}")
}

#[tokio::test]
async fn health_reports_ok() {
    let base = start().await;
    let v: serde_json::Value = reqwest::get(format!("{base}/health")).await.unwrap().json().await.unwrap();
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn invalid_config_is_rejected_before_work_starts() {
    let base = start().await;
    let mut config = tiny_config();
    config.protocol.halt_force = -1.0;
    let req = ValidateRequest {
        config,
        base: PathBuf::from("."),
        out: std::env::temp_dir().join("never-written"),
        batch_size: 0,
    };
    let resp = reqwest::Client::new().post(format!("{base}/validate")).json(&req).send().await.unwrap();
    assert_eq!(resp.status(), 400);
    let err: ApiError = resp.json().await.unwrap();
    assert_eq!(err.kind, ErrorKind::Config);
    assert!(err.message.contains("protocol.halt_force"), "{}", err.message);
}

#[tokio::test]
async fn malformed_body_is_a_config_error() {
    let base = start().await;
    let resp = reqwest::Client::new()
        .post(format!("{base}/synth"))
        .header("content-type", "application/json")
        .body("{\"config\": 3}")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);
    let err: ApiError = resp.json().await.unwrap();
    assert_eq!(err.kind, ErrorKind::Config);
}

#[tokio::test]
async fn missing_dataset_is_an_io_error() {
    let base = start().await;
    let dir = tempfile::tempdir().unwrap();
    let req = DatasetRequest {
        dataset: dir.path().join("absent"),
    };
    let resp = reqwest::Client::new().post(format!("{base}/metrics")).json(&req).send().await.unwrap();
    assert_eq!(resp.status(), 500);
    let err: ApiError = resp.json().await.unwrap();
    assert_eq!(err.kind, ErrorKind::Io);
}

#[tokio::test]
async fn validate_streams_batch_status_then_the_result() {
    let base = start().await;
    let dir = tempfile::tempdir().unwrap();
    let req = ValidateRequest {
        config: tiny_config(),
        base: PathBuf::from("."),
        out: dir.path().join("ds"),
        batch_size: 0,
    };
    let resp = reqwest::Client::new().post(format!("{base}/validate")).json(&req).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(resp.headers()["content-type"], grip_service::NDJSON);
    let text = resp.text().await.unwrap();
    let events: Vec<Event<ValidateResponse>> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let (last, progress) = events.split_last().unwrap();
    assert!(!progress.is_empty());
    assert!(progress.iter().all(|e| matches!(e, Event::Batch(_))));
    let Event::Done(done) = last else { panic!("last event {last:?}") };
    assert_eq!(done.counts.total(), 1);
    assert_eq!(done.manifest.trials.len(), 1);
    assert!(done.issues.is_empty(), "{:?}", done.issues);
    assert!(dir.path().join("ds/manifest.json").exists());
}

#[test]
fn bench_rejects_empty_and_zero_env_counts() {
    for envs in [vec![], vec![1, 0]] {
        let req = BenchRequest {
            config: tiny_config(),
            base: PathBuf::from("."),
            envs,
            steps: 1,
            threads: 1,
        };
        assert_eq!(work::check_bench(&req).unwrap_err().kind, ErrorKind::Config);
    }
}

#[test]
fn bench_emits_one_row_per_env_count() {
    let req = BenchRequest {
        config: tiny_config(),
        base: PathBuf::from("."),
        envs: vec![1, 3],
        steps: 2,
        threads: 1,
    };
    let mut rows = Vec::new();
    let resp = work::bench::<BenchResponse>(&req, &mut |e| {
        if let Event::Row(r) = e {
            rows.push(r);
        }
    })
    .unwrap();
    assert_eq!(rows, resp.rows);
    assert_eq!(resp.rows.iter().map(|r| r.envs).collect::<Vec<_>>(), [1, 3]);
    assert!(resp.csv.starts_with("env_count,batched_s,sequential_s,speedup\n"));
    assert_eq!(resp.csv.lines().count(), 3);
}

#[test]
fn synth_compose_pairs_left_and_right_candidates() {
    let mut config = tiny_config();
    config.compose.k = 2;
    config.compose.n_target = 4;
    let req = SynthRequest {
        config,
        base: PathBuf::from("."),
        mode: SynthMode::Compose,
        count: Some(4),
    };
    let resp = work::synth(&req).unwrap();
    let o = &resp.objects[0];
    assert!(!o.candidates.is_empty() && !o.right.is_empty());
    let c = o.composition.as_ref().unwrap();
    assert!(!c.candidates.is_empty());
    for b in &c.candidates {
        assert!(b.left < o.candidates.len() && b.right < o.right.len());
    }
    assert_eq!(work::synth(&req).unwrap(), resp);
}
