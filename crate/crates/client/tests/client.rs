use std::path::PathBuf;

use grip_client::api::*;
use grip_client::{Client, ClientError};
use grip_core::materials::MaterialParams;
use grip_core::pipeline::{Config, ObjectConfig, ObjectModel, Shape};

fn tiny_config() -> Config {
    let mut config = Config {
        candidates_per_object: 2,
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

async fn client() -> Client {
    let (addr, _) = grip_service::spawn(([127, 0, 0, 1], 0).into()).await.unwrap();
    Client::new(format!("http://{addr}/"))
}

#[tokio::test]
async fn base_url_drops_trailing_slash() {
    let c = client().await;
    assert!(!c.base_url().ends_with('/'));
    assert_eq!(c.health().await.unwrap()["status"], "ok");
}

#[tokio::test]
async fn validate_metrics_and_report_round_trip() {
    let c = client().await;
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let mut batches = 0;
    let v = c
        .validate(
            &ValidateRequest {
                config: tiny_config(),
                base: PathBuf::from("."),
                out: out.clone(),
                batch_size: 1,
            },
            |e| {
                if let Event::Batch(s) = e {
                    assert!(s.batch < 2);
                    batches += 1;
                }
            },
        )
        .await
        .unwrap();
    assert!(batches > 0);
    assert_eq!(v.counts.total(), 2);

    let m = c.metrics(&DatasetRequest { dataset: out.clone() }).await.unwrap();
    assert!(m.changed.is_empty());
    assert_eq!(m.rows.len(), 2);
    assert!(m.rows.iter().all(|r| r.d1 == Some(0.0)));
    assert!(m.csv.starts_with("id,object,verdict,d1_m,d2_m\n"));

    let r = c.report(&DatasetRequest { dataset: out }).await.unwrap();
    assert_eq!(r.summary.total.trials, 2);
    assert!(r.svg.starts_with("<svg"));
}

#[tokio::test]
async fn service_errors_carry_kind_and_status() {
    let c = client().await;
    let mut config = tiny_config();
    config.metrics.samples = 0;
    let err = c
        .synth(&SynthRequest {
            config,
            base: PathBuf::from("."),
            mode: SynthMode::Antipodal,
            count: None,
        })
        .await
        .unwrap_err();
    match &err {
        ClientError::Api { status, error } => {
            assert_eq!(*status, 400);
            assert_eq!(error.kind, ErrorKind::Config);
            assert!(error.message.contains("metrics.samples"));
        }
        other => panic!("{other}"),
    }
}

#[tokio::test]
async fn unreachable_service_is_an_http_error() {
    // Bind then drop to get a port nothing listens on.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let c = Client::new(format!("http://127.0.0.1:{port}"));
    assert!(matches!(c.health().await, Err(ClientError::Http(_))));
}
