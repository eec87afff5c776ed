mod common;

use std::time::Duration;

use base64::Engine;
use common::{fixture_dir, StubServer};
use vlgen_core::filter::{EmbedError, EmbeddingBackend, RemoteEmbedder};
use vlgen_core::genharness::{
    generate_one, GenError, GeneratorBackend, RemoteGenerator, RemoteGeneratorConfig, RetryPolicy,
};

fn generator(url: &str, max_retries: u32, timeout: Duration) -> RemoteGenerator {
    let mut decoding = serde_json::Map::new();
    decoding.insert("temperature".into(), 0.2.into());
    RemoteGenerator::new(
        RemoteGeneratorConfig {
            endpoint: url.to_string(),
            image_root: fixture_dir().join("images"),
            timeout,
            max_new_tokens: 64,
            decoding,
        },
        RetryPolicy {
            max_retries,
            base: Duration::from_millis(1),
            jitter: false,
        },
    )
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 2,
        base: Duration::from_millis(1),
        jitter: false,
    }
}

#[test]
fn generate_request_shape_and_eos_stripping() {
    let server = StubServer::start(|_, _| (200, r#"{"text":"Question: q? Answer: a</s>"}"#.into()));
    let g = generator(&server.url, 0, Duration::from_secs(5));
    let out = generate_one(&g, "img03.png", "<s> sys USER: <image> Describe. ASSISTANT:").unwrap();
    assert_eq!(out.text, "Question: q? Answer: a");
    assert_eq!(out.retries, 0);

    let req = server.requests.lock().unwrap()[0].clone();
    assert_eq!((req.method.as_str(), req.path.as_str()), ("POST", "/generate"));
    let body = req.json();
    assert_eq!(body["prompt"], "<s> sys USER: <image> Describe. ASSISTANT:");
    assert_eq!(body["max_new_tokens"], 64);
    assert_eq!(body["temperature"], 0.2);
    let sent = base64::engine::general_purpose::STANDARD
        .decode(body["image"].as_str().unwrap())
        .unwrap();
    assert_eq!(sent, std::fs::read(fixture_dir().join("images/img03.png")).unwrap());
}

#[test]
fn server_errors_are_retried_until_success() {
    let server = StubServer::start(|_, i| {
        if i < 2 {
            (500, r#"{"error":"busy"}"#.into())
        } else {
            (200, r#"{"text":"ok"}"#.into())
        }
    });
    let g = generator(&server.url, 3, Duration::from_secs(5));
    let out = g.generate("img00.png", "p").unwrap();
    assert_eq!((out.text.as_str(), out.retries), ("ok", 2));
    assert_eq!(server.request_count(), 3);
}

#[test]
fn retries_never_exceed_the_budget() {
    let server = StubServer::start(|_, _| (503, r#"{"error":"down"}"#.into()));
    let g = generator(&server.url, 2, Duration::from_secs(5));
    let err = g.generate("img00.png", "p").unwrap_err();
    assert_eq!(
        err,
        GenError::RemoteError {
            status: 503,
            message: "down".into()
        }
    );
    assert_eq!(server.request_count(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = StubServer::start(|_, _| (400, r#"{"error":"bad prompt"}"#.into()));
    let g = generator(&server.url, 3, Duration::from_secs(5));
    let err = g.generate("img00.png", "p").unwrap_err();
    assert_eq!(
        err,
        GenError::RemoteError {
            status: 400,
            message: "bad prompt".into()
        }
    );
    assert_eq!(server.request_count(), 1);
}

#[test]
fn slow_server_times_out() {
    let server = StubServer::start(|_, _| {
        std::thread::sleep(Duration::from_millis(600));
        (200, r#"{"text":"late"}"#.into())
    });
    let g = generator(&server.url, 0, Duration::from_millis(150));
    assert_eq!(g.generate("img00.png", "p").unwrap_err(), GenError::Timeout);
}

#[test]
fn missing_image_fails_before_any_request() {
    let server = StubServer::start(|_, _| (200, r#"{"text":"x"}"#.into()));
    let g = generator(&server.url, 0, Duration::from_secs(5));
    assert!(matches!(g.generate("nope.png", "p"), Err(GenError::ImageRead { .. })));
    assert_eq!(server.request_count(), 0);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let g = generator("http://127.0.0.1:9", 1, Duration::from_secs(2));
    assert!(matches!(g.generate("img00.png", "p"), Err(GenError::Transport(_))));
}

fn embed_server() -> StubServer {
    StubServer::start(|req, _| match (req.method.as_str(), req.path.as_str()) {
        ("GET", "/info") => (200, r#"{"dimension":3,"model":"stub-clip"}"#.into()),
        ("POST", "/embed_text") => {
            let text = req.json()["text"].as_str().unwrap().to_string();
            match text.as_str() {
                "short" => (200, r#"{"vector":[1.0,0.0]}"#.into()),
                "long" => (200, r#"{"vector":[2.0,0.0,0.0]}"#.into()),
                _ => (200, r#"{"vector":[0.6,0.8,0.0]}"#.into()),
            }
        }
        ("POST", "/embed_image") => {
            let ok = base64::engine::general_purpose::STANDARD
                .decode(req.json()["image"].as_str().unwrap())
                .is_ok();
            assert!(ok);
            (200, r#"{"vector":[0.0,0.0,1.0]}"#.into())
        }
        _ => (404, r#"{"error":"no route"}"#.into()),
    })
}

#[test]
fn embedding_protocol() {
    let server = embed_server();
    let e = RemoteEmbedder::connect(&server.url, Duration::from_secs(5), fast_retry()).unwrap();
    assert_eq!(e.dimension(), 3);
    assert_eq!(e.info().model, "stub-clip");
    assert_eq!(e.embed_text("a dog").unwrap(), vec![0.6, 0.8, 0.0]);
    assert_eq!(e.embed_image(b"\x89PNG...").unwrap(), vec![0.0, 0.0, 1.0]);
    assert!(matches!(
        e.embed_text("short"),
        Err(EmbedError::DimensionMismatch { expected: 3, found: 2 })
    ));
    assert!(matches!(e.embed_text("long"), Err(EmbedError::NotUnit { .. })));
    assert!(e.id().contains("stub-clip"));
}

#[test]
fn embedding_server_errors_surface() {
    let server = StubServer::start(|req, _| match req.path.as_str() {
        "/info" => (200, r#"{"dimension":2,"model":"m"}"#.into()),
        _ => (500, r#"{"error":"gpu fell over"}"#.into()),
    });
    let e = RemoteEmbedder::connect(&server.url, Duration::from_secs(5), fast_retry()).unwrap();
    let err = e.embed_text("x").unwrap_err();
    assert!(
        matches!(err, EmbedError::Request(GenError::RemoteError { status: 500, .. })),
        "{err}"
    );
    // one /info call, then the original attempt plus two retries
    assert_eq!(server.request_count(), 4);
}
