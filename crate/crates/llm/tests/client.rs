use std::sync::Arc;

use fairguide_core::manifest::FusionSource;
use fairguide_core::{AttributeAssignment, PromptText};
use fairguide_llm::{LlmClient, LlmError, MockTransport, ParseError, ProviderConfig, ResponseCache, Role};

const FIREFIGHTER: &str = r#"{
  "gender": ["male", "female", "non-binary"],
  "age": ["young adult", "middle-aged", "elderly"],
  "race": ["White", "Asian", "Black", "Hispanic"],
}"#;

fn config(retries: usize) -> ProviderConfig {
    ProviderConfig { max_retries: retries, ..ProviderConfig::detection() }
}

fn client(mock: &Arc<MockTransport>, retries: usize) -> LlmClient {
    LlmClient::new(mock.clone(), config(retries)).unwrap()
}

fn prompt(s: &str) -> PromptText {
    PromptText::new(s).unwrap()
}

fn reading() -> (PromptText, AttributeAssignment) {
    (prompt("A portrait of a person reading a book"), [("gender", "female"), ("age", "elderly")].into_iter().collect())
}

#[tokio::test]
async fn scripted_firefighter() {
    let mock = Arc::new(MockTransport::scripted([FIREFIGHTER]));
    let r = client(&mock, 2).detect_biases(&prompt("a firefighter")).await.unwrap();
    assert_eq!(r.catalog.len(), 3);
    assert_eq!(r.attempts, 1);
    assert_eq!(r.raw, FIREFIGHTER);
    assert!(!r.cached);
    assert_eq!(mock.calls(), 1);
    assert_eq!(mock.requests()[0].temperature, 0.0);
}

#[tokio::test]
async fn garbage_then_valid_succeeds_on_second_attempt() {
    let mock = Arc::new(MockTransport::scripted(["no idea", FIREFIGHTER]));
    let r = client(&mock, 1).detect_biases(&prompt("a firefighter")).await.unwrap();
    assert_eq!(r.attempts, 2);
    assert_eq!(mock.calls(), 2);
    let second = &mock.requests()[1].messages;
    assert_eq!(second.len(), 4);
    assert_eq!(second[2].role, Role::Assistant);
    assert_eq!(second[2].content, "no idea");
    assert!(second[3].content.starts_with("Your previous answer violated: "));
    assert!(second[3].content.ends_with(". Output only the corrected JSON."));
}

#[tokio::test]
async fn bounded_retries() {
    let mock = Arc::new(MockTransport::responder(|_| Ok("{\"race\": \"Asian\"}".into())));
    let err = client(&mock, 2).detect_biases(&prompt("a firefighter")).await.unwrap_err();
    match err {
        LlmError::DetectionFailed { attempts, reason, last_raw } => {
            assert_eq!(attempts, 3);
            assert!(matches!(reason, ParseError::NotStringArray { .. }));
            assert_eq!(last_raw, "{\"race\": \"Asian\"}");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(mock.calls(), 3);
}

#[tokio::test]
async fn transport_error_is_surfaced() {
    let mock = Arc::new(MockTransport::with_results([Err(fairguide_llm::TransportError::with_status(503, "busy"))]));
    let err = client(&mock, 2).detect_biases(&prompt("a firefighter")).await.unwrap_err();
    assert!(matches!(err, LlmError::Transport(ref t) if t.status == Some(503)), "{err:?}");
    assert_eq!(mock.calls(), 1);
}

#[tokio::test]
async fn second_detection_hits_cache() {
    let mock = Arc::new(MockTransport::scripted([FIREFIGHTER]));
    let c = client(&mock, 0);
    let first = c.detect_biases(&prompt("a firefighter")).await.unwrap();
    let second = c.detect_biases(&prompt("a firefighter")).await.unwrap();
    assert_eq!(mock.calls(), 1);
    assert!(second.cached);
    assert_eq!(first.catalog, second.catalog);
}

#[tokio::test]
async fn cache_file_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let mock = Arc::new(MockTransport::scripted([FIREFIGHTER]));
    client(&mock, 0)
        .with_cache(Arc::new(ResponseCache::open(&path).unwrap()))
        .detect_biases(&prompt("a firefighter"))
        .await
        .unwrap();
    let fresh = Arc::new(MockTransport::down());
    let r = client(&fresh, 0)
        .with_cache(Arc::new(ResponseCache::open(&path).unwrap()))
        .detect_biases(&prompt("a firefighter"))
        .await
        .unwrap();
    assert!(r.cached);
    assert_eq!(fresh.calls(), 0);
}

#[tokio::test]
async fn cache_is_keyed_by_model() {
    let mock = Arc::new(MockTransport::demo());
    let a = LlmClient::new(mock.clone(), config(0)).unwrap();
    let cache = Arc::new(ResponseCache::in_memory());
    let a = a.with_cache(cache.clone());
    let b = LlmClient::new(mock.clone(), ProviderConfig { model: "other".into(), ..config(0) })
        .unwrap()
        .with_cache(cache);
    a.detect_biases(&prompt("a nurse")).await.unwrap();
    b.detect_biases(&prompt("a nurse")).await.unwrap();
    assert_eq!(mock.calls(), 2);
}

#[tokio::test]
async fn deterministic_mock_gives_identical_results() {
    let run = || async {
        let mock = Arc::new(MockTransport::scripted(["junk", FIREFIGHTER]));
        client(&mock, 2).detect_biases(&prompt("a firefighter")).await.unwrap()
    };
    assert_eq!(run().await, run().await);
}

#[tokio::test]
async fn fusion_exact_text() {
    let (y, a) = reading();
    let mock = Arc::new(MockTransport::scripted(["A portrait of an elderly female person reading a book"]));
    let f = client(&mock, 2).fuse_prompt(&y, &a).await.unwrap();
    assert_eq!(f.prompt.as_str(), "A portrait of an elderly female person reading a book");
    assert_eq!(f.source, FusionSource::Llm);
}

#[tokio::test]
async fn fusion_strips_outer_braces() {
    let (y, a) = reading();
    let mock = Arc::new(MockTransport::scripted(["{\n  A portrait of an elderly female person reading a book\n}"]));
    let f = client(&mock, 2).fuse_prompt(&y, &a).await.unwrap();
    assert_eq!(f.prompt.as_str(), "A portrait of an elderly female person reading a book");
}

#[tokio::test]
async fn embellished_paragraph_is_retried() {
    let (y, a) = reading();
    let paragraph = "In a softly lit and beautifully decorated living room filled with warm afternoon sunlight, \
        an elderly female person with silver hair and gentle wrinkles sits comfortably in a vintage armchair, \
        wearing round spectacles and a knitted cardigan, deeply absorbed in reading an old leather-bound book \
        while a cup of steaming tea rests nearby on a small wooden table beside her.";
    assert!(paragraph.split_whitespace().count() >= 60);
    let mock = Arc::new(MockTransport::scripted([paragraph, "A portrait of an elderly female person reading a book"]));
    let f = client(&mock, 2).fuse_prompt(&y, &a).await.unwrap();
    assert_eq!(mock.calls(), 2);
    assert_eq!(f.attempts, 2);
    assert_eq!(f.source, FusionSource::Llm);
    assert!(mock.requests()[1].messages[3].content.contains("Do not include extra descriptive words"));
}

#[tokio::test]
async fn fusion_falls_back_when_rules_keep_failing() {
    let (y, a) = reading();
    let mock = Arc::new(MockTransport::responder(|_| Ok("line one\n\nline two".into())));
    let f = client(&mock, 1).fuse_prompt(&y, &a).await.unwrap();
    assert_eq!(mock.calls(), 2);
    assert_eq!(f.source, FusionSource::Fallback);
    assert_eq!(f.prompt.as_str(), "A portrait of a person reading a book, female, elderly");
    assert_eq!(f.raw.as_deref(), Some("line one\n\nline two"));
}

#[tokio::test]
async fn provider_down_falls_back() {
    let (y, a) = reading();
    let mock = Arc::new(MockTransport::down());
    let f = client(&mock, 2).fuse_prompt(&y, &a).await.unwrap();
    assert_eq!(f.source, FusionSource::Fallback);
    assert_eq!(f.prompt.as_str(), "A portrait of a person reading a book, female, elderly");
    assert_eq!(mock.calls(), 1);
}

#[tokio::test]
async fn demo_provider_round_trip() {
    let mock = Arc::new(MockTransport::demo());
    let c = client(&mock, 0);
    let d = c.detect_biases(&prompt("A portrait photo of a computer programmer")).await.unwrap();
    assert_eq!(d.catalog.category_names().collect::<Vec<_>>(), ["gender", "age", "race"]);
    let a: AttributeAssignment = [("gender", "female"), ("race", "Black")].into_iter().collect();
    let f = c.fuse_prompt(&prompt("A portrait photo of a computer programmer"), &a).await.unwrap();
    assert_eq!(f.prompt.as_str(), "A portrait photo of a computer programmer, depicted as female, Black");
    assert_eq!(f.source, FusionSource::Llm);
}

#[tokio::test]
async fn in_flight_limit_is_respected() {
    use std::sync::atomic::{AtomicUsize, Ordering};
    let live = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (l, p) = (live.clone(), peak.clone());
    let mock = Arc::new(MockTransport::responder(move |_| {
        let now = l.fetch_add(1, Ordering::SeqCst) + 1;
        p.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(std::time::Duration::from_millis(5));
        l.fetch_sub(1, Ordering::SeqCst);
        Ok(FIREFIGHTER.into())
    }));
    let c = LlmClient::new(mock.clone(), ProviderConfig { max_in_flight: 2, ..config(0) }).unwrap();
    let tasks: Vec<_> = (0..8)
        .map(|i| {
            let c = c.clone();
            tokio::spawn(async move { c.detect_biases(&prompt(&format!("prompt {i}"))).await.unwrap() })
        })
        .collect();
    for t in tasks {
        t.await.unwrap();
    }
    assert_eq!(mock.calls(), 8);
    assert!(peak.load(Ordering::SeqCst) <= 2);
}
