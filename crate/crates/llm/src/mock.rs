use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};

use async_trait::async_trait;
use parking_lot::Mutex;

use crate::error::TransportError;
use crate::templates::{DETECTION_TEMPLATE, FUSION_TEMPLATE};
use crate::transport::{ChatRequest, ChatResponse, ChatTransport, Role};

type ResponderFn = dyn Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync;

enum Behaviour {
    Script(VecDeque<Result<String, TransportError>>),
    Responder(Box<ResponderFn>),
}

/// In-process provider for tests and offline runs.
pub struct MockTransport {
    behaviour: Mutex<Behaviour>,
    calls: AtomicUsize,
    requests: Mutex<Vec<ChatRequest>>,
}

/// Detection reply used by [`MockTransport::demo`].
pub const DEMO_CATALOG: &str = r#"{
  "gender": ["male", "female", "non-binary"],
  "age": ["young adult", "middle-aged", "elderly"],
  "race": ["White", "Asian", "Black", "Hispanic"]
}"#;

impl MockTransport {
    /// Replies are returned in order; once exhausted every call fails.
    pub fn scripted<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_results(replies.into_iter().map(|s| Ok(s.into())))
    }

    pub fn with_results(replies: impl IntoIterator<Item = Result<String, TransportError>>) -> Self {
        Self::new(Behaviour::Script(replies.into_iter().collect()))
    }

    pub fn responder(f: impl Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync + 'static) -> Self {
        Self::new(Behaviour::Responder(Box::new(f)))
    }

    /// A provider that is unreachable.
    pub fn down() -> Self {
        Self::responder(|_| Err(TransportError::new("connection refused")))
    }

    /// Deterministic stand-in: detection always yields a gender/age/race
    /// catalog; fusion appends the assigned values to the original prompt.
    pub fn demo() -> Self {
        Self::responder(|req| {
            let system = req.messages.iter().find(|m| m.role == Role::System).map(|m| m.content.as_str());
            let user = req.messages.iter().rev().find(|m| m.role == Role::User).map_or("", |m| m.content.as_str());
            match system {
                Some(DETECTION_TEMPLATE) => Ok(DEMO_CATALOG.to_string()),
                Some(FUSION_TEMPLATE) => demo_fusion(user),
                _ => Err(TransportError::new("demo provider only knows the two built-in templates")),
            }
        })
    }

    fn new(behaviour: Behaviour) -> Self {
        MockTransport { behaviour: Mutex::new(behaviour), calls: AtomicUsize::new(0), requests: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().clone()
    }
}

fn demo_fusion(user: &str) -> Result<String, TransportError> {
    let quoted = |prefix: &str| {
        user.lines()
            .find_map(|l| l.strip_prefix(prefix))
            .and_then(|r| r.strip_prefix('"')?.strip_suffix('"'))
            .map(str::to_string)
    };
    let prompt = quoted("Original prompt: ").ok_or_else(|| TransportError::new("no original prompt"))?;
    let attrs = quoted("Attributes to include: ").ok_or_else(|| TransportError::new("no attributes"))?;
    let values: Vec<&str> = attrs.split(", ").filter_map(|p| p.split_once(": ").map(|(_, v)| v)).collect();
    Ok(format!("{prompt}, depicted as {}", values.join(", ")))
}

#[async_trait]
impl ChatTransport for MockTransport {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().push(request.clone());
        let reply = match &mut *self.behaviour.lock() {
            Behaviour::Script(queue) => queue.pop_front().unwrap_or_else(|| Err(TransportError::new("mock script exhausted"))),
            Behaviour::Responder(f) => f(request),
        };
        reply.map(|content| ChatResponse { content, model: request.model.clone(), latency_ms: 0 })
    }
}
