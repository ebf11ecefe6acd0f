use std::sync::Mutex;

use super::{Capabilities, ChatRequest, Completion, EngineError, Transport};

type Responder = dyn Fn(&ChatRequest) -> Result<Completion, EngineError> + Send + Sync;

/// In-process transport driven by a closure. Records every request it sees.
pub struct StubTransport {
    respond: Box<Responder>,
    log: Mutex<Vec<ChatRequest>>,
    caps: Capabilities,
}

impl StubTransport {
    pub fn new<F>(respond: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<Completion, EngineError> + Send + Sync + 'static,
    {
        StubTransport {
            respond: Box::new(respond),
            log: Mutex::new(Vec::new()),
            caps: Capabilities {
                reasoning: true,
                prefill: true,
            },
        }
    }

    pub fn with_capabilities(mut self, caps: Capabilities) -> Self {
        self.caps = caps;
        self
    }

    /// Requests received so far, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl Transport for StubTransport {
    fn endpoint(&self) -> &str {
        "stub"
    }

    fn capabilities(&self) -> Capabilities {
        self.caps
    }

    fn send(&self, request: &ChatRequest) -> Result<Completion, EngineError> {
        self.log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(request.clone());
        (self.respond)(request)
    }
}
