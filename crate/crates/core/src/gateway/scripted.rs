use std::sync::Mutex;

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError};

type Script = dyn FnMut(&ChatRequest) -> ChatResponse + Send;

/// Backend driven by a closure, for tests and fixture recording.
pub struct ScriptedBackend {
    script: Mutex<Box<Script>>,
    log: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new(script: impl FnMut(&ChatRequest) -> ChatResponse + Send + 'static) -> Self {
        Self { script: Mutex::new(Box::new(script)), log: Mutex::new(Vec::new()) }
    }

    /// Always answers with `text`.
    pub fn constant(text: &str) -> Self {
        let text = text.to_string();
        Self::new(move |_| ChatResponse::complete(text.clone()))
    }

    /// Requests received so far, in order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap().clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.log.lock().unwrap().push(request.clone());
        let mut script = self.script.lock().unwrap();
        Ok(script(request))
    }
}
