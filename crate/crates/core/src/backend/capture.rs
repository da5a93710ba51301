use std::sync::Mutex;

use super::{BackendError, ChatBackend, ChatReply, ChatRequest};

#[derive(Debug, Clone, PartialEq)]
pub struct CapturedRequest {
    pub purpose: String,
    pub request: ChatRequest,
    pub reply: Result<String, BackendError>,
}

/// Records every request passed to an inner backend.
pub struct CaptureBackend<B> {
    inner: B,
    log: Mutex<Vec<CapturedRequest>>,
}

impl<B: ChatBackend> CaptureBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn requests(&self) -> Vec<CapturedRequest> {
        self.lock().clone()
    }

    pub fn purposes(&self) -> Vec<String> {
        self.lock().iter().map(|c| c.purpose.clone()).collect()
    }

    /// Number of captured calls whose purpose starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.lock()
            .iter()
            .filter(|c| c.purpose.starts_with(prefix))
            .count()
    }

    pub fn clear(&self) {
        self.lock().clear();
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Vec<CapturedRequest>> {
        self.log.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl<B: ChatBackend> ChatBackend for CaptureBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let result = self.inner.chat(request);
        self.lock().push(CapturedRequest {
            purpose: request.purpose.clone(),
            request: request.clone(),
            reply: result
                .as_ref()
                .map(|r| r.text.clone())
                .map_err(Clone::clone),
        });
        result
    }
}
