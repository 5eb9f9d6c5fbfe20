//! Replay backend.
//!
//! Serves the exchanges recorded in a transcript, in order. The requested
//! role must match the recorded one; running past the end or diverging from
//! the recorded sequence is an error, which is how truncated or incompatible
//! transcripts surface.

use std::cell::Cell;

use crate::backend::{BackendError, BackendResponse, ChatBackend, ChatExchange, CompletionRequest};

pub struct ReplayBackend {
    exchanges: Vec<ChatExchange>,
    cursor: Cell<usize>,
}

impl ReplayBackend {
    pub fn new(exchanges: Vec<ChatExchange>) -> Self {
        Self {
            exchanges,
            cursor: Cell::new(0),
        }
    }

    pub fn remaining(&self) -> usize {
        self.exchanges.len() - self.cursor.get().min(self.exchanges.len())
    }
}

impl ChatBackend for ReplayBackend {
    fn id(&self) -> String {
        "replay".to_string()
    }

    fn complete_raw(&self, request: &CompletionRequest) -> Result<BackendResponse, BackendError> {
        let index = self.cursor.get();
        let Some(recorded) = self.exchanges.get(index) else {
            return Err(BackendError::ReplayExhausted {
                call_index: index as u64,
            });
        };
        if recorded.role_tag != request.role {
            return Err(BackendError::ReplayRoleMismatch {
                call_index: index as u64,
                recorded: recorded.role_tag.label(),
                requested: request.role.label(),
            });
        }
        self.cursor.set(index + 1);
        Ok(BackendResponse {
            text: recorded.response_text.clone(),
            usage: Some(recorded.usage),
            latency_ms: recorded.latency_ms,
        })
    }
}
