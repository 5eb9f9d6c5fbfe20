//! Fault injection around any backend.
//!
//! Overrides selected responses by role and per-role call index, leaving all
//! other calls to the wrapped backend. This is how tests force grammar
//! violations, proposal conflicts, bad suggestions, and assessor rejections
//! at precise points in an episode.

use std::cell::RefCell;
use std::collections::BTreeMap;

use crate::backend::{BackendError, BackendResponse, ChatBackend, CompletionRequest, RoleTag};

/// When an override fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FireOn {
    /// Only the nth call (0-based) of the matching role.
    NthCall(u64),
    /// Every call of the matching role.
    Always,
}

#[derive(Debug, Clone)]
pub struct Fault {
    pub role: RoleTag,
    pub fire_on: FireOn,
    pub response: String,
}

/// Wraps a backend and substitutes scripted responses where faults match.
pub struct FaultInjector<B> {
    inner: B,
    faults: Vec<Fault>,
    counters: RefCell<BTreeMap<String, u64>>,
}

impl<B: ChatBackend> FaultInjector<B> {
    pub fn new(inner: B, faults: Vec<Fault>) -> Self {
        Self {
            inner,
            faults,
            counters: RefCell::new(BTreeMap::new()),
        }
    }
}

impl<B: ChatBackend> ChatBackend for FaultInjector<B> {
    fn id(&self) -> String {
        format!("fault({})", self.inner.id())
    }

    fn complete_raw(&self, request: &CompletionRequest) -> Result<BackendResponse, BackendError> {
        let label = request.role.label();
        let index = {
            let mut counters = self.counters.borrow_mut();
            let c = counters.entry(label).or_insert(0);
            let current = *c;
            *c += 1;
            current
        };
        for fault in &self.faults {
            if fault.role != request.role {
                continue;
            }
            let fires = match fault.fire_on {
                FireOn::NthCall(n) => n == index,
                FireOn::Always => true,
            };
            if fires {
                return Ok(BackendResponse {
                    text: fault.response.clone(),
                    usage: None,
                    latency_ms: 0,
                });
            }
        }
        self.inner.complete_raw(request)
    }
}
