//! Bounded decision memory.
//!
//! Keeps the most recent `L` state transitions plus a short FIFO of free-text
//! notes learned along the way. Renders differ per environment: resource
//! allocation uses the compact dictionary-list form consumed by the critic,
//! grid transport summarizes state/action/delivery per step.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{StatePayload, TransitionRecord};

/// Most notes retained at once; older ones are dropped first.
pub const MAX_NOTES: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MemoryError {
    #[error("transition out of order: expected step {expected}, got {got}")]
    OutOfOrderTransition { expected: u64, got: u64 },
    #[error("memory holds transitions from a different environment")]
    WrongEnvironment,
}

/// Sliding-window trajectory store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionMemory {
    window_size: usize,
    transitions: VecDeque<TransitionRecord>,
    notes: VecDeque<String>,
}

impl DecisionMemory {
    pub fn new(window_size: usize) -> Self {
        assert!(window_size >= 1, "window must hold at least one transition");
        Self {
            window_size,
            transitions: VecDeque::new(),
            notes: VecDeque::new(),
        }
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.transitions.iter()
    }

    pub fn notes(&self) -> impl Iterator<Item = &str> {
        self.notes.iter().map(String::as_str)
    }

    /// Append a transition, evicting the oldest once the window is full.
    /// The new record must directly follow the last stored one.
    pub fn push(&mut self, record: TransitionRecord) -> Result<(), MemoryError> {
        if let Some(last) = self.transitions.back() {
            let expected = last.state.step_index + 1;
            if record.state.step_index != expected {
                return Err(MemoryError::OutOfOrderTransition {
                    expected,
                    got: record.state.step_index,
                });
            }
        }
        self.transitions.push_back(record);
        while self.transitions.len() > self.window_size {
            self.transitions.pop_front();
        }
        Ok(())
    }

    /// Store a learned-experience note, FIFO-capped at [`MAX_NOTES`].
    pub fn push_note(&mut self, note: impl Into<String>) {
        self.notes.push_back(note.into());
        while self.notes.len() > MAX_NOTES {
            self.notes.pop_front();
        }
    }

    /// Dictionary-list rendering of resource-allocation rounds, one entry per
    /// round in chronological order:
    /// `[{action:[4, 7, 9], system_reward:[12.3]}, ...]`.
    pub fn render_gs(&self) -> Result<String, MemoryError> {
        let mut entries = Vec::with_capacity(self.transitions.len());
        for record in &self.transitions {
            let gs = match &record.next_state.payload {
                StatePayload::Gs(s) => s,
                _ => return Err(MemoryError::WrongEnvironment),
            };
            // The transition's round is the last one in its next-state history.
            let round = gs
                .history
                .last()
                .ok_or(MemoryError::WrongEnvironment)?;
            let actions: Vec<String> = round.actions.iter().map(ToString::to_string).collect();
            entries.push(format!(
                "{{action:[{}], system_reward:[{}]}}",
                actions.join(", "),
                round.reward
            ));
        }
        Ok(format!("[{}]", entries.join(", ")))
    }

    /// Chronological grid summary of the retained window: one line per step
    /// with the pre-step state summary, the joint action, and how many
    /// objects were delivered by it.
    pub fn render_grid(&self) -> Result<String, MemoryError> {
        let mut out = format!("recent transitions (window {}):", self.window_size);
        for record in &self.transitions {
            let (before, after) = match (&record.state.payload, &record.next_state.payload) {
                (StatePayload::Grid(a), StatePayload::Grid(b)) => (a, b),
                _ => return Err(MemoryError::WrongEnvironment),
            };
            let delivered = after.delivered() - before.delivered();
            out.push_str(&format!(
                "\n  step {}: objects remaining {}, joint {}, delivered this step: {}",
                record.state.step_index,
                before.objects.len(),
                record.joint_action.render_text(),
                delivered
            ));
        }
        if self.transitions.is_empty() {
            out.push_str("\n  (none yet)");
        }
        if !self.notes.is_empty() {
            out.push_str("\nnotes:");
            for n in &self.notes {
                out.push_str(&format!("\n  - {n}"));
            }
        }
        Ok(out)
    }
}
