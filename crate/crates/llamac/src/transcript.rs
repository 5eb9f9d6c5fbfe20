//! Episode transcripts.
//!
//! A transcript is a line-delimited JSON file: one header line, then one line
//! per record in append order (model exchanges, loop events, environment
//! transitions), and a final result line. Replaying a transcript re-executes
//! the episode against the recorded responses and must reproduce the original
//! result exactly. The record schema is documented in `docs/formats.md`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::grammar::GRAMMAR_VERSION;
use crate::backend::{ChatExchange, TokenUsage};
use crate::core::TransitionRecord;
use crate::orchestrator::{EpisodeResult, RunConfig};

/// Bumped whenever the line schema changes shape.
pub const TRANSCRIPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub version: u32,
    pub grammar_version: String,
    pub seed: u64,
    pub scenario_hash: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopEventKind {
    MemorySnapshot,
    InternalIteration,
    InternalAccepted,
    InternalFallback,
    ExternalRound,
    ExternalRevision,
    ExternalFallback,
    GrammarRetry,
    ConflictDegraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopEvent {
    pub kind: LoopEventKind,
    pub step: u64,
    pub iteration: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TranscriptRecord {
    Header(TranscriptHeader),
    Exchange(ChatExchange),
    LoopEvent(LoopEvent),
    Transition(TransitionRecord),
    Result { episode: EpisodeResult },
}

/// Append-ordered accumulator shared by the gateway (exchanges) and the
/// episode driver (events, transitions). Single-threaded; the append order
/// is the total replay order.
#[derive(Debug, Default)]
pub struct TranscriptLog {
    records: Vec<TranscriptRecord>,
}

impl TranscriptLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TranscriptRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[TranscriptRecord] {
        &self.records
    }

    pub fn exchanges(&self) -> impl Iterator<Item = &ChatExchange> {
        self.records.iter().filter_map(|r| match r {
            TranscriptRecord::Exchange(e) => Some(e),
            _ => None,
        })
    }

    pub fn transitions(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.records.iter().filter_map(|r| match r {
            TranscriptRecord::Transition(t) => Some(t),
            _ => None,
        })
    }

    /// Token usage folded by role kind. The per-episode report is defined as
    /// exactly this fold.
    pub fn usage_by_role(&self) -> BTreeMap<String, TokenUsage> {
        fold_usage(self.exchanges())
    }
}

/// Fold exchange usage by role kind (`critic_explore`, `critic_exploit`,
/// `assessor`, `actor`, `debater`).
pub fn fold_usage<'a>(
    exchanges: impl Iterator<Item = &'a ChatExchange>,
) -> BTreeMap<String, TokenUsage> {
    let mut out: BTreeMap<String, TokenUsage> = BTreeMap::new();
    for e in exchanges {
        out.entry(e.role_tag.kind_str().to_string())
            .or_default()
            .add(&e.usage);
    }
    out
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("transcript line {line} is not valid: {message}")]
    Parse { line: usize, message: String },
    #[error("transcript is truncated: {0}")]
    Truncated(String),
    #[error(
        "version mismatch: transcript has schema {found_version} grammar {found_grammar}, \
         this build expects schema {expected_version} grammar {expected_grammar}"
    )]
    VersionMismatch {
        found_version: u32,
        found_grammar: String,
        expected_version: u32,
        expected_grammar: String,
    },
}

/// A fully parsed transcript file.
#[derive(Debug, Clone)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub records: Vec<TranscriptRecord>,
}

impl Transcript {
    pub fn exchanges(&self) -> impl Iterator<Item = &ChatExchange> {
        self.records.iter().filter_map(|r| match r {
            TranscriptRecord::Exchange(e) => Some(e),
            _ => None,
        })
    }

    pub fn transitions(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.records.iter().filter_map(|r| match r {
            TranscriptRecord::Transition(t) => Some(t),
            _ => None,
        })
    }

    pub fn result(&self) -> Option<&EpisodeResult> {
        self.records.iter().rev().find_map(|r| match r {
            TranscriptRecord::Result { episode } => Some(episode),
            _ => None,
        })
    }
}

/// Write a complete transcript to disk.
pub fn write_transcript(
    path: &Path,
    header: &TranscriptHeader,
    records: &[TranscriptRecord],
) -> Result<(), TranscriptError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(path)?;
    let header_record = TranscriptRecord::Header(header.clone());
    writeln!(file, "{}", serde_json::to_string(&header_record).expect("serializable"))?;
    for record in records {
        writeln!(file, "{}", serde_json::to_string(record).expect("serializable"))?;
    }
    Ok(())
}

/// Read and validate a transcript file.
pub fn read_transcript(path: &Path) -> Result<Transcript, TranscriptError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| TranscriptError::Truncated("empty file".into()))?;
    let header = match serde_json::from_str::<TranscriptRecord>(first) {
        Ok(TranscriptRecord::Header(h)) => h,
        Ok(_) => {
            return Err(TranscriptError::Parse {
                line: 1,
                message: "first record must be the header".into(),
            })
        }
        Err(e) => {
            return Err(TranscriptError::Parse {
                line: 1,
                message: e.to_string(),
            })
        }
    };
    if header.version != TRANSCRIPT_VERSION || header.grammar_version != GRAMMAR_VERSION {
        return Err(TranscriptError::VersionMismatch {
            found_version: header.version,
            found_grammar: header.grammar_version.clone(),
            expected_version: TRANSCRIPT_VERSION,
            expected_grammar: GRAMMAR_VERSION.to_string(),
        });
    }
    let mut records = Vec::new();
    let mut last_line = 1usize;
    for (idx, line) in lines {
        last_line = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TranscriptRecord>(line) {
            Ok(r) => records.push(r),
            Err(e) => {
                // A bad final line means the file was cut off mid-write.
                if idx + 1 == text.lines().count() {
                    return Err(TranscriptError::Truncated(format!(
                        "last line {} is incomplete: {e}",
                        idx + 1
                    )));
                }
                return Err(TranscriptError::Parse {
                    line: idx + 1,
                    message: e.to_string(),
                });
            }
        }
    }
    if !matches!(records.last(), Some(TranscriptRecord::Result { .. })) {
        return Err(TranscriptError::Truncated(format!(
            "no terminal result record (read {last_line} lines)"
        )));
    }
    Ok(Transcript { header, records })
}
