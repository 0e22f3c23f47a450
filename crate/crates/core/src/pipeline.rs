//! Record-level pipeline: one input line in, one model-ready record out.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::injector::{id_to_string, inject_sentence, InjectionConfig, InjectionStatus, ManualOverrideTable};
use crate::kg::KgStore;
use crate::matcher::tokenize;
use crate::tree::{flatten, truncate_pair, truncate_single, visible_matrix, FlattenedSequence, SentenceTree};

/// `{id, text}` for single texts or `{id, text_a, text_b}` for pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub id: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_b: Option<String>,
}

pub enum InputText<'a> {
    Single(&'a str),
    Pair(&'a str, &'a str),
}

impl InputRecord {
    pub fn single(id: impl Into<Value>, text: impl Into<String>) -> Self {
        InputRecord {
            id: id.into(),
            text: Some(text.into()),
            text_a: None,
            text_b: None,
        }
    }

    pub fn pair(id: impl Into<Value>, a: impl Into<String>, b: impl Into<String>) -> Self {
        InputRecord {
            id: id.into(),
            text: None,
            text_a: Some(a.into()),
            text_b: Some(b.into()),
        }
    }

    pub fn text(&self) -> Result<InputText<'_>> {
        match (&self.text, &self.text_a, &self.text_b) {
            (Some(t), None, None) => Ok(InputText::Single(t)),
            (None, Some(a), Some(b)) => Ok(InputText::Pair(a, b)),
            _ => Err(Error::Config(format!(
                "record {} must have either `text` or both `text_a` and `text_b`",
                self.id
            ))),
        }
    }

    pub fn is_pair(&self) -> bool {
        self.text_a.is_some() || self.text_b.is_some()
    }
}

/// Model-ready output. Special tokens are not included; `n` counts content
/// tokens only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub id: Value,
    pub tokens: Vec<String>,
    pub soft_positions: Vec<usize>,
    pub is_branch: Vec<bool>,
    pub segment_ids: Vec<u8>,
    /// Base64 of the packed upper-triangular visible matrix.
    pub packed_visible: String,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Processed {
    pub record: OutputRecord,
    pub status: InjectionStatus,
    pub truncated: bool,
    pub unmatched_overrides: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub sentences: usize,
    pub injected: usize,
    pub gated: usize,
    pub uninjected: usize,
    pub truncated: usize,
    pub unmatched_overrides: usize,
}

impl RunCounts {
    pub fn record(&mut self, p: &Processed) {
        self.sentences += 1;
        match p.status {
            InjectionStatus::Injected => self.injected += 1,
            InjectionStatus::Gated => self.gated += 1,
            InjectionStatus::Uninjected => self.uninjected += 1,
        }
        self.truncated += usize::from(p.truncated);
        self.unmatched_overrides += p.unmatched_overrides;
    }

    pub fn is_consistent(&self) -> bool {
        self.injected + self.gated + self.uninjected == self.sentences
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSettings {
    pub kind: String,
    pub dim: Option<usize>,
    pub endpoint: Option<String>,
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRunManifest {
    pub config: InjectionConfig,
    pub kg_path: PathBuf,
    pub input_path: PathBuf,
    pub output_path: PathBuf,
    pub overrides_path: Option<PathBuf>,
    pub provider: ProviderSettings,
    pub counts: RunCounts,
}

pub struct Pipeline<'a> {
    pub store: &'a KgStore,
    pub provider: &'a EmbeddingProvider,
    pub config: &'a InjectionConfig,
    pub overrides: Option<&'a ManualOverrideTable>,
}

impl Pipeline<'_> {
    fn inject(&self, text: &str, sentence_id: &str, gating: bool) -> Result<(SentenceTree, InjectionStatus, usize)> {
        let config = InjectionConfig {
            gating,
            ..self.config.clone()
        };
        let out = inject_sentence(&tokenize(text), self.store, self.provider, &config, self.overrides, sentence_id)?;
        Ok((out.tree, out.status, out.unmatched_overrides))
    }

    pub fn process(&self, input: &InputRecord) -> Result<Processed> {
        let sentence_id = id_to_string(&input.id);
        let max_length = self.config.max_length;
        let (seq, segment_ids, status, truncated, unmatched) = match input.text()? {
            InputText::Single(text) => {
                let (tree, status, unmatched) = self.inject(text, &sentence_id, self.config.gating)?;
                let full = flatten(&tree);
                let kept = truncate_single(&full, max_length);
                let truncated = kept.len() < full.len();
                let segments = vec![0u8; kept.len()];
                (kept, segments, status, truncated, unmatched)
            }
            InputText::Pair(a, b) => {
                let (mut tree_a, status_a, un_a) = self.inject(a, &sentence_id, false)?;
                let (mut tree_b, status_b, un_b) = self.inject(b, &sentence_id, false)?;
                let any_injected = status_a == InjectionStatus::Injected || status_b == InjectionStatus::Injected;
                // Gating applies to the pair as one model input.
                let status = if !any_injected {
                    InjectionStatus::Uninjected
                } else if self.config.gating && tree_a.flat_len() + tree_b.flat_len() > max_length {
                    tree_a = tree_a.bare();
                    tree_b = tree_b.bare();
                    InjectionStatus::Gated
                } else {
                    InjectionStatus::Injected
                };
                let (fa, fb) = (flatten(&tree_a), flatten(&tree_b));
                let (ka, kb) = truncate_pair(&fa, &fb, max_length);
                let truncated = ka.len() + kb.len() < fa.len() + fb.len();
                let (seq, segments) = FlattenedSequence::concat(&ka, &kb);
                (seq, segments, status, truncated, un_a + un_b)
            }
        };
        let visible = visible_matrix(&seq);
        Ok(Processed {
            record: OutputRecord {
                id: input.id.clone(),
                n: seq.len(),
                packed_visible: visible.to_base64(),
                tokens: seq.tokens,
                soft_positions: seq.soft_positions,
                is_branch: seq.is_branch,
                segment_ids,
            },
            status,
            truncated,
            unmatched_overrides: unmatched,
        })
    }
}
