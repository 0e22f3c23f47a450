//! Sentence trees and the model-facing artifacts derived from them.
//!
//! A tree is an ordered list of token groups; a group that names an entity
//! may carry knowledge branches. Flattening emits each group's tokens
//! followed by its branches (relation tokens, then object tokens).
//!
//! Soft positions: main tokens count 0, 1, 2, ...; every branch of a group
//! restarts at the group's last position + 1; the next main token also
//! resumes at that value, so branch and main positions overlap.
//!
//! Visibility over the flattened order:
//! * main tokens see every main token;
//! * a branch token sees the tokens of its head group;
//! * tokens of one branch see each other;
//! * nothing else is visible (including sibling branches of one group);
//! * the diagonal is always visible.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::tokenize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBranch {
    pub relation: String,
    pub object_tokens: Vec<String>,
}

impl KnowledgeBranch {
    pub fn new(relation: impl Into<String>, object_text: &str) -> Self {
        KnowledgeBranch {
            relation: relation.into(),
            object_tokens: tokenize(object_text).tokens,
        }
    }

    pub fn relation_tokens(&self) -> Vec<String> {
        tokenize(&self.relation).tokens
    }

    /// Emitted length: relation tokens plus object tokens.
    pub fn len(&self) -> usize {
        self.relation_tokens().len() + self.object_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGroup {
    pub tokens: Vec<String>,
    pub mention_entity: Option<String>,
    pub branches: Vec<KnowledgeBranch>,
}

impl TokenGroup {
    pub fn plain(tokens: Vec<String>) -> Self {
        TokenGroup {
            tokens,
            mention_entity: None,
            branches: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceTree {
    pub groups: Vec<TokenGroup>,
}

impl SentenceTree {
    /// One singleton group per token, no knowledge.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        SentenceTree {
            groups: tokens
                .iter()
                .map(|t| TokenGroup::plain(vec![t.as_ref().to_owned()]))
                .collect(),
        }
    }

    pub fn branch_count(&self) -> usize {
        self.groups.iter().map(|g| g.branches.len()).sum()
    }

    pub fn main_len(&self) -> usize {
        self.groups.iter().map(|g| g.tokens.len()).sum()
    }

    /// Length of the flattened sequence.
    pub fn flat_len(&self) -> usize {
        self.main_len()
            + self
                .groups
                .iter()
                .flat_map(|g| &g.branches)
                .map(KnowledgeBranch::len)
                .sum::<usize>()
    }

    /// The same tree with all knowledge removed.
    pub fn bare(&self) -> SentenceTree {
        SentenceTree {
            groups: self
                .groups
                .iter()
                .map(|g| TokenGroup {
                    branches: Vec::new(),
                    ..g.clone()
                })
                .collect(),
        }
    }

    pub fn main_tokens(&self) -> impl Iterator<Item = &String> {
        self.groups.iter().flat_map(|g| &g.tokens)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlattenedSequence {
    pub tokens: Vec<String>,
    pub soft_positions: Vec<usize>,
    pub is_branch: Vec<bool>,
    /// Owning group for main tokens, head group for branch tokens.
    pub group_of: Vec<usize>,
    /// Sequence-wide branch index for branch tokens.
    pub branch_of: Vec<Option<usize>>,
}

impl FlattenedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn push(&mut self, token: String, position: usize, group: usize, branch: Option<usize>) {
        self.tokens.push(token);
        self.soft_positions.push(position);
        self.is_branch.push(branch.is_some());
        self.group_of.push(group);
        self.branch_of.push(branch);
    }

    /// Soft position the next main token would receive.
    pub fn next_position(&self) -> usize {
        self.soft_positions
            .iter()
            .zip(&self.is_branch)
            .rev()
            .find(|(_, &b)| !b)
            .map_or(0, |(&p, _)| p + 1)
    }

    fn group_count(&self) -> usize {
        self.group_of.iter().max().map_or(0, |g| g + 1)
    }

    fn branch_count(&self) -> usize {
        self.branch_of.iter().flatten().max().map_or(0, |b| b + 1)
    }

    /// The first `k` emitted tokens. Positions and group links of a prefix
    /// are unchanged, and branches always follow their head group, so
    /// cutting the tail never leaves a branch without its head.
    pub fn prefix(&self, k: usize) -> FlattenedSequence {
        let k = k.min(self.len());
        FlattenedSequence {
            tokens: self.tokens[..k].to_vec(),
            soft_positions: self.soft_positions[..k].to_vec(),
            is_branch: self.is_branch[..k].to_vec(),
            group_of: self.group_of[..k].to_vec(),
            branch_of: self.branch_of[..k].to_vec(),
        }
    }

    /// Joins two halves of a pair. Positions, groups and branches of `b`
    /// continue after those of `a`; the returned vector holds segment ids.
    pub fn concat(a: &FlattenedSequence, b: &FlattenedSequence) -> (FlattenedSequence, Vec<u8>) {
        let (pos0, group0, branch0) = (a.next_position(), a.group_count(), a.branch_count());
        let mut out = a.clone();
        for i in 0..b.len() {
            out.push(
                b.tokens[i].clone(),
                b.soft_positions[i] + pos0,
                b.group_of[i] + group0,
                b.branch_of[i].map(|x| x + branch0),
            );
        }
        let mut segments = vec![0u8; a.len()];
        segments.resize(a.len() + b.len(), 1);
        (out, segments)
    }

    /// Visibility between emitted tokens `i` and `j`.
    pub fn visible(&self, i: usize, j: usize) -> bool {
        if i == j {
            return true;
        }
        match (self.branch_of[i], self.branch_of[j]) {
            (None, None) => true,
            (Some(bi), Some(bj)) => bi == bj,
            (Some(_), None) | (None, Some(_)) => self.group_of[i] == self.group_of[j],
        }
    }
}

pub fn flatten(tree: &SentenceTree) -> FlattenedSequence {
    let mut seq = FlattenedSequence::default();
    let mut next = 0usize;
    let mut branch_id = 0usize;
    for (g, group) in tree.groups.iter().enumerate() {
        for token in &group.tokens {
            seq.push(token.clone(), next, g, None);
            next += 1;
        }
        for branch in &group.branches {
            let tokens = branch.relation_tokens().into_iter().chain(branch.object_tokens.iter().cloned());
            for (pos, token) in (next..).zip(tokens) {
                seq.push(token, pos, g, Some(branch_id));
            }
            branch_id += 1;
        }
    }
    seq
}

/// Symmetric binary matrix stored as its upper triangle (diagonal included),
/// row-major, one byte per entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedVisibleMatrix {
    n: usize,
    bytes: Vec<u8>,
}

pub fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

impl PackedVisibleMatrix {
    pub fn from_bytes(n: usize, bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() != packed_len(n) {
            return Err(Error::LengthMismatch {
                left: bytes.len(),
                right: packed_len(n),
            });
        }
        if let Some(k) = bytes.iter().position(|&b| b > 1) {
            let m = PackedVisibleMatrix { n, bytes: Vec::new() };
            let (row, col) = m.coords(k);
            return Err(Error::NonBinary { row, col, value: bytes[k] });
        }
        Ok(PackedVisibleMatrix { n, bytes })
    }

    pub fn from_base64(n: usize, encoded: &str) -> Result<Self> {
        let bytes = BASE64
            .decode(encoded)
            .map_err(|e| Error::Config(format!("invalid base64 visible matrix: {e}")))?;
        Self::from_bytes(n, bytes)
    }

    pub fn to_base64(&self) -> String {
        BASE64.encode(&self.bytes)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // Rows 0..i hold n, n-1, ..., n-i+1 entries.
        i * self.n - i * i.saturating_sub(1) / 2 + (j - i)
    }

    fn coords(&self, k: usize) -> (usize, usize) {
        let mut start = 0;
        for i in 0..self.n {
            let row_len = self.n - i;
            if k < start + row_len {
                return (i, i + k - start);
            }
            start += row_len;
        }
        (self.n, self.n)
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.bytes[self.index(i, j)]
    }

    pub fn is_visible(&self, i: usize, j: usize) -> bool {
        self.get(i, j) == 1
    }
}

pub fn visible_matrix(seq: &FlattenedSequence) -> PackedVisibleMatrix {
    let n = seq.len();
    let mut bytes = Vec::with_capacity(packed_len(n));
    for i in 0..n {
        for j in i..n {
            bytes.push(u8::from(seq.visible(i, j)));
        }
    }
    PackedVisibleMatrix { n, bytes }
}

pub fn build_visible_matrix(tree: &SentenceTree) -> PackedVisibleMatrix {
    visible_matrix(&flatten(tree))
}

/// Packs a row-major `n × n` symmetric binary matrix.
pub fn pack(dense: &[u8], n: usize) -> Result<PackedVisibleMatrix> {
    if dense.len() != n * n {
        return Err(Error::LengthMismatch {
            left: dense.len(),
            right: n * n,
        });
    }
    let mut bytes = Vec::with_capacity(packed_len(n));
    for i in 0..n {
        for j in i..n {
            let v = dense[i * n + j];
            if v > 1 {
                return Err(Error::NonBinary { row: i, col: j, value: v });
            }
            if dense[j * n + i] != v {
                return Err(Error::Asymmetric { row: i, col: j });
            }
            bytes.push(v);
        }
    }
    Ok(PackedVisibleMatrix { n, bytes })
}

/// Expands back to a row-major `n × n` matrix.
pub fn unpack(packed: &PackedVisibleMatrix) -> Vec<u8> {
    let n = packed.n;
    let mut dense = vec![0u8; n * n];
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            dense[i * n + j] = packed.bytes[k];
            dense[j * n + i] = packed.bytes[k];
            k += 1;
        }
    }
    dense
}

/// Kept lengths for a pair under `max_length`.
///
/// Each half is budgeted `max_length / 2`; slots a half does not use, plus
/// the spare slot of an odd `max_length`, go to whichever half still needs
/// them (the first half first).
pub fn pair_budgets(len_a: usize, len_b: usize, max_length: usize) -> (usize, usize) {
    let half = max_length / 2;
    let mut keep_a = len_a.min(half);
    let mut keep_b = len_b.min(half);
    let mut leftover = max_length - keep_a - keep_b;
    let extra_a = (len_a - keep_a).min(leftover);
    keep_a += extra_a;
    leftover -= extra_a;
    keep_b += (len_b - keep_b).min(leftover);
    (keep_a, keep_b)
}

pub fn truncate_pair(
    a: &FlattenedSequence,
    b: &FlattenedSequence,
    max_length: usize,
) -> (FlattenedSequence, FlattenedSequence) {
    let (ka, kb) = pair_budgets(a.len(), b.len(), max_length);
    (a.prefix(ka), b.prefix(kb))
}

pub fn truncate_single(a: &FlattenedSequence, max_length: usize) -> FlattenedSequence {
    a.prefix(max_length)
}
