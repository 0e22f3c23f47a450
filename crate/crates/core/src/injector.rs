//! Contextualised knowledge injection.
//!
//! For every mention found in a sentence, candidate entities are retrieved
//! with their (ablation-filtered) triplets. Each candidate is described by a
//! single text sequence (label, aliases, categories, description); the one
//! whose embedding is most similar to the sentence embedding is injected when
//! the similarity is strictly above the threshold. Manual overrides replace
//! this selection outright.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingProvider, ProviderKind, DEFAULT_BATCH_SIZE};
use crate::error::{Error, Result};
use crate::kg::{normalize, Ablation, EntityRecord, KgStore, Relation, Triplet};
use crate::matcher::{find_mentions, MentionSpan, TokenSequence, DEFAULT_MAX_SPAN};
use crate::tree::{KnowledgeBranch, SentenceTree, TokenGroup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    pub threshold: f64,
    pub max_triplets_per_entity: usize,
    pub ablation: Ablation,
    pub gating: bool,
    pub max_length: usize,
    pub max_span: usize,
}

impl InjectionConfig {
    /// Defaults for sentence-pair tasks (STS-B style).
    pub fn for_pairs() -> Self {
        InjectionConfig {
            threshold: 0.5,
            max_length: 256,
            ..Self::for_single()
        }
    }

    /// Defaults for single-text tasks (news classification style).
    pub fn for_single() -> Self {
        InjectionConfig {
            threshold: 0.6,
            max_triplets_per_entity: 3,
            ablation: Ablation::new(),
            gating: false,
            max_length: 128,
            max_span: DEFAULT_MAX_SPAN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.threshold) {
            // Thresholds just above 1 are accepted as an explicit "never inject".
            if !(self.threshold > 1.0 && self.threshold.is_finite()) {
                return Err(Error::Config(format!("threshold {} outside [-1, 1]", self.threshold)));
            }
        }
        if self.max_triplets_per_entity == 0 {
            return Err(Error::Config("max_triplets_per_entity must be at least 1".into()));
        }
        if self.max_length == 0 {
            return Err(Error::Config("max_length must be positive".into()));
        }
        if self.max_span == 0 {
            return Err(Error::Config("max_span must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self::for_single()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub entity_id: String,
    pub candidate_sequence: String,
    pub similarity: f64,
}

/// Entities retrieved for one mention.
#[derive(Debug, Clone, PartialEq)]
pub struct MentionCandidates {
    pub mention: MentionSpan,
    /// `(entity id, ablation-filtered triplets)`, ascending by id. A
    /// candidate with no remaining triplets can still be selected.
    pub candidates: Vec<(String, Vec<Triplet>)>,
}

/// Retrieves candidate triplets for every mention.
pub fn k_query(
    _tokens: &TokenSequence,
    store: &KgStore,
    mentions: &[MentionSpan],
    ablation: &Ablation,
) -> Vec<MentionCandidates> {
    mentions
        .iter()
        .map(|m| MentionCandidates {
            mention: m.clone(),
            candidates: m
                .candidate_ids
                .iter()
                .filter_map(|id| store.get(id))
                .map(|r| (r.id.clone(), store.record_triplets(r, ablation)))
                .collect(),
        })
        .collect()
}

/// Label followed by every property object, joined with `"; "`.
pub fn build_candidate_sequence(store: &KgStore, record: &EntityRecord) -> String {
    std::iter::once(record.label.clone())
        .chain(
            store
                .record_triplets(record, &Ablation::new())
                .into_iter()
                .map(|t| t.object_text),
        )
        .collect::<Vec<_>>()
        .join("; ")
}

/// Highest similarity strictly above `threshold`; ties go to the smaller id.
pub fn pick_best(scored: &[CandidateScore], threshold: f64) -> Option<&CandidateScore> {
    scored
        .iter()
        .fold(None::<&CandidateScore>, |best, c| match best {
            Some(b)
                if b.similarity > c.similarity
                    || (b.similarity == c.similarity && b.entity_id <= c.entity_id) =>
            {
                Some(b)
            }
            _ => Some(c),
        })
        .filter(|c| c.similarity > threshold)
}

fn batch_size(provider: &EmbeddingProvider) -> usize {
    match &provider.kind {
        ProviderKind::Remote(_) => DEFAULT_BATCH_SIZE,
        ProviderKind::Hash { .. } => usize::MAX,
    }
}

fn embed_texts(provider: &EmbeddingProvider, texts: &[String]) -> Result<Vec<crate::embedding::EmbeddingVector>> {
    provider.embed(texts).map_err(|e| {
        let index = match &e {
            Error::Remote { batch, .. } => batch.saturating_mul(batch_size(provider)),
            _ => 0,
        };
        Error::EmbedText {
            index,
            source: Box::new(e),
        }
    })
}

/// Scores `(entity id, candidate sequence)` pairs against a sentence and
/// returns the selected candidate, if any clears the threshold.
pub fn select_entity(
    candidates: &[(String, String)],
    sentence_text: &str,
    provider: &EmbeddingProvider,
    threshold: f64,
) -> Result<Option<CandidateScore>> {
    if candidates.is_empty() {
        return Ok(None);
    }
    let texts: Vec<String> = std::iter::once(sentence_text.to_owned())
        .chain(candidates.iter().map(|(_, s)| s.clone()))
        .collect();
    let vectors = embed_texts(provider, &texts)?;
    let scored = candidates
        .iter()
        .zip(&vectors[1..])
        .map(|((id, seq), v)| {
            Ok(CandidateScore {
                entity_id: id.clone(),
                candidate_sequence: seq.clone(),
                similarity: cosine(&vectors[0], v)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pick_best(&scored, threshold).cloned())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverrideTriplet {
    pub relation: Relation,
    pub object_text: String,
}

/// Hand-curated knowledge keyed by `(sentence id, mention surface)`. An
/// empty triplet list suppresses injection for that mention.
#[derive(Debug, Clone, Default)]
pub struct ManualOverrideTable {
    entries: HashMap<String, HashMap<String, Vec<OverrideTriplet>>>,
}

#[derive(Deserialize)]
struct OverrideLine {
    sentence_id: serde_json::Value,
    surface: String,
    #[serde(default)]
    triplets: Vec<OverrideTriplet>,
}

/// Sentence ids in input files may be strings or numbers.
pub fn id_to_string(id: &serde_json::Value) -> String {
    match id {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl ManualOverrideTable {
    pub fn insert(
        &mut self,
        sentence_id: impl Into<String>,
        surface: &str,
        triplets: Vec<OverrideTriplet>,
    ) -> Result<()> {
        let sentence_id = sentence_id.into();
        let surface = normalize(surface);
        let per_sentence = self.entries.entry(sentence_id.clone()).or_default();
        if per_sentence.contains_key(&surface) {
            return Err(Error::Config(format!(
                "duplicate override for sentence `{sentence_id}`, surface `{surface}`"
            )));
        }
        per_sentence.insert(surface, triplets);
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = ManualOverrideTable::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: String| Error::Malformed {
                path: path.to_owned(),
                line: i + 1,
                message,
            };
            let entry: OverrideLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
            table
                .insert(id_to_string(&entry.sentence_id), &entry.surface, entry.triplets)
                .map_err(|e| malformed(e.to_string()))?;
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn for_sentence(&self, sentence_id: &str) -> Option<&HashMap<String, Vec<OverrideTriplet>>> {
        self.entries.get(sentence_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionStatus {
    /// At least one branch survived.
    Injected,
    /// Knowledge was selected but dropped because it would not fit.
    Gated,
    /// Nothing selected.
    Uninjected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionOutcome {
    pub tree: SentenceTree,
    pub status: InjectionStatus,
    /// Overrides for this sentence whose surface matched no mention.
    pub unmatched_overrides: usize,
}

struct Selection {
    entity: Option<String>,
    triplets: Vec<Triplet>,
}

/// Full per-sentence pipeline: mentions, selection (or override), capping,
/// tree construction and gating.
pub fn inject_sentence(
    tokens: &TokenSequence,
    store: &KgStore,
    provider: &EmbeddingProvider,
    config: &InjectionConfig,
    overrides: Option<&ManualOverrideTable>,
    sentence_id: &str,
) -> Result<InjectionOutcome> {
    let mentions = find_mentions(tokens, store, config.max_span);
    let sentence_overrides = overrides.and_then(|o| o.for_sentence(sentence_id));
    let mut used_overrides = BTreeSet::new();

    let mut selections: Vec<Option<Selection>> = Vec::with_capacity(mentions.len());
    let mut automatic = Vec::new();
    for (i, mention) in mentions.iter().enumerate() {
        match sentence_overrides.and_then(|o| o.get(&mention.surface)) {
            Some(manual) => {
                used_overrides.insert(mention.surface.clone());
                let subject = mention.candidate_ids[0].clone();
                let triplets = manual
                    .iter()
                    .filter(|t| !config.ablation.contains(&t.relation.category()))
                    .map(|t| Triplet {
                        subject: subject.clone(),
                        relation: t.relation,
                        object_text: t.object_text.clone(),
                    })
                    .collect();
                selections.push(Some(Selection {
                    entity: Some(subject),
                    triplets,
                }));
            }
            None => {
                selections.push(None);
                automatic.push(i);
            }
        }
    }

    if !automatic.is_empty() {
        let auto_mentions: Vec<MentionSpan> = automatic.iter().map(|&i| mentions[i].clone()).collect();
        let retrieved = k_query(tokens, store, &auto_mentions, &config.ablation);
        let mut texts = vec![tokens.source_text.clone()];
        for mc in &retrieved {
            for (id, _) in &mc.candidates {
                let record = store.get(id).ok_or_else(|| Error::UnknownId(id.clone()))?;
                texts.push(build_candidate_sequence(store, record));
            }
        }
        let vectors = embed_texts(provider, &texts)?;
        let sentence_vec = &vectors[0];
        let mut offset = 1;
        for (mc, &slot) in retrieved.into_iter().zip(&automatic) {
            let mut scored = Vec::with_capacity(mc.candidates.len());
            for (k, (id, _)) in mc.candidates.iter().enumerate() {
                scored.push(CandidateScore {
                    entity_id: id.clone(),
                    candidate_sequence: texts[offset + k].clone(),
                    similarity: cosine(sentence_vec, &vectors[offset + k])?,
                });
            }
            offset += mc.candidates.len();
            let chosen = pick_best(&scored, config.threshold).map(|c| c.entity_id.clone());
            selections[slot] = Some(match chosen {
                Some(id) => {
                    let triplets = mc
                        .candidates
                        .into_iter()
                        .find(|(cid, _)| *cid == id)
                        .map(|(_, t)| t)
                        .unwrap_or_default();
                    Selection {
                        entity: Some(id),
                        triplets,
                    }
                }
                None => Selection {
                    entity: None,
                    triplets: Vec::new(),
                },
            });
        }
    }

    let mut groups = Vec::new();
    let mut cursor = 0;
    for (mention, selection) in mentions.iter().zip(selections) {
        groups.extend(
            tokens.tokens[cursor..mention.start]
                .iter()
                .map(|t| TokenGroup::plain(vec![t.clone()])),
        );
        let selection = selection.unwrap_or(Selection {
            entity: None,
            triplets: Vec::new(),
        });
        let branches = selection
            .triplets
            .iter()
            .take(config.max_triplets_per_entity)
            .map(|t| KnowledgeBranch::new(t.relation.as_str(), &t.object_text))
            .filter(|b| !b.object_tokens.is_empty())
            .collect();
        groups.push(TokenGroup {
            tokens: tokens.tokens[mention.start..mention.end].to_vec(),
            mention_entity: selection.entity,
            branches,
        });
        cursor = mention.end;
    }
    groups.extend(tokens.tokens[cursor..].iter().map(|t| TokenGroup::plain(vec![t.clone()])));

    let mut tree = SentenceTree { groups };
    let status = if tree.branch_count() == 0 {
        InjectionStatus::Uninjected
    } else if config.gating && tree.flat_len() > config.max_length {
        tree = tree.bare();
        InjectionStatus::Gated
    } else {
        InjectionStatus::Injected
    };

    let unmatched_overrides = sentence_overrides.map_or(0, |o| {
        let unmatched = o.keys().filter(|s| !used_overrides.contains(*s)).count();
        if unmatched > 0 {
            tracing::warn!(sentence_id, unmatched, "override surfaces matched no mention");
        }
        unmatched
    });

    Ok(InjectionOutcome {
        tree,
        status,
        unmatched_overrides,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Category;
    use crate::matcher::tokenize;
    use crate::tree::flatten;

    fn club_store() -> KgStore {
        KgStore::from_records(vec![
            EntityRecord::new("Q18656", "Manchester United")
                .with_aliases(["Man Utd"])
                .with_instance_of(["Qclub"])
                .with_description("English football club"),
            EntityRecord::new("Qclub", "football club"),
            EntityRecord::new("Q312", "Apple Inc.").with_description("technology company"),
        ])
        .unwrap()
    }

    fn score(id: &str, s: f64) -> CandidateScore {
        CandidateScore {
            entity_id: id.into(),
            candidate_sequence: String::new(),
            similarity: s,
        }
    }

    fn always() -> InjectionConfig {
        InjectionConfig {
            threshold: -1.0,
            ..InjectionConfig::for_single()
        }
    }

    #[test]
    fn defaults_match_task_settings() {
        let pair = InjectionConfig::for_pairs();
        assert_eq!((pair.threshold, pair.max_length), (0.5, 256));
        let single = InjectionConfig::for_single();
        assert_eq!((single.threshold, single.max_length), (0.6, 128));
        assert_eq!(single.max_triplets_per_entity, 3);
    }

    #[test]
    fn config_validation() {
        assert!(InjectionConfig::for_single().validate().is_ok());
        let bad = InjectionConfig {
            threshold: -1.5,
            ..InjectionConfig::for_single()
        };
        assert!(bad.validate().is_err());
        let zero_k = InjectionConfig {
            max_triplets_per_entity: 0,
            ..InjectionConfig::for_single()
        };
        assert!(zero_k.validate().is_err());
    }

    #[test]
    fn k_query_football_club() {
        let store = club_store();
        let tokens = tokenize("Manchester United won again");
        let mentions = find_mentions(&tokens, &store, 6);
        let e = k_query(&tokens, &store, &mentions, &Ablation::new());
        assert_eq!(e.len(), 1);
        let (id, triplets) = &e[0].candidates[0];
        assert_eq!(id, "Q18656");
        assert!(triplets
            .iter()
            .any(|t| t.relation == Relation::InstanceOf && t.object_text == "football club"));

        let ablated = k_query(&tokens, &store, &mentions, &Category::ALL.into());
        assert!(ablated[0].candidates.iter().all(|(_, t)| t.is_empty()));

        let none = tokenize("nothing to see");
        assert!(k_query(&none, &store, &find_mentions(&none, &store, 6), &Ablation::new()).is_empty());
    }

    #[test]
    fn candidate_sequences() {
        let store = club_store();
        assert_eq!(
            build_candidate_sequence(&store, store.get("Q312").unwrap()),
            "Apple Inc.; technology company"
        );
        assert_eq!(build_candidate_sequence(&store, store.get("Qclub").unwrap()), "football club");
        // label; alias; instance-of label; description
        assert_eq!(
            build_candidate_sequence(&store, store.get("Q18656").unwrap()),
            "Manchester United; Man Utd; football club; English football club"
        );
    }

    #[test]
    fn pick_best_rules() {
        assert_eq!(pick_best(&[score("A", 0.7)], 0.5).unwrap().entity_id, "A");
        assert!(pick_best(&[score("A", 0.4)], 0.5).is_none());
        assert_eq!(pick_best(&[score("A", 0.55), score("B", 0.72)], 0.5).unwrap().entity_id, "B");
        assert!(pick_best(&[score("A", 0.5)], 0.5).is_none(), "comparison is strict");
        assert_eq!(pick_best(&[score("B", 0.6), score("A", 0.6)], 0.5).unwrap().entity_id, "A");
        assert!(pick_best(&[], 0.0).is_none());
    }

    #[test]
    fn select_entity_uses_provider() {
        let provider = EmbeddingProvider::hash(64);
        let cands = vec![
            ("Q1".to_string(), "red apple fruit".to_string()),
            ("Q2".to_string(), "stock market index".to_string()),
        ];
        let chosen = select_entity(&cands, "the stock market index fell", &provider, 0.0)
            .unwrap()
            .unwrap();
        assert_eq!(chosen.entity_id, "Q2");
        assert!(select_entity(&[], "anything", &provider, 0.0).unwrap().is_none());
        assert!(select_entity(&cands, "x", &provider, 1.0).unwrap().is_none());
    }

    #[test]
    fn no_mentions_gives_plain_tree() {
        let store = club_store();
        let tokens = tokenize("a quiet day");
        let out = inject_sentence(&tokens, &store, &EmbeddingProvider::default(), &always(), None, "1").unwrap();
        assert_eq!(out.tree, SentenceTree::from_tokens(&tokens.tokens));
        assert_eq!(out.status, InjectionStatus::Uninjected);
    }

    #[test]
    fn injection_caps_triplets() {
        let store = club_store();
        let tokens = tokenize("Manchester United won");
        let config = InjectionConfig {
            max_triplets_per_entity: 2,
            ..always()
        };
        let out = inject_sentence(&tokens, &store, &EmbeddingProvider::default(), &config, None, "1").unwrap();
        assert_eq!(out.status, InjectionStatus::Injected);
        assert_eq!(out.tree.groups.len(), 2);
        assert_eq!(out.tree.groups[0].tokens, ["Manchester", "United"]);
        assert_eq!(out.tree.groups[0].mention_entity.as_deref(), Some("Q18656"));
        assert_eq!(out.tree.branch_count(), 2);
    }

    #[test]
    fn gating_drops_everything_when_full() {
        let store = club_store();
        let tokens = tokenize("Manchester United won");
        let config = InjectionConfig {
            gating: true,
            max_length: tokens.len(),
            ..always()
        };
        let out = inject_sentence(&tokens, &store, &EmbeddingProvider::default(), &config, None, "1").unwrap();
        assert_eq!(out.status, InjectionStatus::Gated);
        assert_eq!(out.tree.branch_count(), 0);
        assert_eq!(flatten(&out.tree).tokens, tokens.tokens);
    }

    #[test]
    fn override_suppresses_and_bypasses_threshold() {
        let store = club_store();
        let tokens = tokenize("Manchester United won");
        let never = InjectionConfig {
            threshold: 1.0,
            ..InjectionConfig::for_single()
        };

        let mut suppress = ManualOverrideTable::default();
        suppress.insert("s1", "Manchester United", vec![]).unwrap();
        let out = inject_sentence(&tokens, &store, &EmbeddingProvider::default(), &always(), Some(&suppress), "s1").unwrap();
        assert_eq!(out.tree.groups[0].tokens.len(), 2);
        assert!(out.tree.groups[0].branches.is_empty());

        let mut manual = ManualOverrideTable::default();
        manual
            .insert(
                "s1",
                "manchester united",
                vec![OverrideTriplet {
                    relation: Relation::InstanceOf,
                    object_text: "football club".into(),
                }],
            )
            .unwrap();
        manual.insert("s1", "Chelsea", vec![]).unwrap();
        let out = inject_sentence(&tokens, &store, &EmbeddingProvider::default(), &never, Some(&manual), "s1").unwrap();
        assert_eq!(out.status, InjectionStatus::Injected);
        assert_eq!(out.tree.groups[0].branches[0].object_tokens, ["football", "club"]);
        assert_eq!(out.unmatched_overrides, 1);

        // Different sentence id: override does not apply, threshold 1.0 blocks.
        let out = inject_sentence(&tokens, &store, &EmbeddingProvider::default(), &never, Some(&manual), "s2").unwrap();
        assert_eq!(out.status, InjectionStatus::Uninjected);
    }

    #[test]
    fn override_duplicates_rejected() {
        let mut t = ManualOverrideTable::default();
        t.insert("1", "Paris", vec![]).unwrap();
        assert!(t.insert("1", "PARIS", vec![]).is_err());
    }

    #[test]
    fn ablation_filters_branches() {
        let store = club_store();
        let tokens = tokenize("Manchester United won");
        let config = InjectionConfig {
            ablation: [Category::Alias, Category::Desc].into(),
            ..always()
        };
        let out = inject_sentence(&tokens, &store, &EmbeddingProvider::default(), &config, None, "1").unwrap();
        let branches = &out.tree.groups[0].branches;
        assert_eq!(branches.len(), 1);
        assert_eq!(branches[0].relation, "instance of");
    }
}
