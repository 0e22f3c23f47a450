//! Compact knowledge-graph store.
//!
//! Records keep five properties only: label, aliases, description,
//! `instance of` and `subclass of`. The store is immutable once built and
//! indexes every label and alias under its normalized surface form.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::matcher::{is_punct_token, tokenize};

/// Knowledge category used for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Category {
    Alias,
    Cat,
    Desc,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Alias, Category::Cat, Category::Desc];
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "alias" => Ok(Category::Alias),
            "cat" => Ok(Category::Cat),
            "desc" => Ok(Category::Desc),
            other => Err(Error::Config(format!(
                "unknown knowledge category `{other}` (expected alias, cat or desc)"
            ))),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Alias => "ALIAS",
            Category::Cat => "CAT",
            Category::Desc => "DESC",
        })
    }
}

/// Set of categories excluded from injection.
pub type Ablation = BTreeSet<Category>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "alias")]
    Alias,
    #[serde(rename = "instance of")]
    InstanceOf,
    #[serde(rename = "subclass of")]
    SubclassOf,
    #[serde(rename = "description")]
    Description,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Alias => "alias",
            Relation::InstanceOf => "instance of",
            Relation::SubclassOf => "subclass of",
            Relation::Description => "description",
        }
    }

    pub fn category(self) -> Category {
        match self {
            Relation::Alias => Category::Alias,
            Relation::InstanceOf | Relation::SubclassOf => Category::Cat,
            Relation::Description => Category::Desc,
        }
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', " ").as_str() {
            "alias" => Ok(Relation::Alias),
            "instance of" => Ok(Relation::InstanceOf),
            "subclass of" => Ok(Relation::SubclassOf),
            "description" => Ok(Relation::Description),
            other => Err(Error::Config(format!("unknown relation `{other}`"))),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub instance_of: Vec<String>,
    #[serde(default)]
    pub subclass_of: Vec<String>,
}

impl EntityRecord {
    pub fn new(id: impl Into<String>, label: impl Into<String>) -> Self {
        EntityRecord {
            id: id.into(),
            label: label.into(),
            aliases: Vec::new(),
            description: String::new(),
            instance_of: Vec::new(),
            subclass_of: Vec::new(),
        }
    }

    pub fn with_aliases<I, S>(mut self, aliases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.aliases = aliases.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn with_instance_of<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.instance_of = ids.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_subclass_of<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.subclass_of = ids.into_iter().map(Into::into).collect();
        self
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.label.is_empty() {
            return Err("empty label".into());
        }
        if normalize(&self.label).is_empty() {
            return Err(format!("label `{}` has no indexable surface", self.label));
        }
        let mut seen = HashSet::new();
        for alias in &self.aliases {
            if alias == &self.label {
                return Err(format!("alias `{alias}` repeats the label"));
            }
            if !seen.insert(alias.as_str()) {
                return Err(format!("duplicate alias `{alias}`"));
            }
            if normalize(alias).is_empty() {
                return Err(format!("alias `{alias}` has no indexable surface"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: String,
    pub relation: Relation,
    pub object_text: String,
}

impl Triplet {
    pub fn category(&self) -> Category {
        self.relation.category()
    }
}

/// Lowercases, collapses whitespace and strips surrounding punctuation.
///
/// Punctuation characters are spaced out the same way [`tokenize`] splits
/// them, so a surface and the token window that spells it normalize
/// identically (`"U.S."` and `["U", ".", "S", "."]` both become `"u . s"`).
pub fn normalize(surface: &str) -> String {
    normalize_tokens(&tokenize(surface).tokens)
}

pub(crate) fn normalize_tokens<S: AsRef<str>>(tokens: &[S]) -> String {
    let start = tokens
        .iter()
        .position(|t| !is_punct_token(t.as_ref()))
        .unwrap_or(tokens.len());
    let end = tokens
        .iter()
        .rposition(|t| !is_punct_token(t.as_ref()))
        .map_or(start, |i| i + 1);
    let mut out = String::new();
    for t in &tokens[start..end] {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&t.as_ref().to_lowercase());
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct KgStore {
    records: BTreeMap<String, EntityRecord>,
    surface_index: HashMap<String, Vec<String>>,
}

impl KgStore {
    pub fn from_records(records: Vec<EntityRecord>) -> Result<Self> {
        let mut store = KgStore::default();
        for record in records {
            store.insert(record)?;
        }
        store.finish_index();
        Ok(store)
    }

    fn insert(&mut self, record: EntityRecord) -> Result<()> {
        record.validate().map_err(|message| Error::InvalidRecord {
            id: record.id.clone(),
            message,
        })?;
        if self.records.contains_key(&record.id) {
            return Err(Error::DuplicateId(record.id));
        }
        for surface in std::iter::once(&record.label).chain(&record.aliases) {
            self.surface_index
                .entry(normalize(surface))
                .or_default()
                .push(record.id.clone());
        }
        self.records.insert(record.id.clone(), record);
        Ok(())
    }

    fn finish_index(&mut self) {
        for ids in self.surface_index.values_mut() {
            ids.sort();
            ids.dedup();
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EntityRecord> {
        self.records.get(id)
    }

    /// Records in ascending id order.
    pub fn records(&self) -> impl Iterator<Item = &EntityRecord> {
        self.records.values()
    }

    pub fn contains_surface(&self, surface: &str) -> bool {
        self.surface_index.contains_key(&normalize(surface))
    }

    pub(crate) fn ids_for_normalized(&self, normalized: &str) -> Option<&[String]> {
        self.surface_index.get(normalized).map(Vec::as_slice)
    }

    /// Every record whose label or alias normalizes to `normalize(surface)`,
    /// ascending by id.
    pub fn lookup_surface(&self, surface: &str) -> Vec<&EntityRecord> {
        self.ids_for_normalized(&normalize(surface))
            .unwrap_or_default()
            .iter()
            .filter_map(|id| self.records.get(id))
            .collect()
    }

    /// Object text for a categorical link: the target's label when the
    /// target is in the store, otherwise the raw identifier.
    fn resolve(&self, id: &str) -> String {
        self.records
            .get(id)
            .map_or_else(|| id.to_owned(), |r| r.label.clone())
    }

    /// Triplets of one record in alias, instance of, subclass of, description
    /// order, minus the ablated categories.
    pub fn triplets_of(&self, id: &str, ablation: &Ablation) -> Result<Vec<Triplet>> {
        let record = self
            .records
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.to_owned()))?;
        Ok(self.record_triplets(record, ablation))
    }

    pub(crate) fn record_triplets(&self, record: &EntityRecord, ablation: &Ablation) -> Vec<Triplet> {
        let triplet = |relation, object_text: String| Triplet {
            subject: record.id.clone(),
            relation,
            object_text,
        };
        let mut out = Vec::new();
        if !ablation.contains(&Category::Alias) {
            out.extend(record.aliases.iter().map(|a| triplet(Relation::Alias, a.clone())));
        }
        if !ablation.contains(&Category::Cat) {
            out.extend(
                record
                    .instance_of
                    .iter()
                    .map(|t| triplet(Relation::InstanceOf, self.resolve(t))),
            );
            out.extend(
                record
                    .subclass_of
                    .iter()
                    .map(|t| triplet(Relation::SubclassOf, self.resolve(t))),
            );
        }
        if !ablation.contains(&Category::Desc) && !record.description.trim().is_empty() {
            out.push(triplet(Relation::Description, record.description.clone()));
        }
        out.retain(|t| !t.object_text.is_empty());
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for record in self.records.values() {
            write_record(&mut w, record).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn write_record<W: Write>(w: &mut W, record: &EntityRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}

/// Loads a compact JSON Lines knowledge graph. Blank lines are skipped.
pub fn load_kg(path: impl AsRef<Path>) -> Result<KgStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut store = KgStore::default();
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
        let record: EntityRecord =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        match store.insert(record) {
            Err(Error::InvalidRecord { id, message }) => {
                return Err(malformed(format!("record `{id}`: {message}")))
            }
            other => other?,
        }
    }
    store.finish_index();
    Ok(store)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub kept: usize,
    pub dropped: usize,
    pub drop_reasons: BTreeMap<String, usize>,
}

impl IngestStats {
    fn drop(&mut self, reason: &str) {
        self.dropped += 1;
        *self.drop_reasons.entry(reason.to_owned()).or_default() += 1;
    }
}

/// Reads one allowlist id per line; blank lines and `#` comments are ignored.
pub fn load_allowlist(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

fn claim_targets(entity: &Value, property: &str) -> Vec<String> {
    let Some(claims) = entity.pointer(&format!("/claims/{property}")).and_then(Value::as_array) else {
        return Vec::new();
    };
    let mut out: Vec<String> = Vec::new();
    for claim in claims {
        let target = match claim {
            Value::String(s) => Some(s.as_str()),
            Value::Object(_) => claim
                .pointer("/mainsnak/datavalue/value/id")
                .or_else(|| claim.get("id"))
                .and_then(Value::as_str),
            _ => None,
        };
        if let Some(t) = target.filter(|t| !t.is_empty()) {
            if !out.iter().any(|o| o == t) {
                out.push(t.to_owned());
            }
        }
    }
    out
}

/// Converts one raw Wikidata-style entity to a compact record, or names the
/// reason it is dropped.
fn compact_record(line: &str, allowlist: &HashSet<String>) -> std::result::Result<EntityRecord, &'static str> {
    let entity: Value = serde_json::from_str(line).map_err(|_| "malformed_json")?;
    let id = entity
        .get("id")
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .ok_or("missing_id")?;
    let label = entity
        .pointer("/labels/en/value")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .ok_or("no_english_label")?;
    if normalize(label).is_empty() {
        return Err("unindexable_label");
    }
    let instance_of = claim_targets(&entity, "P31");
    let subclass_of = claim_targets(&entity, "P279");
    if !instance_of.iter().chain(&subclass_of).any(|t| allowlist.contains(t)) {
        return Err("outside_domain");
    }

    let mut aliases: Vec<String> = Vec::new();
    if let Some(list) = entity.pointer("/aliases/en").and_then(Value::as_array) {
        for alias in list.iter().filter_map(|a| a.get("value").and_then(Value::as_str)) {
            if alias != label && !normalize(alias).is_empty() && !aliases.iter().any(|a| a == alias) {
                aliases.push(alias.to_owned());
            }
        }
    }
    let description = entity
        .pointer("/descriptions/en/value")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_owned();

    Ok(EntityRecord {
        id: id.to_owned(),
        label: label.to_owned(),
        aliases,
        description,
        instance_of,
        subclass_of,
    })
}

/// Streams a raw entity-per-line dump into the compact format, keeping
/// English-labelled records linked (via `instance of` or `subclass of`) to
/// an allowlisted class. Bad lines are counted as dropped, never fatal.
pub fn ingest_wikidata(
    raw_path: impl AsRef<Path>,
    domain_allowlist: &HashSet<String>,
    out_path: impl AsRef<Path>,
) -> Result<IngestStats> {
    let (raw_path, out_path) = (raw_path.as_ref(), out_path.as_ref());
    let input = File::open(raw_path).map_err(|e| Error::io(raw_path, e))?;
    let output = File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    let mut w = BufWriter::new(output);
    let mut stats = IngestStats::default();
    let mut seen = HashSet::new();

    for line in BufReader::new(input).lines() {
        let line = line.map_err(|e| Error::io(raw_path, e))?;
        // Full dumps wrap entities in a JSON array, one per line.
        let trimmed = line.trim().trim_end_matches(',');
        if trimmed.is_empty() || trimmed == "[" || trimmed == "]" {
            continue;
        }
        match compact_record(trimmed, domain_allowlist) {
            Ok(record) => {
                if !seen.insert(record.id.clone()) {
                    stats.drop("duplicate_id");
                    continue;
                }
                write_record(&mut w, &record).map_err(|e| Error::io(out_path, e))?;
                stats.kept += 1;
            }
            Err(reason) => stats.drop(reason),
        }
    }
    w.flush().map_err(|e| Error::io(out_path, e))?;
    Ok(stats)
}
