//! Seeded synthetic knowledge graphs and corpora shared by integration tests.
#![allow(dead_code)]

use kfuse_core::{EntityRecord, KgStore};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FILLER: &[&str] = &[
    "the", "a", "on", "in", "after", "before", "with", "said", "reported", "today", "new", "week",
    "season", "team", "market", "shares", "city", "people", "plan", "deal", "game", "won", "lost",
    "announced", "officials", "fans", "growth", "record", "late", "early",
];

pub const TOPIC: &[&str] = &[
    "football", "club", "technology", "company", "capital", "country", "river", "bank", "stock",
    "exchange", "player", "coach", "league", "software", "phone", "election", "minister", "port",
    "industry", "music", "band", "singer", "university", "research",
];

const NAME_PARTS: &[&str] = &[
    "Alder", "Brook", "Corvin", "Dalton", "Ember", "Fallow", "Garnet", "Holm", "Ivory", "Juniper",
    "Kestrel", "Larch", "Merrow", "Norland", "Oakley", "Pellin", "Quarry", "Rowan", "Sable", "Thorne",
];

const CLASSES: &[(&str, &str)] = &[
    ("C1", "football club"),
    ("C2", "city"),
    ("C3", "technology company"),
    ("C4", "human"),
    ("C5", "country"),
    ("C6", "bank"),
];

pub struct Fixture {
    pub store: KgStore,
    /// Every label and alias, for planting mentions.
    pub surfaces: Vec<String>,
}

pub fn words(rng: &mut ChaCha8Rng, pool: &[&str], lo: usize, hi: usize) -> Vec<String> {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| pool.choose(rng).unwrap().to_string()).collect()
}

/// Entities named from two name parts; some share an alias so mentions
/// have several candidates.
pub fn knowledge_graph(seed: u64, entities: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records: Vec<EntityRecord> = CLASSES
        .iter()
        .map(|(id, label)| EntityRecord::new(*id, *label))
        .collect();
    let mut surfaces = Vec::new();
    let mut used = std::collections::HashSet::new();
    let mut i = 0;
    while records.len() < CLASSES.len() + entities {
        let first = NAME_PARTS.choose(&mut rng).unwrap();
        let second = NAME_PARTS.choose(&mut rng).unwrap();
        let label = format!("{first} {second}");
        if first == second || !used.insert(label.clone()) {
            continue;
        }
        // Shared short alias creates homonyms.
        let alias = first.to_string();
        let mut aliases = vec![alias.clone()];
        if rng.random_bool(0.3) {
            aliases.push(format!("{} {}", second, "Group"));
        }
        aliases.sort();
        aliases.dedup();
        aliases.retain(|a| *a != label);
        let class_count = rng.random_range(1..=2);
        let classes: Vec<&str> = CLASSES
            .choose_multiple(&mut rng, class_count)
            .map(|(id, _)| *id)
            .collect();
        let description = words(&mut rng, TOPIC, 3, 8).join(" ");
        let mut record = EntityRecord::new(format!("E{i}"), label.clone())
            .with_aliases(aliases.clone())
            .with_instance_of(classes)
            .with_description(description);
        if rng.random_bool(0.3) {
            record = record.with_subclass_of(["C6"]);
        }
        surfaces.push(label);
        surfaces.extend(aliases);
        records.push(record);
        i += 1;
    }
    surfaces.sort();
    surfaces.dedup();
    Fixture {
        store: KgStore::from_records(records).unwrap(),
        surfaces,
    }
}

/// Sentences of at most `max_words` whitespace words (plus a final full
/// stop) with zero to three planted entity mentions.
pub fn corpus(seed: u64, fixture: &Fixture, sentences: usize, max_words: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sentences)
        .map(|_| {
            let mut parts: Vec<String> = words(&mut rng, FILLER, 2, max_words / 2);
            parts.extend(words(&mut rng, TOPIC, 0, 3));
            for _ in 0..rng.random_range(0..=3) {
                parts.push(fixture.surfaces.choose(&mut rng).unwrap().clone());
            }
            parts.shuffle(&mut rng);
            let mut out: Vec<String> = Vec::new();
            for p in parts {
                let count = p.split_whitespace().count();
                if out.iter().map(|w| w.split_whitespace().count()).sum::<usize>() + count > max_words {
                    break;
                }
                out.push(p);
            }
            format!("{}.", out.join(" "))
        })
        .collect()
}
