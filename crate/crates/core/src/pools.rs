//! Instruction and response-opener phrase pools.
//!
//! Pools are line-delimited JSON records `{"kind": ..., "phrase": ...}`.
//! Kinds: `ner_instruction`, `nel_instruction:<ontology>`, `link_request`
//! (a template with `{mentions}` and optional `{ontology}` slots, used for
//! stand-alone linking requests), `ner_opener` and `nel_opener`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::entity::Ontology;
use crate::error::{Error, Result};

pub const DEFAULT_POOLS: &str = include_str!("../data/default_pools.jsonl");

pub const MENTIONS_SLOT: &str = "{mentions}";
pub const ONTOLOGY_SLOT: &str = "{ontology}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PoolKind {
    NerInstruction,
    NelInstruction(Ontology),
    LinkRequest,
    NerOpener,
    NelOpener,
}

impl PoolKind {
    pub fn all() -> Vec<PoolKind> {
        let mut kinds = vec![PoolKind::NerInstruction];
        kinds.extend(Ontology::SEQUENCE_ORDER.map(PoolKind::NelInstruction));
        kinds.extend([
            PoolKind::LinkRequest,
            PoolKind::NerOpener,
            PoolKind::NelOpener,
        ]);
        kinds
    }

    fn is_opener(self) -> bool {
        matches!(self, PoolKind::NerOpener | PoolKind::NelOpener)
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolKind::NerInstruction => f.write_str("ner_instruction"),
            PoolKind::NelInstruction(o) => write!(f, "nel_instruction:{}", o.tag()),
            PoolKind::LinkRequest => f.write_str("link_request"),
            PoolKind::NerOpener => f.write_str("ner_opener"),
            PoolKind::NelOpener => f.write_str("nel_opener"),
        }
    }
}

impl FromStr for PoolKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ner_instruction" => Ok(PoolKind::NerInstruction),
            "link_request" => Ok(PoolKind::LinkRequest),
            "ner_opener" => Ok(PoolKind::NerOpener),
            "nel_opener" => Ok(PoolKind::NelOpener),
            other => match other.strip_prefix("nel_instruction:") {
                Some(o) => o
                    .parse::<Ontology>()
                    .map(PoolKind::NelInstruction)
                    .map_err(|_| format!("unknown ontology in pool kind `{other}`")),
                None => Err(format!("unknown pool kind `{other}`")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhrasePool {
    pub kind: PoolKind,
    pub phrases: Vec<String>,
}

impl PhrasePool {
    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> &str {
        &self.phrases[rng.gen_range(0..self.phrases.len())]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhrasePools {
    pools: BTreeMap<PoolKind, PhrasePool>,
}

#[derive(Deserialize, Serialize)]
struct PoolRecord {
    kind: String,
    phrase: String,
}

/// A phrase is rejected when it cannot be embedded without breaking response
/// parsing: openers must end in their only colon, link requests need a
/// mention slot.
fn check_phrase(kind: PoolKind, phrase: &str) -> std::result::Result<(), String> {
    if phrase.trim().is_empty() {
        return Err("empty phrase".into());
    }
    if kind.is_opener() {
        let trimmed = phrase.trim_end();
        if !trimmed.ends_with(':') || trimmed[..trimmed.len() - 1].contains(':') {
            return Err(format!(
                "opener `{phrase}` must contain exactly one colon, at the end"
            ));
        }
        if trimmed.contains(" - ") {
            return Err(format!("opener `{phrase}` must not contain ` - `"));
        }
    }
    if kind == PoolKind::LinkRequest && !phrase.contains(MENTIONS_SLOT) {
        return Err(format!(
            "link request `{phrase}` lacks the {MENTIONS_SLOT} slot"
        ));
    }
    Ok(())
}

impl PhrasePools {
    pub fn parse(content: &str) -> Result<Self> {
        let mut pools: BTreeMap<PoolKind, PhrasePool> = BTreeMap::new();
        let mut seen: HashSet<(PoolKind, String)> = HashSet::new();
        for (idx, raw) in content.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let fail = |message: String| Error::PoolFormatError { line, message };
            let record: PoolRecord = serde_json::from_str(raw).map_err(|e| fail(e.to_string()))?;
            let kind: PoolKind = record.kind.parse().map_err(fail)?;
            check_phrase(kind, &record.phrase).map_err(fail)?;
            let phrase = record.phrase.trim().to_string();
            if !seen.insert((kind, phrase.clone())) {
                return Err(fail(format!("duplicate phrase `{phrase}` in pool {kind}")));
            }
            pools
                .entry(kind)
                .or_insert_with(|| PhrasePool {
                    kind,
                    phrases: Vec::new(),
                })
                .phrases
                .push(phrase);
        }
        if pools.is_empty() {
            return Err(Error::EmptyPool("(all)".into()));
        }
        Ok(Self { pools })
    }

    pub fn defaults() -> Self {
        Self::parse(DEFAULT_POOLS).expect("shipped pools are valid")
    }

    pub fn get(&self, kind: PoolKind) -> Result<&PhrasePool> {
        self.pools
            .get(&kind)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::EmptyPool(kind.to_string()))
    }

    pub fn len(&self) -> usize {
        self.pools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pools.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PhrasePool> {
        self.pools.values()
    }

    pub fn insert(&mut self, pool: PhrasePool) {
        self.pools.insert(pool.kind, pool);
    }
}

pub fn load_phrase_pools(path: &Path) -> Result<PhrasePools> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PhrasePools::parse(&content)
}

/// Fill a link-request template.
pub fn fill_link_request(template: &str, ontology: Ontology, mentions: &[String]) -> String {
    template
        .replace(ONTOLOGY_SLOT, ontology.phrase())
        .replace(MENTIONS_SLOT, &mentions.join(", "))
}
