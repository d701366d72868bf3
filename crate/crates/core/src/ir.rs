//! Instruction-response pairs and their construction from document bundles.
//!
//! A bundle becomes one sequence: a recognition pair over the document text,
//! then one linking pair per ontology variant (Hansard, FoodOn, SNOMED-CT).
//! Responses are an opener phrase followed by a list; linking entries have
//! the form `mention - ref1; ref2`.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::bioc::{resolve_spans, AnnotatedDocument, DocumentBundle, SourceKind};
use crate::entity::{EntityRef, Ontology, UriMode};
use crate::error::Result;
use crate::eval::parse::split_opener;
use crate::pools::{fill_link_request, PhrasePools, PoolKind};
use crate::seed::rng_for;
use crate::text::{display_mention, normalize_mention};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    Ner,
    Nel,
    /// General-purpose instruction data mixed into training folds.
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairSource {
    Cafeteria,
    Artificial,
    General,
}

pub type LinkMap = IndexMap<String, BTreeSet<EntityRef>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Gold {
    Ner {
        mentions: Vec<String>,
    },
    /// Normalized mention -> linked entities, in response order.
    Nel {
        links: LinkMap,
    },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IRPair {
    pub pair_id: String,
    pub task: Task,
    pub ontology: Option<Ontology>,
    pub instruction: String,
    pub response: String,
    pub gold: Gold,
    pub source: PairSource,
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_kind: Option<SourceKind>,
    /// Linking request that names its mentions, for pairs whose instruction
    /// only makes sense after the recognition turn of their sequence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standalone_instruction: Option<String>,
}

impl IRPair {
    /// The instruction as posed outside its sequence. This is the text used for
    /// evaluation prompts, few-shot exemplars and leakage checks.
    pub fn standalone(&self) -> &str {
        self.standalone_instruction
            .as_deref()
            .unwrap_or(&self.instruction)
    }

    pub fn links(&self) -> Option<&LinkMap> {
        match &self.gold {
            Gold::Nel { links } => Some(links),
            _ => None,
        }
    }

    pub fn ner_mentions(&self) -> Option<&[String]> {
        match &self.gold {
            Gold::Ner { mentions } => Some(mentions),
            _ => None,
        }
    }

    /// The response re-rendered from gold with this pair's own opener.
    pub fn render_response(&self, mode: UriMode) -> String {
        let (opener, _) = split_opener(&self.response);
        let opener = opener.unwrap_or("");
        match &self.gold {
            Gold::Ner { mentions } => compose_response(opener, &mentions.join(", ")),
            Gold::Nel { links } => {
                let entries: Vec<(String, Vec<EntityRef>)> = links
                    .iter()
                    .map(|(m, refs)| (m.clone(), refs.iter().cloned().collect()))
                    .collect();
                compose_response(opener, &render_link_entries(&entries, mode))
            }
            Gold::None => self.response.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IRSequence {
    pub source_id: String,
    pub source_kind: SourceKind,
    pub pairs: Vec<IRPair>,
}

pub fn compose_response(opener: &str, body: &str) -> String {
    match (opener.is_empty(), body.is_empty()) {
        (_, true) => opener.to_string(),
        (true, false) => format!("{body}."),
        (false, false) => format!("{opener} {body}."),
    }
}

pub fn render_link_entries(entries: &[(String, Vec<EntityRef>)], mode: UriMode) -> String {
    entries
        .iter()
        .map(|(mention, refs)| {
            let refs: Vec<String> = refs.iter().map(|r| r.render(mode)).collect();
            format!("{mention} - {}", refs.join("; "))
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Ordered linking entries with display text, merging repeated mentions.
#[derive(Debug, Default)]
pub(crate) struct LinkEntries {
    entries: IndexMap<String, (String, Vec<EntityRef>)>,
}

impl LinkEntries {
    pub(crate) fn add(&mut self, display: &str, refs: impl IntoIterator<Item = EntityRef>) {
        let display = display_mention(display);
        let key = normalize_mention(&display);
        if key.is_empty() {
            return;
        }
        let (_, merged) = self
            .entries
            .entry(key)
            .or_insert_with(|| (display, Vec::new()));
        for r in refs {
            if !merged.contains(&r) {
                merged.push(r);
            }
        }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.entries.values().all(|(_, refs)| refs.is_empty())
    }

    pub(crate) fn displays(&self) -> Vec<String> {
        self.entries.values().map(|(d, _)| d.clone()).collect()
    }

    pub(crate) fn gold(&self) -> LinkMap {
        self.entries
            .iter()
            .filter(|(_, (_, refs))| !refs.is_empty())
            .map(|(k, (_, refs))| (k.clone(), refs.iter().cloned().collect()))
            .collect()
    }

    pub(crate) fn body(&self, mode: UriMode) -> String {
        let list: Vec<(String, Vec<EntityRef>)> = self
            .entries
            .values()
            .filter(|(_, refs)| !refs.is_empty())
            .cloned()
            .collect();
        render_link_entries(&list, mode)
    }
}

fn span_text(chars: &[char], span: (usize, usize)) -> String {
    chars[span.0..span.1].iter().collect()
}

fn mention_display(chars: &[char], span: Option<(usize, usize)>, surface: &str) -> String {
    match span {
        Some(span) => display_mention(&span_text(chars, span)),
        None => display_mention(&normalize_mention(surface)),
    }
}

struct Occurrence {
    span: Option<(usize, usize)>,
    display: String,
    key: String,
    order: usize,
}

/// Recognition gold for a bundle: the union of all variants' mentions with
/// nested mentions dropped (a span inside any occurrence of a longer mention
/// from any variant), deduplicated by normalized text, ordered by first occurrence.
pub fn recognition_mentions(resolved: &[&AnnotatedDocument], full_text: &str) -> Vec<String> {
    let chars: Vec<char> = full_text.chars().collect();
    let mut occurrences = Vec::new();
    for doc in resolved {
        for ann in &doc.annotations {
            let display = mention_display(&chars, ann.resolved_span, &ann.surface_text);
            let key = normalize_mention(&display);
            if key.is_empty() {
                continue;
            }
            occurrences.push(Occurrence {
                span: ann.resolved_span,
                display,
                key,
                order: occurrences.len(),
            });
        }
    }
    // Every textual occurrence of an annotated mention counts as covering,
    // not only the annotated position: a variant may annotate one of two
    // identical phrases.
    let lowered: Vec<char> = chars
        .iter()
        .map(|c| c.to_lowercase().next().unwrap_or(*c))
        .collect();
    let mut regions: Vec<(usize, usize, &str)> = Vec::new();
    let mut searched = std::collections::HashSet::new();
    for o in &occurrences {
        let Some(span) = o.span else { continue };
        if !searched.insert(o.key.as_str()) {
            continue;
        }
        let pattern = &lowered[span.0..span.1];
        if pattern.is_empty() {
            continue;
        }
        for start in 0..=lowered.len().saturating_sub(pattern.len()) {
            if lowered[start..start + pattern.len()] == *pattern {
                regions.push((start, start + pattern.len(), o.key.as_str()));
            }
        }
    }
    let nested = |o: &Occurrence| {
        let Some(s) = o.span else { return false };
        regions
            .iter()
            .any(|&(a, b, key)| key != o.key && (a, b) != s && a <= s.0 && s.1 <= b)
    };
    let mut kept: Vec<&Occurrence> = occurrences.iter().filter(|o| !nested(o)).collect();
    kept.sort_by_key(|o| (o.span.map_or(usize::MAX, |s| s.0), o.order));
    let mut seen = std::collections::HashSet::new();
    kept.into_iter()
        .filter(|o| seen.insert(o.key.clone()))
        .map(|o| o.display.clone())
        .collect()
}

pub fn build_ir_sequence(
    bundle: &DocumentBundle,
    pools: &PhrasePools,
    uri_mode: UriMode,
    rng_seed: u64,
) -> Result<IRSequence> {
    let ner_instruction = pools.get(PoolKind::NerInstruction)?;
    let ner_opener = pools.get(PoolKind::NerOpener)?;
    let nel_opener = pools.get(PoolKind::NelOpener)?;
    let link_request = pools.get(PoolKind::LinkRequest)?;

    let source_id = &bundle.source_id;
    let source_kind = bundle.source_kind();
    let full_text = bundle.full_text();
    let chars: Vec<char> = full_text.chars().collect();
    let mut rng = rng_for(rng_seed, &format!("ir-sequence:{source_id}"));

    let resolved: Vec<(Ontology, AnnotatedDocument)> = Ontology::SEQUENCE_ORDER
        .iter()
        .filter_map(|o| bundle.variants.get(o).map(|d| (*o, resolve_spans(d).0)))
        .collect();
    let docs: Vec<&AnnotatedDocument> = resolved.iter().map(|(_, d)| d).collect();
    let mentions = recognition_mentions(&docs, full_text);

    let mut pairs = Vec::with_capacity(1 + resolved.len());
    let instruction = format!("{} {}", ner_instruction.draw(&mut rng), full_text.trim());
    let response = compose_response(ner_opener.draw(&mut rng), &mentions.join(", "));
    pairs.push(IRPair {
        pair_id: format!("{source_id}/ner"),
        task: Task::Ner,
        ontology: None,
        instruction,
        response,
        gold: Gold::Ner { mentions },
        source: PairSource::Cafeteria,
        source_id: source_id.clone(),
        source_kind: Some(source_kind),
        standalone_instruction: None,
    });

    for (ontology, doc) in &resolved {
        let pool = pools.get(PoolKind::NelInstruction(*ontology))?;
        let mut entries = LinkEntries::default();
        for ann in &doc.annotations {
            let display = mention_display(&chars, ann.resolved_span, &ann.surface_text);
            entries.add(
                &display,
                ann.entity_refs
                    .iter()
                    .filter(|r| r.ontology == *ontology)
                    .cloned(),
            );
        }
        if entries.is_empty() {
            continue;
        }
        let instruction = pool.draw(&mut rng).to_string();
        let standalone =
            fill_link_request(link_request.draw(&mut rng), *ontology, &entries.displays());
        let response = compose_response(nel_opener.draw(&mut rng), &entries.body(uri_mode));
        pairs.push(IRPair {
            pair_id: format!("{source_id}/nel/{}", ontology.tag()),
            task: Task::Nel,
            ontology: Some(*ontology),
            instruction,
            response,
            gold: Gold::Nel {
                links: entries.gold(),
            },
            source: PairSource::Cafeteria,
            source_id: source_id.clone(),
            source_kind: Some(source_kind),
            standalone_instruction: Some(standalone),
        });
    }

    Ok(IRSequence {
        source_id: source_id.clone(),
        source_kind,
        pairs,
    })
}

fn flatten_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One training line for a single pair, posed stand-alone.
pub fn render_flat_pair(pair: &IRPair) -> String {
    format!(
        "[INST] {} [/INST] {}",
        flatten_whitespace(pair.standalone()),
        flatten_whitespace(&pair.response)
    )
}

/// One training line for a whole sequence, as consecutive turns.
pub fn render_flat_sequence(seq: &IRSequence) -> String {
    seq.pairs
        .iter()
        .map(|p| {
            format!(
                "[INST] {} [/INST] {}",
                flatten_whitespace(&p.instruction),
                flatten_whitespace(&p.response)
            )
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Line record of an IR dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrRecord {
    pub sequence_index: Option<usize>,
    #[serde(flatten)]
    pub pair: IRPair,
}

pub fn sequence_records(sequences: &[IRSequence]) -> Vec<IrRecord> {
    sequences
        .iter()
        .enumerate()
        .flat_map(|(i, seq)| {
            seq.pairs.iter().map(move |p| IrRecord {
                sequence_index: Some(i),
                pair: p.clone(),
            })
        })
        .collect()
}

pub fn standalone_records(pairs: &[IRPair]) -> Vec<IrRecord> {
    pairs
        .iter()
        .map(|p| IrRecord {
            sequence_index: None,
            pair: p.clone(),
        })
        .collect()
}

/// Reassemble sequences from dataset records (pairs without a sequence index
/// are returned separately).
pub fn split_records(records: Vec<IrRecord>) -> (Vec<IRSequence>, Vec<IRPair>) {
    let mut sequences: IndexMap<usize, IRSequence> = IndexMap::new();
    let mut loose = Vec::new();
    for rec in records {
        match rec.sequence_index {
            Some(i) => sequences
                .entry(i)
                .or_insert_with(|| IRSequence {
                    source_id: rec.pair.source_id.clone(),
                    source_kind: rec.pair.source_kind.unwrap_or(SourceKind::Recipe),
                    pairs: Vec::new(),
                })
                .pairs
                .push(rec.pair),
            None => loose.push(rec.pair),
        }
    }
    (sequences.into_values().collect(), loose)
}

pub fn check_pool_coverage(pools: &PhrasePools) -> Result<()> {
    for kind in PoolKind::all() {
        pools.get(kind)?;
    }
    Ok(())
}
