//! Tolerant parsing of model responses.
//!
//! The fine-tuned format is `Opener: m1 - r1; r2, m2 - r3.` but baseline and
//! degraded outputs drop the opener, put entries on separate lines, break an
//! entry across lines, use full URIs, or add stray punctuation. Parsing never
//! fails; problems are recorded as notes.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::entity::{find_refs, EntityRef, Ontology, RefMatch};
use crate::ir::LinkMap;
use crate::pools::fill_link_request;
use crate::text::{display_mention, normalize_mention, EDGE_JUNK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMap {
    pub instance_id: String,
    pub ontology: Ontology,
    pub entries: LinkMap,
    pub meaningful: bool,
    pub parse_notes: Vec<String>,
}

/// Split a leading opener phrase (text up to the first colon followed by
/// whitespace) from the body. A candidate prefix that already contains an
/// entry separator or a reference is not an opener.
pub fn split_opener(text: &str) -> (Option<&str>, &str) {
    let bytes = text.as_bytes();
    let colon = text
        .char_indices()
        .find(|&(i, c)| c == ':' && bytes.get(i + 1).is_none_or(|b| b.is_ascii_whitespace()));
    if let Some((idx, _)) = colon {
        let prefix = &text[..=idx];
        if !prefix.contains(" - ") && find_refs(prefix).is_empty() {
            return (Some(prefix.trim()), &text[idx + 1..]);
        }
    }
    (None, text)
}

/// Split on `,` and newlines outside brackets.
fn split_top_level(body: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in body.char_indices() {
        match c {
            '[' | '(' => depth += 1,
            ']' | ')' => depth = (depth - 1).max(0),
            ',' | '\n' if depth == 0 => {
                parts.push(&body[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    parts.push(&body[start..]);
    parts
}

fn clean_mention(raw: &str) -> String {
    display_mention(raw.trim().trim_matches(EDGE_JUNK))
}

/// Parse a recognition response into its mention list.
pub fn parse_mention_list(text: &str) -> Vec<String> {
    let (_, body) = split_opener(text);
    split_top_level(body)
        .into_iter()
        .map(clean_mention)
        .filter(|m| !m.is_empty())
        .collect()
}

struct BodyParse {
    entries: LinkMap,
    notes: Vec<String>,
    assigned: usize,
}

fn parse_body(body: &str, ontology: Ontology) -> BodyParse {
    let mut notes = Vec::new();
    let mut entries: IndexMap<String, BTreeSet<EntityRef>> = IndexMap::new();
    let mut assigned = 0;
    let mut last_key: Option<String> = None;
    let mut pending: Option<String> = None;
    for chunk in split_top_level(body) {
        let chunk = chunk.trim();
        if chunk.is_empty() {
            continue;
        }
        let refs = find_refs(chunk);
        if refs.is_empty() {
            // possibly a mention whose references continue on the next line
            let m = clean_mention(chunk);
            if !m.is_empty() {
                pending = Some(m);
            }
            continue;
        }
        let mut cursor = 0;
        for (range, found) in refs {
            let gap = &chunk[cursor..range.start];
            cursor = range.end;
            let gap_mention =
                clean_mention(gap.trim_matches(|c: char| c == ';' || c.is_whitespace()));
            let target = if gap_mention.is_empty() {
                pending.take().or_else(|| last_key.clone())
            } else {
                pending = None;
                Some(gap_mention)
            };
            let Some(mention) = target else {
                notes.push(format!("reference without a mention in `{chunk}`"));
                continue;
            };
            let key = normalize_mention(&mention);
            let entity = match found {
                RefMatch::Known(r) if r.ontology == ontology => r,
                RefMatch::Known(r) => {
                    notes.push(format!(
                        "dropped {} reference `{r}` for `{key}`",
                        r.ontology
                    ));
                    last_key = Some(key);
                    continue;
                }
                RefMatch::UnknownUri(uri) => {
                    notes.push(format!("unrecognized URI `{uri}` kept for `{key}`"));
                    EntityRef::other(ontology, &uri)
                }
            };
            entries.entry(key.clone()).or_default().insert(entity);
            assigned += 1;
            last_key = Some(key);
        }
    }
    BodyParse {
        entries,
        notes,
        assigned,
    }
}

pub fn parse_response(text: &str, ontology: Ontology) -> PredictionMap {
    // An apparent opener can be the first mention of an unconventional
    // layout (`cream cheese: FOODON_...`); keep whichever reading links more
    // references, preferring the opener reading on ties.
    let (opener, body) = split_opener(text);
    let mut best = parse_body(body, ontology);
    if opener.is_some() {
        let whole = parse_body(text, ontology);
        if whole.assigned > best.assigned {
            best = whole;
        }
    }
    let meaningful = !best.entries.is_empty();
    if !meaningful {
        best.notes
            .push(format!("no {ontology} references recovered"));
    }
    PredictionMap {
        instance_id: String::new(),
        ontology,
        entries: best.entries,
        meaningful,
        parse_notes: best.notes,
    }
}

/// Parse a response for a known instance.
pub fn parse_prediction(instance_id: &str, text: &str, ontology: Ontology) -> PredictionMap {
    PredictionMap {
        instance_id: instance_id.to_string(),
        ..parse_response(text, ontology)
    }
}

/// Template for a linking request: a `link_request` phrase plus the target
/// ontology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkTemplate {
    pub phrase: String,
    pub ontology: Ontology,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainedInstruction {
    pub text: String,
    pub mentions: Vec<String>,
    /// Set when recognition produced nothing to link.
    pub empty_mentions: bool,
}

/// Build the linking instruction for mentions predicted by a recognition turn.
pub fn chain_ner_to_nel(ner_prediction: &[String], template: &LinkTemplate) -> ChainedInstruction {
    let mut seen = std::collections::HashSet::new();
    let mentions: Vec<String> = ner_prediction
        .iter()
        .map(|m| display_mention(m))
        .filter(|m| !m.is_empty() && seen.insert(normalize_mention(m)))
        .collect();
    ChainedInstruction {
        text: fill_link_request(&template.phrase, template.ontology, &mentions),
        empty_mentions: mentions.is_empty(),
        mentions,
    }
}
