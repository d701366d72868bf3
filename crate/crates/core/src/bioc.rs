//! BioC XML ingestion.
//!
//! Documents carry their text in a `full_text` infon and annotations whose
//! `semantic_tags` infon lists `;`-separated entity URIs. Declared
//! `location` offsets are kept verbatim but never used: character spans are
//! recovered by searching for the mention text (see [`resolve_spans`]).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::entity::{canonicalize_tag, render_entity_ref, EntityRef, Ontology, UriMode, NS_OTHER};
use crate::error::{Error, Result};
use crate::text::normalize_mention;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceKind {
    Recipe,
    Abstract,
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "recipe" | "fcd" => Ok(SourceKind::Recipe),
            "abstract" | "sa" => Ok(SourceKind::Abstract),
            other => Err(Error::Config(format!("unknown source kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionAnnotation {
    #[serde(rename = "id")]
    pub annotation_id: String,
    #[serde(rename = "text")]
    pub surface_text: String,
    pub declared_offset: i64,
    pub declared_length: i64,
    /// Character span `[start, end)` in `full_text`, when the mention was found.
    pub resolved_span: Option<(usize, usize)>,
    pub entity_refs: Vec<EntityRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub source_kind: SourceKind,
    pub ontology: Ontology,
    pub category: Option<String>,
    pub full_text: String,
    pub annotations: Vec<MentionAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationNote {
    pub doc_id: String,
    pub annotation_id: Option<String>,
    pub message: String,
}

impl ValidationNote {
    fn new(doc_id: &str, annotation_id: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            annotation_id: annotation_id.map(str::to_string),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCollection {
    pub documents: Vec<AnnotatedDocument>,
    pub notes: Vec<ValidationNote>,
}

/// Parse a BioC collection (or a bare `<document>`), discarding validation notes.
pub fn parse_bioc_collection(
    xml: &[u8],
    source_kind: SourceKind,
    ontology: Ontology,
) -> Result<Vec<AnnotatedDocument>> {
    parse_bioc_collection_with_notes(xml, source_kind, ontology).map(|c| c.documents)
}

pub fn parse_bioc_collection_with_notes(
    xml: &[u8],
    source_kind: SourceKind,
    ontology: Ontology,
) -> Result<ParsedCollection> {
    let text = std::str::from_utf8(xml).map_err(|e| Error::MalformedXml(e.to_string()))?;
    let tree = roxmltree::Document::parse(text).map_err(|e| Error::MalformedXml(e.to_string()))?;
    let mut out = ParsedCollection::default();
    for node in tree.descendants().filter(|n| n.has_tag_name("document")) {
        let doc = parse_document(node, source_kind, ontology, &mut out.notes)?;
        out.documents.push(doc);
    }
    Ok(out)
}

fn child_text<'a>(node: roxmltree::Node<'a, '_>, tag: &str) -> Option<&'a str> {
    node.children()
        .find(|c| c.has_tag_name(tag))
        .map(|c| c.text().unwrap_or(""))
}

fn infon<'a>(node: roxmltree::Node<'a, '_>, key: &str) -> Option<&'a str> {
    node.children()
        .find(|c| c.has_tag_name("infon") && c.attribute("key") == Some(key))
        .map(|c| c.text().unwrap_or(""))
}

fn parse_document(
    node: roxmltree::Node<'_, '_>,
    source_kind: SourceKind,
    ontology: Ontology,
    notes: &mut Vec<ValidationNote>,
) -> Result<AnnotatedDocument> {
    let doc_id = child_text(node, "id")
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::MalformedXml("document without <id>".into()))?;
    let full_text = infon(node, "full_text")
        .filter(|t| !t.trim().is_empty())
        .ok_or_else(|| Error::MissingFullText {
            doc_id: doc_id.clone(),
        })?
        .to_string();
    let category = infon(node, "category").map(|c| c.trim().to_string());

    let mut annotations = Vec::new();
    // annotations may sit directly under the document or inside passages
    for ann in node.descendants().filter(|n| n.has_tag_name("annotation")) {
        annotations.push(parse_annotation(ann, &doc_id, ontology, notes)?);
    }
    if annotations.is_empty() {
        notes.push(ValidationNote::new(
            &doc_id,
            None,
            "document has no annotations",
        ));
    }
    Ok(AnnotatedDocument {
        doc_id,
        source_kind,
        ontology,
        category,
        full_text,
        annotations,
    })
}

fn parse_annotation(
    node: roxmltree::Node<'_, '_>,
    doc_id: &str,
    ontology: Ontology,
    notes: &mut Vec<ValidationNote>,
) -> Result<MentionAnnotation> {
    let annotation_id = node
        .attribute("id")
        .map(str::to_string)
        .or_else(|| child_text(node, "id").map(|s| s.trim().to_string()))
        .ok_or_else(|| Error::MalformedXml(format!("annotation without id in `{doc_id}`")))?;
    let empty_tags = || Error::EmptySemanticTags {
        doc_id: doc_id.to_string(),
        annotation_id: annotation_id.clone(),
    };
    let tags = infon(node, "semantic_tags").ok_or_else(empty_tags)?;

    let mut entity_refs: Vec<EntityRef> = Vec::new();
    for tag in tags.split(';').map(str::trim).filter(|t| !t.is_empty()) {
        let (r, flag) = canonicalize_tag(tag, ontology);
        if let Some(message) = flag {
            notes.push(ValidationNote::new(doc_id, Some(&annotation_id), message));
        }
        if !entity_refs.contains(&r) {
            entity_refs.push(r);
        }
    }
    if entity_refs.is_empty() {
        return Err(empty_tags());
    }
    if !entity_refs.iter().any(|r| r.ontology == ontology) {
        return Err(Error::OntologyMismatch {
            doc_id: doc_id.to_string(),
            annotation_id,
            ontology: ontology.to_string(),
        });
    }

    let location = node.children().find(|c| c.has_tag_name("location"));
    let int_attr = |name: &str| -> Result<i64> {
        let raw = location.and_then(|l| l.attribute(name)).ok_or_else(|| {
            Error::MalformedXml(format!(
                "annotation `{annotation_id}` in `{doc_id}` lacks location {name}"
            ))
        })?;
        raw.trim().parse().map_err(|_| {
            Error::MalformedXml(format!(
                "annotation `{annotation_id}` in `{doc_id}` has non-integer {name} `{raw}`"
            ))
        })
    };
    let declared_offset = int_attr("offset")?;
    let declared_length = int_attr("length")?;
    let surface_text = child_text(node, "text").unwrap_or("").to_string();

    Ok(MentionAnnotation {
        annotation_id,
        surface_text,
        declared_offset,
        declared_length,
        resolved_span: None,
        entity_refs,
    })
}

fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn tag_for(r: &EntityRef) -> String {
    match r.ontology {
        Ontology::SnomedCt if r.namespace != NS_OTHER => {
            format!(
                "http://purl.bioontology.org/ontology/SNOMEDCT/{}",
                r.local_id
            )
        }
        _ => render_entity_ref(r, UriMode::FullUri),
    }
}

/// Serialize documents back to BioC XML. Resolved spans are not part of the format.
pub fn write_bioc_collection(docs: &[AnnotatedDocument]) -> String {
    let mut xml = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<collection>\n");
    for doc in docs {
        let _ = writeln!(
            xml,
            "  <document>\n    <id>{}</id>",
            escape_xml(&doc.doc_id)
        );
        let _ = writeln!(
            xml,
            "    <infon key=\"full_text\">{}</infon>",
            escape_xml(&doc.full_text)
        );
        for ann in &doc.annotations {
            let tags: Vec<String> = ann.entity_refs.iter().map(tag_for).collect();
            let _ = writeln!(
                xml,
                "    <annotation id=\"{}\">",
                escape_xml(&ann.annotation_id)
            );
            let _ = writeln!(
                xml,
                "      <infon key=\"semantic_tags\">{}</infon>",
                escape_xml(&tags.join(";"))
            );
            let _ = writeln!(
                xml,
                "      <location offset=\"{}\" length=\"{}\" />",
                ann.declared_offset, ann.declared_length
            );
            let _ = writeln!(xml, "      <text>{}</text>", escape_xml(&ann.surface_text));
            xml.push_str("    </annotation>\n");
        }
        if let Some(category) = &doc.category {
            let _ = writeln!(
                xml,
                "    <infon key=\"category\">{}</infon>",
                escape_xml(category)
            );
        }
        xml.push_str("  </document>\n");
    }
    xml.push_str("</collection>\n");
    xml
}

/// Normalized view of a text: lowercased, whitespace runs collapsed to one
/// space, with a map from each normalized char back to its source char index.
struct NormalizedText {
    chars: Vec<char>,
    origin: Vec<usize>,
}

impl NormalizedText {
    fn new(text: &str) -> Self {
        let mut chars = Vec::with_capacity(text.len());
        let mut origin = Vec::with_capacity(text.len());
        for (i, c) in text.chars().enumerate() {
            if c.is_whitespace() {
                if chars.last().is_some_and(|last| *last != ' ') {
                    chars.push(' ');
                    origin.push(i);
                }
            } else {
                for lower in c.to_lowercase() {
                    chars.push(lower);
                    origin.push(i);
                }
            }
        }
        Self { chars, origin }
    }

    /// Source char spans of every occurrence of `needle`.
    fn occurrences(&self, needle: &[char]) -> Vec<(usize, usize)> {
        if needle.is_empty() || needle.len() > self.chars.len() {
            return Vec::new();
        }
        (0..=self.chars.len() - needle.len())
            .filter(|&p| self.chars[p..p + needle.len()] == *needle)
            .map(|p| (self.origin[p], self.origin[p + needle.len() - 1] + 1))
            .collect()
    }
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Assign each annotation the first occurrence of its text that does not
/// overlap an earlier assignment, preferring whole-word matches.
pub fn resolve_spans(doc: &AnnotatedDocument) -> (AnnotatedDocument, Vec<ValidationNote>) {
    let source: Vec<char> = doc.full_text.chars().collect();
    let haystack = NormalizedText::new(&doc.full_text);
    let is_word = |i: usize| source.get(i).is_some_and(|c| c.is_alphanumeric());
    let mut claimed: Vec<(usize, usize)> = Vec::new();
    let mut notes = Vec::new();
    let mut out = doc.clone();

    for ann in &mut out.annotations {
        let needle: Vec<char> = normalize_mention(&ann.surface_text).chars().collect();
        let free: Vec<(usize, usize)> = haystack
            .occurrences(&needle)
            .into_iter()
            .filter(|span| !claimed.iter().any(|c| overlaps(*c, *span)))
            .collect();
        let whole_word = free
            .iter()
            .find(|(s, e)| (*s == 0 || !is_word(s - 1)) && !is_word(*e))
            .copied();
        ann.resolved_span = whole_word.or_else(|| free.first().copied());
        match ann.resolved_span {
            Some(span) => claimed.push(span),
            None => notes.push(ValidationNote::new(
                &doc.doc_id,
                Some(&ann.annotation_id),
                format!("mention `{}` not found in unclaimed text", ann.surface_text),
            )),
        }
    }
    (out, notes)
}

/// Source identifier shared by the ontology variants of one document:
/// the doc id with any ontology tag prefix or suffix removed.
pub fn source_id_of(doc_id: &str) -> String {
    const TAGS: [&str; 5] = ["foodon", "snomedct", "snomed-ct", "snomed", "hansard"];
    const SEPARATORS: [char; 4] = ['_', '-', '.', ':'];
    let lower = doc_id.to_ascii_lowercase();
    for tag in TAGS {
        for sep in SEPARATORS {
            let suffix = format!("{sep}{tag}");
            if lower.ends_with(&suffix) && lower.len() > suffix.len() {
                return doc_id[..doc_id.len() - suffix.len()].to_string();
            }
            let prefix = format!("{tag}{sep}");
            if lower.starts_with(&prefix) && lower.len() > prefix.len() {
                return doc_id[prefix.len()..].to_string();
            }
        }
    }
    doc_id.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentBundle {
    pub source_id: String,
    pub variants: BTreeMap<Ontology, AnnotatedDocument>,
}

impl DocumentBundle {
    pub fn full_text(&self) -> &str {
        &self.any_variant().full_text
    }

    pub fn source_kind(&self) -> SourceKind {
        self.any_variant().source_kind
    }

    fn any_variant(&self) -> &AnnotatedDocument {
        self.variants
            .values()
            .next()
            .expect("bundle has at least one variant")
    }
}

pub fn group_ontology_variants(docs: Vec<AnnotatedDocument>) -> Result<Vec<DocumentBundle>> {
    let mut bundles: BTreeMap<String, DocumentBundle> = BTreeMap::new();
    for doc in docs {
        let source_id = source_id_of(&doc.doc_id);
        let bundle = bundles
            .entry(source_id.clone())
            .or_insert_with(|| DocumentBundle {
                source_id: source_id.clone(),
                variants: BTreeMap::new(),
            });
        if let Some(existing) = bundle.variants.values().next() {
            if existing.full_text != doc.full_text {
                return Err(Error::VariantTextMismatch {
                    source_id,
                    first: existing.doc_id.clone(),
                    second: doc.doc_id,
                });
            }
        }
        if bundle.variants.contains_key(&doc.ontology) {
            return Err(Error::DuplicateVariant {
                source_id,
                ontology: doc.ontology.to_string(),
            });
        }
        bundle.variants.insert(doc.ontology, doc);
    }
    Ok(bundles.into_values().collect())
}

/// Drop bundles whose text repeats an earlier bundle (whitespace and case
/// insensitive). Returns the kept bundles and the ids of the dropped ones.
pub fn dedup_bundles(bundles: Vec<DocumentBundle>) -> (Vec<DocumentBundle>, Vec<String>) {
    let mut seen = std::collections::HashSet::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for bundle in bundles {
        if seen.insert(normalize_mention(bundle.full_text())) {
            kept.push(bundle);
        } else {
            dropped.push(bundle.source_id);
        }
    }
    (kept, dropped)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OntologyStats {
    pub ontology: Option<Ontology>,
    pub documents: usize,
    pub annotations: usize,
    pub max_per_document: usize,
    pub mean_per_document: f64,
    pub resolved: usize,
}

/// Per-ontology annotation totals for an ingestion report.
pub fn corpus_stats(docs: &[AnnotatedDocument]) -> Vec<OntologyStats> {
    let mut by: BTreeMap<Ontology, OntologyStats> = BTreeMap::new();
    for doc in docs {
        let s = by.entry(doc.ontology).or_default();
        s.ontology = Some(doc.ontology);
        s.documents += 1;
        s.annotations += doc.annotations.len();
        s.max_per_document = s.max_per_document.max(doc.annotations.len());
        s.resolved += doc
            .annotations
            .iter()
            .filter(|a| a.resolved_span.is_some())
            .count();
    }
    by.into_values()
        .map(|mut s| {
            s.mean_per_document = s.annotations as f64 / s.documents as f64;
            s
        })
        .collect()
}

/// One JSON object per document, per the document dump format.
pub fn write_document_dump(docs: &[AnnotatedDocument]) -> Result<String> {
    let mut out = String::new();
    for doc in docs {
        out.push_str(&serde_json::to_string(doc)?);
        out.push('\n');
    }
    Ok(out)
}
