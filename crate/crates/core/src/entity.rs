//! Ontology entity references: canonical form, rendering and parsing.
//!
//! Three ontologies are supported. FoodOn entities live in two OBO namespaces
//! (`FOODON` for foods, `NCBITaxon` for organisms), SNOMED-CT concepts in
//! `SNOMEDCT`, and Hansard codes keep their dotted code as the local id with
//! the two-letter semantic group (`AG` for food and drink) as the namespace.
//! Anything else is preserved under the `OTHER` namespace.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NS_FOODON: &str = "FOODON";
pub const NS_NCBI_TAXON: &str = "NCBITaxon";
pub const NS_SNOMED: &str = "SNOMEDCT";
pub const NS_OTHER: &str = "OTHER";

const OBO_PREFIX: &str = "http://purl.obolibrary.org/obo/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ontology {
    FoodOn,
    SnomedCt,
    Hansard,
}

impl Ontology {
    pub const ALL: [Ontology; 3] = [Ontology::FoodOn, Ontology::SnomedCt, Ontology::Hansard];
    /// Order in which linking pairs follow the recognition pair in a sequence.
    pub const SEQUENCE_ORDER: [Ontology; 3] =
        [Ontology::Hansard, Ontology::FoodOn, Ontology::SnomedCt];

    /// Short lowercase tag used in ids, file names and CLI flags.
    pub fn tag(self) -> &'static str {
        match self {
            Ontology::FoodOn => "foodon",
            Ontology::SnomedCt => "snomedct",
            Ontology::Hansard => "hansard",
        }
    }

    /// Phrase used inside instructions ("link ... to the FoodOn ontology").
    pub fn phrase(self) -> &'static str {
        match self {
            Ontology::FoodOn => "FoodOn ontology",
            Ontology::SnomedCt => "SNOMEDCT ontology",
            Ontology::Hansard => "Hansard taxonomy",
        }
    }

    pub fn accepts_namespace(self, namespace: &str) -> bool {
        match self {
            Ontology::FoodOn => matches!(namespace, NS_FOODON | NS_NCBI_TAXON | NS_OTHER),
            Ontology::SnomedCt => matches!(namespace, NS_SNOMED | NS_OTHER),
            Ontology::Hansard => namespace == NS_OTHER || is_hansard_group(namespace),
        }
    }
}

fn is_hansard_group(ns: &str) -> bool {
    ns.len() == 2 && ns.chars().all(|c| c.is_ascii_uppercase())
}

impl fmt::Display for Ontology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ontology::FoodOn => "FoodOn",
            Ontology::SnomedCt => "SNOMED-CT",
            Ontology::Hansard => "Hansard",
        })
    }
}

impl FromStr for Ontology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "foodon" => Ok(Ontology::FoodOn),
            "snomed" | "snomedct" => Ok(Ontology::SnomedCt),
            "hansard" => Ok(Ontology::Hansard),
            other => Err(Error::Config(format!("unknown ontology `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UriMode {
    #[default]
    Short,
    #[serde(rename = "full")]
    FullUri,
}

impl FromStr for UriMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short" => Ok(UriMode::Short),
            "full" | "full_uri" | "fulluri" => Ok(UriMode::FullUri),
            other => Err(Error::Config(format!("unknown uri mode `{other}`"))),
        }
    }
}

/// Identity is `(ontology, namespace, local_id)`; `label` is display-only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntityRef {
    pub ontology: Ontology,
    pub namespace: String,
    pub local_id: String,
    #[serde(default)]
    pub label: Option<String>,
}

impl EntityRef {
    pub fn new(
        ontology: Ontology,
        namespace: impl Into<String>,
        local_id: impl Into<String>,
    ) -> Self {
        Self {
            ontology,
            namespace: namespace.into(),
            local_id: local_id.into(),
            label: None,
        }
    }

    pub fn foodon(id: &str) -> Self {
        Self::new(Ontology::FoodOn, NS_FOODON, id)
    }

    pub fn ncbi_taxon(id: &str) -> Self {
        Self::new(Ontology::FoodOn, NS_NCBI_TAXON, id)
    }

    pub fn snomed(id: &str) -> Self {
        Self::new(Ontology::SnomedCt, NS_SNOMED, id)
    }

    /// Hansard code such as `AG.01.e.02`; the namespace is the leading group.
    pub fn hansard(code: &str, label: Option<&str>) -> Self {
        let group = code.split('.').next().unwrap_or(code);
        Self {
            ontology: Ontology::Hansard,
            namespace: group.to_string(),
            local_id: code.to_string(),
            label: label.map(str::to_string),
        }
    }

    pub fn other(ontology: Ontology, raw: &str) -> Self {
        Self::new(ontology, NS_OTHER, raw)
    }

    pub fn is_other(&self) -> bool {
        self.namespace == NS_OTHER
    }

    fn key(&self) -> (Ontology, &str, &str) {
        (self.ontology, &self.namespace, &self.local_id)
    }

    pub fn render(&self, mode: UriMode) -> String {
        render_entity_ref(self, mode)
    }
}

impl PartialEq for EntityRef {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for EntityRef {}

impl Hash for EntityRef {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}

impl PartialOrd for EntityRef {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EntityRef {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_entity_ref(self, UriMode::Short))
    }
}

pub fn render_entity_ref(r: &EntityRef, mode: UriMode) -> String {
    match (r.ontology, r.namespace.as_str()) {
        (_, NS_OTHER) => r.local_id.clone(),
        (Ontology::FoodOn, ns) => match mode {
            UriMode::Short => format!("{ns}-{}", r.local_id),
            UriMode::FullUri => format!("{OBO_PREFIX}{ns}_{}", r.local_id),
        },
        (Ontology::SnomedCt, ns) => format!("{ns}-{}", r.local_id),
        (Ontology::Hansard, _) => match &r.label {
            Some(label) if !label.trim().is_empty() => format!("{} [{}]", r.local_id, label.trim()),
            _ => r.local_id.clone(),
        },
    }
}

/// One reference found while scanning free text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RefMatch {
    Known(EntityRef),
    /// A URI outside the known namespaces, kept verbatim.
    UnknownUri(String),
}

static REF_PATTERN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(concat!(
        r"(?i:https?://purl\.obolibrary\.org/obo/(?P<obo_ns>FOODON|NCBITaxon)_(?P<obo_id>[A-Za-z0-9]+))",
        r"|(?i:https?://(?:purl\.bioontology\.org/ontology/SNOMEDCT/|snomed\.info/id/)(?P<sct_uri_id>[0-9]+))",
        r#"|(?P<other_uri>(?i:https?)://[^\s;,\[\]<>"']+)"#,
        r"|\b(?P<short_ns>(?i:FOODON|NCBITaxon|SNOMEDCT|SNOMED-CT|SNOMED))[-_:](?P<short_id>[A-Za-z0-9]+)\b",
        r"|\b(?P<hansard>[A-Z]{2}\.[0-9]{2}(?:\.[0-9A-Za-z]+)*)(?:[ \t]*[\[(](?P<label>[^\]\)\n]*)[\])])?",
    ))
    .expect("reference pattern compiles")
});

fn canonical_obo_namespace(ns: &str) -> Option<&'static str> {
    if ns.eq_ignore_ascii_case(NS_FOODON) {
        Some(NS_FOODON)
    } else if ns.eq_ignore_ascii_case(NS_NCBI_TAXON) {
        Some(NS_NCBI_TAXON)
    } else {
        None
    }
}

fn match_from_captures(caps: &Captures<'_>) -> RefMatch {
    if let (Some(ns), Some(id)) = (caps.name("obo_ns"), caps.name("obo_id")) {
        let ns = canonical_obo_namespace(ns.as_str()).expect("pattern restricts namespace");
        return RefMatch::Known(EntityRef::new(Ontology::FoodOn, ns, id.as_str()));
    }
    if let Some(id) = caps.name("sct_uri_id") {
        return RefMatch::Known(EntityRef::snomed(id.as_str()));
    }
    if let Some(uri) = caps.name("other_uri") {
        return RefMatch::UnknownUri(uri.as_str().trim_end_matches(['.', ')']).to_string());
    }
    if let (Some(ns), Some(id)) = (caps.name("short_ns"), caps.name("short_id")) {
        return match canonical_obo_namespace(ns.as_str()) {
            Some(obo) => RefMatch::Known(EntityRef::new(Ontology::FoodOn, obo, id.as_str())),
            None => RefMatch::Known(EntityRef::snomed(id.as_str())),
        };
    }
    let code = caps
        .name("hansard")
        .expect("one branch always matches")
        .as_str();
    let label = caps
        .name("label")
        .map(|l| l.as_str().trim())
        .filter(|l| !l.is_empty());
    RefMatch::Known(EntityRef::hansard(code, label))
}

/// Every reference occurring in `text`, left to right, with byte ranges.
pub fn find_refs(text: &str) -> Vec<(std::ops::Range<usize>, RefMatch)> {
    REF_PATTERN
        .captures_iter(text)
        .map(|caps| {
            let whole = caps.get(0).expect("group 0");
            (whole.range(), match_from_captures(&caps))
        })
        .collect()
}

/// Parse one rendered reference (short or full-URI form, `-`/`_`/`:`
/// separators, optional Hansard label).
pub fn parse_entity_ref(token: &str) -> Result<EntityRef> {
    let trimmed = token.trim().trim_end_matches(['.', ',', ';']).trim();
    if let Some(caps) = REF_PATTERN.captures(trimmed) {
        let whole = caps.get(0).expect("group 0");
        if whole.start() == 0 && whole.end() == trimmed.len() {
            if let RefMatch::Known(r) = match_from_captures(&caps) {
                return Ok(r);
            }
        }
    }
    Err(Error::UnrecognizedRef(token.to_string()))
}

/// Canonicalize one `semantic_tags` entry from a BioC document of the given
/// ontology. Returns the reference and whether it needs flagging (unknown
/// prefix, or a taxon id inside a FoodOn tag).
pub fn canonicalize_tag(tag: &str, ontology: Ontology) -> (EntityRef, Option<String>) {
    let tag = tag.trim();
    if ontology == Ontology::SnomedCt && !tag.is_empty() && tag.chars().all(|c| c.is_ascii_digit())
    {
        return (EntityRef::snomed(tag), None);
    }
    match parse_entity_ref(tag) {
        Ok(r) if r.namespace == NS_NCBI_TAXON => (
            r,
            Some(format!("taxon reference `{tag}` inside {ontology} tags")),
        ),
        Ok(r) => (r, None),
        Err(_) => (
            EntityRef::other(ontology, tag),
            Some(format!(
                "unknown reference prefix `{tag}` kept under {NS_OTHER}"
            )),
        ),
    }
}
