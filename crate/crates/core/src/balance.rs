//! Entity coverage analysis and artificial linking pairs.
//!
//! Entities whose gold mention count falls below a threshold receive label
//! instances until they reach it. Label instances of one ontology are pooled,
//! shuffled and cut into sets of 7, 9 or 12 labels; each set becomes one
//! linking pair for that ontology.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::entity::{EntityRef, Ontology, UriMode};
use crate::error::{Error, Result};
use crate::ir::{compose_response, Gold, IRPair, LinkEntries, PairSource, Task};
use crate::pools::{fill_link_request, PhrasePools, PoolKind};
use crate::seed::rng_for;
use crate::text::{display_mention, normalize_mention};

pub const DEFAULT_THRESHOLD: usize = 150;
pub const DEFAULT_SET_SIZES: [usize; 3] = [7, 9, 12];

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionReport {
    pub ontology: Ontology,
    pub threshold: usize,
    pub counts: BTreeMap<EntityRef, usize>,
    pub deficits: BTreeMap<EntityRef, usize>,
}

impl DistributionReport {
    pub fn from_counts(
        ontology: Ontology,
        threshold: usize,
        counts: BTreeMap<EntityRef, usize>,
    ) -> Self {
        let deficits = counts
            .iter()
            .map(|(e, &k)| (e.clone(), threshold.saturating_sub(k)))
            .collect();
        Self {
            ontology,
            threshold,
            counts,
            deficits,
        }
    }

    /// Add entities that never occur in the corpus (count 0).
    pub fn include_entities(mut self, entities: impl IntoIterator<Item = EntityRef>) -> Self {
        for e in entities.into_iter().filter(|e| e.ontology == self.ontology) {
            if !self.counts.contains_key(&e) {
                self.deficits.insert(e.clone(), self.threshold);
                self.counts.insert(e, 0);
            }
        }
        self
    }

    pub fn total_count(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn total_deficit(&self) -> usize {
        self.deficits.values().sum()
    }

    /// Tab-separated table sorted by count, most frequent first.
    pub fn to_tsv(&self) -> Result<String> {
        let mut rows: Vec<(&EntityRef, usize)> = self.counts.iter().map(|(e, &k)| (e, k)).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_writer(Vec::new());
        w.write_record(["ontology", "namespace", "local_id", "count", "deficit"])
            .map_err(tsv_error)?;
        for (e, k) in rows {
            let deficit = self.deficits.get(e).copied().unwrap_or(0);
            w.write_record([
                self.ontology.tag(),
                &e.namespace,
                &e.local_id,
                &k.to_string(),
                &deficit.to_string(),
            ])
            .map_err(tsv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv writes utf-8"))
    }
}

fn tsv_error(e: csv::Error) -> Error {
    Error::Config(format!("table export: {e}"))
}

/// Count gold `(pair, mention)` occurrences per entity over linking pairs of
/// one ontology.
pub fn entity_distribution(
    ontology: Ontology,
    pairs: &[IRPair],
    threshold: usize,
) -> Result<DistributionReport> {
    let mut counts: BTreeMap<EntityRef, usize> = BTreeMap::new();
    for pair in pairs {
        if pair.task != Task::Nel || pair.ontology != Some(ontology) {
            return Err(Error::MixedOntology(format!(
                "pair `{}` is not a {ontology} linking pair",
                pair.pair_id
            )));
        }
        for refs in pair.links().into_iter().flat_map(|l| l.values()) {
            for e in refs {
                *counts.entry(e.clone()).or_default() += 1;
            }
        }
    }
    Ok(DistributionReport::from_counts(ontology, threshold, counts))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelLexicon {
    labels: BTreeMap<EntityRef, Vec<String>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct LexiconRow {
    ontology: String,
    namespace: String,
    local_id: String,
    label: String,
}

impl LabelLexicon {
    /// Surface forms observed in gold, most frequent first.
    pub fn from_pairs(pairs: &[IRPair]) -> Self {
        let mut seen: HashMap<(EntityRef, String), (usize, usize)> = HashMap::new();
        for pair in pairs {
            for (mention, refs) in pair.links().into_iter().flat_map(|l| l.iter()) {
                for e in refs {
                    let order = seen.len();
                    seen.entry((e.clone(), mention.clone()))
                        .or_insert((0, order))
                        .0 += 1;
                }
            }
        }
        let mut ranked: Vec<((EntityRef, String), (usize, usize))> = seen.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        let mut lexicon = Self::default();
        for ((e, label), _) in ranked {
            lexicon.add(e, &label);
        }
        lexicon
    }

    /// Append a label unless it is blank or already present for the entity.
    pub fn add(&mut self, entity: EntityRef, label: &str) {
        let label = display_mention(label);
        if label.is_empty() {
            return;
        }
        let key = normalize_mention(&label);
        let list = self.labels.entry(entity).or_default();
        if !list.iter().any(|l| normalize_mention(l) == key) {
            list.push(label);
        }
    }

    /// Read a `{ontology, namespace, local_id, label}` table and append its
    /// labels after the observed ones.
    pub fn merge_tsv(&mut self, content: &str) -> Result<()> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .flexible(false)
            .from_reader(content.as_bytes());
        for (idx, row) in reader.deserialize::<LexiconRow>().enumerate() {
            let line = idx + 2;
            let fail = |message: String| Error::LexiconFormat { line, message };
            let row = row.map_err(|e| fail(e.to_string()))?;
            let ontology: Ontology = row
                .ontology
                .trim()
                .parse()
                .map_err(|e: Error| fail(e.to_string()))?;
            let (namespace, local_id) = (row.namespace.trim(), row.local_id.trim());
            if namespace.is_empty() || local_id.is_empty() {
                return Err(fail("namespace and local_id are required".into()));
            }
            if !ontology.accepts_namespace(namespace) {
                return Err(fail(format!(
                    "namespace `{namespace}` is not part of {ontology}"
                )));
            }
            if row.label.trim().is_empty() || display_mention(&row.label).is_empty() {
                return Err(fail("empty label".into()));
            }
            self.add(EntityRef::new(ontology, namespace, local_id), &row.label);
        }
        Ok(())
    }

    pub fn labels(&self, entity: &EntityRef) -> Option<&[String]> {
        self.labels
            .get(entity)
            .map(Vec::as_slice)
            .filter(|l| !l.is_empty())
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityRef> {
        self.labels.keys()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_tsv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_writer(Vec::new());
        for (e, labels) in &self.labels {
            for label in labels {
                w.serialize(LexiconRow {
                    ontology: e.ontology.tag().into(),
                    namespace: e.namespace.clone(),
                    local_id: e.local_id.clone(),
                    label: label.clone(),
                })
                .map_err(tsv_error)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv writes utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtificialConfig {
    pub set_sizes: Vec<usize>,
    pub uri_mode: UriMode,
    /// Phrase redraws allowed per set before giving up on a unique instruction.
    pub max_redraws: usize,
}

impl Default for ArtificialConfig {
    fn default() -> Self {
        Self {
            set_sizes: DEFAULT_SET_SIZES.to_vec(),
            uri_mode: UriMode::Short,
            max_redraws: 64,
        }
    }
}

pub type LabelInstance = (String, EntityRef);

#[derive(Debug, Clone, PartialEq)]
pub struct ArtificialBatch {
    pub pairs: Vec<IRPair>,
    /// The label instances behind each pair, before duplicate labels merge.
    pub sets: Vec<Vec<LabelInstance>>,
    pub notes: Vec<String>,
}

impl ArtificialBatch {
    pub fn label_instances(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    /// Label instances generated per entity.
    pub fn per_entity(&self) -> BTreeMap<EntityRef, usize> {
        let mut out = BTreeMap::new();
        for (_, e) in self.sets.iter().flatten() {
            *out.entry(e.clone()).or_default() += 1;
        }
        out
    }
}

fn checked_sizes(set_sizes: &[usize]) -> Result<Vec<usize>> {
    let mut sizes: Vec<usize> = set_sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.is_empty() || sizes[0] == 0 {
        return Err(Error::Config(format!(
            "set sizes must be positive, got {set_sizes:?}"
        )));
    }
    Ok(sizes)
}

/// Cut `total` labels into sets: each step draws uniformly among the sizes
/// that still fit; once fewer than the smallest size remain they form one
/// final undersized set.
pub fn partition_sizes<R: Rng>(total: usize, sizes: &[usize], rng: &mut R) -> Vec<usize> {
    let min = sizes.iter().copied().min().unwrap_or(1).max(1);
    let mut out = Vec::new();
    let mut remaining = total;
    while remaining > 0 {
        if remaining < min {
            out.push(remaining);
            break;
        }
        let fits: Vec<usize> = sizes.iter().copied().filter(|&s| s <= remaining).collect();
        let size = fits[rng.gen_range(0..fits.len())];
        out.push(size);
        remaining -= size;
    }
    out
}

fn label_key(label: &str) -> String {
    normalize_mention(&display_mention(label))
}

/// Move repeated labels out of a set by swapping with other sets where that
/// keeps both sides free of repeats. Returns the number left unresolved.
fn spread_duplicates<R: Rng>(
    sets: &mut [Vec<LabelInstance>],
    rng: &mut R,
    attempts: usize,
) -> usize {
    // labels compared by interned key
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut keys: Vec<Vec<usize>> = sets
        .iter()
        .map(|set| {
            set.iter()
                .map(|(l, _)| {
                    let next = ids.len();
                    *ids.entry(label_key(l)).or_insert(next)
                })
                .collect()
        })
        .collect();
    let mut unresolved = 0;
    for i in 0..sets.len() {
        for p in 0..sets[i].len() {
            let key = keys[i][p];
            if !keys[i][..p].contains(&key) {
                continue;
            }
            let mut fixed = false;
            for _ in 0..attempts {
                if sets.len() < 2 {
                    break;
                }
                let j = rng.gen_range(0..sets.len());
                if j == i {
                    continue;
                }
                let q = rng.gen_range(0..sets[j].len());
                let candidate = keys[j][q];
                if keys[i].contains(&candidate) {
                    continue;
                }
                if keys[j]
                    .iter()
                    .enumerate()
                    .any(|(idx, &k)| idx != q && k == key)
                {
                    continue;
                }
                let incoming = sets[j][q].clone();
                sets[j][q] = std::mem::replace(&mut sets[i][p], incoming);
                keys[j][q] = key;
                keys[i][p] = candidate;
                fixed = true;
                break;
            }
            if !fixed {
                unresolved += 1;
            }
        }
    }
    unresolved
}

/// Synthesize linking pairs that raise every entity of the report to the
/// threshold. Instructions already in `reserved` (or emitted earlier in the
/// batch) are never produced.
pub fn generate_artificial_pairs(
    report: &DistributionReport,
    lexicon: &LabelLexicon,
    pools: &PhrasePools,
    config: &ArtificialConfig,
    rng_seed: u64,
    reserved: &HashSet<String>,
) -> Result<ArtificialBatch> {
    let sizes = checked_sizes(&config.set_sizes)?;
    let ontology = report.ontology;

    let mut instances: Vec<LabelInstance> = Vec::with_capacity(report.total_deficit());
    for (entity, &deficit) in &report.deficits {
        if deficit == 0 {
            continue;
        }
        let labels = lexicon
            .labels(entity)
            .ok_or_else(|| Error::MissingLabel(entity.to_string()))?;
        instances.extend((0..deficit).map(|i| (labels[i % labels.len()].clone(), entity.clone())));
    }
    let mut batch = ArtificialBatch {
        pairs: Vec::new(),
        sets: Vec::new(),
        notes: Vec::new(),
    };
    if instances.is_empty() {
        return Ok(batch);
    }

    let link_request = pools.get(PoolKind::LinkRequest)?;
    let opener = pools.get(PoolKind::NelOpener)?;
    let mut rng = rng_for(rng_seed, &format!("artificial:{}", ontology.tag()));
    instances.shuffle(&mut rng);

    let mut sets = Vec::new();
    let mut rest = instances.as_slice();
    for size in partition_sizes(rest.len(), &sizes, &mut rng) {
        let (head, tail) = rest.split_at(size);
        sets.push(head.to_vec());
        rest = tail;
    }
    let unresolved = spread_duplicates(&mut sets, &mut rng, 256);
    if unresolved > 0 {
        batch.notes.push(format!(
            "{unresolved} repeated labels share a set; their gold is merged"
        ));
    }

    let mut used: HashSet<String> = HashSet::new();
    for (index, set) in sets.iter_mut().enumerate() {
        let mut pair = None;
        for attempt in 0..config.max_redraws.max(1) {
            if attempt > config.max_redraws / 2 {
                set.shuffle(&mut rng);
            }
            let mut entries = LinkEntries::default();
            for (label, entity) in set.iter() {
                entries.add(label, [entity.clone()]);
            }
            let instruction =
                fill_link_request(link_request.draw(&mut rng), ontology, &entries.displays());
            if used.contains(&instruction) || reserved.contains(&instruction) {
                continue;
            }
            let response = compose_response(opener.draw(&mut rng), &entries.body(config.uri_mode));
            let pair_id = format!("artificial:{}:{index:05}", ontology.tag());
            pair = Some(IRPair {
                pair_id: pair_id.clone(),
                task: Task::Nel,
                ontology: Some(ontology),
                instruction,
                response,
                gold: Gold::Nel {
                    links: entries.gold(),
                },
                source: PairSource::Artificial,
                source_id: pair_id,
                source_kind: None,
                standalone_instruction: None,
            });
            break;
        }
        let pair = pair.ok_or(Error::DuplicateUnavoidable {
            attempts: config.max_redraws.max(1),
        })?;
        for (mention, refs) in pair.links().into_iter().flat_map(|l| l.iter()) {
            if refs.len() > 1 {
                batch.notes.push(format!(
                    "{}: label `{mention}` names {} entities",
                    pair.pair_id,
                    refs.len()
                ));
            }
        }
        used.insert(pair.instruction.clone());
        batch.pairs.push(pair);
    }
    batch.sets = sets;
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageViolation {
    pub instruction: String,
    pub first: String,
    pub second: String,
}

/// Instruction texts shared within the artificial pairs or between them and
/// the corpus pairs.
pub fn assert_no_leakage(artificial: &[IRPair], cafeteria: &[IRPair]) -> Vec<LeakageViolation> {
    let mut owner: HashMap<&str, &str> = HashMap::new();
    for pair in cafeteria {
        owner.entry(pair.standalone()).or_insert(&pair.pair_id);
    }
    let mut violations = Vec::new();
    for pair in artificial {
        let text = pair.standalone();
        match owner.get(text) {
            Some(first) => violations.push(LeakageViolation {
                instruction: text.to_string(),
                first: first.to_string(),
                second: pair.pair_id.clone(),
            }),
            None => {
                owner.insert(text, &pair.pair_id);
            }
        }
    }
    violations
}
