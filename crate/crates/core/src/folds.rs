//! Cross-validation planning: per-dataset random chunks, fold manifests and
//! the general-instruction mix for training.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::balance::LeakageViolation;
use crate::entity::Ontology;
use crate::error::{Error, Result};
use crate::ir::{render_flat_pair, Gold, IRPair, PairSource, Task};
use crate::seed::rng_for;

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_TOKEN_BUDGET: usize = 1024;
pub const DEFAULT_GENERAL_TARGET: usize = 34_229;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetId {
    #[serde(rename = "nel_hansard")]
    NelHansard,
    #[serde(rename = "nel_foodon")]
    NelFoodOn,
    #[serde(rename = "nel_snomed")]
    NelSnomed,
    #[serde(rename = "ner_cafeteria")]
    NerCafeteria,
}

impl DatasetId {
    pub const ALL: [DatasetId; 4] = [
        DatasetId::NelHansard,
        DatasetId::NelFoodOn,
        DatasetId::NelSnomed,
        DatasetId::NerCafeteria,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::NelHansard => "nel_hansard",
            DatasetId::NelFoodOn => "nel_foodon",
            DatasetId::NelSnomed => "nel_snomed",
            DatasetId::NerCafeteria => "ner_cafeteria",
        }
    }

    pub fn for_ontology(ontology: Ontology) -> Self {
        match ontology {
            Ontology::FoodOn => DatasetId::NelFoodOn,
            Ontology::SnomedCt => DatasetId::NelSnomed,
            Ontology::Hansard => DatasetId::NelHansard,
        }
    }

    /// The dataset a pair is trained and tested in; general pairs have none.
    pub fn of_pair(pair: &IRPair) -> Option<Self> {
        match (pair.task, pair.ontology) {
            (Task::Ner, _) => Some(DatasetId::NerCafeteria),
            (Task::Nel, Some(o)) => Some(Self::for_ontology(o)),
            _ => None,
        }
    }

    pub fn ontology(self) -> Option<Ontology> {
        match self {
            DatasetId::NelHansard => Some(Ontology::Hansard),
            DatasetId::NelFoodOn => Some(Ontology::FoodOn),
            DatasetId::NelSnomed => Some(Ontology::SnomedCt),
            DatasetId::NerCafeteria => None,
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetId::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown dataset `{s}`")))
    }
}

pub type Datasets = BTreeMap<DatasetId, Vec<IRPair>>;

/// Split pairs into the four training datasets; general pairs are dropped.
pub fn group_datasets<'a>(pairs: impl IntoIterator<Item = &'a IRPair>) -> Datasets {
    let mut out = Datasets::new();
    for p in pairs {
        if let Some(d) = DatasetId::of_pair(p) {
            out.entry(d).or_default().push(p.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub rng_seed: u64,
    /// Per dataset, instance id to chunk, in shuffled order.
    pub datasets: BTreeMap<DatasetId, IndexMap<String, usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub dataset_id: DatasetId,
    pub instance_id: String,
    pub chunk: usize,
}

impl FoldPlan {
    pub fn chunk_sizes(&self, dataset: DatasetId) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in self
            .datasets
            .get(&dataset)
            .into_iter()
            .flat_map(|m| m.values())
        {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn to_records(&self) -> Vec<PlanRecord> {
        self.datasets
            .iter()
            .flat_map(|(d, chunks)| {
                chunks.iter().map(move |(id, &chunk)| PlanRecord {
                    dataset_id: *d,
                    instance_id: id.clone(),
                    chunk,
                })
            })
            .collect()
    }

    pub fn from_records(records: &[PlanRecord], k: usize, rng_seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidFolds(format!("k = {k}")));
        }
        let mut datasets: BTreeMap<DatasetId, IndexMap<String, usize>> = BTreeMap::new();
        for r in records {
            if r.chunk >= k {
                return Err(Error::InvalidFolds(format!(
                    "chunk {} of `{}` exceeds k = {k}",
                    r.chunk, r.instance_id
                )));
            }
            if datasets
                .entry(r.dataset_id)
                .or_default()
                .insert(r.instance_id.clone(), r.chunk)
                .is_some()
            {
                return Err(Error::InvalidFolds(format!(
                    "`{}` listed twice",
                    r.instance_id
                )));
            }
        }
        Ok(Self {
            k,
            rng_seed,
            datasets,
        })
    }
}

/// Seeded shuffle per dataset, then chunk = position mod k.
pub fn plan_folds(datasets: &Datasets, k: usize, rng_seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidFolds(format!(
            "need at least 2 folds, got {k}"
        )));
    }
    let mut plan = FoldPlan {
        k,
        rng_seed,
        datasets: BTreeMap::new(),
    };
    for (id, pairs) in datasets {
        if pairs.is_empty() {
            return Err(Error::EmptyDataset(id.to_string()));
        }
        let mut ids: Vec<&str> = pairs.iter().map(|p| p.pair_id.as_str()).collect();
        if ids.iter().collect::<HashSet<_>>().len() != ids.len() {
            return Err(Error::InvalidFolds(format!(
                "dataset `{id}` repeats an instance id"
            )));
        }
        ids.shuffle(&mut rng_for(rng_seed, &format!("folds:{id}")));
        let chunks = ids
            .into_iter()
            .enumerate()
            .map(|(pos, i)| (i.to_string(), pos % k))
            .collect();
        plan.datasets.insert(*id, chunks);
    }
    Ok(plan)
}

/// Token length used for the general-corpus filter.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum TokenCounter {
    /// ceil(characters / 4) of the flat training line.
    #[default]
    Approximate,
    /// Exact counts by instance id; ids absent from the table fall back to the
    /// approximation.
    Sidecar(HashMap<String, usize>),
}

pub fn approx_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Deserialize)]
struct SidecarRecord {
    instance_id: String,
    tokens: usize,
}

impl TokenCounter {
    pub fn count(&self, pair: &IRPair) -> usize {
        if let TokenCounter::Sidecar(table) = self {
            if let Some(&n) = table.get(&pair.pair_id) {
                return n;
            }
        }
        approx_tokens(&render_flat_pair(pair))
    }

    /// Parse a `{instance_id, tokens}` line-delimited table.
    pub fn sidecar(content: &str, origin: &std::path::Path) -> Result<Self> {
        let records: Vec<SidecarRecord> = crate::io::parse_jsonl(content, origin)?;
        Ok(TokenCounter::Sidecar(
            records
                .into_iter()
                .map(|r| (r.instance_id, r.tokens))
                .collect(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixOptions {
    pub token_budget: usize,
    pub general_target: usize,
}

impl Default for MixOptions {
    fn default() -> Self {
        Self {
            token_budget: DEFAULT_TOKEN_BUDGET,
            general_target: DEFAULT_GENERAL_TARGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldManifest {
    pub fold_index: usize,
    /// Shuffled training pairs, general instances included.
    pub train: Vec<IRPair>,
    /// Test pairs, dataset by dataset.
    pub test: Vec<IRPair>,
    pub general_count: usize,
    /// General instances within the token budget.
    pub general_available: usize,
    /// How far `general_count` falls short of the target.
    pub general_shortfall: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold_index: usize,
    pub train: usize,
    pub test: usize,
    pub general_count: usize,
    pub general_available: usize,
    pub general_shortfall: usize,
    pub test_by_dataset: BTreeMap<String, usize>,
}

impl FoldManifest {
    pub fn summary(&self) -> FoldSummary {
        let mut test_by_dataset = BTreeMap::new();
        for p in &self.test {
            if let Some(d) = DatasetId::of_pair(p) {
                *test_by_dataset.entry(d.to_string()).or_insert(0) += 1;
            }
        }
        FoldSummary {
            fold_index: self.fold_index,
            train: self.train.len(),
            test: self.test.len(),
            general_count: self.general_count,
            general_available: self.general_available,
            general_shortfall: self.general_shortfall,
            test_by_dataset,
        }
    }
}

pub fn materialize_fold(
    plan: &FoldPlan,
    datasets: &Datasets,
    fold_index: usize,
    general: &[IRPair],
    options: MixOptions,
    counter: &TokenCounter,
) -> Result<FoldManifest> {
    if fold_index >= plan.k {
        return Err(Error::InvalidFolds(format!(
            "fold {fold_index} with k = {}",
            plan.k
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (id, pairs) in datasets {
        let chunks = plan
            .datasets
            .get(id)
            .ok_or_else(|| Error::InvalidFolds(format!("plan lacks dataset `{id}`")))?;
        let by_id: HashMap<&str, &IRPair> = pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect();
        for (instance, &chunk) in chunks {
            let pair = by_id.get(instance.as_str()).ok_or_else(|| {
                Error::InvalidFolds(format!("`{instance}` is planned but missing from `{id}`"))
            })?;
            if chunk == fold_index {
                test.push((*pair).clone());
            } else {
                train.push((*pair).clone());
            }
        }
    }

    let mut rng = rng_for(plan.rng_seed, &format!("fold:{fold_index}"));
    let mut fitting: Vec<&IRPair> = general
        .iter()
        .filter(|p| counter.count(p) <= options.token_budget)
        .collect();
    let general_available = fitting.len();
    fitting.shuffle(&mut rng);
    fitting.truncate(options.general_target);
    let general_count = fitting.len();
    train.extend(fitting.into_iter().cloned());
    train.shuffle(&mut rng);

    Ok(FoldManifest {
        fold_index,
        train,
        test,
        general_count,
        general_available,
        general_shortfall: options.general_target - general_count,
    })
}

/// Instructions present on both sides of a fold.
pub fn verify_no_leakage(manifest: &FoldManifest) -> Vec<LeakageViolation> {
    let train: HashMap<&str, &str> = manifest
        .train
        .iter()
        .map(|p| (p.standalone(), p.pair_id.as_str()))
        .collect();
    manifest
        .test
        .iter()
        .filter_map(|p| {
            train.get(p.standalone()).map(|first| LeakageViolation {
                instruction: p.standalone().to_string(),
                first: first.to_string(),
                second: p.pair_id.clone(),
            })
        })
        .collect()
}

/// Keep the first pair of each instruction text; returns the kept pairs and
/// the ids dropped.
pub fn dedup_instances(pairs: Vec<IRPair>) -> (Vec<IRPair>, Vec<String>) {
    let mut seen = HashSet::new();
    let mut dropped = Vec::new();
    let kept = pairs
        .into_iter()
        .filter(|p| {
            let fresh = seen.insert(p.standalone().to_string());
            if !fresh {
                dropped.push(p.pair_id.clone());
            }
            fresh
        })
        .collect();
    (kept, dropped)
}

#[derive(Debug, Deserialize)]
struct GeneralRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(alias = "prompt")]
    instruction: String,
    response: String,
}

/// Read a general instruction corpus: one `{prompt|instruction, response}`
/// object per line, with an optional `id`.
pub fn parse_general_corpus(content: &str, origin: &std::path::Path) -> Result<Vec<IRPair>> {
    let records: Vec<GeneralRecord> = crate::io::parse_jsonl(content, origin)?;
    Ok(records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let id = r.id.unwrap_or_else(|| format!("general:{i:06}"));
            IRPair {
                pair_id: id.clone(),
                task: Task::General,
                ontology: None,
                instruction: r.instruction,
                response: r.response,
                gold: Gold::None,
                source: PairSource::General,
                source_id: id,
                source_kind: None,
                standalone_instruction: None,
            }
        })
        .collect())
}
