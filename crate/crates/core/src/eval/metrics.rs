//! Macro-weighted linking metrics.
//!
//! The scoring unit is the `(instance, gold mention, entity)` triple. Only
//! mentions that carry gold links are scored; predicted mentions without gold
//! are ignored. Per-entity precision, recall and F1 are averaged with weights
//! proportional to each entity's gold triple count.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::entity::EntityRef;
use crate::error::{Error, Result};
use crate::eval::parse::PredictionMap;
use crate::ir::LinkMap;
use crate::text::normalize_mention;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldInstance {
    pub instance_id: String,
    pub links: LinkMap,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityScore {
    pub entity: EntityRef,
    pub gold_count: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub instances: usize,
    pub non_meaningful: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_entity: Vec<EntityScore>,
    pub macro_weighted: Prf,
    pub counts: EvalCounts,
}

impl EvalReport {
    pub fn entity(&self, e: &EntityRef) -> Option<&EntityScore> {
        self.per_entity.iter().find(|s| &s.entity == e)
    }
}

#[derive(Default)]
struct Tally {
    entity: Option<EntityRef>,
    gold: usize,
    tp: usize,
    fp: usize,
}

pub fn score_nel(gold: &[GoldInstance], preds: &[PredictionMap]) -> Result<EvalReport> {
    let mut gold_ids = HashSet::new();
    for g in gold {
        if !gold_ids.insert(g.instance_id.as_str()) {
            return Err(Error::AlignmentError(format!(
                "duplicate gold instance `{}`",
                g.instance_id
            )));
        }
    }
    let mut by_id: HashMap<&str, &PredictionMap> = HashMap::new();
    for p in preds {
        if !gold_ids.contains(p.instance_id.as_str()) {
            return Err(Error::AlignmentError(p.instance_id.clone()));
        }
        if by_id.insert(p.instance_id.as_str(), p).is_some() {
            return Err(Error::AlignmentError(format!(
                "duplicate prediction `{}`",
                p.instance_id
            )));
        }
    }

    let empty = BTreeSet::new();
    let mut tallies: BTreeMap<EntityRef, Tally> = BTreeMap::new();
    let mut counts = EvalCounts::default();
    for instance in gold {
        counts.instances += 1;
        let pred = by_id.get(instance.instance_id.as_str()).copied();
        let meaningful = pred.is_some_and(|p| p.meaningful);
        if !meaningful {
            counts.non_meaningful += 1;
        }
        for (mention, gold_set) in &instance.links {
            let predicted = match pred {
                Some(p) if meaningful => {
                    p.entries.get(&normalize_mention(mention)).unwrap_or(&empty)
                }
                _ => &empty,
            };
            for e in gold_set {
                let t = tallies.entry(e.clone()).or_default();
                t.entity.get_or_insert_with(|| e.clone());
                t.gold += 1;
                if predicted.contains(e) {
                    t.tp += 1;
                }
            }
            for e in predicted.difference(gold_set) {
                let t = tallies.entry(e.clone()).or_default();
                t.entity.get_or_insert_with(|| e.clone());
                t.fp += 1;
            }
        }
    }

    let total_gold: usize = tallies.values().map(|t| t.gold).sum();
    let mut macro_weighted = Prf::default();
    let mut per_entity = Vec::with_capacity(tallies.len());
    for (entity, t) in tallies {
        let precision = if t.tp + t.fp == 0 {
            0.0
        } else {
            t.tp as f64 / (t.tp + t.fp) as f64
        };
        let recall = if t.gold == 0 {
            0.0
        } else {
            t.tp as f64 / t.gold as f64
        };
        let f1 = f1_score(precision, recall);
        let w = t.gold as f64;
        macro_weighted.precision += w * precision;
        macro_weighted.recall += w * recall;
        macro_weighted.f1 += w * f1;
        per_entity.push(EntityScore {
            entity: t.entity.unwrap_or(entity),
            gold_count: t.gold,
            tp: t.tp,
            fp: t.fp,
            fn_: t.gold - t.tp,
            precision,
            recall,
            f1,
        });
    }
    if total_gold > 0 {
        // one division at the end keeps a perfect score exactly 1
        let total = total_gold as f64;
        macro_weighted.precision /= total;
        macro_weighted.recall /= total;
        macro_weighted.f1 /= total;
    }
    Ok(EvalReport {
        per_entity,
        macro_weighted,
        counts,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerTally {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl NerTally {
    pub fn add(&mut self, gold_mentions: &[String], predicted_mentions: &[String]) {
        let gold: HashSet<String> = gold_mentions.iter().map(|m| normalize_mention(m)).collect();
        let pred: HashSet<String> = predicted_mentions
            .iter()
            .map(|m| normalize_mention(m))
            .collect();
        self.matched += gold.intersection(&pred).count();
        self.predicted += pred.len();
        self.gold += gold.len();
    }

    pub fn scores(&self) -> Prf {
        let precision = if self.predicted == 0 {
            0.0
        } else {
            self.matched as f64 / self.predicted as f64
        };
        let recall = if self.gold == 0 {
            0.0
        } else {
            self.matched as f64 / self.gold as f64
        };
        Prf {
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

/// Exact-match set scores over normalized mentions.
pub fn score_ner(gold_mentions: &[String], predicted_mentions: &[String]) -> Prf {
    let mut tally = NerTally::default();
    tally.add(gold_mentions, predicted_mentions);
    tally.scores()
}
