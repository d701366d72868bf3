//! Generators, fixtures and independent oracles shared by the integration
//! test targets.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use foodsem::bioc::{group_ontology_variants, parse_bioc_collection, DocumentBundle, SourceKind};
use foodsem::eval::{GoldInstance, PredictionMap};
use foodsem::ir::{Gold, IRPair, LinkMap, PairSource, Task};
use foodsem::pools::{fill_link_request, PhrasePools, PoolKind};
use foodsem::{EntityRef, Ontology};
use rand::seq::SliceRandom;
use rand::Rng;

pub const ONTOLOGIES: [Ontology; 3] = [Ontology::Hansard, Ontology::FoodOn, Ontology::SnomedCt];

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn toy_dir() -> PathBuf {
    manifest_dir().join("data/toy")
}

pub fn listing_xml(ontology: Ontology) -> String {
    let tag = match ontology {
        Ontology::FoodOn => "foodon",
        Ontology::Hansard => "hansard",
        Ontology::SnomedCt => "snomedct",
    };
    let path = manifest_dir().join(format!("data/fixtures/listing_0recipe1006_{tag}.xml"));
    std::fs::read_to_string(path).expect("listing fixture")
}

pub fn listing_bundle() -> DocumentBundle {
    let docs = ONTOLOGIES
        .iter()
        .map(|&o| {
            parse_bioc_collection(listing_xml(o).as_bytes(), SourceKind::Recipe, o)
                .unwrap()
                .remove(0)
        })
        .collect();
    group_ontology_variants(docs).unwrap().remove(0)
}

const WORDS: &[&str] = &[
    "cream",
    "cheese",
    "beef",
    "olives",
    "onion",
    "sauce",
    "walnuts",
    "green",
    "tea",
    "rice",
    "brown",
    "sugar",
    "smoked",
    "salmon",
    "olive",
    "oil",
    "whole",
    "wheat",
    "flour",
    "lemon",
    "juice",
    "st.",
    "john's",
    "stir-fry",
    "dark",
    "chocolate",
    "garam",
    "masala",
    "crème",
    "fraîche",
    "soy",
    "milk",
    "(dried)",
    "50%",
];

const HANSARD_LABELS: &[&str] = &[
    "Cheese",
    "Beef",
    "Nut",
    "Onion/leek/garlic",
    "Sauce/dressing",
    "Fish",
    "Cereals",
];

/// A mention of one to three words, sometimes capitalized.
pub fn random_mention<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(1..=3);
    let words: Vec<String> = (0..n)
        .map(|_| {
            let w = WORDS.choose(rng).unwrap().to_string();
            if rng.gen_bool(0.2) {
                let mut c = w.chars();
                c.next()
                    .map(|f| f.to_uppercase().chain(c).collect())
                    .unwrap_or_default()
            } else {
                w
            }
        })
        .collect();
    words.join(" ")
}

pub fn random_ref<R: Rng>(rng: &mut R, ontology: Ontology) -> EntityRef {
    match ontology {
        Ontology::FoodOn if rng.gen_bool(0.2) => {
            EntityRef::ncbi_taxon(&rng.gen_range(1..999_999).to_string())
        }
        Ontology::FoodOn => EntityRef::foodon(&format!("{:08}", rng.gen_range(0..4_000_000))),
        Ontology::SnomedCt => {
            EntityRef::snomed(&rng.gen_range(100_000u64..999_999_999_999).to_string())
        }
        Ontology::Hansard => {
            let depth = rng.gen_range(1..=4);
            let mut code = format!("AG.{:02}", rng.gen_range(1..20));
            for _ in 1..depth {
                let part = if rng.gen_bool(0.5) {
                    ((b'a' + rng.gen_range(0..20)) as char).to_string()
                } else {
                    format!("{:02}", rng.gen_range(1..30))
                };
                code = format!("{code}.{part}");
            }
            let label = HANSARD_LABELS.choose(rng).copied();
            EntityRef::hansard(&code, label)
        }
    }
}

/// Gold links of 1..=6 distinct mentions with 1..=3 refs each.
pub fn random_links<R: Rng>(rng: &mut R, ontology: Ontology) -> LinkMap {
    let mut links = LinkMap::new();
    for _ in 0..rng.gen_range(1..=6) {
        let key =
            foodsem::text::normalize_mention(&foodsem::text::display_mention(&random_mention(rng)));
        if key.is_empty() || links.contains_key(&key) {
            continue;
        }
        let refs: BTreeSet<EntityRef> = (0..rng.gen_range(1..=3))
            .map(|_| random_ref(rng, ontology))
            .collect();
        links.insert(key, refs);
    }
    links
}

/// A linking pair whose response is rendered from gold with an opener drawn
/// from the shipped pools.
pub fn random_nel_pair<R: Rng>(rng: &mut R, ontology: Ontology, id: usize) -> IRPair {
    let pools = PhrasePools::defaults();
    let opener = pools
        .get(PoolKind::NelOpener)
        .unwrap()
        .draw(rng)
        .to_string();
    let links = random_links(rng, ontology);
    let mentions: Vec<String> = links.keys().cloned().collect();
    let template = pools
        .get(PoolKind::LinkRequest)
        .unwrap()
        .draw(rng)
        .to_string();
    IRPair {
        pair_id: format!("rt:{id}"),
        task: Task::Nel,
        ontology: Some(ontology),
        instruction: fill_link_request(&template, ontology, &mentions),
        response: format!("{opener} placeholder."),
        gold: Gold::Nel { links },
        source: PairSource::Artificial,
        source_id: format!("rt:{id}"),
        source_kind: None,
        standalone_instruction: None,
    }
}

// ---- brute-force metric oracle ----

pub type Triple = (String, String, EntityRef);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleScore {
    pub gold: usize,
    pub tp: usize,
    pub fp: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Enumerate every (instance, gold mention, entity) candidate triple and
/// count membership in the gold and predicted triple sets directly.
pub fn oracle_scores(
    gold: &[GoldInstance],
    preds: &[PredictionMap],
) -> (BTreeMap<EntityRef, OracleScore>, [f64; 3]) {
    let mut g: Vec<Triple> = Vec::new();
    let mut p: Vec<Triple> = Vec::new();
    let mut universe: Vec<EntityRef> = Vec::new();
    for inst in gold {
        let pred = preds
            .iter()
            .find(|x| x.instance_id == inst.instance_id && x.meaningful);
        for (mention, refs) in &inst.links {
            for e in refs {
                g.push((inst.instance_id.clone(), mention.clone(), e.clone()));
                universe.push(e.clone());
            }
            if let Some(pred) = pred {
                if let Some(prefs) = pred.entries.get(mention) {
                    for e in prefs {
                        p.push((inst.instance_id.clone(), mention.clone(), e.clone()));
                        universe.push(e.clone());
                    }
                }
            }
        }
    }
    universe.sort();
    universe.dedup();
    let mut out = BTreeMap::new();
    let total: usize = g.len();
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for e in universe {
        let mut s = OracleScore {
            gold: 0,
            tp: 0,
            fp: 0,
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
        for inst in gold {
            for mention in inst.links.keys() {
                let t = (inst.instance_id.clone(), mention.clone(), e.clone());
                let in_g = g.contains(&t);
                let in_p = p.contains(&t);
                s.gold += in_g as usize;
                s.tp += (in_g && in_p) as usize;
                s.fp += (!in_g && in_p) as usize;
            }
        }
        s.precision = if s.tp + s.fp > 0 {
            s.tp as f64 / (s.tp + s.fp) as f64
        } else {
            0.0
        };
        s.recall = if s.gold > 0 {
            s.tp as f64 / s.gold as f64
        } else {
            0.0
        };
        s.f1 = if s.precision + s.recall > 0.0 {
            2.0 * s.precision * s.recall / (s.precision + s.recall)
        } else {
            0.0
        };
        wp += s.gold as f64 * s.precision;
        wr += s.gold as f64 * s.recall;
        wf += s.gold as f64 * s.f1;
        out.insert(e, s);
    }
    let macro_ = if total == 0 {
        [0.0; 3]
    } else {
        [wp / total as f64, wr / total as f64, wf / total as f64]
    };
    (out, macro_)
}

/// Up to 10 instances over a universe of at most 8 entities, with predictions
/// that keep, drop, swap and invent links, plus absent and empty predictions.
pub fn random_metric_fixture<R: Rng>(rng: &mut R) -> (Vec<GoldInstance>, Vec<PredictionMap>) {
    let n_entities = rng.gen_range(1..=8);
    let universe: Vec<EntityRef> = (0..n_entities)
        .map(|i| EntityRef::foodon(&format!("{:08}", i + 1)))
        .collect();
    let mut gold = Vec::new();
    let mut preds = Vec::new();
    for i in 0..rng.gen_range(1..=10) {
        let id = format!("i{i}");
        let mut links = LinkMap::new();
        for m in 0..rng.gen_range(1..=4) {
            let k = rng.gen_range(1..=3.min(n_entities));
            let refs: BTreeSet<EntityRef> = universe.choose_multiple(rng, k).cloned().collect();
            links.insert(format!("mention {m}"), refs);
        }
        match rng.gen_range(0..10) {
            0 => {}
            1 => preds.push(prediction(&id, LinkMap::new(), false)),
            _ => {
                let mut entries = LinkMap::new();
                for (mention, refs) in &links {
                    if rng.gen_bool(0.15) {
                        continue;
                    }
                    let mut predicted: BTreeSet<EntityRef> =
                        refs.iter().filter(|_| rng.gen_bool(0.7)).cloned().collect();
                    for _ in 0..rng.gen_range(0..=2) {
                        predicted.insert(universe.choose(rng).unwrap().clone());
                    }
                    entries.insert(mention.clone(), predicted);
                }
                if rng.gen_bool(0.3) {
                    entries.insert("spurious".into(), [universe[0].clone()].into());
                }
                let meaningful = !entries.is_empty();
                preds.push(prediction(&id, entries, meaningful));
            }
        }
        gold.push(GoldInstance {
            instance_id: id,
            links,
        });
    }
    (gold, preds)
}

pub fn prediction(id: &str, entries: LinkMap, meaningful: bool) -> PredictionMap {
    PredictionMap {
        instance_id: id.into(),
        ontology: Ontology::FoodOn,
        entries,
        meaningful,
        parse_notes: Vec::new(),
    }
}

/// Compare the library report with the oracle; returns a description of the
/// first mismatch beyond `tol`.
pub fn compare_with_oracle(
    gold: &[GoldInstance],
    preds: &[PredictionMap],
    tol: f64,
) -> Result<(), String> {
    let report = foodsem::eval::score_nel(gold, preds).map_err(|e| e.to_string())?;
    let (oracle, macro_) = oracle_scores(gold, preds);
    let got: BTreeMap<&EntityRef, _> = report.per_entity.iter().map(|s| (&s.entity, s)).collect();
    for (e, o) in &oracle {
        let Some(s) = got.get(e) else {
            if o.gold == 0 && o.fp == 0 {
                continue;
            }
            return Err(format!("{e:?} missing from report"));
        };
        if (s.gold_count, s.tp, s.fp) != (o.gold, o.tp, o.fp) {
            return Err(format!(
                "{e:?}: counts {:?} vs oracle {:?}",
                (s.gold_count, s.tp, s.fp),
                (o.gold, o.tp, o.fp)
            ));
        }
        for (a, b) in [
            (s.precision, o.precision),
            (s.recall, o.recall),
            (s.f1, o.f1),
        ] {
            if (a - b).abs() > tol {
                return Err(format!("{e:?}: {a} vs oracle {b}"));
            }
        }
    }
    if got.len() > oracle.len() {
        return Err("report has entities the oracle never saw".into());
    }
    let m = &report.macro_weighted;
    for (a, b) in [
        (m.precision, macro_[0]),
        (m.recall, macro_[1]),
        (m.f1, macro_[2]),
    ] {
        if (a - b).abs() > tol {
            return Err(format!("macro {a} vs oracle {b}"));
        }
    }
    Ok(())
}

// ---- fold fixtures ----

/// Pairs for the four datasets with the given sizes, plus `dup` exact
/// repeats of earlier instructions.
pub fn fold_fixture<R: Rng>(rng: &mut R, sizes: [usize; 4], dup: usize) -> Vec<IRPair> {
    let mut pairs = Vec::new();
    for (d, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let (task, ontology) = match d {
                0 => (Task::Ner, None),
                _ => (Task::Nel, Some(ONTOLOGIES[d - 1])),
            };
            pairs.push(IRPair {
                pair_id: format!("d{d}/{i}"),
                task,
                ontology,
                instruction: format!("instruction {d} {i}"),
                response: "Sure: x.".into(),
                gold: match task {
                    Task::Ner => Gold::Ner {
                        mentions: vec!["x".into()],
                    },
                    _ => Gold::Nel {
                        links: LinkMap::new(),
                    },
                },
                source: PairSource::Cafeteria,
                source_id: format!("s{i}"),
                source_kind: None,
                standalone_instruction: None,
            });
        }
    }
    for j in 0..dup {
        if pairs.is_empty() {
            break;
        }
        let mut copy = pairs.choose(rng).unwrap().clone();
        copy.pair_id = format!("dup/{j}");
        pairs.push(copy);
    }
    pairs
}

// ---- balancer fixtures ----

pub struct BalanceFixture {
    pub reports: Vec<foodsem::balance::DistributionReport>,
    pub lexicon: foodsem::balance::LabelLexicon,
    pub cafeteria: Vec<IRPair>,
}

/// Random entity counts per ontology against a random threshold; some labels
/// are shared between entities, and corpus pairs reuse the same labels so
/// instruction collisions are possible.
pub fn balance_fixture<R: Rng>(rng: &mut R) -> BalanceFixture {
    let threshold = rng.gen_range(1..=60);
    let mut lexicon = foodsem::balance::LabelLexicon::default();
    let mut reports = Vec::new();
    let mut labels_by_ontology: BTreeMap<Ontology, Vec<String>> = BTreeMap::new();
    for ontology in ONTOLOGIES {
        let mut counts = BTreeMap::new();
        for i in 0..rng.gen_range(1..=25) {
            let entity = random_ref(rng, ontology);
            counts.insert(entity.clone(), rng.gen_range(0..=threshold + 5));
            let label = if i > 0 && rng.gen_bool(0.1) {
                format!("shared food {}", rng.gen_range(0..3))
            } else {
                format!("food {} {i}", ontology.tag())
            };
            lexicon.add(entity.clone(), &label);
            if rng.gen_bool(0.2) {
                lexicon.add(entity, &format!("other name {i}"));
            }
            labels_by_ontology.entry(ontology).or_default().push(label);
        }
        reports.push(foodsem::balance::DistributionReport::from_counts(
            ontology, threshold, counts,
        ));
    }
    let pools = PhrasePools::defaults();
    let mut cafeteria = Vec::new();
    for (ontology, labels) in &labels_by_ontology {
        for j in 0..20 {
            let template = pools
                .get(PoolKind::LinkRequest)
                .unwrap()
                .draw(rng)
                .to_string();
            let k = rng.gen_range(1..=labels.len().min(7));
            let picked: Vec<String> = labels.choose_multiple(rng, k).cloned().collect();
            cafeteria.push(IRPair {
                pair_id: format!("caf/{}/{j}", ontology.tag()),
                task: Task::Nel,
                ontology: Some(*ontology),
                instruction: "Link them.".into(),
                response: "Sure: x - y.".into(),
                gold: Gold::Nel {
                    links: LinkMap::new(),
                },
                source: PairSource::Cafeteria,
                source_id: format!("caf{j}"),
                source_kind: Some(SourceKind::Recipe),
                standalone_instruction: Some(fill_link_request(&template, *ontology, &picked)),
            });
        }
    }
    BalanceFixture {
        reports,
        lexicon,
        cafeteria,
    }
}

/// Set sizes are drawn from `sizes`, except for at most one smaller remainder.
pub fn check_partition(sets: &[usize], sizes: &[usize]) -> Result<(), String> {
    let min = *sizes.iter().min().unwrap();
    let odd: Vec<usize> = sets
        .iter()
        .copied()
        .filter(|s| !sizes.contains(s))
        .collect();
    if odd.len() > 1 || odd.iter().any(|&s| s == 0 || s >= min) {
        return Err(format!("set sizes {sets:?}"));
    }
    Ok(())
}
