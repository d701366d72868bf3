//! Responses rendered from gold, with seeded corruption. Used to exercise the
//! parser and scorer end to end without a model.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::entity::{EntityRef, UriMode};
use crate::error::{Error, Result};
use crate::eval::parse::split_opener;
use crate::ir::{Gold, IRPair};
use crate::seed::rng_for;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorruptionProfile {
    pub p_drop_mention: f64,
    /// Perturb one digit of every reference of an entry.
    pub p_corrupt_ref: f64,
    /// One of: newline-separated entries, no opener, the other URI form.
    pub p_format_noise: f64,
    pub p_empty: f64,
    pub rng_seed: u64,
}

impl CorruptionProfile {
    pub fn clean(rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_drop_mention", self.p_drop_mention),
            ("p_corrupt_ref", self.p_corrupt_ref),
            ("p_format_noise", self.p_format_noise),
            ("p_empty", self.p_empty),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A reference that differs from `r` in one digit and is not in `avoid`.
fn perturb<R: Rng>(r: &EntityRef, avoid: &BTreeSet<EntityRef>, rng: &mut R) -> EntityRef {
    let mut id: Vec<char> = r.local_id.chars().collect();
    let digits: Vec<usize> = (0..id.len()).filter(|&i| id[i].is_ascii_digit()).collect();
    if digits.is_empty() {
        id.push('0');
    } else {
        let at = digits[rng.gen_range(0..digits.len())];
        let old = id[at].to_digit(10).expect("digit");
        let new = (old + rng.gen_range(1..10)) % 10;
        id[at] = char::from_digit(new, 10).expect("digit");
    }
    let mut out = r.clone();
    out.local_id = id.into_iter().collect();
    out.label = r.label.clone();
    while avoid.contains(&out) {
        out.local_id.push('7');
    }
    out
}

/// Render `pair`'s gold as a model answer, then corrupt it per `profile`.
/// A zero profile reproduces the gold exactly under parsing.
pub fn simulate_response(pair: &IRPair, profile: &CorruptionProfile) -> String {
    let mut rng = rng_for(profile.rng_seed, &format!("simulate:{}", pair.pair_id));
    if rng.gen_bool(profile.p_empty.clamp(0.0, 1.0)) {
        return String::new();
    }
    let drop_p = profile.p_drop_mention.clamp(0.0, 1.0);
    let corrupt_p = profile.p_corrupt_ref.clamp(0.0, 1.0);
    let base_mode = if pair.response.contains("http") {
        UriMode::FullUri
    } else {
        UriMode::Short
    };
    let (mut newline, mut no_opener, mut mode) = (false, false, base_mode);
    if rng.gen_bool(profile.p_format_noise.clamp(0.0, 1.0)) {
        match rng.gen_range(0..3) {
            0 => newline = true,
            1 => no_opener = true,
            _ => {
                mode = match base_mode {
                    UriMode::Short => UriMode::FullUri,
                    UriMode::FullUri => UriMode::Short,
                }
            }
        }
    }

    let entries: Vec<String> = match &pair.gold {
        Gold::Nel { links } => {
            let mut out = Vec::new();
            for (mention, refs) in links {
                if rng.gen_bool(drop_p) {
                    continue;
                }
                let refs: Vec<EntityRef> = if rng.gen_bool(corrupt_p) {
                    let mut taken = refs.clone();
                    refs.iter()
                        .map(|r| {
                            let bad = perturb(r, &taken, &mut rng);
                            taken.insert(bad.clone());
                            bad
                        })
                        .collect()
                } else {
                    refs.iter().cloned().collect()
                };
                let rendered: Vec<String> = refs.iter().map(|r| r.render(mode)).collect();
                out.push(format!("{mention} - {}", rendered.join("; ")));
            }
            out
        }
        Gold::Ner { mentions } => mentions
            .iter()
            .filter(|_| !rng.gen_bool(drop_p))
            .cloned()
            .collect(),
        Gold::None => return pair.response.clone(),
    };

    let body = entries.join(if newline { "\n" } else { ", " });
    let opener = if no_opener {
        None
    } else {
        split_opener(&pair.response).0
    };
    match (opener, body.is_empty()) {
        (_, true) => String::new(),
        (Some(o), false) => format!("{o} {body}."),
        (None, false) => format!("{body}."),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::Ontology;
    use crate::eval::metrics::{score_nel, GoldInstance};
    use crate::eval::parse::{parse_mention_list, parse_prediction, parse_response};
    use crate::ir::{LinkMap, PairSource, Task};

    fn box_pair() -> IRPair {
        let mut links = LinkMap::new();
        let f = EntityRef::foodon;
        links.insert("cream cheese".into(), [f("03301889"), f("00001013")].into());
        links.insert(
            "onion".into(),
            [f("03301704"), EntityRef::ncbi_taxon("4679")].into(),
        );
        links.insert(
            "worcestershire sauce".into(),
            [f("03305003"), f("03311146")].into(),
        );
        links.insert("walnuts".into(), [EntityRef::ncbi_taxon("16718")].into());
        links.insert("cheese".into(), [f("00001013")].into());
        IRPair {
            pair_id: "0recipe1006/nel/foodon".into(),
            task: Task::Nel,
            ontology: Some(Ontology::FoodOn),
            instruction: "Link them to FoodOn.".into(),
            response: "Definitely, the entities are linked suitably: placeholder.".into(),
            gold: Gold::Nel { links },
            source: PairSource::Cafeteria,
            source_id: "0recipe1006".into(),
            source_kind: None,
            standalone_instruction: None,
        }
    }

    #[test]
    fn clean_profile_round_trips() {
        let pair = box_pair();
        let text = simulate_response(&pair, &CorruptionProfile::clean(1));
        assert!(text.starts_with("Definitely, the entities are linked suitably: cream cheese - "));
        assert_eq!(
            &parse_response(&text, Ontology::FoodOn).entries,
            pair.links().unwrap()
        );
    }

    #[test]
    fn format_noise_is_still_parsed() {
        let pair = box_pair();
        for seed in 0..30 {
            let profile = CorruptionProfile {
                p_format_noise: 1.0,
                rng_seed: seed,
                ..Default::default()
            };
            let text = simulate_response(&pair, &profile);
            assert_eq!(
                &parse_response(&text, Ontology::FoodOn).entries,
                pair.links().unwrap(),
                "{text}"
            );
        }
    }

    #[test]
    fn empty_profile_gives_empty_text() {
        let profile = CorruptionProfile {
            p_empty: 1.0,
            ..Default::default()
        };
        assert_eq!(simulate_response(&box_pair(), &profile), "");
    }

    #[test]
    fn corrupting_every_entry_zeroes_precision() {
        let pair = box_pair();
        let profile = CorruptionProfile {
            p_corrupt_ref: 1.0,
            rng_seed: 3,
            ..Default::default()
        };
        let text = simulate_response(&pair, &profile);
        let pred = parse_prediction(&pair.pair_id, &text, Ontology::FoodOn);
        let gold = pair.links().unwrap();
        assert_eq!(pred.entries.len(), 5);
        for (mention, refs) in gold {
            let got = &pred.entries[mention];
            assert_eq!(got.len(), refs.len());
            assert!(got.is_disjoint(refs), "{mention}: {got:?}");
        }
        let report = score_nel(
            &[GoldInstance {
                instance_id: pair.pair_id.clone(),
                links: gold.clone(),
            }],
            &[pred],
        )
        .unwrap();
        assert_eq!(report.macro_weighted.precision, 0.0);
        // tp 0 everywhere; every corrupted ref is one false positive
        let fp: usize = report.per_entity.iter().map(|s| s.fp).sum();
        assert_eq!(fp, 8);
    }

    #[test]
    fn recognition_pairs_simulate_mention_lists() {
        let mut pair = box_pair();
        pair.gold = Gold::Ner {
            mentions: vec!["cream cheese".into(), "beef".into()],
        };
        pair.response = "Sure thing: cream cheese, beef.".into();
        let text = simulate_response(&pair, &CorruptionProfile::clean(0));
        assert_eq!(parse_mention_list(&text), ["cream cheese", "beef"]);
    }

    #[test]
    fn profiles_are_validated() {
        let bad = CorruptionProfile {
            p_empty: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(CorruptionProfile::clean(0).validate().is_ok());
    }
}
