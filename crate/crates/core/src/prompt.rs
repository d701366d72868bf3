//! Few-shot baseline prompts.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::entity::{Ontology, UriMode};
use crate::error::{Error, Result};
use crate::ir::{IRPair, Task};
use crate::seed::rng_for;

pub const HEADER: &str = "The following are examples of questions (with answers) about nutrition.";
pub const BRIDGE: &str =
    "Respond to the following question in the same manner as seen in the examples above.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NShotPrompt {
    pub instance_id: String,
    pub n: usize,
    pub task: Task,
    pub ontology: Option<Ontology>,
    /// Pair ids of the exemplars, in prompt order.
    pub exemplars: Vec<String>,
    pub body: String,
}

/// Line record consumed by the gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub instance_id: String,
    pub n: usize,
    pub prompt: String,
}

impl From<&NShotPrompt> for PromptRecord {
    fn from(p: &NShotPrompt) -> Self {
        Self {
            instance_id: p.instance_id.clone(),
            n: p.n,
            prompt: p.body.clone(),
        }
    }
}

fn question(instruction: &str, answer: Option<&str>) -> String {
    match answer {
        Some(a) => format!("Question: {instruction}\nAnswer: {a}"),
        None => format!("Question: {instruction}\nAnswer:"),
    }
}

/// Prompt for `target` with `n` exemplars of the same task and ontology drawn
/// without replacement from `pool`. The draw is keyed by the target's id, so
/// every test instance gets its own exemplars.
pub fn build_nshot_prompt(
    target: &IRPair,
    n: usize,
    pool: &[IRPair],
    rng_seed: u64,
    uri_mode: UriMode,
) -> Result<NShotPrompt> {
    let instruction = target.standalone();
    let mut prompt = NShotPrompt {
        instance_id: target.pair_id.clone(),
        n,
        task: target.task,
        ontology: target.ontology,
        exemplars: Vec::new(),
        body: instruction.to_string(),
    };
    if n == 0 {
        return Ok(prompt);
    }
    let matching: Vec<&IRPair> = pool
        .iter()
        .filter(|p| {
            p.task == target.task
                && p.ontology == target.ontology
                && p.pair_id != target.pair_id
                && p.standalone() != instruction
        })
        .collect();
    if matching.len() < n {
        let task = match target.ontology {
            Some(o) => format!("{:?} {o}", target.task),
            None => format!("{:?}", target.task),
        };
        return Err(Error::InsufficientExemplars {
            task,
            needed: n,
            available: matching.len(),
        });
    }
    let mut rng = rng_for(rng_seed, &format!("nshot:{}", target.pair_id));
    let chosen: Vec<&IRPair> = matching.choose_multiple(&mut rng, n).copied().collect();
    let shots: Vec<String> = chosen
        .iter()
        .map(|p| question(p.standalone(), Some(&p.render_response(uri_mode))))
        .collect();
    prompt.body = format!(
        "{HEADER} {}\n{BRIDGE} {}",
        shots.join("\n"),
        question(instruction, None)
    );
    prompt.exemplars = chosen.iter().map(|p| p.pair_id.clone()).collect();
    Ok(prompt)
}
