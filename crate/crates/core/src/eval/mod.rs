//! Response parsing, recognition-to-linking chaining and scoring.

pub mod metrics;
pub mod parse;

pub use metrics::{
    score_nel, score_ner, EntityScore, EvalCounts, EvalReport, GoldInstance, NerTally, Prf,
};
pub use parse::{
    chain_ner_to_nel, parse_mention_list, parse_prediction, parse_response, ChainedInstruction,
    LinkTemplate, PredictionMap,
};
