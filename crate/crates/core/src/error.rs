use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ingestion
    #[error("malformed BioC XML: {0}")]
    MalformedXml(String),
    #[error("document `{doc_id}` has no full_text infon")]
    MissingFullText { doc_id: String },
    #[error("annotation `{annotation_id}` in document `{doc_id}` has no semantic tags")]
    EmptySemanticTags {
        doc_id: String,
        annotation_id: String,
    },
    #[error(
        "annotation `{annotation_id}` in document `{doc_id}` carries no reference to {ontology}"
    )]
    OntologyMismatch {
        doc_id: String,
        annotation_id: String,
        ontology: String,
    },
    #[error("variants of `{source_id}` disagree on full_text (`{first}` vs `{second}`)")]
    VariantTextMismatch {
        source_id: String,
        first: String,
        second: String,
    },
    #[error("two {ontology} variants for source `{source_id}`")]
    DuplicateVariant { source_id: String, ontology: String },

    // IR construction
    #[error("phrase pool `{0}` is missing or empty")]
    EmptyPool(String),
    #[error("phrase pool file, line {line}: {message}")]
    PoolFormatError { line: usize, message: String },
    #[error("unrecognized entity reference `{0}`")]
    UnrecognizedRef(String),

    // balancing
    #[error("distribution input mixes ontologies or tasks: {0}")]
    MixedOntology(String),
    #[error("no lexicon label for entity {0}")]
    MissingLabel(String),
    #[error("could not produce a unique artificial instruction after {attempts} attempts")]
    DuplicateUnavoidable { attempts: usize },
    #[error("lexicon file, line {line}: {message}")]
    LexiconFormat { line: usize, message: String },

    // folds
    #[error("dataset `{0}` is empty")]
    EmptyDataset(String),
    #[error("invalid fold configuration: {0}")]
    InvalidFolds(String),

    // prompts
    #[error("need {needed} exemplars for {task}, pool has {available}")]
    InsufficientExemplars {
        task: String,
        needed: usize,
        available: usize,
    },

    // evaluation
    #[error("prediction for `{0}` has no matching gold instance")]
    AlignmentError(String),

    // gateway / cli
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Configuration problems map to exit status 2, everything else to 1.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Io { .. })
    }
}
