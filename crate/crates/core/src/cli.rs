//! Command-line pipeline: ingest, convert, analyze, balance, folds, prompts,
//! run, simulate, eval and the chained `pipeline`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::balance::{
    assert_no_leakage, entity_distribution, generate_artificial_pairs, ArtificialConfig,
    LabelLexicon, DEFAULT_THRESHOLD,
};
use crate::bioc::{
    corpus_stats, dedup_bundles, group_ontology_variants, parse_bioc_collection_with_notes,
    write_document_dump, AnnotatedDocument, DocumentBundle, SourceKind, ValidationNote,
};
use crate::entity::{Ontology, UriMode};
use crate::error::{Error, Result};
use crate::eval::metrics::{score_nel, EvalReport, GoldInstance, NerTally};
use crate::eval::parse::{chain_ner_to_nel, parse_mention_list, parse_prediction, LinkTemplate};
use crate::folds::{
    dedup_instances, group_datasets, materialize_fold, parse_general_corpus, plan_folds,
    verify_no_leakage, MixOptions, TokenCounter, DEFAULT_FOLDS, DEFAULT_GENERAL_TARGET,
    DEFAULT_TOKEN_BUDGET,
};
use crate::gateway::{
    complete_batch, simulate_response, Completion, CorruptionProfile, GatewayConfig, ENV_ENDPOINT,
};
use crate::io::{read_jsonl, read_text, write_jsonl, write_text};
use crate::ir::{
    build_ir_sequence, render_flat_pair, render_flat_sequence, sequence_records, split_records,
    standalone_records, IRPair, IRSequence, IrRecord, PairSource, Task,
};
use crate::pools::{load_phrase_pools, PhrasePools, PoolKind};
use crate::prompt::{build_nshot_prompt, PromptRecord};
use crate::seed::{derive_seed, rng_for};

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const NOTES_FILE: &str = "ingest_notes.jsonl";
pub const IR_FILE: &str = "ir_dataset.jsonl";
pub const IR_FLAT_FILE: &str = "ir_dataset.txt";
pub const ARTIFICIAL_FILE: &str = "artificial.jsonl";
pub const ARTIFICIAL_FLAT_FILE: &str = "artificial.txt";
pub const FOLDS_DIR: &str = "folds";

#[derive(Debug, Parser)]
#[command(
    name = "foodsem",
    version,
    about = "Food entity recognition and linking: corpus engineering and evaluation"
)]
pub struct Cli {
    /// Top-level seed; every stage derives its own stream from it.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Reference form in generated responses: short or full.
    #[arg(long, global = true, default_value = "short")]
    pub uri_mode: UriMode,
    /// Phrase pool file replacing the shipped pools.
    #[arg(long, global = true)]
    pub pools: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse BioC files and write the document dump.
    Ingest(CorpusArgs),
    /// Build recognition/linking sequences from a corpus.
    Convert(CorpusArgs),
    /// Entity distribution against the coverage threshold.
    Analyze(AnalyzeArgs),
    /// Generate artificial linking pairs for under-covered entities.
    Balance(BalanceArgs),
    /// Plan cross-validation chunks and write fold manifests.
    Folds(FoldArgs),
    /// Build n-shot prompts for a test set.
    Prompts(PromptArgs),
    /// Send prompts to a chat-completions endpoint.
    Run(RunArgs),
    /// Produce responses from gold with optional corruption.
    Simulate(SimulateArgs),
    /// Score responses against gold.
    Eval(EvalArgs),
    /// convert, balance and folds in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Directory of BioC XML files; ontology and source kind are read from
    /// file names (e.g. `CafeteriaFCD_foodon.xml`).
    #[arg(long)]
    pub corpus_dir: PathBuf,
    /// Ontology for files whose name does not say.
    #[arg(long)]
    pub ontology: Option<Ontology>,
    /// Source kind (recipe or abstract) for files whose name does not say.
    #[arg(long)]
    pub kind: Option<SourceKind>,
}

#[derive(Debug, Clone, Args)]
pub struct PairInput {
    /// BioC corpus directory to convert on the fly.
    #[arg(long, conflicts_with = "ir")]
    pub corpus_dir: Option<PathBuf>,
    /// IR dataset written by `convert`.
    #[arg(long)]
    pub ir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: PairInput,
    #[arg(long)]
    pub ontology: Ontology,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: usize,
    /// Label table whose entities are added with count 0.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[command(flatten)]
    pub input: PairInput,
    /// Only this ontology (default: every ontology present).
    #[arg(long)]
    pub ontology: Option<Ontology>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: usize,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [7usize, 9, 12])]
    pub set_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct MixArgs {
    /// General instruction corpus, one `{prompt, response}` per line.
    #[arg(long)]
    pub general: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOKEN_BUDGET)]
    pub token_budget: usize,
    #[arg(long, default_value_t = DEFAULT_GENERAL_TARGET)]
    pub general_target: usize,
    /// Exact token counts, one `{instance_id, tokens}` per line.
    #[arg(long)]
    pub token_sidecar: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FoldArgs {
    #[arg(long)]
    pub ir: PathBuf,
    #[arg(long)]
    pub artificial: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
    /// Materialize only this fold.
    #[arg(long)]
    pub fold_index: Option<usize>,
    #[command(flatten)]
    pub mix: MixArgs,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    /// Exemplar source (a fold's train.jsonl).
    #[arg(long)]
    pub train: PathBuf,
    /// Instances to prompt for (a fold's test.jsonl).
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub n_shot: usize,
    /// Recognition responses; linking prompts for corpus pairs then name the
    /// predicted mentions instead of the gold ones.
    #[arg(long)]
    pub ner_predictions: Option<PathBuf>,
    /// Reference form in exemplar answers.
    #[arg(long, default_value = "full")]
    pub exemplar_uri_mode: UriMode,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long, env = ENV_ENDPOINT)]
    pub endpoint_url: String,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub max_in_flight: usize,
    #[arg(long, default_value_t = 3)]
    pub max_attempts: usize,
    #[arg(long, default_value_t = 120.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 512)]
    pub max_new_tokens: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// IR pairs to answer (e.g. a fold's test.jsonl).
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub p_drop: f64,
    #[arg(long, default_value_t = 0.0)]
    pub p_corrupt: f64,
    #[arg(long, default_value_t = 0.0)]
    pub p_format: f64,
    #[arg(long, default_value_t = 0.0)]
    pub p_empty: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// IR pairs with gold.
    #[arg(long)]
    pub gold: PathBuf,
    /// Responses: lines with `instance_id` (or `pair_id`) and `response`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Fold label for the summary rows.
    #[arg(long)]
    pub fold_index: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: usize,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
    #[command(flatten)]
    pub mix: MixArgs,
}

/// Per-stage seeds, all derived from the top-level one.
fn stage_seed(seed: u64, stage: &str) -> u64 {
    derive_seed(seed, stage)
}

fn ontology_from_name(name: &str) -> Option<Ontology> {
    let lower = name.to_ascii_lowercase();
    if lower.contains("snomed") {
        Some(Ontology::SnomedCt)
    } else if lower.contains("foodon") {
        Some(Ontology::FoodOn)
    } else if lower.contains("hansard") {
        Some(Ontology::Hansard)
    } else {
        None
    }
}

fn kind_from_name(name: &str) -> Option<SourceKind> {
    let lower = name.to_ascii_lowercase();
    let tokens: Vec<&str> = lower.split(|c: char| !c.is_ascii_alphanumeric()).collect();
    if lower.contains("abstract") || lower.contains("cafeteriasa") || tokens.contains(&"sa") {
        Some(SourceKind::Abstract)
    } else if lower.contains("recipe") || lower.contains("fcd") {
        Some(SourceKind::Recipe)
    } else {
        None
    }
}

#[derive(Debug, Default)]
pub struct LoadedCorpus {
    pub files: usize,
    pub documents: Vec<AnnotatedDocument>,
    pub notes: Vec<ValidationNote>,
}

/// Parse every `*.xml` file of a directory, in name order.
pub fn load_corpus(
    dir: &Path,
    ontology: Option<Ontology>,
    kind: Option<SourceKind>,
) -> Result<LoadedCorpus> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("xml")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no .xml files in {}", dir.display())));
    }
    let mut loaded = LoadedCorpus::default();
    for path in files {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let ontology = ontology_from_name(&name).or(ontology).ok_or_else(|| {
            Error::Config(format!(
                "cannot tell the ontology of {name}; pass --ontology"
            ))
        })?;
        let kind = kind_from_name(&name).or(kind).unwrap_or(SourceKind::Recipe);
        let xml = read_text(&path)?;
        let parsed =
            parse_bioc_collection_with_notes(xml.as_bytes(), kind, ontology).map_err(|e| {
                Error::Input {
                    path: path.clone(),
                    message: e.to_string(),
                }
            })?;
        loaded.files += 1;
        loaded.documents.extend(parsed.documents);
        loaded.notes.extend(parsed.notes);
    }
    Ok(loaded)
}

#[derive(Debug)]
pub struct Converted {
    pub sequences: Vec<IRSequence>,
    pub duplicates: Vec<String>,
}

/// Group variants per source kind, drop repeated texts and build one
/// sequence per source.
pub fn convert_documents(
    documents: Vec<AnnotatedDocument>,
    pools: &PhrasePools,
    uri_mode: UriMode,
    seed: u64,
) -> Result<Converted> {
    let mut by_kind: BTreeMap<SourceKind, Vec<AnnotatedDocument>> = BTreeMap::new();
    for d in documents {
        by_kind.entry(d.source_kind).or_default().push(d);
    }
    let mut bundles: Vec<DocumentBundle> = Vec::new();
    let mut ids: HashSet<String> = HashSet::new();
    for (kind, docs) in by_kind {
        for mut b in group_ontology_variants(docs)? {
            if !ids.insert(b.source_id.clone()) {
                // the two corpora number their documents independently
                b.source_id = format!("{}:{}", kind_tag(kind), b.source_id);
                ids.insert(b.source_id.clone());
            }
            bundles.push(b);
        }
    }
    let (bundles, duplicates) = dedup_bundles(bundles);
    let sequences = bundles
        .iter()
        .map(|b| build_ir_sequence(b, pools, uri_mode, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(Converted {
        sequences,
        duplicates,
    })
}

fn kind_tag(kind: SourceKind) -> &'static str {
    match kind {
        SourceKind::Recipe => "recipe",
        SourceKind::Abstract => "abstract",
    }
}

fn load_pools(path: &Option<PathBuf>) -> Result<PhrasePools> {
    match path {
        Some(p) => load_phrase_pools(p).map_err(|e| match e {
            Error::Io { .. } => e,
            other => Error::Input {
                path: p.clone(),
                message: other.to_string(),
            },
        }),
        None => Ok(PhrasePools::defaults()),
    }
}

pub fn load_pairs(path: &Path) -> Result<Vec<IRPair>> {
    Ok(read_jsonl::<IrRecord>(path)?
        .into_iter()
        .map(|r| r.pair)
        .collect())
}

fn load_lexicon(path: &Option<PathBuf>, observed: &[IRPair]) -> Result<LabelLexicon> {
    let mut lexicon = LabelLexicon::from_pairs(observed);
    if let Some(p) = path {
        lexicon
            .merge_tsv(&read_text(p)?)
            .map_err(|e| Error::Input {
                path: p.clone(),
                message: e.to_string(),
            })?;
    }
    Ok(lexicon)
}

struct Context {
    seed: u64,
    out: PathBuf,
    uri_mode: UriMode,
    pools: PhrasePools,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn input_pairs(ctx: &Context, input: &PairInput) -> Result<Vec<IRPair>> {
    match (&input.corpus_dir, &input.ir) {
        (Some(dir), _) => {
            let loaded = load_corpus(dir, None, None)?;
            let converted = convert_documents(
                loaded.documents,
                &ctx.pools,
                ctx.uri_mode,
                stage_seed(ctx.seed, "convert"),
            )?;
            Ok(converted
                .sequences
                .into_iter()
                .flat_map(|s| s.pairs)
                .collect())
        }
        (None, Some(ir)) => load_pairs(ir),
        (None, None) => Err(Error::Config("pass --corpus-dir or --ir".into())),
    }
}

fn nel_pairs(pairs: &[IRPair], ontology: Ontology) -> Vec<IRPair> {
    pairs
        .iter()
        .filter(|p| p.task == Task::Nel && p.ontology == Some(ontology))
        .cloned()
        .collect()
}

/// Run one command and return its summary record.
pub fn run(cli: Cli) -> Result<Value> {
    let ctx = Context {
        seed: cli.seed,
        out: cli.out.clone(),
        uri_mode: cli.uri_mode,
        pools: load_pools(&cli.pools)?,
    };
    match cli.command {
        Command::Ingest(args) => ingest(&ctx, &args),
        Command::Convert(args) => convert(&ctx, &args).map(|(v, _)| v),
        Command::Analyze(args) => analyze(&ctx, &args),
        Command::Balance(args) => {
            let pairs = input_pairs(&ctx, &args.input)?;
            balance(
                &ctx,
                &pairs,
                args.ontology,
                args.threshold,
                &args.lexicon,
                &args.set_sizes,
            )
            .map(|(v, _)| v)
        }
        Command::Folds(args) => {
            let mut pairs = load_pairs(&args.ir)?;
            if let Some(a) = &args.artificial {
                pairs.extend(load_pairs(a)?);
            }
            folds(&ctx, pairs, args.folds, args.fold_index, &args.mix)
        }
        Command::Prompts(args) => prompts(&ctx, &args),
        Command::Run(args) => run_endpoint(&ctx, &args),
        Command::Simulate(args) => simulate(&ctx, &args),
        Command::Eval(args) => eval(&ctx, &args),
        Command::Pipeline(args) => pipeline(&ctx, &args),
    }
}

fn ingest(ctx: &Context, args: &CorpusArgs) -> Result<Value> {
    let loaded = load_corpus(&args.corpus_dir, args.ontology, args.kind)?;
    let resolved: Vec<AnnotatedDocument> = loaded
        .documents
        .iter()
        .map(|d| crate::bioc::resolve_spans(d).0)
        .collect();
    write_text(&ctx.path(DOCUMENTS_FILE), &write_document_dump(&resolved)?)?;
    let mut notes = loaded.notes.clone();
    notes.extend(
        loaded
            .documents
            .iter()
            .flat_map(|d| crate::bioc::resolve_spans(d).1),
    );
    write_jsonl(&ctx.path(NOTES_FILE), &notes)?;
    Ok(json!({
        "command": "ingest",
        "files": loaded.files,
        "documents": resolved.len(),
        "annotations": resolved.iter().map(|d| d.annotations.len()).sum::<usize>(),
        "notes": notes.len(),
        "by_ontology": corpus_stats(&resolved),
    }))
}

fn convert(ctx: &Context, args: &CorpusArgs) -> Result<(Value, Vec<IRSequence>)> {
    let loaded = load_corpus(&args.corpus_dir, args.ontology, args.kind)?;
    let converted = convert_documents(
        loaded.documents,
        &ctx.pools,
        ctx.uri_mode,
        stage_seed(ctx.seed, "convert"),
    )?;
    let sequences = converted.sequences;
    write_jsonl(&ctx.path(IR_FILE), &sequence_records(&sequences))?;
    let flat: String = sequences
        .iter()
        .map(|s| render_flat_sequence(s) + "\n")
        .collect();
    write_text(&ctx.path(IR_FLAT_FILE), &flat)?;
    let pairs: usize = sequences.iter().map(|s| s.pairs.len()).sum();
    let summary = json!({
        "command": "convert",
        "sequences": sequences.len(),
        "pairs": pairs,
        "duplicates_dropped": converted.duplicates.len(),
        "ir_file": ctx.path(IR_FILE),
    });
    Ok((summary, sequences))
}

fn analyze(ctx: &Context, args: &AnalyzeArgs) -> Result<Value> {
    let pairs = input_pairs(ctx, &args.input)?;
    let selected = nel_pairs(&pairs, args.ontology);
    let mut report = entity_distribution(args.ontology, &selected, args.threshold)?;
    if args.lexicon.is_some() {
        let lexicon = load_lexicon(&args.lexicon, &[])?;
        report = report.include_entities(lexicon.entities().cloned());
    }
    let name = format!("distribution_{}.tsv", args.ontology.tag());
    write_text(&ctx.path(&name), &report.to_tsv()?)?;
    Ok(json!({
        "command": "analyze",
        "ontology": args.ontology.tag(),
        "threshold": args.threshold,
        "pairs": selected.len(),
        "entities": report.counts.len(),
        "mentions": report.total_count(),
        "below_threshold": report.deficits.values().filter(|&&d| d > 0).count(),
        "total_deficit": report.total_deficit(),
        "table": ctx.path(&name),
    }))
}

fn balance(
    ctx: &Context,
    pairs: &[IRPair],
    only: Option<Ontology>,
    threshold: usize,
    lexicon_path: &Option<PathBuf>,
    set_sizes: &[usize],
) -> Result<(Value, Vec<IRPair>)> {
    let lexicon = load_lexicon(lexicon_path, pairs)?;
    let config = ArtificialConfig {
        set_sizes: set_sizes.to_vec(),
        uri_mode: ctx.uri_mode,
        ..ArtificialConfig::default()
    };
    let cafeteria: Vec<IRPair> = pairs
        .iter()
        .filter(|p| p.source == PairSource::Cafeteria)
        .cloned()
        .collect();
    let reserved: HashSet<String> = cafeteria
        .iter()
        .map(|p| p.standalone().to_string())
        .collect();
    let seed = stage_seed(ctx.seed, "balance");
    let ontologies: Vec<Ontology> = match only {
        Some(o) => vec![o],
        None => Ontology::SEQUENCE_ORDER
            .into_iter()
            .filter(|o| pairs.iter().any(|p| p.ontology == Some(*o)))
            .collect(),
    };
    let mut artificial = Vec::new();
    let mut per_ontology = serde_json::Map::new();
    for ontology in ontologies {
        let report = entity_distribution(ontology, &nel_pairs(pairs, ontology), threshold)?
            .include_entities(
                lexicon
                    .entities()
                    .filter(|e| e.ontology == ontology)
                    .cloned(),
            );
        write_text(
            &ctx.path(&format!("distribution_{}.tsv", ontology.tag())),
            &report.to_tsv()?,
        )?;
        let mut taken = reserved.clone();
        taken.extend(artificial.iter().map(|p: &IRPair| p.instruction.clone()));
        let batch =
            generate_artificial_pairs(&report, &lexicon, &ctx.pools, &config, seed, &taken)?;
        per_ontology.insert(
            ontology.tag().into(),
            json!({
                "entities": report.counts.len(),
                "total_deficit": report.total_deficit(),
                "label_instances": batch.label_instances(),
                "pairs": batch.pairs.len(),
                "notes": batch.notes.len(),
            }),
        );
        artificial.extend(batch.pairs);
    }
    let violations = assert_no_leakage(&artificial, &cafeteria);
    write_jsonl(&ctx.path(ARTIFICIAL_FILE), &standalone_records(&artificial))?;
    let flat: String = artificial
        .iter()
        .map(|p| render_flat_pair(p) + "\n")
        .collect();
    write_text(&ctx.path(ARTIFICIAL_FLAT_FILE), &flat)?;
    write_text(&ctx.path("lexicon.tsv"), &lexicon.to_tsv()?)?;
    if !violations.is_empty() {
        return Err(Error::Input {
            path: ctx.path(ARTIFICIAL_FILE),
            message: format!(
                "{} artificial instructions repeat existing ones",
                violations.len()
            ),
        });
    }
    let summary = json!({
        "command": "balance",
        "threshold": threshold,
        "artificial_pairs": artificial.len(),
        "by_ontology": per_ontology,
        "leakage_violations": violations.len(),
    });
    Ok((summary, artificial))
}

fn mix_options(mix: &MixArgs) -> Result<(Vec<IRPair>, MixOptions, TokenCounter)> {
    let general = match &mix.general {
        Some(p) => {
            let (kept, _) = dedup_instances(parse_general_corpus(&read_text(p)?, p)?);
            kept
        }
        None => Vec::new(),
    };
    let counter = match &mix.token_sidecar {
        Some(p) => TokenCounter::sidecar(&read_text(p)?, p)?,
        None => TokenCounter::Approximate,
    };
    let options = MixOptions {
        token_budget: mix.token_budget,
        general_target: mix.general_target,
    };
    Ok((general, options, counter))
}

fn folds(
    ctx: &Context,
    pairs: Vec<IRPair>,
    k: usize,
    only: Option<usize>,
    mix: &MixArgs,
) -> Result<Value> {
    let (pairs, dropped) = dedup_instances(pairs);
    let datasets = group_datasets(&pairs);
    let plan = plan_folds(&datasets, k, stage_seed(ctx.seed, "folds"))?;
    let dir = ctx.out.join(FOLDS_DIR);
    write_jsonl(&dir.join("plan.jsonl"), &plan.to_records())?;
    let (general, options, counter) = mix_options(mix)?;
    let indices: Vec<usize> = match only {
        Some(i) => vec![i],
        None => (0..k).collect(),
    };
    let mut summaries = Vec::new();
    for i in indices {
        let manifest = materialize_fold(&plan, &datasets, i, &general, options, &counter)?;
        let leaks = verify_no_leakage(&manifest);
        let fold_dir = dir.join(format!("fold_{i}"));
        write_jsonl(
            &fold_dir.join("train.jsonl"),
            &standalone_records(&manifest.train),
        )?;
        write_jsonl(
            &fold_dir.join("test.jsonl"),
            &standalone_records(&manifest.test),
        )?;
        let flat: String = manifest
            .train
            .iter()
            .map(|p| render_flat_pair(p) + "\n")
            .collect();
        write_text(&fold_dir.join("train.txt"), &flat)?;
        let summary = manifest.summary();
        write_text(
            &fold_dir.join("summary.json"),
            &serde_json::to_string_pretty(&summary)?,
        )?;
        if !leaks.is_empty() {
            return Err(Error::Input {
                path: fold_dir,
                message: format!("{} test instructions also occur in training", leaks.len()),
            });
        }
        summaries.push(summary);
    }
    let sizes: BTreeMap<String, usize> = datasets
        .iter()
        .map(|(d, p)| (d.to_string(), p.len()))
        .collect();
    Ok(json!({
        "command": "folds",
        "k": k,
        "datasets": sizes,
        "duplicates_dropped": dropped.len(),
        "folds": summaries,
    }))
}

/// A response line: transcript records, IR records and simple
/// `{instance_id, response}` objects all qualify.
#[derive(Debug, Deserialize)]
struct ResponseLine {
    #[serde(alias = "pair_id")]
    instance_id: String,
    response: String,
}

fn load_responses(path: &Path) -> Result<Vec<(String, String)>> {
    Ok(read_jsonl::<ResponseLine>(path)?
        .into_iter()
        .map(|r| (r.instance_id, r.response))
        .collect())
}

fn prompts(ctx: &Context, args: &PromptArgs) -> Result<Value> {
    let train: Vec<IRPair> = load_pairs(&args.train)?
        .into_iter()
        .filter(|p| p.task != Task::General)
        .collect();
    let test: Vec<IRPair> = load_pairs(&args.test)?
        .into_iter()
        .filter(|p| p.task != Task::General)
        .collect();
    let ner: HashMap<String, String> = match &args.ner_predictions {
        Some(p) => load_responses(p)?.into_iter().collect(),
        None => HashMap::new(),
    };
    let link_request = ctx.pools.get(PoolKind::LinkRequest)?;
    let seed = stage_seed(ctx.seed, "prompts");
    let mut records = Vec::with_capacity(test.len());
    let mut chained = 0;
    for pair in &test {
        let mut target = pair.clone();
        if let (Task::Nel, Some(ontology), PairSource::Cafeteria) =
            (pair.task, pair.ontology, pair.source)
        {
            if let Some(response) = ner.get(&format!("{}/ner", pair.source_id)) {
                let mut rng = rng_for(seed, &format!("chain:{}", pair.pair_id));
                let template = LinkTemplate {
                    phrase: link_request.draw(&mut rng).to_string(),
                    ontology,
                };
                let instruction = chain_ner_to_nel(&parse_mention_list(response), &template);
                target.standalone_instruction = Some(instruction.text);
                chained += 1;
            }
        }
        let prompt =
            build_nshot_prompt(&target, args.n_shot, &train, seed, args.exemplar_uri_mode)?;
        records.push(PromptRecord::from(&prompt));
    }
    let name = format!("prompts_{}shot.jsonl", args.n_shot);
    write_jsonl(&ctx.path(&name), &records)?;
    Ok(json!({
        "command": "prompts",
        "n_shot": args.n_shot,
        "prompts": records.len(),
        "chained": chained,
        "file": ctx.path(&name),
    }))
}

fn run_endpoint(ctx: &Context, args: &RunArgs) -> Result<Value> {
    let prompts: Vec<(String, String)> = read_jsonl::<PromptRecord>(&args.prompts)?
        .into_iter()
        .map(|p| (p.instance_id, p.prompt))
        .collect();
    let mut cfg = GatewayConfig::new(args.endpoint_url.clone());
    cfg.api_key = std::env::var(crate::gateway::ENV_API_KEY)
        .ok()
        .filter(|k| !k.is_empty());
    if let Some(m) = &args.model {
        cfg.model_name = m.clone();
    } else if let Ok(m) = std::env::var(crate::gateway::ENV_MODEL) {
        cfg.model_name = m;
    }
    cfg.max_in_flight = args.max_in_flight;
    cfg.retry.max_attempts = args.max_attempts;
    cfg.request_timeout_secs = args.timeout;
    cfg.max_new_tokens = args.max_new_tokens;
    let completions = complete_batch(&prompts, &cfg)?;
    write_jsonl(&ctx.path("transcript.jsonl"), &completions)?;
    Ok(json!({
        "command": "run",
        "completions": completions.len(),
        "transport_failures": completions.iter().filter(|c| c.transport_error.is_some()).count(),
        "transcript": ctx.path("transcript.jsonl"),
    }))
}

fn simulate(ctx: &Context, args: &SimulateArgs) -> Result<Value> {
    let profile = CorruptionProfile {
        p_drop_mention: args.p_drop,
        p_corrupt_ref: args.p_corrupt,
        p_format_noise: args.p_format,
        p_empty: args.p_empty,
        rng_seed: stage_seed(ctx.seed, "simulate"),
    };
    profile.validate()?;
    let pairs = load_pairs(&args.test)?;
    let completions: Vec<Completion> = pairs
        .iter()
        .filter(|p| p.task != Task::General)
        .map(|p| Completion {
            instance_id: p.pair_id.clone(),
            prompt: p.standalone().to_string(),
            response: simulate_response(p, &profile),
            latency_ms: 0,
            attempts: 0,
            transport_error: None,
        })
        .collect();
    write_jsonl(&ctx.path("simulated.jsonl"), &completions)?;
    Ok(json!({
        "command": "simulate",
        "responses": completions.len(),
        "empty": completions.iter().filter(|c| c.response.is_empty()).count(),
        "file": ctx.path("simulated.jsonl"),
    }))
}

/// Table row: one (source group, ontology) cell of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub fold: Option<usize>,
    pub group: String,
    pub task: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub instances: usize,
    pub non_meaningful: usize,
}

fn source_group(pair: &IRPair) -> &'static str {
    match (pair.source, pair.source_kind) {
        (PairSource::Artificial, _) => "artificial",
        (_, Some(SourceKind::Abstract)) => "abstract",
        _ => "recipe",
    }
}

#[derive(Debug, Serialize)]
struct EvalFile {
    rows: Vec<EvalRow>,
    reports: BTreeMap<String, EvalReport>,
}

fn eval(ctx: &Context, args: &EvalArgs) -> Result<Value> {
    let gold: Vec<IRPair> = load_pairs(&args.gold)?
        .into_iter()
        .filter(|p| p.task != Task::General)
        .collect();
    let responses = load_responses(&args.predictions)?;
    let known: HashSet<&str> = gold.iter().map(|p| p.pair_id.as_str()).collect();
    if let Some((id, _)) = responses
        .iter()
        .find(|(id, _)| !known.contains(id.as_str()))
    {
        return Err(Error::AlignmentError(id.clone()));
    }
    let by_id: HashMap<&str, &str> = responses
        .iter()
        .map(|(i, r)| (i.as_str(), r.as_str()))
        .collect();

    let mut rows = Vec::new();
    let mut reports = BTreeMap::new();
    let mut groups: BTreeMap<(&str, String), Vec<&IRPair>> = BTreeMap::new();
    for p in &gold {
        let task = match p.ontology {
            Some(o) if p.task == Task::Nel => o.tag().to_string(),
            _ => "ner".to_string(),
        };
        groups
            .entry((source_group(p), task.clone()))
            .or_default()
            .push(p);
        groups.entry(("all", task)).or_default().push(p);
    }
    for ((group, task), pairs) in groups {
        let row = if task == "ner" {
            let mut tally = NerTally::default();
            let mut non_meaningful = 0;
            for p in &pairs {
                let predicted = by_id
                    .get(p.pair_id.as_str())
                    .map(|r| parse_mention_list(r))
                    .unwrap_or_default();
                if predicted.is_empty() {
                    non_meaningful += 1;
                }
                tally.add(p.ner_mentions().unwrap_or_default(), &predicted);
            }
            let s = tally.scores();
            EvalRow {
                fold: args.fold_index,
                group: group.to_string(),
                task,
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                instances: pairs.len(),
                non_meaningful,
            }
        } else {
            let gold_instances: Vec<GoldInstance> = pairs
                .iter()
                .map(|p| GoldInstance {
                    instance_id: p.pair_id.clone(),
                    links: p.links().cloned().unwrap_or_default(),
                })
                .collect();
            let preds: Vec<_> = pairs
                .iter()
                .filter_map(|p| {
                    let ontology = p.ontology?;
                    by_id
                        .get(p.pair_id.as_str())
                        .map(|r| parse_prediction(&p.pair_id, r, ontology))
                })
                .collect();
            let report = score_nel(&gold_instances, &preds)?;
            let row = EvalRow {
                fold: args.fold_index,
                group: group.to_string(),
                task: task.clone(),
                precision: report.macro_weighted.precision,
                recall: report.macro_weighted.recall,
                f1: report.macro_weighted.f1,
                instances: report.counts.instances,
                non_meaningful: report.counts.non_meaningful,
            };
            reports.insert(format!("{group}/{task}"), report);
            row
        };
        rows.push(row);
    }
    let file = EvalFile {
        rows: rows.clone(),
        reports,
    };
    write_text(
        &ctx.path("eval_report.json"),
        &serde_json::to_string_pretty(&file)?,
    )?;
    Ok(json!({ "command": "eval", "rows": rows }))
}

fn pipeline(ctx: &Context, args: &PipelineArgs) -> Result<Value> {
    let (_, sequences) = convert(ctx, &args.corpus)?;
    let cafeteria: Vec<IRPair> = sequences
        .iter()
        .flat_map(|s| s.pairs.iter().cloned())
        .collect();
    let (balance_summary, artificial) = balance(
        ctx,
        &cafeteria,
        None,
        args.threshold,
        &args.lexicon,
        &ArtificialConfig::default().set_sizes,
    )?;
    let mut all = cafeteria.clone();
    all.extend(artificial.iter().cloned());
    let fold_summary = folds(ctx, all, args.folds, None, &args.mix)?;

    let mut by_ontology = BTreeMap::new();
    for p in &artificial {
        if let Some(o) = p.ontology {
            *by_ontology.entry(o.tag()).or_insert(0usize) += 1;
        }
    }
    let (reloaded, loose) = split_records(read_jsonl(&ctx.path(IR_FILE))?);
    debug_assert!(loose.is_empty() && reloaded.len() == sequences.len());
    Ok(json!({
        "command": "pipeline",
        "cafeteria_sequences": sequences.len(),
        "cafeteria_pairs": cafeteria.len(),
        "artificial_pairs": by_ontology,
        // sequences count once each, as in the corpus accounting
        "total_instances": sequences.len() + artificial.len(),
        "total_pairs": cafeteria.len() + artificial.len(),
        "balance": balance_summary["by_ontology"],
        "folds": fold_summary["folds"],
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_names_carry_ontology_and_kind() {
        assert_eq!(
            ontology_from_name("CafeteriaFCD_snomedct.xml"),
            Some(Ontology::SnomedCt)
        );
        assert_eq!(
            ontology_from_name("CafeteriaSA_FoodOn.xml"),
            Some(Ontology::FoodOn)
        );
        assert_eq!(ontology_from_name("corpus.xml"), None);
        assert_eq!(
            kind_from_name("CafeteriaSA_hansard.xml"),
            Some(SourceKind::Abstract)
        );
        assert_eq!(kind_from_name("sa_hansard.xml"), Some(SourceKind::Abstract));
        assert_eq!(
            kind_from_name("CafeteriaFCD_hansard.xml"),
            Some(SourceKind::Recipe)
        );
        assert_eq!(
            kind_from_name("listing_0recipe1006_foodon.xml"),
            Some(SourceKind::Recipe)
        );
        assert_eq!(kind_from_name("sauces_foodon.xml"), None);
    }

    #[test]
    fn usage_errors_are_reported_by_clap() {
        assert!(Cli::try_parse_from(["foodsem", "bogus"]).is_err());
        let cli = Cli::try_parse_from([
            "foodsem",
            "--seed",
            "7",
            "analyze",
            "--ir",
            "x",
            "--ontology",
            "snomed",
        ])
        .unwrap();
        assert_eq!(cli.seed, 7);
        assert!(
            matches!(cli.command, Command::Analyze(a) if a.ontology == Ontology::SnomedCt && a.threshold == 150)
        );
    }
}
