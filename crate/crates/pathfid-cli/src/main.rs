//! Single executable exposing the full pipeline: corpus ingestion and
//! synthesis, block and target inspection, training, decoding, parsing,
//! scoring, analysis, and gradient checking.

mod config;
mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pathfid::blocks::{
    build_fid_block, build_pair_set, build_path_block, build_pathplus_block, truncate_block,
    InputBlock,
};
use pathfid::corpus::{self, QuestionInstance, SyntheticConfig};
use pathfid::hoporder::{order_hops, LinkGraph};
use pathfid::metrics::{self, evaluate, EvalOptions, EvalReport, Prediction};
use pathfid::minifid::{
    decode_corpus, gradient_check, load_model, run_pipeline, save_model, Mode, Model, ModelConfig,
    Tokenizer,
};
use pathfid::pathcodec::{self, PathSchema, PredictionDump};
use pathfid::{render_tokens, split_tokens};

use config::{parse_mode, parse_schema, resolve, RunConfig, RunOverrides};
use render::{csv_field, render_analyses, trace_csv, Format, Summary};

#[derive(Parser)]
#[command(
    name = "pathfid",
    version,
    about = "Multi-hop QA as reasoning-path prediction: corpus tools, training, decoding, scoring"
)]
struct Cli {
    /// Stdout format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a corpus file, report rejects, and write the normalized form.
    Ingest(IngestArgs),
    /// Generate a deterministic synthetic corpus of bridge questions.
    Synth(SynthArgs),
    /// Inspect encoder input blocks.
    #[command(subcommand)]
    Blocks(BlocksCommand),
    /// Print the linearized gold path for each instance.
    Linearize(LinearizeArgs),
    /// Train a model on a corpus and save a checkpoint.
    Train(TrainArgs),
    /// Decode a corpus with a saved checkpoint.
    Decode(DecodeArgs),
    /// Parse decoded token sequences back into structured paths.
    Parse(ParseArgs),
    /// Score official-format predictions against a gold corpus.
    Score(ScoreArgs),
    /// Break scores down by question type, groundedness, and support quality.
    Analyze(AnalyzeArgs),
    /// Check model gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the full pipeline from a config file and write all artifacts.
    E2e(E2eArgs),
}

/// Rust disables SIGPIPE's default disposition; restore it so piping into
/// `head` ends the process silently like any other Unix tool.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, cli.format),
        Command::Synth(a) => cmd_synth(a, cli.format),
        Command::Blocks(BlocksCommand::Dump(a)) => cmd_blocks_dump(a, cli.format),
        Command::Linearize(a) => cmd_linearize(a, cli.format),
        Command::Train(a) => cmd_train(a, cli.format),
        Command::Decode(a) => cmd_decode(a, cli.format),
        Command::Parse(a) => cmd_parse(a, cli.format),
        Command::Score(a) => cmd_score(a, cli.format),
        Command::Analyze(a) => cmd_analyze(a, cli.format),
        Command::Gradcheck(a) => cmd_gradcheck(a, cli.format),
        Command::E2e(a) => cmd_e2e(a, cli.format),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_corpus(path: &Path) -> Result<Vec<QuestionInstance>> {
    let outcome =
        corpus::load_hotpot(path).with_context(|| format!("loading corpus {}", path.display()))?;
    for r in &outcome.rejected {
        eprintln!("rejected {}: {}", r.id, r.reason);
    }
    Ok(outcome.instances)
}

fn select_instances(
    instances: Vec<QuestionInstance>,
    id: Option<&str>,
) -> Result<Vec<QuestionInstance>> {
    match id {
        None => Ok(instances),
        Some(id) => {
            let picked: Vec<_> = instances.into_iter().filter(|q| q.id == id).collect();
            if picked.is_empty() {
                bail!("no instance with id {id:?}");
            }
            Ok(picked)
        }
    }
}

// ---------------------------------------------------------------------------
// ingest / synth
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum SourceKind {
    Hotpot,
    Iirc,
}

#[derive(Args)]
struct IngestArgs {
    /// Corpus file to read.
    input: PathBuf,
    /// Input layout.
    #[arg(long, value_enum, default_value_t = SourceKind::Hotpot)]
    source: SourceKind,
    /// Write the normalized corpus here.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn cmd_ingest(a: &IngestArgs, format: Format) -> Result<u8> {
    let outcome = match a.source {
        SourceKind::Hotpot => corpus::load_hotpot(&a.input),
        SourceKind::Iirc => corpus::load_iirc(&a.input),
    }
    .with_context(|| format!("loading {}", a.input.display()))?;
    for r in &outcome.rejected {
        eprintln!("rejected {}: {}", r.id, r.reason);
    }
    if let Some(out) = &a.output {
        corpus::save_hotpot(&outcome.instances, out)?;
    }
    let mut s = Summary::new();
    s.push("instances", outcome.instances.len());
    s.push("rejected", outcome.rejected.len());
    if let Some(out) = &a.output {
        s.push("output", out.display().to_string());
    }
    println!("{}", s.render(format));
    Ok(0)
}

#[derive(Args)]
struct SynthArgs {
    /// Write the generated corpus here.
    #[arg(long)]
    output: PathBuf,
    /// Number of instances.
    #[arg(long, default_value_t = 64)]
    count: usize,
    /// Distractor passages per instance.
    #[arg(long, default_value_t = 8)]
    distractors: usize,
    /// Gold passages per instance.
    #[arg(long, default_value_t = 2)]
    hops: usize,
    /// Sentences per passage.
    #[arg(long, default_value_t = 3)]
    sentences: usize,
    /// Filler-word pool size.
    #[arg(long, default_value_t = 48)]
    vocab: usize,
    #[arg(long, env = "PATHFID_SEED", default_value_t = 7)]
    seed: u64,
}

fn cmd_synth(a: &SynthArgs, format: Format) -> Result<u8> {
    let cfg = SyntheticConfig {
        num_instances: a.count,
        num_distractors: a.distractors,
        hops: a.hops,
        vocab_size: a.vocab,
        sentences_per_passage: a.sentences,
        rng_seed: a.seed,
    };
    let instances = corpus::generate_synthetic(&cfg)?;
    corpus::save_hotpot(&instances, &a.output)?;
    let mut s = Summary::new();
    s.push("instances", instances.len());
    s.push("passages_each", a.hops + a.distractors);
    s.push("seed", a.seed);
    s.push("output", a.output.display().to_string());
    println!("{}", s.render(format));
    Ok(0)
}

// ---------------------------------------------------------------------------
// blocks dump / linearize
// ---------------------------------------------------------------------------

/// First-hop anchor for pair blocks: the hop-ordered gold passage, with the
/// pool front as fallback.
fn gold_anchor(inst: &QuestionInstance) -> Option<String> {
    let gold = inst.gold_passages();
    if gold.len() == 2 {
        if let Ok([a, _]) = order_hops(&gold, &inst.answer, &LinkGraph::from_passages(&inst.passages))
        {
            return Some(a.title.clone());
        }
    }
    gold.first()
        .copied()
        .or_else(|| inst.passages.first())
        .map(|p| p.title.clone())
}

fn instance_blocks(inst: &QuestionInstance, mode: Mode, max_len: usize) -> Result<Vec<InputBlock>> {
    let blocks = match mode {
        Mode::Fid => inst
            .passages
            .iter()
            .map(|p| build_fid_block(&inst.question, p))
            .collect::<Result<Vec<_>, _>>()?,
        Mode::Pathfid => inst
            .passages
            .iter()
            .map(|p| build_path_block(&inst.question, p))
            .collect::<Result<Vec<_>, _>>()?,
        Mode::PathfidPlus => {
            let anchor = gold_anchor(inst).ok_or_else(|| anyhow!("{}: no passages", inst.id))?;
            build_pair_set(&inst.passages, &anchor)?
                .into_iter()
                .map(|(p1, p2)| build_pathplus_block(&inst.question, p1, p2))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    Ok(blocks.iter().map(|b| truncate_block(b, max_len)).collect())
}

#[derive(Args)]
struct BlocksDumpArgs {
    /// Corpus file.
    #[arg(long, env = "PATHFID_CORPUS")]
    corpus: PathBuf,
    /// fid blocks are plain; pathfid blocks carry fact markers; pathfid_plus
    /// pairs every candidate with the gold first hop.
    #[arg(long, env = "PATHFID_MODE", default_value = "pathfid")]
    mode: String,
    /// Only this instance id.
    #[arg(long)]
    id: Option<String>,
    /// Truncate blocks to this many tokens.
    #[arg(long, env = "PATHFID_MAX_BLOCK_LEN", default_value_t = 256)]
    max_block_len: usize,
}

#[derive(Subcommand)]
enum BlocksCommand {
    /// Print every encoder input block for the selected instances.
    Dump(BlocksDumpArgs),
}

fn cmd_blocks_dump(a: &BlocksDumpArgs, format: Format) -> Result<u8> {
    let mode = parse_mode(&a.mode)?;
    let instances = select_instances(load_corpus(&a.corpus)?, a.id.as_deref())?;
    let mut dumped: Vec<(String, Vec<InputBlock>)> = Vec::new();
    for inst in &instances {
        dumped.push((inst.id.clone(), instance_blocks(inst, mode, a.max_block_len)?));
    }
    match format {
        Format::Json => {
            let body: Vec<_> = dumped
                .iter()
                .map(|(id, blocks)| serde_json::json!({ "instance_id": id, "blocks": blocks }))
                .collect();
            println!("{}", serde_json::to_string_pretty(&body)?);
        }
        Format::Text => {
            for (id, blocks) in &dumped {
                for (i, b) in blocks.iter().enumerate() {
                    println!(
                        "== {id} block {} [{}] ({} tokens)",
                        i + 1,
                        b.source_titles.join(" + "),
                        b.tokens.len()
                    );
                    println!("{}", b.text());
                }
            }
        }
        Format::Csv => {
            println!("instance_id,block,titles,tokens,text");
            for (id, blocks) in &dumped {
                for (i, b) in blocks.iter().enumerate() {
                    println!(
                        "{},{},{},{},{}",
                        csv_field(id),
                        i + 1,
                        csv_field(&b.source_titles.join("; ")),
                        b.tokens.len(),
                        csv_field(&b.text())
                    );
                }
            }
        }
    }
    Ok(0)
}

/// Hop-orders the gold passages and linearizes the gold path under a schema.
fn gold_target(inst: &QuestionInstance, schema: PathSchema) -> Result<Vec<String>> {
    let gold = inst.gold_passages();
    let ordered = if gold.len() == 2 {
        match order_hops(&gold, &inst.answer, &LinkGraph::from_passages(&inst.passages)) {
            Ok([a, b]) => vec![a, b],
            Err(e) => {
                eprintln!("{}: hop ordering failed ({e}), keeping pool order", inst.id);
                gold
            }
        }
    } else {
        gold
    };
    let hops: Vec<(String, Vec<usize>)> = ordered
        .iter()
        .map(|p| (p.title.clone(), inst.supports_for(&p.title)))
        .collect();
    let path = pathcodec::gold_path(&hops, Some(inst.answer.clone())).restricted_to(schema);
    Ok(pathcodec::linearize(&path, schema)?)
}

#[derive(Args)]
struct LinearizeArgs {
    /// Corpus file.
    #[arg(long, env = "PATHFID_CORPUS")]
    corpus: PathBuf,
    /// Path schema: titles_only, titles_answer, or full.
    #[arg(long, env = "PATHFID_SCHEMA", default_value = "full")]
    schema: String,
    /// Only this instance id.
    #[arg(long)]
    id: Option<String>,
}

fn cmd_linearize(a: &LinearizeArgs, format: Format) -> Result<u8> {
    let schema = parse_schema(&a.schema)?;
    let instances = select_instances(load_corpus(&a.corpus)?, a.id.as_deref())?;
    let mut rows = Vec::new();
    for inst in &instances {
        rows.push((inst.id.clone(), render_tokens(&gold_target(inst, schema)?)));
    }
    match format {
        Format::Json => {
            let body: Vec<_> = rows
                .iter()
                .map(|(id, target)| serde_json::json!({ "instance_id": id, "target": target }))
                .collect();
            println!("{}", serde_json::to_string_pretty(&body)?);
        }
        Format::Text => {
            for (id, target) in &rows {
                println!("{id}\t{target}");
            }
        }
        Format::Csv => {
            println!("instance_id,target");
            for (id, target) in &rows {
                println!("{},{}", csv_field(id), csv_field(target));
            }
        }
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// train / decode
// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: RunOverrides,
    /// Write the trained model here.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Write the per-segment training trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn cmd_train(a: &TrainArgs, format: Format) -> Result<u8> {
    let resolved = resolve(RunConfig::default(), &a.overrides)?;
    let instances = resolved.corpus.load()?;
    let out = run_pipeline(&instances, &resolved.pipeline)?;
    save_model(
        &a.checkpoint,
        &out.model,
        resolved.pipeline.mode,
        resolved.pipeline.schema,
    )?;
    if let Some(path) = &a.trace {
        write_file(path, &trace_csv(&out.stages))?;
    }
    for n in &out.notes {
        eprintln!("note: {n}");
    }
    let mut s = Summary::new();
    s.push("mode", resolved.pipeline.mode.label());
    s.push("schema", resolved.pipeline.schema.label());
    s.push("instances", instances.len());
    for (i, stage) in out.stages.iter().enumerate() {
        s.push(&format!("stage_{}_steps", i + 1), stage.steps_run);
        s.push(&format!("stage_{}_best_step", i + 1), stage.best_step);
        s.push(&format!("stage_{}_best_metric", i + 1), stage.best_metric);
    }
    if let Some(em) = out.report.answer_em {
        s.push("answer_em", em);
    }
    if let Some(em) = out.report.support_em {
        s.push("support_em", em);
    }
    if let Some(seg) = &out.report.path_segments {
        s.push("all_exact", seg.all_exact);
    }
    s.push("checkpoint", a.checkpoint.display().to_string());
    println!("{}", s.render(format));
    Ok(0)
}

#[derive(Args)]
struct DecodeArgs {
    /// Saved model checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus file.
    #[arg(long, env = "PATHFID_CORPUS")]
    corpus: PathBuf,
    /// Write raw-sequence dumps (JSON) here.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Write official-format predictions here.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

fn cmd_decode(a: &DecodeArgs, format: Format) -> Result<u8> {
    let (model, mode, schema) = load_model(&a.checkpoint)?;
    let instances = load_corpus(&a.corpus)?;
    let (preds, dumps, notes) = decode_corpus(&model, mode, schema, &instances)?;
    for n in &notes {
        eprintln!("note: {n}");
    }
    if let Some(path) = &a.dump {
        write_file(path, &serde_json::to_string_pretty(&dumps)?)?;
    }
    if let Some(path) = &a.predictions {
        write_file(path, &metrics::to_official_json(&preds))?;
    }
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&dumps)?),
        Format::Text => {
            for d in &dumps {
                println!("{}\t{}", d.instance_id, d.raw_sequence);
            }
        }
        Format::Csv => {
            println!("instance_id,answer,raw_sequence");
            for (d, p) in dumps.iter().zip(&preds) {
                println!(
                    "{},{},{}",
                    csv_field(&d.instance_id),
                    csv_field(&p.answer),
                    csv_field(&d.raw_sequence)
                );
            }
        }
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// parse
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ParseArgs {
    /// Path schema the sequences follow.
    #[arg(long, env = "PATHFID_SCHEMA", default_value = "full")]
    schema: String,
    /// File with one decoded token sequence per line.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Sequences given directly as arguments.
    sequence: Vec<String>,
}

fn cmd_parse(a: &ParseArgs, format: Format) -> Result<u8> {
    let schema = parse_schema(&a.schema)?;
    let mut sequences: Vec<String> = Vec::new();
    if let Some(path) = &a.input {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        sequences.extend(text.lines().filter(|l| !l.trim().is_empty()).map(String::from));
    }
    sequences.extend(a.sequence.iter().cloned());
    if sequences.is_empty() {
        bail!("no sequences: pass them as arguments or via --input");
    }

    let dumps: Vec<PredictionDump> = sequences
        .iter()
        .enumerate()
        .map(|(i, seq)| {
            let tokens = split_tokens(seq);
            let outcome = pathcodec::parse(&tokens, schema);
            PredictionDump::new(format!("seq-{}", i + 1), &tokens, &outcome)
        })
        .collect();

    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&dumps)?),
        Format::Text => {
            for d in &dumps {
                println!("{}: {}", d.instance_id, d.raw_sequence);
                for (k, h) in d.parsed.hops.iter().enumerate() {
                    println!("  hop {}: {:?} facts {:?}", k + 1, h.title, h.facts);
                }
                match &d.parsed.answer {
                    Some(ans) => println!("  answer: {ans:?}"),
                    None => println!("  answer: -"),
                }
                if !d.diagnostics.is_empty() {
                    println!("  diagnostics: {}", d.diagnostics.join("; "));
                }
            }
        }
        Format::Csv => {
            println!("id,hops,answer,diagnostics,raw_sequence");
            for d in &dumps {
                let hops: Vec<String> = d
                    .parsed
                    .hops
                    .iter()
                    .map(|h| {
                        let facts: Vec<String> =
                            h.facts.iter().map(|f| f.to_string()).collect();
                        format!("{}[{}]", h.title, facts.join(" "))
                    })
                    .collect();
                println!(
                    "{},{},{},{},{}",
                    csv_field(&d.instance_id),
                    csv_field(&hops.join("; ")),
                    csv_field(d.parsed.answer.as_deref().unwrap_or("-")),
                    csv_field(&d.diagnostics.join("; ")),
                    csv_field(&d.raw_sequence)
                );
            }
        }
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// score / analyze
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ScoreArgs {
    /// Gold corpus file.
    #[arg(long)]
    gold: PathBuf,
    /// Predictions in the official format.
    #[arg(long)]
    predictions: PathBuf,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Skip answer metrics.
    #[arg(long)]
    no_answers: bool,
    /// Skip support metrics.
    #[arg(long)]
    no_supports: bool,
}

/// Loads gold + predictions; schema-level failures print to stderr and map
/// to exit 2, unlike I/O errors which surface as ordinary errors (exit 1).
fn load_scoring_inputs(
    gold_path: &Path,
    pred_path: &Path,
) -> Result<std::result::Result<(Vec<QuestionInstance>, Vec<Prediction>), String>> {
    let gold_text = fs::read_to_string(gold_path)
        .with_context(|| format!("reading {}", gold_path.display()))?;
    let pred_text = fs::read_to_string(pred_path)
        .with_context(|| format!("reading {}", pred_path.display()))?;
    let gold = match corpus::load_hotpot_str(&gold_text) {
        Ok(outcome) => {
            for r in &outcome.rejected {
                eprintln!("rejected {}: {}", r.id, r.reason);
            }
            outcome.instances
        }
        Err(e) => return Ok(Err(format!("gold {}: {e}", gold_path.display()))),
    };
    let preds = match metrics::load_official_predictions(&pred_text) {
        Ok(p) => p,
        Err(e) => return Ok(Err(format!("predictions {}: {e}", pred_path.display()))),
    };
    Ok(Ok((gold, preds)))
}

fn scored_report(
    gold: &[QuestionInstance],
    preds: &[Prediction],
    options: &EvalOptions,
) -> std::result::Result<EvalReport, String> {
    evaluate(preds, gold, options).map_err(|e| e.to_string())
}

fn cmd_score(a: &ScoreArgs, format: Format) -> Result<u8> {
    let (gold, preds) = match load_scoring_inputs(&a.gold, &a.predictions)? {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("{msg}");
            return Ok(2);
        }
    };
    let options = EvalOptions {
        score_answers: !a.no_answers,
        score_supports: !a.no_supports,
    };
    let report = match scored_report(&gold, &preds, &options) {
        Ok(r) => r,
        Err(msg) => {
            eprintln!("{msg}");
            return Ok(2);
        }
    };
    if let Some(path) = &a.report {
        write_file(path, &metrics::render_json(&report))?;
    }
    let rendered = match format {
        Format::Text => metrics::render_text(&report),
        Format::Json => metrics::render_json(&report),
        Format::Csv => metrics::render_csv(&report),
    };
    println!("{rendered}");
    Ok(0)
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Gold corpus file.
    #[arg(long)]
    gold: PathBuf,
    /// Predictions in the official format.
    #[arg(long)]
    predictions: PathBuf,
}

fn cmd_analyze(a: &AnalyzeArgs, format: Format) -> Result<u8> {
    let (gold, preds) = match load_scoring_inputs(&a.gold, &a.predictions)? {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("{msg}");
            return Ok(2);
        }
    };
    let options = EvalOptions {
        score_answers: true,
        score_supports: true,
    };
    let report = match scored_report(&gold, &preds, &options) {
        Ok(r) => r,
        Err(msg) => {
            eprintln!("{msg}");
            return Ok(2);
        }
    };
    println!("{}", render_analyses(&report, format));
    Ok(0)
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

#[derive(Args)]
struct GradcheckArgs {
    /// Model width.
    #[arg(long, env = "PATHFID_D_MODEL", default_value_t = 32)]
    d_model: usize,
    /// Encoder depth.
    #[arg(long, default_value_t = 1)]
    enc_layers: usize,
    /// Decoder depth.
    #[arg(long, default_value_t = 1)]
    dec_layers: usize,
    /// Attention heads.
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, env = "PATHFID_SEED", default_value_t = 7)]
    seed: u64,
    /// Central-difference step size.
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn cmd_gradcheck(a: &GradcheckArgs, format: Format) -> Result<u8> {
    let p1 = corpus::Passage::new(
        "alpha",
        vec!["alpha links beta".into(), "alpha has filler".into()],
    );
    let p2 = corpus::Passage::new("beta", vec!["beta yields gamma".into()]);
    let question = "what does alpha reach";
    let blocks = vec![
        build_path_block(question, &p1)?,
        build_path_block(question, &p2)?,
    ];
    let target = split_tokens(
        "<title-1> alpha <facts-1> <f1> <title-2> beta <facts-2> <f1> <answer> gamma",
    );
    let config = ModelConfig {
        d_model: a.d_model,
        n_layers_enc: a.enc_layers,
        n_layers_dec: a.dec_layers,
        n_heads: a.heads,
        max_input_block_len: 64,
        max_target_len: 32,
        rng_seed: a.seed,
    };
    let mut streams: Vec<&[String]> = blocks.iter().map(|b| b.tokens.as_slice()).collect();
    streams.push(&target);
    let mut model = Model::new(config, Tokenizer::build(streams))?;
    let report = gradient_check(&mut model, &blocks, &target, a.step)?;

    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Text => {
            for t in &report.tensors {
                println!("{:<16} entries {:>6}  max_rel_err {:.3e}", t.name, t.entries, t.max_rel_err);
            }
            println!("overall max_rel_err {:.3e}", report.max_rel_err);
        }
        Format::Csv => {
            println!("tensor,entries,max_rel_err");
            for t in &report.tensors {
                println!("{},{},{:e}", csv_field(&t.name), t.entries, t.max_rel_err);
            }
        }
    }
    if report.passes(a.tolerance) {
        Ok(0)
    } else {
        let worst = report.worst_tensor().expect("nonempty report");
        eprintln!(
            "gradient check failed: {} has max_rel_err {:.3e} >= {:.3e}",
            worst.name, worst.max_rel_err, a.tolerance
        );
        Ok(1)
    }
}

// ---------------------------------------------------------------------------
// e2e
// ---------------------------------------------------------------------------

const E2E_USAGE: &str = "\
usage: pathfid e2e --config <FILE> [overrides]

The config file is JSON with optional keys:
  mode        fid | pathfid | pathfid_plus
  schema      titles_only | titles_answer | full
  corpus      path to a corpus file
  synth       {count, distractors, hops, sentences, vocab}
  output_dir  artifact directory
  seed        u64
  model       {d_model, enc_layers, dec_layers, heads, max_block_len, max_target_len}
  hparams     {lr, steps, clip_norm, eval_every, stop_on_perfect}

CLI flags beat PATHFID_* environment variables beat file values.
Artifacts: checkpoint.json, dump.json, predictions.json, report.json, trace.csv";

#[derive(Args)]
struct E2eArgs {
    /// Run configuration JSON.
    #[arg(long, env = "PATHFID_CONFIG")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: RunOverrides,
}

fn cmd_e2e(a: &E2eArgs, format: Format) -> Result<u8> {
    let Some(config_path) = &a.config else {
        eprintln!("missing --config\n{E2E_USAGE}");
        return Ok(1);
    };
    if !config_path.exists() {
        eprintln!("config file {} not found\n{E2E_USAGE}", config_path.display());
        return Ok(1);
    }
    let file = RunConfig::load(config_path)?;
    let resolved = resolve(file, &a.overrides)?;
    let instances = resolved.corpus.load()?;
    fs::create_dir_all(&resolved.output_dir)
        .with_context(|| format!("creating {}", resolved.output_dir.display()))?;

    let out = run_pipeline(&instances, &resolved.pipeline)?;
    for n in &out.notes {
        eprintln!("note: {n}");
    }

    let dir = &resolved.output_dir;
    save_model(
        dir.join("checkpoint.json"),
        &out.model,
        resolved.pipeline.mode,
        resolved.pipeline.schema,
    )?;
    write_file(&dir.join("dump.json"), &serde_json::to_string_pretty(&out.dumps)?)?;
    write_file(&dir.join("predictions.json"), &metrics::to_official_json(&out.predictions))?;
    write_file(&dir.join("report.json"), &metrics::render_json(&out.report))?;
    write_file(&dir.join("trace.csv"), &trace_csv(&out.stages))?;
    eprintln!("artifacts in {}", dir.display());

    let rendered = match format {
        Format::Text => metrics::render_text(&out.report),
        Format::Json => metrics::render_json(&out.report),
        Format::Csv => metrics::render_csv(&out.report),
    };
    println!("{rendered}");
    Ok(0)
}
