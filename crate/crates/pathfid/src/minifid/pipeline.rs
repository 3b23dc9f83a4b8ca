//! End-to-end runs: build blocks and targets for a mode, train, decode,
//! parse, reconstruct titles, and score. Three modes are supported. `fid`
//! predicts the answer alone from plain blocks. `pathfid` predicts the
//! linearized reasoning path from fact-marked blocks. `pathfid_plus` first
//! runs `pathfid` to pick the anchor passage, then re-reads the evidence as
//! (anchor, candidate) pair blocks with a second model.

use serde::Serialize;
use thiserror::Error;

use crate::blocks::{
    build_fid_block, build_pair_set, build_path_block, build_pathplus_block, truncate_block,
    BlockError, InputBlock,
};
use crate::corpus::{Passage, QuestionInstance, QuestionType};
use crate::hoporder::{order_hops, LinkGraph};
use crate::metrics::{
    evaluate, EvalOptions, EvalReport, MetricsError, PathSegmentReport, Prediction,
};
use crate::minifid::model::{Model, ModelConfig, ModelError};
use crate::minifid::tokenizer::Tokenizer;
use crate::minifid::train::{candidate_titles, train, Hparams, TargetKind, TrainError, TrainItem, TrainOutcome};
use crate::pathcodec::{
    self, CodecError, ParseOutcome, PathSchema, PredictionDump, ReasoningPath,
};
use crate::split_tokens;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("empty corpus")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fid,
    Pathfid,
    PathfidPlus,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Fid => "fid",
            Self::Pathfid => "pathfid",
            Self::PathfidPlus => "pathfid_plus",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "fid" => Some(Self::Fid),
            "pathfid" => Some(Self::Pathfid),
            "pathfid_plus" => Some(Self::PathfidPlus),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub schema: PathSchema,
    pub model: ModelConfig,
    pub hparams: Hparams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Pathfid,
            schema: PathSchema::Full,
            model: ModelConfig::default(),
            hparams: Hparams::default(),
        }
    }
}

pub struct PipelineOutput {
    /// The trained model of the final stage (the pair-reader for
    /// `pathfid_plus`).
    pub model: Model,
    pub predictions: Vec<Prediction>,
    pub dumps: Vec<PredictionDump>,
    pub report: EvalReport,
    /// One outcome per training stage, each carrying its trace.
    pub stages: Vec<TrainOutcome>,
    pub notes: Vec<String>,
}

/// One instance prepared for a run: hop-ordered gold passages, the gold
/// path under the run's schema, and the target token sequence.
struct Prepared<'a> {
    inst: &'a QuestionInstance,
    ordered_gold: Vec<&'a Passage>,
    gold: ReasoningPath,
    target: Vec<String>,
}

fn prepare_instances<'a>(
    instances: &'a [QuestionInstance],
    cfg: &PipelineConfig,
    notes: &mut Vec<String>,
) -> Result<Vec<Prepared<'a>>, PipelineError> {
    let mut prepared = Vec::with_capacity(instances.len());
    for inst in instances {
        let gold = inst.gold_passages();
        let ordered_gold: Vec<&Passage> = if gold.len() == 2 {
            match order_hops(&gold, &inst.answer, &LinkGraph::from_passages(&inst.passages)) {
                Ok([a, b]) => vec![a, b],
                Err(e) => {
                    notes.push(format!("{}: hop ordering failed ({e}), keeping pool order", inst.id));
                    gold
                }
            }
        } else {
            notes.push(format!(
                "{}: {} gold passages, keeping pool order",
                inst.id,
                gold.len()
            ));
            gold
        };
        let hops: Vec<(String, Vec<usize>)> = ordered_gold
            .iter()
            .map(|p| (p.title.clone(), inst.supports_for(&p.title)))
            .collect();
        let gold_path =
            pathcodec::gold_path(&hops, Some(inst.answer.clone())).restricted_to(cfg.schema);
        let target = match cfg.mode {
            Mode::Fid => {
                let mut t = split_tokens(&inst.answer);
                t.truncate(cfg.model.max_target_len);
                t
            }
            _ => {
                let full = pathcodec::linearize(&gold_path, cfg.schema)?;
                if full.len() > cfg.model.max_target_len {
                    notes.push(format!(
                        "{}: target truncated from {} to {} tokens",
                        inst.id,
                        full.len(),
                        cfg.model.max_target_len
                    ));
                }
                pathcodec::truncate_target(&full, cfg.model.max_target_len)?
            }
        };
        prepared.push(Prepared {
            inst,
            ordered_gold,
            gold: gold_path,
            target,
        });
    }
    Ok(prepared)
}

fn passage_blocks(
    inst: &QuestionInstance,
    mode: Mode,
    max_len: usize,
) -> Result<Vec<InputBlock>, PipelineError> {
    let mut blocks = Vec::with_capacity(inst.passages.len());
    for p in &inst.passages {
        let b = match mode {
            Mode::Fid => build_fid_block(&inst.question, p)?,
            _ => build_path_block(&inst.question, p)?,
        };
        blocks.push(truncate_block(&b, max_len));
    }
    Ok(blocks)
}

fn pair_blocks(
    inst: &QuestionInstance,
    anchor_title: &str,
    max_len: usize,
) -> Result<Vec<InputBlock>, PipelineError> {
    let pairs = build_pair_set(&inst.passages, anchor_title)?;
    let mut blocks = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        blocks.push(truncate_block(&build_pathplus_block(&inst.question, a, b)?, max_len));
    }
    Ok(blocks)
}

fn build_tokenizer(items: &[TrainItem]) -> Tokenizer {
    let mut streams: Vec<&[String]> = Vec::new();
    for item in items {
        for b in &item.blocks {
            streams.push(&b.tokens);
        }
        streams.push(&item.target);
    }
    Tokenizer::build(streams)
}

/// Decodes one instance into a scored prediction plus its dump line.
fn decode_instance(
    model: &Model,
    instance_id: &str,
    blocks: &[InputBlock],
    mode: Mode,
    schema: PathSchema,
) -> Result<(Prediction, PredictionDump, ReasoningPath), PipelineError> {
    let fused = model.encode_blocks(blocks)?;
    let raw = model.decode_greedy(&fused, model.config.max_target_len);
    if mode == Mode::Fid {
        let answer = crate::render_tokens(&raw);
        let outcome = ParseOutcome {
            path: ReasoningPath::new(Vec::new(), Some(answer.clone())),
            diagnostics: Vec::new(),
        };
        let dump = PredictionDump::new(instance_id, &raw, &outcome);
        let pred = Prediction::new(instance_id, answer);
        return Ok((pred, dump, outcome.path));
    }
    let outcome = pathcodec::parse(&raw, schema);
    let (recon, recon_diags) =
        pathcodec::reconstruct_titles(&outcome.path, &candidate_titles(blocks));
    let mut dump = PredictionDump::new(instance_id, &raw, &outcome);
    dump.diagnostics
        .extend(recon_diags.iter().map(|d| d.to_string()));
    let mut pred = Prediction::new(instance_id, recon.answer.clone().unwrap_or_default());
    if schema.has_facts() {
        pred.supports = recon.to_supports();
    }
    pred.raw_path = Some(recon.clone());
    Ok((pred, dump, recon))
}

/// Decodes a corpus with an already-trained model, rebuilding input blocks
/// the same way the training pipeline does. A `pathfid_plus` checkpoint
/// holds only the second-stage pair reader, so pair blocks anchor on the
/// gold first hop rather than a first-stage prediction.
pub fn decode_corpus(
    model: &Model,
    mode: Mode,
    schema: PathSchema,
    instances: &[QuestionInstance],
) -> Result<(Vec<Prediction>, Vec<PredictionDump>, Vec<String>), PipelineError> {
    if instances.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let mut notes = Vec::new();
    if mode == Mode::PathfidPlus {
        notes.push("pair blocks anchored on the gold first hop".to_string());
    }
    let max_len = model.config.max_input_block_len;
    let mut predictions = Vec::with_capacity(instances.len());
    let mut dumps = Vec::with_capacity(instances.len());
    for inst in instances {
        let blocks = match mode {
            Mode::Fid | Mode::Pathfid => passage_blocks(inst, mode, max_len)?,
            Mode::PathfidPlus => {
                let gold = inst.gold_passages();
                let anchor = if gold.len() == 2 {
                    match order_hops(&gold, &inst.answer, &LinkGraph::from_passages(&inst.passages))
                    {
                        Ok([a, _]) => a.title.clone(),
                        Err(_) => gold[0].title.clone(),
                    }
                } else {
                    let p = gold.first().copied().or_else(|| inst.passages.first());
                    p.map(|p| p.title.clone()).unwrap_or_default()
                };
                pair_blocks(inst, &anchor, max_len)?
            }
        };
        let (pred, dump, _) = decode_instance(model, &inst.id, &blocks, mode, schema)?;
        predictions.push(pred);
        dumps.push(dump);
    }
    Ok((predictions, dumps, notes))
}

fn segment_report(
    scored: &[(QuestionType, ReasoningPath, ReasoningPath)],
    schema: PathSchema,
) -> PathSegmentReport {
    let mut title_sum: Vec<f64> = Vec::new();
    let mut title_n: Vec<usize> = Vec::new();
    let mut facts_sum: Vec<f64> = Vec::new();
    let mut facts_n: Vec<usize> = Vec::new();
    let mut answer_sum = 0.0;
    let mut all_sum = 0.0;
    let mut comparison_hits = 0usize;
    let mut comparison_total = 0usize;
    for (qtype, pred, gold) in scored {
        let flags = pathcodec::path_segment_em(pred, gold);
        for (k, &hit) in flags.titles.iter().enumerate() {
            if title_sum.len() <= k {
                title_sum.resize(k + 1, 0.0);
                title_n.resize(k + 1, 0);
            }
            title_sum[k] += hit as usize as f64;
            title_n[k] += 1;
        }
        if schema.has_facts() {
            for (k, &hit) in flags.facts.iter().enumerate() {
                if facts_sum.len() <= k {
                    facts_sum.resize(k + 1, 0.0);
                    facts_n.resize(k + 1, 0);
                }
                facts_sum[k] += hit as usize as f64;
                facts_n[k] += 1;
            }
        }
        answer_sum += flags.answer as usize as f64;
        all_sum += flags.all(schema) as usize as f64;
        if *qtype == QuestionType::Comparison {
            comparison_total += 1;
            let mut reversed = gold.clone();
            reversed.hops.reverse();
            let best = flags.all(schema)
                || pathcodec::path_segment_em(pred, &reversed).all(schema);
            comparison_hits += best as usize;
        }
    }
    let n = scored.len().max(1) as f64;
    let mut segments = Vec::new();
    for k in 0..title_sum.len() {
        segments.push((format!("title_{}", k + 1), title_sum[k] / title_n[k].max(1) as f64));
        if schema.has_facts() && k < facts_sum.len() {
            segments.push((format!("facts_{}", k + 1), facts_sum[k] / facts_n[k].max(1) as f64));
        }
    }
    if schema.has_answer() {
        segments.push(("answer".to_string(), answer_sum / n));
    }
    PathSegmentReport {
        segments,
        all_exact: all_sum / n,
        comparison_best_of_both_orders: if comparison_total > 0 {
            Some(comparison_hits as f64 / comparison_total as f64)
        } else {
            None
        },
    }
}

/// Runs the full loop on a corpus: block building, training, greedy
/// decoding, parsing, title reconstruction, and scoring. Training and
/// evaluation use the same instances; this is a mechanism check at desk
/// scale, not a generalization measurement.
pub fn run_pipeline(
    instances: &[QuestionInstance],
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    if instances.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let mut notes = Vec::new();
    let prepared = prepare_instances(instances, cfg, &mut notes)?;

    // Stage-1 items: one block per candidate passage.
    let stage1_items: Vec<TrainItem> = prepared
        .iter()
        .map(|p| {
            Ok(TrainItem {
                instance_id: p.inst.id.clone(),
                blocks: passage_blocks(p.inst, cfg.mode, cfg.model.max_input_block_len)?,
                target: p.target.clone(),
            })
        })
        .collect::<Result<_, PipelineError>>()?;

    let tokenizer = build_tokenizer(&stage1_items);
    let kind = match cfg.mode {
        Mode::Fid => TargetKind::AnswerOnly,
        _ => TargetKind::Path(cfg.schema),
    };

    let mut stage1_model = Model::new(cfg.model, tokenizer.clone())?;
    let mut stages = Vec::new();
    let outcome1 = train(&mut stage1_model, &stage1_items, kind, &cfg.hparams)?;
    stages.push(outcome1);

    let (model, final_blocks): (Model, Vec<Vec<InputBlock>>) = match cfg.mode {
        Mode::Fid | Mode::Pathfid => {
            let blocks = stage1_items.into_iter().map(|i| i.blocks).collect();
            (stage1_model, blocks)
        }
        Mode::PathfidPlus => {
            // Pair-block inputs interleave two passages, so the second
            // stage reads blocks up to twice as long.
            let mut pair_config = cfg.model;
            pair_config.max_input_block_len = 2 * cfg.model.max_input_block_len;
            let pair_max = pair_config.max_input_block_len;

            // Training pairs anchor on the gold first hop.
            let stage2_items: Vec<TrainItem> = prepared
                .iter()
                .map(|p| {
                    Ok(TrainItem {
                        instance_id: p.inst.id.clone(),
                        blocks: pair_blocks(p.inst, &p.ordered_gold[0].title, pair_max)?,
                        target: p.target.clone(),
                    })
                })
                .collect::<Result<_, PipelineError>>()?;
            let mut stage2_model = Model::new(pair_config, tokenizer)?;
            let outcome2 = train(&mut stage2_model, &stage2_items, kind, &cfg.hparams)?;
            stages.push(outcome2);

            // Inference pairs anchor on the first hop the stage-1 model
            // predicts; a pathless decode falls back to the first passage.
            let mut blocks = Vec::with_capacity(prepared.len());
            for (p, item) in prepared.iter().zip(stage1_items.iter()) {
                let (_, _, recon) = decode_instance(
                    &stage1_model,
                    &p.inst.id,
                    &item.blocks,
                    cfg.mode,
                    cfg.schema,
                )?;
                let anchor = match recon.hops.first() {
                    Some(h) => h.title.clone(),
                    None => {
                        notes.push(format!(
                            "{}: no first hop predicted, anchoring on first passage",
                            p.inst.id
                        ));
                        p.inst.passages[0].title.clone()
                    }
                };
                blocks.push(pair_blocks(p.inst, &anchor, pair_max)?);
            }
            (stage2_model, blocks)
        }
    };

    let mut predictions = Vec::with_capacity(prepared.len());
    let mut dumps = Vec::with_capacity(prepared.len());
    let mut scored = Vec::with_capacity(prepared.len());
    for (p, blocks) in prepared.iter().zip(&final_blocks) {
        let (pred, dump, recon) =
            decode_instance(&model, &p.inst.id, blocks, cfg.mode, cfg.schema)?;
        scored.push((p.inst.question_type, recon, p.gold.clone()));
        predictions.push(pred);
        dumps.push(dump);
    }

    let options = EvalOptions {
        score_answers: cfg.mode == Mode::Fid || cfg.schema.has_answer(),
        score_supports: cfg.mode != Mode::Fid && cfg.schema.has_facts(),
    };
    let mut report = evaluate(&predictions, instances, &options)?;
    if cfg.mode != Mode::Fid {
        report.path_segments = Some(segment_report(&scored, cfg.schema));
    }
    report.diagnostics.extend(notes.iter().cloned());

    Ok(PipelineOutput {
        model,
        predictions,
        dumps,
        report,
        stages,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticConfig};

    fn small_corpus(n: usize) -> Vec<QuestionInstance> {
        generate_synthetic(&SyntheticConfig {
            num_instances: n,
            num_distractors: 3,
            sentences_per_passage: 2,
            rng_seed: 13,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    fn quick_config(mode: Mode) -> PipelineConfig {
        PipelineConfig {
            mode,
            schema: PathSchema::Full,
            model: ModelConfig {
                d_model: 32,
                n_layers_enc: 1,
                n_layers_dec: 1,
                n_heads: 2,
                max_input_block_len: 128,
                max_target_len: 48,
                rng_seed: 5,
            },
            hparams: Hparams {
                steps: 30,
                eval_every: 15,
                ..Hparams::default()
            },
        }
    }

    #[test]
    fn pathfid_mode_populates_support_metrics() {
        let corpus = small_corpus(4);
        let out = run_pipeline(&corpus, &quick_config(Mode::Pathfid)).unwrap();
        assert_eq!(out.predictions.len(), 4);
        assert_eq!(out.dumps.len(), 4);
        assert_eq!(out.stages.len(), 1);
        assert!(out.report.support_em.is_some());
        assert!(out.report.answer_em.is_some());
        let seg = out.report.path_segments.as_ref().unwrap();
        assert!(seg.segments.iter().any(|(n, _)| n == "title_1"));
        assert!(seg.segments.iter().any(|(n, _)| n == "facts_2"));
        assert!(seg.segments.iter().any(|(n, _)| n == "answer"));
    }

    #[test]
    fn fid_mode_skips_support_metrics() {
        let corpus = small_corpus(3);
        let out = run_pipeline(&corpus, &quick_config(Mode::Fid)).unwrap();
        assert!(out.report.support_em.is_none());
        assert!(out.report.joint_em.is_none());
        assert!(out.report.answer_em.is_some());
        assert!(out.report.path_segments.is_none());
        assert!(out.predictions.iter().all(|p| p.raw_path.is_none()));
        assert!(out.predictions.iter().all(|p| p.supports.is_empty()));
    }

    #[test]
    fn pathfid_plus_runs_two_stages_with_pair_blocks() {
        let corpus = small_corpus(3);
        let out = run_pipeline(&corpus, &quick_config(Mode::PathfidPlus)).unwrap();
        assert_eq!(out.stages.len(), 2);
        // Doubled block budget for the pair reader.
        assert_eq!(out.model.config.max_input_block_len, 256);
        assert_eq!(out.predictions.len(), 3);
        assert!(out.report.path_segments.is_some());
    }

    #[test]
    fn titles_only_schema_skips_answer_scoring() {
        let corpus = small_corpus(3);
        let mut cfg = quick_config(Mode::Pathfid);
        cfg.schema = PathSchema::TitlesOnly;
        let out = run_pipeline(&corpus, &cfg).unwrap();
        assert!(out.report.answer_em.is_none());
        assert!(out.report.support_em.is_none());
        let seg = out.report.path_segments.as_ref().unwrap();
        assert!(seg.segments.iter().all(|(n, _)| !n.starts_with("facts")));
        assert!(seg.segments.iter().all(|(n, _)| n != "answer"));
    }

    #[test]
    fn non_two_gold_instances_fall_back_to_pool_order() {
        let mut corpus = small_corpus(2);
        // Restrict the first instance's gold supports to a single passage.
        let keep = corpus[0].gold_passage_titles.iter().next().unwrap().clone();
        corpus[0].gold_supports.retain(|(t, _)| *t == keep);
        corpus[0].gold_passage_titles = [keep].into_iter().collect();
        let out = run_pipeline(&corpus, &quick_config(Mode::Pathfid)).unwrap();
        assert!(out.notes.iter().any(|n| n.contains("keeping pool order")));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            run_pipeline(&[], &quick_config(Mode::Pathfid)),
            Err(PipelineError::EmptyCorpus)
        ));
    }
}
