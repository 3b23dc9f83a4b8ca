//! Single-instance gradient-descent training with periodic decode-and-parse
//! evaluation. Each evaluation point records per-segment exact match so a
//! run leaves behind a trace of how the path comes together segment by
//! segment.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::blocks::InputBlock;
use crate::metrics::normalize_answer;
use crate::minifid::model::{Model, ModelError, ParamRegistry};
use crate::pathcodec::{self, PathSchema};
use crate::render_tokens;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training diverged at step {step} with loss {loss}")]
    Diverged {
        step: usize,
        loss: f64,
        trace: Vec<TracePoint>,
    },
    #[error("no training items")]
    NoItems,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Hparams {
    pub lr: f64,
    pub steps: usize,
    pub clip_norm: f64,
    pub eval_every: usize,
    pub stop_on_perfect: bool,
    pub rng_seed: u64,
}

impl Default for Hparams {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            steps: 5000,
            clip_norm: 1.0,
            eval_every: 250,
            stop_on_perfect: true,
            rng_seed: 7,
        }
    }
}

/// What the decoder is being taught to emit: a bare answer string, or a
/// linearized reasoning path under some schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    AnswerOnly,
    Path(PathSchema),
}

/// One training instance: the encoder blocks and the target token sequence.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub instance_id: String,
    pub blocks: Vec<InputBlock>,
    pub target: Vec<String>,
}

/// One evaluation snapshot. `title_em` and `facts_em` hold per-hop-position
/// exact-match rates (empty for answer-only targets).
#[derive(Debug, Clone, Serialize)]
pub struct TracePoint {
    pub step: usize,
    pub mean_loss: f64,
    pub title_em: Vec<f64>,
    pub facts_em: Vec<f64>,
    pub answer_em: f64,
    pub all_exact: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub trace: Vec<TracePoint>,
    pub best_step: usize,
    pub best_metric: f64,
    pub steps_run: usize,
    pub stopped_early: bool,
}

/// Titles of all passages feeding the blocks, first-seen order, deduped.
pub fn candidate_titles(blocks: &[InputBlock]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for b in blocks {
        for t in &b.source_titles {
            if seen.insert(t.clone()) {
                out.push(t.clone());
            }
        }
    }
    out
}

/// Decodes every item greedily and scores it against its own target. Path
/// targets are parsed back (the target is a linearization, so parsing it
/// recovers the gold path), predicted titles are reconstructed against the
/// blocks' source titles, and per-segment exact match is aggregated.
fn eval_point(
    model: &Model,
    items: &[TrainItem],
    kind: TargetKind,
    step: usize,
    mean_loss: f64,
) -> Result<TracePoint, TrainError> {
    let mut title_sum: Vec<f64> = Vec::new();
    let mut title_n: Vec<usize> = Vec::new();
    let mut facts_sum: Vec<f64> = Vec::new();
    let mut facts_n: Vec<usize> = Vec::new();
    let mut answer_sum = 0.0;
    let mut all_sum = 0.0;
    for item in items {
        let fused = model.encode_blocks(&item.blocks)?;
        let pred = model.decode_greedy(&fused, model.config.max_target_len);
        match kind {
            TargetKind::AnswerOnly => {
                let hit = normalize_answer(&render_tokens(&pred))
                    == normalize_answer(&render_tokens(&item.target));
                answer_sum += hit as usize as f64;
                all_sum += hit as usize as f64;
            }
            TargetKind::Path(schema) => {
                let gold = pathcodec::parse(&item.target, schema).path;
                let outcome = pathcodec::parse(&pred, schema);
                let (recon, _) =
                    pathcodec::reconstruct_titles(&outcome.path, &candidate_titles(&item.blocks));
                let flags = pathcodec::path_segment_em(&recon, &gold);
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
                let exact = flags.all(schema);
                all_sum += exact as usize as f64;
                if schema.has_answer() {
                    answer_sum += flags.answer as usize as f64;
                } else {
                    answer_sum += exact as usize as f64;
                }
            }
        }
    }
    let n = items.len() as f64;
    Ok(TracePoint {
        step,
        mean_loss,
        title_em: title_sum
            .iter()
            .zip(&title_n)
            .map(|(s, &c)| s / c.max(1) as f64)
            .collect(),
        facts_em: facts_sum
            .iter()
            .zip(&facts_n)
            .map(|(s, &c)| s / c.max(1) as f64)
            .collect(),
        answer_em: answer_sum / n,
        all_exact: all_sum / n,
    })
}

/// Plain gradient descent, one instance per step, epoch order reshuffled
/// from the seed. Gradients are clipped to `clip_norm` by global norm.
/// Evaluates every `eval_every` steps and after the final step; the
/// parameters with the best answer exact match are restored at the end
/// (ties go to the later, lower-loss checkpoint). A finite loss above 1e6
/// aborts with the trace collected so far.
pub fn train(
    model: &mut Model,
    items: &[TrainItem],
    kind: TargetKind,
    hp: &Hparams,
) -> Result<TrainOutcome, TrainError> {
    if items.is_empty() {
        return Err(TrainError::NoItems);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.rng_seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut pos = order.len();
    let mut trace: Vec<TracePoint> = Vec::new();
    let mut best: Option<(usize, f64, f64, ParamRegistry)> = None;
    let mut loss_acc = 0.0;
    let mut loss_n = 0usize;
    let mut steps_run = 0;
    let mut stopped_early = false;

    for step in 1..=hp.steps {
        if pos >= order.len() {
            order.shuffle(&mut rng);
            pos = 0;
        }
        let item = &items[order[pos]];
        pos += 1;
        let (loss, mut grads) = model.loss_and_grads(&item.blocks, &item.target)?;
        if loss > 1e6 {
            return Err(TrainError::Diverged { step, loss, trace });
        }
        let norm = grads.global_norm();
        if norm > hp.clip_norm && norm > 0.0 {
            grads.scale(hp.clip_norm / norm);
        }
        model.params.add_scaled(&grads, -hp.lr);
        loss_acc += loss;
        loss_n += 1;
        steps_run = step;

        if (hp.eval_every > 0 && step % hp.eval_every == 0) || step == hp.steps {
            let point = eval_point(model, items, kind, step, loss_acc / loss_n as f64)?;
            loss_acc = 0.0;
            loss_n = 0;
            let metric = match kind {
                TargetKind::AnswerOnly => point.answer_em,
                TargetKind::Path(s) if s.has_answer() => point.answer_em,
                TargetKind::Path(_) => point.all_exact,
            };
            let better = match &best {
                None => true,
                Some((_, m, l, _)) => metric > *m || (metric == *m && point.mean_loss < *l),
            };
            if better {
                best = Some((step, metric, point.mean_loss, model.params.clone()));
            }
            let perfect = point.all_exact >= 1.0;
            trace.push(point);
            if perfect && hp.stop_on_perfect {
                stopped_early = true;
                break;
            }
        }
    }

    if best.is_none() {
        // Zero-step run: evaluate the initial parameters once.
        let mut loss_sum = 0.0;
        for item in items {
            loss_sum += model.loss(&item.blocks, &item.target)?;
        }
        let point = eval_point(model, items, kind, 0, loss_sum / items.len() as f64)?;
        let metric = match kind {
            TargetKind::AnswerOnly => point.answer_em,
            TargetKind::Path(s) if s.has_answer() => point.answer_em,
            TargetKind::Path(_) => point.all_exact,
        };
        best = Some((0, metric, point.mean_loss, model.params.clone()));
        trace.push(point);
    }
    let (best_step, best_metric, _, params) = best.expect("best checkpoint recorded");
    model.params = params;
    Ok(TrainOutcome {
        trace,
        best_step,
        best_metric,
        steps_run,
        stopped_early,
    })
}
