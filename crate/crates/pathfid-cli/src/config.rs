//! Run configuration resolved from three layers: CLI flags beat PATHFID_*
//! environment variables (clap handles both), which beat the JSON config
//! file, which beats built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use pathfid::corpus::{self, QuestionInstance, SyntheticConfig};
use pathfid::minifid::{Hparams, Mode, ModelConfig, PipelineConfig};
use pathfid::pathcodec::PathSchema;

/// On-disk run configuration. Every field is optional; unset fields fall
/// through to environment variables and then to defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<String>,
    pub schema: Option<String>,
    pub corpus: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model: ModelOverrides,
    pub hparams: HparamOverrides,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Synthetic-corpus settings for runs that generate their own data.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub count: Option<usize>,
    pub distractors: Option<usize>,
    pub hops: Option<usize>,
    pub sentences: Option<usize>,
    pub vocab: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    /// Model width.
    #[arg(long, env = "PATHFID_D_MODEL")]
    pub d_model: Option<usize>,
    /// Encoder depth.
    #[arg(long, env = "PATHFID_ENC_LAYERS")]
    pub enc_layers: Option<usize>,
    /// Decoder depth.
    #[arg(long, env = "PATHFID_DEC_LAYERS")]
    pub dec_layers: Option<usize>,
    /// Attention heads.
    #[arg(long, env = "PATHFID_HEADS")]
    pub heads: Option<usize>,
    /// Input blocks are truncated to this many tokens.
    #[arg(long, env = "PATHFID_MAX_BLOCK_LEN")]
    pub max_block_len: Option<usize>,
    /// Target sequences are truncated to this many tokens.
    #[arg(long, env = "PATHFID_MAX_TARGET_LEN")]
    pub max_target_len: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct HparamOverrides {
    /// SGD learning rate.
    #[arg(long, env = "PATHFID_LR")]
    pub lr: Option<f64>,
    /// Training steps.
    #[arg(long, env = "PATHFID_STEPS")]
    pub steps: Option<usize>,
    /// Global gradient-norm clip.
    #[arg(long, env = "PATHFID_CLIP_NORM")]
    pub clip_norm: Option<f64>,
    /// Evaluate the training set every this many steps.
    #[arg(long, env = "PATHFID_EVAL_EVERY")]
    pub eval_every: Option<usize>,
    /// Stop once every training target decodes exactly.
    #[arg(long, env = "PATHFID_STOP_ON_PERFECT")]
    pub stop_on_perfect: Option<bool>,
}

/// Flag/env overrides shared by `train` and `e2e`.
#[derive(Debug, Default, Args)]
pub struct RunOverrides {
    /// Pipeline mode: fid, pathfid, or pathfid_plus.
    #[arg(long, env = "PATHFID_MODE")]
    pub mode: Option<String>,
    /// Path schema: titles_only, titles_answer, or full.
    #[arg(long, env = "PATHFID_SCHEMA")]
    pub schema: Option<String>,
    /// Corpus JSON in the normalized format.
    #[arg(long, env = "PATHFID_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// Directory for run artifacts.
    #[arg(long, env = "PATHFID_OUTPUT_DIR")]
    pub output_dir: Option<PathBuf>,
    /// Seed for model init, shuffling, and synthetic data.
    #[arg(long, env = "PATHFID_SEED")]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub model: ModelOverrides,
    #[command(flatten)]
    pub hparams: HparamOverrides,
}

/// Where a run gets its instances.
#[derive(Debug)]
pub enum CorpusSource {
    File(PathBuf),
    Synth(SyntheticConfig),
}

impl CorpusSource {
    /// Loads or generates the instances; loader rejects go to stderr.
    pub fn load(&self) -> Result<Vec<QuestionInstance>> {
        match self {
            Self::File(path) => {
                let outcome = corpus::load_hotpot(path)
                    .with_context(|| format!("loading corpus {}", path.display()))?;
                for r in &outcome.rejected {
                    eprintln!("rejected {}: {}", r.id, r.reason);
                }
                Ok(outcome.instances)
            }
            Self::Synth(cfg) => Ok(corpus::generate_synthetic(cfg)?),
        }
    }
}

/// A fully-resolved run: pipeline settings plus data source and artifact dir.
#[derive(Debug)]
pub struct Resolved {
    pub pipeline: PipelineConfig,
    pub corpus: CorpusSource,
    pub output_dir: PathBuf,
}

fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| file.clone())
}

pub fn parse_mode(label: &str) -> Result<Mode> {
    Mode::from_label(label)
        .ok_or_else(|| anyhow!("unknown mode {label:?} (expected fid, pathfid, or pathfid_plus)"))
}

pub fn parse_schema(label: &str) -> Result<PathSchema> {
    PathSchema::from_label(label).ok_or_else(|| {
        anyhow!("unknown schema {label:?} (expected titles_only, titles_answer, or full)")
    })
}

pub fn resolve(file: RunConfig, flags: &RunOverrides) -> Result<Resolved> {
    let mode = parse_mode(&pick(&flags.mode, &file.mode).unwrap_or_else(|| "pathfid".into()))?;
    let schema = parse_schema(&pick(&flags.schema, &file.schema).unwrap_or_else(|| "full".into()))?;
    let seed = flags.seed.or(file.seed);

    let mut model = ModelConfig::default();
    let m = &file.model;
    let f = &flags.model;
    if let Some(v) = pick(&f.d_model, &m.d_model) {
        model.d_model = v;
    }
    if let Some(v) = pick(&f.enc_layers, &m.enc_layers) {
        model.n_layers_enc = v;
    }
    if let Some(v) = pick(&f.dec_layers, &m.dec_layers) {
        model.n_layers_dec = v;
    }
    if let Some(v) = pick(&f.heads, &m.heads) {
        model.n_heads = v;
    }
    if let Some(v) = pick(&f.max_block_len, &m.max_block_len) {
        model.max_input_block_len = v;
    }
    if let Some(v) = pick(&f.max_target_len, &m.max_target_len) {
        model.max_target_len = v;
    }
    if let Some(s) = seed {
        model.rng_seed = s;
    }

    let mut hparams = Hparams::default();
    let h = &file.hparams;
    let g = &flags.hparams;
    if let Some(v) = pick(&g.lr, &h.lr) {
        hparams.lr = v;
    }
    if let Some(v) = pick(&g.steps, &h.steps) {
        hparams.steps = v;
    }
    if let Some(v) = pick(&g.clip_norm, &h.clip_norm) {
        hparams.clip_norm = v;
    }
    if let Some(v) = pick(&g.eval_every, &h.eval_every) {
        hparams.eval_every = v;
    }
    if let Some(v) = pick(&g.stop_on_perfect, &h.stop_on_perfect) {
        hparams.stop_on_perfect = v;
    }
    if let Some(s) = seed {
        hparams.rng_seed = s;
    }

    let corpus = if let Some(path) = pick(&flags.corpus, &file.corpus) {
        CorpusSource::File(path)
    } else if let Some(spec) = &file.synth {
        let mut sc = SyntheticConfig::default();
        if let Some(v) = spec.count {
            sc.num_instances = v;
        }
        if let Some(v) = spec.distractors {
            sc.num_distractors = v;
        }
        if let Some(v) = spec.hops {
            sc.hops = v;
        }
        if let Some(v) = spec.sentences {
            sc.sentences_per_passage = v;
        }
        if let Some(v) = spec.vocab {
            sc.vocab_size = v;
        }
        if let Some(s) = seed {
            sc.rng_seed = s;
        }
        CorpusSource::Synth(sc)
    } else {
        bail!("no corpus: pass --corpus or add a \"corpus\" or \"synth\" entry to the config");
    };

    let output_dir = pick(&flags.output_dir, &file.output_dir)
        .unwrap_or_else(|| PathBuf::from("pathfid-out"));

    Ok(Resolved {
        pipeline: PipelineConfig {
            mode,
            schema,
            model,
            hparams,
        },
        corpus,
        output_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_values() {
        let file: RunConfig = serde_json::from_str(
            r#"{"mode": "fid", "seed": 3, "synth": {"count": 5},
                "model": {"d_model": 16}, "hparams": {"steps": 10}}"#,
        )
        .unwrap();
        let flags = RunOverrides {
            mode: Some("pathfid".into()),
            model: ModelOverrides {
                d_model: Some(32),
                ..ModelOverrides::default()
            },
            ..RunOverrides::default()
        };
        let r = resolve(file, &flags).unwrap();
        assert_eq!(r.pipeline.mode, Mode::Pathfid);
        assert_eq!(r.pipeline.model.d_model, 32);
        assert_eq!(r.pipeline.hparams.steps, 10);
        assert_eq!(r.pipeline.model.rng_seed, 3);
        assert_eq!(r.pipeline.hparams.rng_seed, 3);
        match r.corpus {
            CorpusSource::Synth(sc) => {
                assert_eq!(sc.num_instances, 5);
                assert_eq!(sc.rng_seed, 3);
            }
            CorpusSource::File(_) => panic!("expected synth source"),
        }
    }

    #[test]
    fn corpus_flag_beats_synth_section() {
        let file: RunConfig = serde_json::from_str(r#"{"synth": {"count": 5}}"#).unwrap();
        let flags = RunOverrides {
            corpus: Some(PathBuf::from("data.json")),
            ..RunOverrides::default()
        };
        match resolve(file, &flags).unwrap().corpus {
            CorpusSource::File(p) => assert_eq!(p, PathBuf::from("data.json")),
            CorpusSource::Synth(_) => panic!("expected file source"),
        }
    }

    #[test]
    fn missing_corpus_is_an_error() {
        let err = resolve(RunConfig::default(), &RunOverrides::default()).unwrap_err();
        assert!(err.to_string().contains("no corpus"));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"modes": "fid"}"#).is_err());
    }

    #[test]
    fn defaults_fill_everything_else() {
        let file: RunConfig = serde_json::from_str(r#"{"corpus": "c.json"}"#).unwrap();
        let r = resolve(file, &RunOverrides::default()).unwrap();
        assert_eq!(r.pipeline.mode, Mode::Pathfid);
        assert_eq!(r.pipeline.schema, PathSchema::Full);
        assert_eq!(r.pipeline.model.d_model, 64);
        assert_eq!(r.output_dir, PathBuf::from("pathfid-out"));
    }
}
