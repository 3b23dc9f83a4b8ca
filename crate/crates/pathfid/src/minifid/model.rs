//! The desk-scale fusion-in-decoder model: every input block is encoded
//! independently, the per-block outputs are concatenated into one fused
//! matrix, and the decoder cross-attends over all of its rows while
//! generating the target token by token.
//!
//! Double precision throughout, with hand-written backward passes so
//! gradients can be verified against finite differences.

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::InputBlock;
use crate::minifid::layers::{
    attention_bwd, attention_fwd, cross_entropy, layernorm_bwd, layernorm_fwd, linear_bwd,
    linear_fwd, positional_encoding, silu_bwd, silu_fwd, AttnCache, AttnWeights, LayerNormCache,
};
use crate::minifid::tokenizer::Tokenizer;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("block of {len} tokens exceeds max_input_block_len {max}")]
    OversizeBlock { len: usize, max: usize },
    #[error("no input blocks")]
    EmptyBlocks,
    #[error("target of {len} tokens exceeds max_target_len {max}")]
    TargetTooLong { len: usize, max: usize },
    #[error("non-finite loss; first offending tensor: {tensor}")]
    NonFinite { tensor: String },
    #[error("d_model {d} not divisible by n_heads {heads}")]
    BadHeadCount { d: usize, heads: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub n_heads: usize,
    pub max_input_block_len: usize,
    pub max_target_len: usize,
    pub rng_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers_enc: 2,
            n_layers_dec: 2,
            n_heads: 4,
            max_input_block_len: 256,
            max_target_len: 64,
            rng_seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }
}

/// Flat named registry of all weight tensors. Vectors (biases, layer-norm
/// gains) are stored as `1 x d` rows so every entry is an `Array2`.
#[derive(Debug, Clone, Default)]
pub struct ParamRegistry {
    map: BTreeMap<String, Array2<f64>>,
}

impl ParamRegistry {
    pub fn insert(&mut self, name: impl Into<String>, tensor: Array2<f64>) {
        self.map.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter tensor {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter tensor {name:?}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), Array2::zeros(v.raw_dim())))
                .collect(),
        }
    }

    /// Adds `dy` into the named tensor, creating it as `dy` if absent.
    pub fn accumulate(&mut self, name: &str, dy: Array2<f64>) {
        match self.map.get_mut(name) {
            Some(t) => *t += &dy,
            None => {
                self.map.insert(name.to_string(), dy);
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ParamRegistry, alpha: f64) {
        for (name, g) in other.iter() {
            self.get_mut(name).scaled_add(alpha, g);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.map.values_mut() {
            *t *= alpha;
        }
    }

    pub fn num_entries(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    pub fn first_non_finite(&self) -> Option<&String> {
        self.map
            .iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(k, _)| k)
    }
}

/// Block-diagonal encoder attention structure: a position may attend to
/// another only when both fall inside the same input block.
#[derive(Debug, Clone)]
pub struct BlockDiagonalMask {
    starts: Vec<usize>,
    total: usize,
}

impl BlockDiagonalMask {
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let mut starts = Vec::with_capacity(lengths.len());
        let mut off = 0;
        for &l in lengths {
            starts.push(off);
            off += l;
        }
        Self { starts, total: off }
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    /// Start offset of each block within the fused matrix.
    pub fn boundaries(&self) -> &[usize] {
        &self.starts
    }

    pub fn spans(&self) -> Vec<(usize, usize)> {
        (0..self.starts.len())
            .map(|i| {
                let end = self.starts.get(i + 1).copied().unwrap_or(self.total);
                (self.starts[i], end)
            })
            .collect()
    }

    fn block_of(&self, pos: usize) -> usize {
        match self.starts.binary_search(&pos) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    /// Whether query position `q` may attend to key position `k`.
    pub fn allows(&self, q: usize, k: usize) -> bool {
        q < self.total && k < self.total && self.block_of(q) == self.block_of(k)
    }

    /// Total attendable (query, key) pairs: the sum of squared block
    /// lengths, not the square of the summed lengths.
    pub fn attendable_pairs(&self) -> usize {
        self.spans().iter().map(|(s, e)| (e - s) * (e - s)).sum()
    }
}

/// Concatenated per-block encoder outputs: `(sum of block lengths) x d`.
#[derive(Debug, Clone)]
pub struct FusedRepresentation {
    pub matrix: Array2<f64>,
    pub block_boundaries: Vec<usize>,
}

impl FusedRepresentation {
    pub fn block_spans(&self) -> Vec<(usize, usize)> {
        let mut spans = Vec::with_capacity(self.block_boundaries.len());
        for i in 0..self.block_boundaries.len() {
            let end = self
                .block_boundaries
                .get(i + 1)
                .copied()
                .unwrap_or(self.matrix.nrows());
            spans.push((self.block_boundaries[i], end));
        }
        spans
    }
}

struct FfnCache {
    ln: LayerNormCache,
    n: Array2<f64>,
    pre_act: Array2<f64>,
    h: Array2<f64>,
}

struct AttnSubCache {
    ln: LayerNormCache,
    n: Array2<f64>,
    attn: AttnCache,
}

struct EncLayerCache {
    self_attn: AttnSubCache,
    ffn: FfnCache,
}

struct EncBlockCache {
    ids: Vec<usize>,
    layers: Vec<EncLayerCache>,
    ln_f: LayerNormCache,
}

struct DecLayerCache {
    self_attn: AttnSubCache,
    cross: AttnSubCache,
    ffn: FfnCache,
}

struct DecCache {
    ids_in: Vec<usize>,
    layers: Vec<DecLayerCache>,
    ln_f: LayerNormCache,
    yf: Array2<f64>,
}

pub struct Model {
    pub config: ModelConfig,
    pub tokenizer: Tokenizer,
    pub params: ParamRegistry,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
}

fn attn_weight_names(prefix: &str) -> [String; 4] {
    ["wq", "wk", "wv", "wo"].map(|w| format!("{prefix}.{w}"))
}

impl Model {
    pub fn new(config: ModelConfig, tokenizer: Tokenizer) -> Result<Self, ModelError> {
        if config.d_model % config.n_heads != 0 {
            return Err(ModelError::BadHeadCount {
                d: config.d_model,
                heads: config.n_heads,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let (d, ff, v) = (config.d_model, config.d_ff(), tokenizer.vocab_size());
        let mut p = ParamRegistry::default();
        p.insert("embed", xavier(&mut rng, v, d));
        let add_ln = |p: &mut ParamRegistry, prefix: &str| {
            p.insert(format!("{prefix}.g"), Array2::ones((1, d)));
            p.insert(format!("{prefix}.b"), Array2::zeros((1, d)));
        };
        let add_attn = |p: &mut ParamRegistry, rng: &mut ChaCha8Rng, prefix: &str| {
            for name in attn_weight_names(prefix) {
                p.insert(name, xavier(rng, d, d));
            }
        };
        let add_ffn = |p: &mut ParamRegistry, rng: &mut ChaCha8Rng, prefix: &str| {
            p.insert(format!("{prefix}.w1"), xavier(rng, d, ff));
            p.insert(format!("{prefix}.b1"), Array2::zeros((1, ff)));
            p.insert(format!("{prefix}.w2"), xavier(rng, ff, d));
            p.insert(format!("{prefix}.b2"), Array2::zeros((1, d)));
        };
        for i in 0..config.n_layers_enc {
            add_ln(&mut p, &format!("enc.{i}.ln1"));
            add_attn(&mut p, &mut rng, &format!("enc.{i}.attn"));
            add_ln(&mut p, &format!("enc.{i}.ln2"));
            add_ffn(&mut p, &mut rng, &format!("enc.{i}.ffn"));
        }
        add_ln(&mut p, "enc.ln_f");
        for i in 0..config.n_layers_dec {
            add_ln(&mut p, &format!("dec.{i}.ln1"));
            add_attn(&mut p, &mut rng, &format!("dec.{i}.self"));
            add_ln(&mut p, &format!("dec.{i}.ln2"));
            add_attn(&mut p, &mut rng, &format!("dec.{i}.cross"));
            add_ln(&mut p, &format!("dec.{i}.ln3"));
            add_ffn(&mut p, &mut rng, &format!("dec.{i}.ffn"));
        }
        add_ln(&mut p, "dec.ln_f");
        p.insert("out.w", xavier(&mut rng, d, v));
        p.insert("out.b", Array2::zeros((1, v)));
        Ok(Self {
            config,
            tokenizer,
            params: p,
        })
    }

    fn attn_weights<'a>(&'a self, prefix: &str) -> AttnWeights<'a> {
        let [q, k, v, o] = attn_weight_names(prefix);
        AttnWeights {
            wq: self.params.get(&q),
            wk: self.params.get(&k),
            wv: self.params.get(&v),
            wo: self.params.get(&o),
        }
    }

    /// Scaled token embeddings plus sinusoidal positions, restarting at
    /// position zero for every call (each block, and the decoder prefix).
    fn embed(&self, ids: &[usize]) -> Array2<f64> {
        let d = self.config.d_model;
        let emb = self.params.get("embed");
        let scale = (d as f64).sqrt();
        let mut x = Array2::zeros((ids.len(), d));
        for (i, &id) in ids.iter().enumerate() {
            x.row_mut(i).assign(&(&emb.row(id) * scale));
        }
        x + positional_encoding(ids.len(), d)
    }

    fn check_blocks(&self, blocks: &[InputBlock]) -> Result<(), ModelError> {
        if blocks.is_empty() {
            return Err(ModelError::EmptyBlocks);
        }
        for b in blocks {
            if b.tokens.len() > self.config.max_input_block_len {
                return Err(ModelError::OversizeBlock {
                    len: b.tokens.len(),
                    max: self.config.max_input_block_len,
                });
            }
        }
        Ok(())
    }

    /// Encodes every block independently and concatenates the outputs in
    /// block order. The block-diagonal mask derived from the block lengths
    /// determines which fused rows belong to which block.
    pub fn encode_blocks(&self, blocks: &[InputBlock]) -> Result<FusedRepresentation, ModelError> {
        let (fused, _) = self.encode_blocks_cached(blocks)?;
        Ok(fused)
    }

    fn encode_blocks_cached(
        &self,
        blocks: &[InputBlock],
    ) -> Result<(FusedRepresentation, Vec<EncBlockCache>), ModelError> {
        self.check_blocks(blocks)?;
        let lengths: Vec<usize> = blocks.iter().map(|b| b.tokens.len()).collect();
        let mask = BlockDiagonalMask::from_lengths(&lengths);
        let mut matrix = Array2::zeros((mask.total_len(), self.config.d_model));
        let mut caches = Vec::with_capacity(blocks.len());
        for (block, (start, end)) in blocks.iter().zip(mask.spans()) {
            let ids = self.tokenizer.encode(&block.tokens);
            let (h, cache) = self.encode_one_block(&ids);
            matrix.slice_mut(s![start..end, ..]).assign(&h);
            caches.push(cache);
        }
        Ok((
            FusedRepresentation {
                matrix,
                block_boundaries: mask.boundaries().to_vec(),
            },
            caches,
        ))
    }

    fn attn_sublayer(
        &self,
        x: &mut Array2<f64>,
        kv: Option<&Array2<f64>>,
        ln_prefix: &str,
        attn_prefix: &str,
        causal: bool,
    ) -> AttnSubCache {
        let (n, ln) = layernorm_fwd(
            x,
            self.params.get(&format!("{ln_prefix}.g")),
            self.params.get(&format!("{ln_prefix}.b")),
        );
        let (att, attn) = attention_fwd(
            &n,
            kv.unwrap_or(&n),
            &self.attn_weights(attn_prefix),
            self.config.n_heads,
            causal,
        );
        *x += &att;
        AttnSubCache { ln, n, attn }
    }

    fn ffn_sublayer(&self, x: &mut Array2<f64>, ln_prefix: &str, ffn_prefix: &str) -> FfnCache {
        let (n, ln) = layernorm_fwd(
            x,
            self.params.get(&format!("{ln_prefix}.g")),
            self.params.get(&format!("{ln_prefix}.b")),
        );
        let pre_act = linear_fwd(
            &n,
            self.params.get(&format!("{ffn_prefix}.w1")),
            self.params.get(&format!("{ffn_prefix}.b1")),
        );
        let h = silu_fwd(&pre_act);
        let f = linear_fwd(
            &h,
            self.params.get(&format!("{ffn_prefix}.w2")),
            self.params.get(&format!("{ffn_prefix}.b2")),
        );
        *x += &f;
        FfnCache { ln, n, pre_act, h }
    }

    fn encode_one_block(&self, ids: &[usize]) -> (Array2<f64>, EncBlockCache) {
        let mut x = self.embed(ids);
        let mut layers = Vec::with_capacity(self.config.n_layers_enc);
        for i in 0..self.config.n_layers_enc {
            let pre = format!("enc.{i}");
            let self_attn = self.attn_sublayer(
                &mut x,
                None,
                &format!("{pre}.ln1"),
                &format!("{pre}.attn"),
                false,
            );
            let ffn = self.ffn_sublayer(&mut x, &format!("{pre}.ln2"), &format!("{pre}.ffn"));
            layers.push(EncLayerCache { self_attn, ffn });
        }
        let (y, ln_f) = layernorm_fwd(
            &x,
            self.params.get("enc.ln_f.g"),
            self.params.get("enc.ln_f.b"),
        );
        (
            y,
            EncBlockCache {
                ids: ids.to_vec(),
                layers,
                ln_f,
            },
        )
    }

    fn decoder_forward(&self, ids_in: &[usize], fused: &Array2<f64>) -> (Array2<f64>, DecCache) {
        let mut y = self.embed(ids_in);
        let mut layers = Vec::with_capacity(self.config.n_layers_dec);
        for i in 0..self.config.n_layers_dec {
            let pre = format!("dec.{i}");
            let self_attn = self.attn_sublayer(
                &mut y,
                None,
                &format!("{pre}.ln1"),
                &format!("{pre}.self"),
                true,
            );
            let cross = self.attn_sublayer(
                &mut y,
                Some(fused),
                &format!("{pre}.ln2"),
                &format!("{pre}.cross"),
                false,
            );
            let ffn = self.ffn_sublayer(&mut y, &format!("{pre}.ln3"), &format!("{pre}.ffn"));
            layers.push(DecLayerCache {
                self_attn,
                cross,
                ffn,
            });
        }
        let (yf, ln_f) = layernorm_fwd(
            &y,
            self.params.get("dec.ln_f.g"),
            self.params.get("dec.ln_f.b"),
        );
        let logits = linear_fwd(&yf, self.params.get("out.w"), self.params.get("out.b"));
        (
            logits,
            DecCache {
                ids_in: ids_in.to_vec(),
                layers,
                ln_f,
                yf,
            },
        )
    }

    fn teacher_forcing_ids(&self, target: &[String]) -> (Vec<usize>, Vec<usize>) {
        let target_ids = self.tokenizer.encode(target);
        let mut ids_in = vec![self.tokenizer.bos_id()];
        ids_in.extend(&target_ids);
        let mut ids_out = target_ids;
        ids_out.push(self.tokenizer.eos_id());
        (ids_in, ids_out)
    }

    fn check_target(&self, target: &[String]) -> Result<(), ModelError> {
        if target.len() > self.config.max_target_len {
            return Err(ModelError::TargetTooLong {
                len: target.len(),
                max: self.config.max_target_len,
            });
        }
        Ok(())
    }

    /// Teacher-forced mean cross-entropy and gradients for every parameter.
    /// The decoder input is `<bos>` followed by the target; the prediction
    /// targets are the target tokens followed by `<eos>`.
    pub fn loss_and_grads(
        &self,
        blocks: &[InputBlock],
        target: &[String],
    ) -> Result<(f64, ParamRegistry), ModelError> {
        self.check_target(target)?;
        let (fused, enc_caches) = self.encode_blocks_cached(blocks)?;
        let (ids_in, ids_out) = self.teacher_forcing_ids(target);
        let (logits, dec_cache) = self.decoder_forward(&ids_in, &fused.matrix);
        let (loss, dlogits) = cross_entropy(&logits, &ids_out);
        if !loss.is_finite() {
            let tensor = self
                .params
                .first_non_finite()
                .cloned()
                .unwrap_or_else(|| "logits".to_string());
            return Err(ModelError::NonFinite { tensor });
        }

        let mut grads = self.params.zeros_like();
        let dfused = self.backprop_decoder(&dec_cache, &fused.matrix, &dlogits, &mut grads);
        for (cache, (start, end)) in enc_caches.iter().zip(fused.block_spans()) {
            let dy = dfused.slice(s![start..end, ..]).to_owned();
            self.backprop_block(cache, &dy, &mut grads);
        }
        Ok((loss, grads))
    }

    /// Forward-only loss, used by the finite-difference gradient check.
    pub fn loss(&self, blocks: &[InputBlock], target: &[String]) -> Result<f64, ModelError> {
        self.check_target(target)?;
        let (fused, _) = self.encode_blocks_cached(blocks)?;
        let (ids_in, ids_out) = self.teacher_forcing_ids(target);
        let (logits, _) = self.decoder_forward(&ids_in, &fused.matrix);
        Ok(cross_entropy(&logits, &ids_out).0)
    }

    fn backprop_block(&self, cache: &EncBlockCache, dy: &Array2<f64>, grads: &mut ParamRegistry) {
        let (mut dx, dg, db) = layernorm_bwd(&cache.ln_f, self.params.get("enc.ln_f.g"), dy);
        grads.accumulate("enc.ln_f.g", dg);
        grads.accumulate("enc.ln_f.b", db);
        for (i, lc) in cache.layers.iter().enumerate().rev() {
            let pre = format!("enc.{i}");
            dx = self.backprop_ffn(
                &format!("{pre}.ln2"),
                &format!("{pre}.ffn"),
                &lc.ffn,
                dx,
                grads,
            );
            dx = self.backprop_self_attn(
                &format!("{pre}.ln1"),
                &format!("{pre}.attn"),
                &lc.self_attn,
                dx,
                grads,
            );
        }
        self.backprop_embedding(&cache.ids, &dx, grads);
    }

    fn backprop_ffn(
        &self,
        ln_prefix: &str,
        ffn_prefix: &str,
        fc: &FfnCache,
        dx2: Array2<f64>,
        grads: &mut ParamRegistry,
    ) -> Array2<f64> {
        let (dh, dw2, db2) = linear_bwd(&fc.h, self.params.get(&format!("{ffn_prefix}.w2")), &dx2);
        grads.accumulate(&format!("{ffn_prefix}.w2"), dw2);
        grads.accumulate(&format!("{ffn_prefix}.b2"), db2);
        let dpre = silu_bwd(&fc.pre_act, &dh);
        let (dn, dw1, db1) = linear_bwd(&fc.n, self.params.get(&format!("{ffn_prefix}.w1")), &dpre);
        grads.accumulate(&format!("{ffn_prefix}.w1"), dw1);
        grads.accumulate(&format!("{ffn_prefix}.b1"), db1);
        let (dx_ln, dg, db) =
            layernorm_bwd(&fc.ln, self.params.get(&format!("{ln_prefix}.g")), &dn);
        grads.accumulate(&format!("{ln_prefix}.g"), dg);
        grads.accumulate(&format!("{ln_prefix}.b"), db);
        dx2 + dx_ln
    }

    fn accumulate_attn_grads(
        &self,
        attn_prefix: &str,
        ag: crate::minifid::layers::AttnGrads,
        grads: &mut ParamRegistry,
    ) {
        let [qn, kn, vn, on] = attn_weight_names(attn_prefix);
        grads.accumulate(&qn, ag.dwq);
        grads.accumulate(&kn, ag.dwk);
        grads.accumulate(&vn, ag.dwv);
        grads.accumulate(&on, ag.dwo);
    }

    fn backprop_self_attn(
        &self,
        ln_prefix: &str,
        attn_prefix: &str,
        ac: &AttnSubCache,
        dx1: Array2<f64>,
        grads: &mut ParamRegistry,
    ) -> Array2<f64> {
        let w = self.attn_weights(attn_prefix);
        let (dq, dkv, ag) = attention_bwd(&ac.n, &ac.n, &w, &ac.attn, &dx1);
        self.accumulate_attn_grads(attn_prefix, ag, grads);
        let dn = dq + dkv;
        let (dx_ln, dg, db) =
            layernorm_bwd(&ac.ln, self.params.get(&format!("{ln_prefix}.g")), &dn);
        grads.accumulate(&format!("{ln_prefix}.g"), dg);
        grads.accumulate(&format!("{ln_prefix}.b"), db);
        dx1 + dx_ln
    }

    fn backprop_embedding(&self, ids: &[usize], dx: &Array2<f64>, grads: &mut ParamRegistry) {
        let scale = (self.config.d_model as f64).sqrt();
        let demb = grads.get_mut("embed");
        for (i, &id) in ids.iter().enumerate() {
            demb.row_mut(id).scaled_add(scale, &dx.row(i));
        }
    }

    fn backprop_decoder(
        &self,
        cache: &DecCache,
        fused: &Array2<f64>,
        dlogits: &Array2<f64>,
        grads: &mut ParamRegistry,
    ) -> Array2<f64> {
        let (dyf, dwout, dbout) = linear_bwd(&cache.yf, self.params.get("out.w"), dlogits);
        grads.accumulate("out.w", dwout);
        grads.accumulate("out.b", dbout);
        let (mut dy, dg, db) = layernorm_bwd(&cache.ln_f, self.params.get("dec.ln_f.g"), &dyf);
        grads.accumulate("dec.ln_f.g", dg);
        grads.accumulate("dec.ln_f.b", db);

        let mut dfused: Array2<f64> = Array2::zeros(fused.raw_dim());
        for (i, lc) in cache.layers.iter().enumerate().rev() {
            let pre = format!("dec.{i}");
            dy = self.backprop_ffn(
                &format!("{pre}.ln3"),
                &format!("{pre}.ffn"),
                &lc.ffn,
                dy,
                grads,
            );
            // Cross-attention: the key/value gradient flows into the fused
            // encoder output, the query gradient back down the decoder.
            let w = self.attn_weights(&format!("{pre}.cross"));
            let (dq, dkv, ag) = attention_bwd(&lc.cross.n, fused, &w, &lc.cross.attn, &dy);
            self.accumulate_attn_grads(&format!("{pre}.cross"), ag, grads);
            dfused += &dkv;
            let (dy_ln, dg, db) =
                layernorm_bwd(&lc.cross.ln, self.params.get(&format!("{pre}.ln2.g")), &dq);
            grads.accumulate(&format!("{pre}.ln2.g"), dg);
            grads.accumulate(&format!("{pre}.ln2.b"), db);
            dy += &dy_ln;
            dy = self.backprop_self_attn(
                &format!("{pre}.ln1"),
                &format!("{pre}.self"),
                &lc.self_attn,
                dy,
                grads,
            );
        }
        self.backprop_embedding(&cache.ids_in, &dy, grads);
        dfused
    }

    /// Greedy autoregressive decoding over the fused representation: argmax
    /// token by token until `<eos>` or `max_len` generated tokens. Returns
    /// token strings without specials. Ties break toward the lowest id, so
    /// decoding is deterministic.
    pub fn decode_greedy(&self, fused: &FusedRepresentation, max_len: usize) -> Vec<String> {
        let mut ids = vec![self.tokenizer.bos_id()];
        let mut out = Vec::new();
        for _ in 0..max_len {
            let (logits, _) = self.decoder_forward(&ids, &fused.matrix);
            let last = logits.row(logits.nrows() - 1);
            let next = last
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .expect("non-empty vocab");
            if next == self.tokenizer.eos_id() {
                break;
            }
            out.push(self.tokenizer.token(next).to_string());
            ids.push(next);
        }
        out
    }
}

/// Result of checking one parameter tensor against finite differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckTensor {
    pub name: String,
    pub max_rel_err: f64,
    pub entries: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<GradCheckTensor>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }

    pub fn worst_tensor(&self) -> Option<&GradCheckTensor> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).expect("finite"))
    }
}

/// Compares analytic gradients against central finite differences
/// (step `h`) for every entry of every parameter tensor. Relative error
/// uses the guard `max(|analytic| + |numeric|, 1e-6)` so differencing
/// noise on near-zero entries cannot dominate.
pub fn gradient_check(
    model: &mut Model,
    blocks: &[InputBlock],
    target: &[String],
    h: f64,
) -> Result<GradCheckReport, ModelError> {
    let (_, grads) = model.loss_and_grads(blocks, target)?;
    let names: Vec<String> = model.params.names().cloned().collect();
    let mut tensors = Vec::with_capacity(names.len());
    let mut overall: f64 = 0.0;
    for name in names {
        let dims = model.params.get(&name).dim();
        let analytic = grads.get(&name).clone();
        let mut max_rel: f64 = 0.0;
        for r in 0..dims.0 {
            for c in 0..dims.1 {
                let orig = model.params.get(&name)[[r, c]];
                model.params.get_mut(&name)[[r, c]] = orig + h;
                let plus = model.loss(blocks, target)?;
                model.params.get_mut(&name)[[r, c]] = orig - h;
                let minus = model.loss(blocks, target)?;
                model.params.get_mut(&name)[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic[[r, c]];
                let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                max_rel = max_rel.max(rel);
            }
        }
        overall = overall.max(max_rel);
        tensors.push(GradCheckTensor {
            name,
            max_rel_err: max_rel,
            entries: dims.0 * dims.1,
        });
    }
    Ok(GradCheckReport {
        tensors,
        max_rel_err: overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{BlockKind, InputBlock};
    use crate::split_tokens;

    fn block(text: &str) -> InputBlock {
        InputBlock {
            tokens: split_tokens(text),
            source_titles: vec!["T".to_string()],
            kind: BlockKind::Fid,
        }
    }

    fn tiny_model(seed: u64) -> Model {
        let streams: Vec<Vec<String>> = vec![
            split_tokens("question: who is bob ? title: alpha context: bob is a cat ."),
            split_tokens("title: beta context: sue likes dogs and fish ."),
            split_tokens("<title-1> alpha <answer> cat"),
        ];
        let refs: Vec<&[String]> = streams.iter().map(|s| s.as_slice()).collect();
        let tok = Tokenizer::build(refs);
        Model::new(
            ModelConfig {
                d_model: 16,
                n_layers_enc: 1,
                n_layers_dec: 1,
                n_heads: 2,
                max_input_block_len: 32,
                max_target_len: 16,
                rng_seed: seed,
            },
            tok,
        )
        .unwrap()
    }

    #[test]
    fn fused_shape_and_boundaries() {
        let model = tiny_model(1);
        let blocks = vec![block("a b c d e"), block("a b c d e f g"), block("a b c")];
        let fused = model.encode_blocks(&blocks).unwrap();
        assert_eq!(fused.matrix.nrows(), 15);
        assert_eq!(fused.matrix.ncols(), 16);
        assert_eq!(fused.block_boundaries, vec![0, 5, 12]);
        assert_eq!(fused.block_spans(), vec![(0, 5), (5, 12), (12, 15)]);
    }

    #[test]
    fn mask_counts_sum_of_squares() {
        let mask = BlockDiagonalMask::from_lengths(&[5, 7, 3]);
        assert_eq!(mask.attendable_pairs(), 25 + 49 + 9);
        let mut counted = 0;
        for q in 0..15 {
            for k in 0..15 {
                if mask.allows(q, k) {
                    counted += 1;
                }
            }
        }
        assert_eq!(counted, mask.attendable_pairs());
        assert!(counted < 15 * 15);
    }

    #[test]
    fn block_independence_is_bitwise() {
        let model = tiny_model(2);
        let a = block("question: who is bob ? title: alpha context: bob is a cat .");
        let b = block("title: beta context: sue likes dogs and fish .");
        let ab = model.encode_blocks(&[a.clone(), b.clone()]).unwrap();
        let ba = model.encode_blocks(&[b.clone(), a.clone()]).unwrap();
        let (a_len, b_len) = (a.tokens.len(), b.tokens.len());
        assert_eq!(
            ab.matrix.slice(s![..a_len, ..]),
            ba.matrix.slice(s![b_len.., ..])
        );
        assert_eq!(
            ab.matrix.slice(s![a_len.., ..]),
            ba.matrix.slice(s![..b_len, ..])
        );

        let mut b2 = b.clone();
        b2.tokens[3] = "cats".to_string();
        let ab2 = model.encode_blocks(&[a.clone(), b2]).unwrap();
        assert_eq!(
            ab.matrix.slice(s![..a_len, ..]),
            ab2.matrix.slice(s![..a_len, ..])
        );
        assert_ne!(
            ab.matrix.slice(s![a_len.., ..]),
            ab2.matrix.slice(s![a_len.., ..])
        );
    }

    #[test]
    fn uniform_logits_give_log_vocab_loss() {
        let mut model = tiny_model(3);
        let v = model.tokenizer.vocab_size();
        *model.params.get_mut("out.w") = Array2::zeros((16, v));
        *model.params.get_mut("out.b") = Array2::zeros((1, v));
        let blocks = vec![block("title: alpha context: bob is a cat .")];
        let target = split_tokens("<answer> cat");
        let loss = model.loss(&blocks, &target).unwrap();
        assert!((loss - (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn oversize_inputs_are_rejected() {
        let model = tiny_model(4);
        let long = block(&vec!["w"; 40].join(" "));
        assert!(matches!(
            model.encode_blocks(&[long]),
            Err(ModelError::OversizeBlock { len: 40, max: 32 })
        ));
        assert!(matches!(
            model.encode_blocks(&[]),
            Err(ModelError::EmptyBlocks)
        ));
        let blocks = vec![block("a b")];
        let target: Vec<String> = vec!["t".to_string(); 20];
        assert!(matches!(
            model.loss_and_grads(&blocks, &target),
            Err(ModelError::TargetTooLong { len: 20, max: 16 })
        ));
    }

    #[test]
    fn decode_is_deterministic_and_bounded() {
        let model = tiny_model(5);
        let blocks = vec![block(
            "question: who is bob ? title: alpha context: bob is a cat .",
        )];
        let fused = model.encode_blocks(&blocks).unwrap();
        let a = model.decode_greedy(&fused, 8);
        let b = model.decode_greedy(&fused, 8);
        assert_eq!(a, b);
        assert!(a.len() <= 8);
        assert!(model.decode_greedy(&fused, 1).len() <= 1);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let m1 = tiny_model(9);
        let m2 = tiny_model(9);
        let m3 = tiny_model(10);
        for (name, t) in m1.params.iter() {
            assert_eq!(t, m2.params.get(name));
        }
        assert_ne!(m1.params.get("embed"), m3.params.get("embed"));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut model = tiny_model(6);
        let blocks = vec![
            block("question: who is bob ? title: alpha context: bob is a cat ."),
            block("title: beta context: sue likes dogs and fish ."),
        ];
        let target = split_tokens("<title-1> alpha <answer> cat");
        let report = gradient_check(&mut model, &blocks, &target, 1e-4).unwrap();
        assert!(
            report.passes(1e-4),
            "max rel err {} in {:?}",
            report.max_rel_err,
            report.worst_tensor().map(|t| &t.name)
        );
    }

    #[test]
    fn loss_decreases_under_gradient_step() {
        let mut model = tiny_model(7);
        let blocks = vec![block("title: alpha context: bob is a cat .")];
        let target = split_tokens("<answer> cat");
        let (l0, grads) = model.loss_and_grads(&blocks, &target).unwrap();
        model.params.add_scaled(&grads, -0.1);
        let l1 = model.loss(&blocks, &target).unwrap();
        assert!(l1 < l0, "{l1} !< {l0}");
    }
}
