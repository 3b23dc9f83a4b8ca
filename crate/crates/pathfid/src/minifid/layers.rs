//! Transformer building blocks in double precision with explicit forward
//! and backward passes. Every forward returns the cache its backward needs;
//! backwards are verified against finite differences in the model tests.
//!
//! Conventions: activations are `Array2<f64>` with one row per position;
//! weight matrices map `d_in x d_out`; biases and layer-norm gains are
//! `1 x d` rows so the parameter registry holds a single tensor shape.

use ndarray::{s, Array2, Axis};

pub const LN_EPS: f64 = 1e-5;
const NEG_INF: f64 = -1e30;

/// `y = x W + b`
pub fn linear_fwd(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Returns `(dx, dw, db)` for `y = x W + b`.
pub fn linear_bwd(
    x: &Array2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let dx = dy.dot(&w.t());
    let dw = x.t().dot(dy);
    let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    (dx, dw, db)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// SiLU activation `x * sigmoid(x)`: smooth everywhere, so central
/// finite differences stay accurate near zero pre-activations.
pub fn silu_fwd(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v * sigmoid(v))
}

pub fn silu_bwd(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = x.mapv(|v| {
        let s = sigmoid(v);
        s * (1.0 + v * (1.0 - s))
    });
    dx *= dy;
    dx
}

/// Row-wise softmax, numerically stabilized.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    y
}

/// Backward through softmax given its output probabilities:
/// `dz = p * (dp - sum(dp * p))` per row.
pub fn softmax_bwd(probs: &Array2<f64>, dprobs: &Array2<f64>) -> Array2<f64> {
    let inner = (dprobs * probs).sum_axis(Axis(1)).insert_axis(Axis(1));
    probs * &(dprobs - &inner)
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array2<f64>,
}

/// Per-row layer normalization with gain `g` and bias `b` (both `1 x d`).
pub fn layernorm_fwd(
    x: &Array2<f64>,
    g: &Array2<f64>,
    b: &Array2<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let mean = x.mean_axis(Axis(1)).expect("non-empty rows").insert_axis(Axis(1));
    let centered = x - &mean;
    let var = centered.mapv(|v| v * v).mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = &centered * &inv_std;
    let y = &xhat * g + b;
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns `(dx, dg, db)`.
pub fn layernorm_bwd(
    cache: &LayerNormCache,
    g: &Array2<f64>,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let dxhat = dy * g;
    let mean_dxhat = dxhat.mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
    let mean_dxhat_xhat = (&dxhat * &cache.xhat)
        .mean_axis(Axis(1))
        .unwrap()
        .insert_axis(Axis(1));
    let dx = (&dxhat - &mean_dxhat - &(&cache.xhat * &mean_dxhat_xhat)) * &cache.inv_std;
    let dg = (dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    (dx, dg, db)
}

/// Weights of one multi-head attention: projections `d x d`.
pub struct AttnWeights<'a> {
    pub wq: &'a Array2<f64>,
    pub wk: &'a Array2<f64>,
    pub wv: &'a Array2<f64>,
    pub wo: &'a Array2<f64>,
}

pub struct AttnGrads {
    pub dwq: Array2<f64>,
    pub dwk: Array2<f64>,
    pub dwv: Array2<f64>,
    pub dwo: Array2<f64>,
}

pub struct AttnCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Softmax probabilities per head, each `n_q x n_kv`.
    pub(crate) probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    n_heads: usize,
}

/// Multi-head scaled-dot-product attention. `q_in` provides queries,
/// `kv_in` keys and values (pass the same array for self-attention). With
/// `causal` set, position i attends only to keys 0..=i.
pub fn attention_fwd(
    q_in: &Array2<f64>,
    kv_in: &Array2<f64>,
    w: &AttnWeights,
    n_heads: usize,
    causal: bool,
) -> (Array2<f64>, AttnCache) {
    let d = q_in.ncols();
    assert!(d % n_heads == 0, "d_model must divide into heads");
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = q_in.dot(w.wq);
    let k = kv_in.dot(w.wk);
    let v = kv_in.dot(w.wv);

    let n_q = q.nrows();
    let mut ctx = Array2::zeros((n_q, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut scores = qh.dot(&kh.t());
        scores *= scale;
        if causal {
            for i in 0..scores.nrows() {
                for j in (i + 1)..scores.ncols() {
                    scores[[i, j]] = NEG_INF;
                }
            }
        }
        let p = softmax_rows(&scores);
        ctx.slice_mut(cols).assign(&p.dot(&vh));
        probs.push(p);
    }
    let out = ctx.dot(w.wo);
    (
        out,
        AttnCache {
            q,
            k,
            v,
            probs,
            ctx,
            n_heads,
        },
    )
}

/// Returns `(d_q_in, d_kv_in, weight grads)`. For self-attention the caller
/// adds the two input gradients.
pub fn attention_bwd(
    q_in: &Array2<f64>,
    kv_in: &Array2<f64>,
    w: &AttnWeights,
    cache: &AttnCache,
    d_out: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, AttnGrads) {
    let d = q_in.ncols();
    let dh = d / cache.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let dwo = cache.ctx.t().dot(d_out);
    let dctx = d_out.dot(&w.wo.t());

    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for h in 0..cache.n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = cache.q.slice(cols);
        let kh = cache.k.slice(cols);
        let vh = cache.v.slice(cols);
        let p = &cache.probs[h];
        let dctx_h = dctx.slice(cols);

        let dp = dctx_h.dot(&vh.t());
        dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
        // Masked positions have p = 0, so softmax_bwd zeroes them and the
        // causal mask needs no extra handling here.
        let mut ds = softmax_bwd(p, &dp);
        ds *= scale;
        dq.slice_mut(cols).assign(&ds.dot(&kh));
        dk.slice_mut(cols).assign(&ds.t().dot(&qh));
    }

    let d_q_in = dq.dot(&w.wq.t());
    let d_kv_in = dk.dot(&w.wk.t()) + dv.dot(&w.wv.t());
    let grads = AttnGrads {
        dwq: q_in.t().dot(&dq),
        dwk: kv_in.t().dot(&dk),
        dwv: kv_in.t().dot(&dv),
        dwo,
    };
    (d_q_in, d_kv_in, grads)
}

/// Sinusoidal positional encodings for positions `0..len`, restarting at 0
/// wherever a new block or target sequence begins.
pub fn positional_encoding(len: usize, d: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((len, d));
    for pos in 0..len {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            pe[[pos, 2 * i]] = angle.sin();
            pe[[pos, 2 * i + 1]] = angle.cos();
        }
    }
    pe
}

/// Mean token-level cross-entropy of `logits` (one row per position)
/// against `targets`, with the gradient on the logits.
pub fn cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    assert_eq!(logits.nrows(), targets.len());
    let probs = softmax_rows(logits);
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = probs;
    for (i, &t) in targets.iter().enumerate() {
        // Log-softmax via log-sum-exp: exact even when the target
        // probability underflows, so a diverging run reports its true loss.
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
        dlogits[[i, t]] -= 1.0;
    }
    dlogits /= n;
    (loss / n, dlogits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-0.5..0.5))
    }

    /// Central finite difference of a scalar function at every entry of x.
    fn fd_grad(
        x: &Array2<f64>,
        mut f: impl FnMut(&Array2<f64>) -> f64,
        h: f64,
    ) -> Array2<f64> {
        let mut g = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            g[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            let rel = (x - y).abs() / (x.abs() + y.abs()).max(1e-6);
            assert!(rel < tol, "mismatch {x} vs {y} (rel {rel})");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = array![[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]];
        let p = softmax_rows(&x);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(&mut rng, 3, 4);
        let w = randn(&mut rng, 4, 5);
        let b = randn(&mut rng, 1, 5);
        let loss = |x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>| {
            linear_fwd(x, w, b).mapv(|v| v * v).sum()
        };
        let dy = linear_fwd(&x, &w, &b).mapv(|v| 2.0 * v);
        let (dx, dw, db) = linear_bwd(&x, &w, &dy);
        assert_close(&dx, &fd_grad(&x, |x| loss(x, &w, &b), 1e-5), 1e-6);
        assert_close(&dw, &fd_grad(&w, |w| loss(&x, w, &b), 1e-5), 1e-6);
        assert_close(&db, &fd_grad(&b, |b| loss(&x, &w, b), 1e-5), 1e-6);
    }

    #[test]
    fn silu_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = randn(&mut rng, 4, 6);
        let dy = randn(&mut rng, 4, 6);
        let dx = silu_bwd(&x, &dy);
        let fd = fd_grad(&x, |x| (silu_fwd(x) * &dy).sum(), 1e-5);
        assert_close(&dx, &fd, 1e-6);
    }

    #[test]
    fn layernorm_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn(&mut rng, 3, 8);
        let g = randn(&mut rng, 1, 8) + 1.0;
        let b = randn(&mut rng, 1, 8);
        let dy = randn(&mut rng, 3, 8);
        let loss = |x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>| {
            (layernorm_fwd(x, g, b).0 * &dy).sum()
        };
        let (y, cache) = layernorm_fwd(&x, &g, &b);
        let _ = y;
        let (dx, dg, db) = layernorm_bwd(&cache, &g, &dy);
        assert_close(&dx, &fd_grad(&x, |x| loss(x, &g, &b), 1e-5), 1e-5);
        assert_close(&dg, &fd_grad(&g, |g| loss(&x, g, &b), 1e-5), 1e-6);
        assert_close(&db, &fd_grad(&b, |b| loss(&x, &g, b), 1e-5), 1e-6);
    }

    #[test]
    fn attention_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q_in = randn(&mut rng, 3, 8);
        let kv_in = randn(&mut rng, 5, 8);
        let wq = randn(&mut rng, 8, 8);
        let wk = randn(&mut rng, 8, 8);
        let wv = randn(&mut rng, 8, 8);
        let wo = randn(&mut rng, 8, 8);
        let dy = randn(&mut rng, 3, 8);
        let run = |q_in: &Array2<f64>,
                   kv_in: &Array2<f64>,
                   wq: &Array2<f64>,
                   wk: &Array2<f64>,
                   wv: &Array2<f64>,
                   wo: &Array2<f64>| {
            let w = AttnWeights { wq, wk, wv, wo };
            (attention_fwd(q_in, kv_in, &w, 2, false).0 * &dy).sum()
        };
        let w = AttnWeights {
            wq: &wq,
            wk: &wk,
            wv: &wv,
            wo: &wo,
        };
        let (_, cache) = attention_fwd(&q_in, &kv_in, &w, 2, false);
        let (dq_in, dkv_in, grads) = attention_bwd(&q_in, &kv_in, &w, &cache, &dy);
        let tol = 1e-5;
        assert_close(&dq_in, &fd_grad(&q_in, |x| run(x, &kv_in, &wq, &wk, &wv, &wo), 1e-5), tol);
        assert_close(&dkv_in, &fd_grad(&kv_in, |x| run(&q_in, x, &wq, &wk, &wv, &wo), 1e-5), tol);
        assert_close(&grads.dwq, &fd_grad(&wq, |x| run(&q_in, &kv_in, x, &wk, &wv, &wo), 1e-5), tol);
        assert_close(&grads.dwk, &fd_grad(&wk, |x| run(&q_in, &kv_in, &wq, x, &wv, &wo), 1e-5), tol);
        assert_close(&grads.dwv, &fd_grad(&wv, |x| run(&q_in, &kv_in, &wq, &wk, x, &wo), 1e-5), tol);
        assert_close(&grads.dwo, &fd_grad(&wo, |x| run(&q_in, &kv_in, &wq, &wk, &wv, x), 1e-5), tol);
    }

    #[test]
    fn causal_attention_ignores_future_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = randn(&mut rng, 4, 8);
        let wq = randn(&mut rng, 8, 8);
        let wk = randn(&mut rng, 8, 8);
        let wv = randn(&mut rng, 8, 8);
        let wo = randn(&mut rng, 8, 8);
        let w = AttnWeights {
            wq: &wq,
            wk: &wk,
            wv: &wv,
            wo: &wo,
        };
        let (y1, cache) = attention_fwd(&x, &x, &w, 2, true);
        for p in &cache.probs {
            for i in 0..p.nrows() {
                for j in (i + 1)..p.ncols() {
                    assert_eq!(p[[i, j]], 0.0);
                }
                assert!((p.row(i).sum() - 1.0).abs() < 1e-9);
            }
        }
        // Changing a later row must not affect earlier outputs.
        let mut x2 = x.clone();
        x2[[3, 0]] += 10.0;
        let (y2, _) = attention_fwd(&x2, &x2, &w, 2, true);
        for j in 0..y1.ncols() {
            assert_eq!(y1[[0, j]], y2[[0, j]]);
            assert_eq!(y1[[2, j]], y2[[2, j]]);
        }
    }

    #[test]
    fn cross_entropy_uniform_is_log_vocab() {
        let v = 7;
        let logits = Array2::zeros((3, v));
        let (loss, _) = cross_entropy(&logits, &[0, 3, 6]);
        assert!((loss - (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let logits = randn(&mut rng, 3, 5);
        let targets = [1usize, 4, 0];
        let (_, d) = cross_entropy(&logits, &targets);
        let fd = fd_grad(&logits, |l| cross_entropy(l, &targets).0, 1e-5);
        assert_close(&d, &fd, 1e-6);
    }

    #[test]
    fn positional_encoding_restarts_and_bounds() {
        let pe = positional_encoding(6, 8);
        assert_eq!(pe[[0, 0]], 0.0);
        assert_eq!(pe[[0, 1]], 1.0);
        assert!(pe.iter().all(|v| v.abs() <= 1.0));
    }
}
