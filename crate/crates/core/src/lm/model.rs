//! Forward pass, cross-entropy gradients and greedy decoding.
//!
//! The block follows the parallel-residual form: both the attention and the
//! MLP branch read the previous residual stream,
//!
//!   z^l = z^{l-1} + MHSA(LN1(z^{l-1})) + MLP(LN2(z^{l-1}))
//!
//! with pre-norm causal attention, a GeLU (tanh form) MLP, learned
//! positional embeddings added to the token embeddings, and a final layer
//! norm before the untied unembedding.

use crate::error::{Error, Result};
use crate::lm::params::{LayerParams, ModelConfig, ModelParams, Scalar, Tensor};

pub const LN_EPS: f64 = 1e-5;

pub type Token = usize;

fn check_tokens(config: &ModelConfig, tokens: &[Token]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::NeedTwoTokens(0));
    }
    if tokens.len() > config.n_ctx {
        return Err(Error::SequenceTooLong { len: tokens.len(), n_ctx: config.n_ctx });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= config.vocab) {
        return Err(Error::TokenOutOfRange { id: bad, vocab: config.vocab });
    }
    Ok(())
}

// ---- dense helpers (row-major) ----

/// out[n x cols] = x[n x rows] * w[rows x cols]
fn matmul<S: Scalar>(x: &[S], w: &Tensor<S>, n: usize, out: &mut [S]) {
    let rows = w.rows();
    let cols = w.cols();
    out.fill(S::zero());
    for i in 0..n {
        let xr = &x[i * rows..(i + 1) * rows];
        let or = &mut out[i * cols..(i + 1) * cols];
        for (r, &xv) in xr.iter().enumerate() {
            if xv == S::zero() {
                continue;
            }
            let wr = w.row(r);
            for c in 0..cols {
                or[c] = or[c] + xv * wr[c];
            }
        }
    }
}

/// dw[rows x cols] += x^T[n x rows] dy[n x cols]; dx[n x rows] += dy w^T
fn matmul_backward<S: Scalar>(
    x: &[S],
    w: &Tensor<S>,
    dy: &[S],
    n: usize,
    dw: &mut Tensor<S>,
    dx: &mut [S],
) {
    let rows = w.rows();
    let cols = w.cols();
    for i in 0..n {
        let xr = &x[i * rows..(i + 1) * rows];
        let dyr = &dy[i * cols..(i + 1) * cols];
        for r in 0..rows {
            let dwr = dw.row_mut(r);
            let xv = xr[r];
            let mut acc = S::zero();
            let wr = w.row(r);
            for c in 0..cols {
                dwr[c] = dwr[c] + xv * dyr[c];
                acc = acc + dyr[c] * wr[c];
            }
            dx[i * rows + r] = dx[i * rows + r] + acc;
        }
    }
}

struct LnCache<S> {
    /// normalized activations (before gain/bias)
    xhat: Vec<S>,
    rstd: Vec<S>,
}

fn layer_norm<S: Scalar>(
    x: &[S],
    gain: &Tensor<S>,
    bias: &Tensor<S>,
    n: usize,
    d: usize,
    out: &mut [S],
) -> LnCache<S> {
    let eps = S::from_f64(LN_EPS);
    let dn = S::from_f64(d as f64);
    let mut xhat = vec![S::zero(); n * d];
    let mut rstd = vec![S::zero(); n];
    for i in 0..n {
        let xr = &x[i * d..(i + 1) * d];
        let mut mean = S::zero();
        for &v in xr {
            mean = mean + v;
        }
        mean = mean / dn;
        let mut var = S::zero();
        for &v in xr {
            let c = v - mean;
            var = var + c * c;
        }
        var = var / dn;
        let r = (var + eps).sqrt().recip();
        rstd[i] = r;
        for j in 0..d {
            let h = (xr[j] - mean) * r;
            xhat[i * d + j] = h;
            out[i * d + j] = h * gain.data[j] + bias.data[j];
        }
    }
    LnCache { xhat, rstd }
}

fn layer_norm_backward<S: Scalar>(
    dy: &[S],
    cache: &LnCache<S>,
    gain: &Tensor<S>,
    n: usize,
    d: usize,
    dgain: &mut Tensor<S>,
    dbias: &mut Tensor<S>,
    dx: &mut [S],
) {
    let dn = S::from_f64(d as f64);
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let mut sum_dyg = S::zero();
        let mut sum_dyg_xhat = S::zero();
        for j in 0..d {
            let dyg = dyr[j] * gain.data[j];
            sum_dyg = sum_dyg + dyg;
            sum_dyg_xhat = sum_dyg_xhat + dyg * xh[j];
            dgain.data[j] = dgain.data[j] + dyr[j] * xh[j];
            dbias.data[j] = dbias.data[j] + dyr[j];
        }
        let m1 = sum_dyg / dn;
        let m2 = sum_dyg_xhat / dn;
        let r = cache.rstd[i];
        for j in 0..d {
            let dyg = dyr[j] * gain.data[j];
            dx[i * d + j] = dx[i * d + j] + r * (dyg - m1 - xh[j] * m2);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (S::one() + u.tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = S::one() - t * t;
    half * (S::one() + t) + half * x * sech2 * c * (S::one() + three * a * x * x)
}

struct LayerCache<S> {
    ln1: LnCache<S>,
    h1: Vec<S>,
    q: Vec<S>,
    k: Vec<S>,
    v: Vec<S>,
    /// per position i, per head h, probs over keys j <= i
    probs: Vec<S>,
    att_concat: Vec<S>,
    ln2: LnCache<S>,
    h2: Vec<S>,
    mlp_pre: Vec<S>,
    mlp_act: Vec<S>,
    /// residual stream entering the layer
    z_in: Vec<S>,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache<S> {
    n: usize,
    layers: Vec<LayerCache<S>>,
    ln_f: LnCache<S>,
    f_out: Vec<S>,
    pub logits: Vec<S>,
}

fn attention_forward<S: Scalar>(
    config: &ModelConfig,
    layer: &LayerParams<S>,
    h1: &[S],
    n: usize,
) -> (Vec<S>, Vec<S>, Vec<S>, Vec<S>, Vec<S>) {
    let d = config.d_model;
    let hd = config.head_dim();
    let heads = config.heads;
    let scale = S::from_f64(1.0 / (hd as f64).sqrt());

    let mut q = vec![S::zero(); n * d];
    let mut k = vec![S::zero(); n * d];
    let mut v = vec![S::zero(); n * d];
    matmul(h1, &layer.w_q, n, &mut q);
    matmul(h1, &layer.w_k, n, &mut k);
    matmul(h1, &layer.w_v, n, &mut v);

    let mut probs = vec![S::zero(); heads * n * n];
    let mut concat = vec![S::zero(); n * d];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..n {
            // causal scores for keys j <= i
            let qi = &q[i * d + off..i * d + off + hd];
            let mut row = vec![S::zero(); i + 1];
            let mut max = S::neg_infinity();
            for (j, rj) in row.iter_mut().enumerate() {
                let kj = &k[j * d + off..j * d + off + hd];
                let mut s = S::zero();
                for x in 0..hd {
                    s = s + qi[x] * kj[x];
                }
                s = s * scale;
                *rj = s;
                if s > max {
                    max = s;
                }
            }
            let mut denom = S::zero();
            for rj in row.iter_mut() {
                *rj = (*rj - max).exp();
                denom = denom + *rj;
            }
            let p_base = h * n * n + i * n;
            for (j, &rj) in row.iter().enumerate() {
                let p = rj / denom;
                probs[p_base + j] = p;
                let vj = &v[j * d + off..j * d + off + hd];
                for x in 0..hd {
                    concat[i * d + off + x] = concat[i * d + off + x] + p * vj[x];
                }
            }
        }
    }
    (q, k, v, probs, concat)
}

/// Run the model over `tokens`, returning logits for every position and the
/// cache of intermediate activations.
pub fn forward_cached<S: Scalar>(
    params: &ModelParams<S>,
    tokens: &[Token],
) -> Result<ForwardCache<S>> {
    let config = &params.config;
    check_tokens(config, tokens)?;
    let n = tokens.len();
    let d = config.d_model;

    let mut z = vec![S::zero(); n * d];
    for (i, &tok) in tokens.iter().enumerate() {
        let e = params.w_e.row(tok);
        let p = params.w_p.row(i);
        for j in 0..d {
            z[i * d + j] = e[j] + p[j];
        }
    }

    let mut layer_caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let z_in = z.clone();

        let mut h1 = vec![S::zero(); n * d];
        let ln1 = layer_norm(&z_in, &layer.ln1_g, &layer.ln1_b, n, d, &mut h1);
        let (q, k, v, probs, att_concat) = attention_forward(config, layer, &h1, n);
        let mut a = vec![S::zero(); n * d];
        matmul(&att_concat, &layer.w_o, n, &mut a);

        let mut h2 = vec![S::zero(); n * d];
        let ln2 = layer_norm(&z_in, &layer.ln2_g, &layer.ln2_b, n, d, &mut h2);
        let hidden = config.hidden();
        let mut pre = vec![S::zero(); n * hidden];
        matmul(&h2, &layer.w_in, n, &mut pre);
        for i in 0..n {
            for j in 0..hidden {
                pre[i * hidden + j] = pre[i * hidden + j] + layer.b_in.data[j];
            }
        }
        let act: Vec<S> = pre.iter().map(|&x| gelu(x)).collect();
        let mut m = vec![S::zero(); n * d];
        matmul(&act, &layer.w_out, n, &mut m);
        for i in 0..n {
            for j in 0..d {
                m[i * d + j] = m[i * d + j] + layer.b_out.data[j];
            }
        }

        for i in 0..n * d {
            z[i] = z_in[i] + a[i] + m[i];
        }
        layer_caches.push(LayerCache {
            ln1,
            h1,
            q,
            k,
            v,
            probs,
            att_concat,
            ln2,
            h2,
            mlp_pre: pre,
            mlp_act: act,
            z_in,
        });
    }

    let mut f_out = vec![S::zero(); n * d];
    let ln_f = layer_norm(&z, &params.ln_f_g, &params.ln_f_b, n, d, &mut f_out);
    let mut logits = vec![S::zero(); n * config.vocab];
    matmul(&f_out, &params.w_u, n, &mut logits);

    Ok(ForwardCache { n, layers: layer_caches, ln_f, f_out, logits })
}

/// Logits matrix (len x vocab) for `tokens`.
pub fn forward<S: Scalar>(params: &ModelParams<S>, tokens: &[Token]) -> Result<Vec<S>> {
    Ok(forward_cached(params, tokens)?.logits)
}

/// Row-wise log-softmax in the scalar's own precision.
pub fn log_softmax_row<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().cloned().fold(S::neg_infinity(), S::max);
    let mut denom = S::zero();
    for &l in logits {
        denom = denom + (l - max).exp();
    }
    let lse = max + denom.ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// Mean next-token cross entropy: positions 2..=n scored against the
/// prediction from their prefix.
pub fn loss<S: Scalar>(params: &ModelParams<S>, tokens: &[Token]) -> Result<f64> {
    if tokens.len() < 2 {
        return Err(Error::NeedTwoTokens(tokens.len()));
    }
    let cache = forward_cached(params, tokens)?;
    let v = params.config.vocab;
    let mut total = 0.0f64;
    for i in 1..tokens.len() {
        let row = &cache.logits[(i - 1) * v..i * v];
        let logp = log_softmax_row(row);
        total -= logp[tokens[i]].to_f64();
    }
    Ok(total / (tokens.len() - 1) as f64)
}

/// Loss plus gradients for every parameter tensor.
pub fn loss_and_grad<S: Scalar>(
    params: &ModelParams<S>,
    tokens: &[Token],
) -> Result<(f64, ModelParams<S>)> {
    if tokens.len() < 2 {
        return Err(Error::NeedTwoTokens(tokens.len()));
    }
    let config = &params.config;
    let cache = forward_cached(params, tokens)?;
    let n = cache.n;
    let d = config.d_model;
    let v = config.vocab;
    let mut grads = params.zeros_like();

    // d(mean CE)/d(logits): softmax - onehot on rows 0..n-1, row n-1 unused
    let count = S::from_f64((n - 1) as f64);
    let mut dlogits = vec![S::zero(); n * v];
    let mut total = 0.0f64;
    for i in 1..n {
        let row = &cache.logits[(i - 1) * v..i * v];
        let logp = log_softmax_row(row);
        total -= logp[tokens[i]].to_f64();
        let drow = &mut dlogits[(i - 1) * v..i * v];
        for j in 0..v {
            drow[j] = logp[j].exp() / count;
        }
        drow[tokens[i]] = drow[tokens[i]] - S::one() / count;
    }
    let loss_value = total / (n - 1) as f64;

    // unembedding
    let mut df = vec![S::zero(); n * d];
    matmul_backward(&cache.f_out, &params.w_u, &dlogits, n, &mut grads.w_u, &mut df);

    // final layer norm
    let mut dz = vec![S::zero(); n * d];
    layer_norm_backward(
        &df,
        &cache.ln_f,
        &params.ln_f_g,
        n,
        d,
        &mut grads.ln_f_g,
        &mut grads.ln_f_b,
        &mut dz,
    );

    for (layer, (lp, lc)) in params
        .layers
        .iter()
        .zip(&cache.layers)
        .enumerate()
        .rev()
        .map(|(i, pair)| (i, pair))
    {
        let lg = &mut grads.layers[layer];
        let hidden = config.hidden();

        // MLP branch: dz flows into m
        let dm = &dz;
        for i in 0..n {
            for j in 0..d {
                lg.b_out.data[j] = lg.b_out.data[j] + dm[i * d + j];
            }
        }
        let mut dact = vec![S::zero(); n * hidden];
        matmul_backward(&lc.mlp_act, &lp.w_out, dm, n, &mut lg.w_out, &mut dact);
        let mut dpre = vec![S::zero(); n * hidden];
        for i in 0..n * hidden {
            dpre[i] = dact[i] * gelu_grad(lc.mlp_pre[i]);
        }
        for i in 0..n {
            for j in 0..hidden {
                lg.b_in.data[j] = lg.b_in.data[j] + dpre[i * hidden + j];
            }
        }
        let mut dh2 = vec![S::zero(); n * d];
        matmul_backward(&lc.h2, &lp.w_in, &dpre, n, &mut lg.w_in, &mut dh2);

        // attention branch: dz flows into a
        let da = &dz;
        let mut dconcat = vec![S::zero(); n * d];
        matmul_backward(&lc.att_concat, &lp.w_o, da, n, &mut lg.w_o, &mut dconcat);

        let hd = config.head_dim();
        let heads = config.heads;
        let scale = S::from_f64(1.0 / (hd as f64).sqrt());
        let mut dq = vec![S::zero(); n * d];
        let mut dk = vec![S::zero(); n * d];
        let mut dv = vec![S::zero(); n * d];
        for h in 0..heads {
            let off = h * hd;
            for i in 0..n {
                let p_base = h * n * n + i * n;
                // dP[j] = dconcat_i . V_j ; dV_j += P[j] * dconcat_i
                let dci = &dconcat[i * d + off..i * d + off + hd];
                let mut dp = vec![S::zero(); i + 1];
                for (j, dpj) in dp.iter_mut().enumerate() {
                    let vj = &lc.v[j * d + off..j * d + off + hd];
                    let mut acc = S::zero();
                    for x in 0..hd {
                        acc = acc + dci[x] * vj[x];
                        dv[j * d + off + x] = dv[j * d + off + x] + lc.probs[p_base + j] * dci[x];
                    }
                    *dpj = acc;
                }
                // softmax backward: dS = P o (dP - sum_j dP_j P_j)
                let mut dot = S::zero();
                for (j, &dpj) in dp.iter().enumerate() {
                    dot = dot + dpj * lc.probs[p_base + j];
                }
                for (j, &dpj) in dp.iter().enumerate() {
                    let ds = lc.probs[p_base + j] * (dpj - dot) * scale;
                    let kj = &lc.k[j * d + off..j * d + off + hd];
                    let qi = &lc.q[i * d + off..i * d + off + hd];
                    for x in 0..hd {
                        dq[i * d + off + x] = dq[i * d + off + x] + ds * kj[x];
                        dk[j * d + off + x] = dk[j * d + off + x] + ds * qi[x];
                    }
                }
            }
        }
        let mut dh1 = vec![S::zero(); n * d];
        matmul_backward(&lc.h1, &lp.w_q, &dq, n, &mut lg.w_q, &mut dh1);
        matmul_backward(&lc.h1, &lp.w_k, &dk, n, &mut lg.w_k, &mut dh1);
        matmul_backward(&lc.h1, &lp.w_v, &dv, n, &mut lg.w_v, &mut dh1);

        // accumulate into the incoming residual stream: identity + both LNs
        let mut dz_in = dz.clone();
        layer_norm_backward(&dh2, &lc.ln2, &lp.ln2_g, n, d, &mut lg.ln2_g, &mut lg.ln2_b, &mut dz_in);
        layer_norm_backward(&dh1, &lc.ln1, &lp.ln1_g, n, d, &mut lg.ln1_g, &mut lg.ln1_b, &mut dz_in);
        dz = dz_in;
    }

    // embeddings
    for (i, &tok) in tokens.iter().enumerate() {
        let row = &dz[i * d..(i + 1) * d];
        let we = grads.w_e.row_mut(tok);
        for j in 0..d {
            we[j] = we[j] + row[j];
        }
        let wp = grads.w_p.row_mut(i);
        for j in 0..d {
            wp[j] = wp[j] + row[j];
        }
    }

    Ok((loss_value, grads))
}

/// Greedy decoding: extend `prefix` by `n_new` argmax tokens (ties take the
/// lowest id). Returns the full sequence and the log-probability each
/// emitted token had at its emission step.
pub fn generate_with_logprobs<S: Scalar>(
    params: &ModelParams<S>,
    prefix: &[Token],
    n_new: usize,
) -> Result<(Vec<Token>, Vec<f64>)> {
    let config = &params.config;
    check_tokens(config, prefix)?;
    if prefix.len() + n_new > config.n_ctx {
        return Err(Error::SequenceTooLong { len: prefix.len() + n_new, n_ctx: config.n_ctx });
    }
    let v = config.vocab;
    let mut seq = prefix.to_vec();
    let mut logprobs = Vec::with_capacity(n_new);
    for _ in 0..n_new {
        let logits = forward(params, &seq)?;
        let last = &logits[(seq.len() - 1) * v..seq.len() * v];
        let mut best = 0usize;
        for (j, &l) in last.iter().enumerate() {
            if l > last[best] {
                best = j;
            }
        }
        let logp = log_softmax_row(last);
        logprobs.push(logp[best].to_f64());
        seq.push(best);
    }
    Ok((seq, logprobs))
}

pub fn generate<S: Scalar>(params: &ModelParams<S>, prefix: &[Token], n_new: usize) -> Result<Vec<Token>> {
    Ok(generate_with_logprobs(params, prefix, n_new)?.0)
}
