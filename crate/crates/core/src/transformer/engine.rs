//! `f64` forward and reverse pass over a flat parameter buffer.
//!
//! Pre-norm GPT-2 block: `x += attn(ln_1(x)); x += mlp(ln_2(x))`, then
//! `ln_f` and a projection onto the (tied) token embedding.

use super::capture::AblationMask;
use super::layout::{BlockLayout, Layout};
use super::ModelConfig;
use crate::numerics::kernels::{dot, log_sum_exp, matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, softmax_prefix};

pub(crate) const LN_EPS: f64 = 1e-5;

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_K * (u + GELU_C * u * u * u)).tanh())
}

#[inline]
fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_K * (u + GELU_C * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * u * u)
}

pub(crate) struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

pub(crate) fn layer_norm(x: &[f64], w: &[f64], b: &[f64], n: usize, d: usize, out: &mut [f64]) -> LnCache {
    let mut xhat = vec![0.0; n * d];
    let mut rstd = vec![0.0; n];
    for t in 0..n {
        let row = &x[t * d..(t + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[t] = r;
        for c in 0..d {
            let xh = (row[c] - mean) * r;
            xhat[t * d + c] = xh;
            out[t * d + c] = xh * w[c] + b[c];
        }
    }
    LnCache { xhat, rstd }
}

struct MlpCache {
    ln2: LnCache,
    h2: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

struct LayerCache {
    ln1: LnCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[n_heads × n × n]` causal softmax patterns (zero rows when ablated).
    probs: Vec<f64>,
    cat: Vec<f64>,
    mlp: Option<MlpCache>,
}

/// Activations retained from a forward pass.
pub(crate) struct SeqCache {
    pub n: usize,
    tokens: Vec<u32>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    xf: Vec<f64>,
    pub logits: Vec<f64>,
    /// Per layer `[n_heads × n × n]` logits, full square, when captured.
    pub pre_softmax: Option<Vec<Vec<f64>>>,
}

impl SeqCache {
    /// Post-softmax pattern of one head as a flat `n × n` slice.
    pub fn probs(&self, layer: usize, head: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.layers[layer].probs[head * nn..(head + 1) * nn]
    }
}

pub(crate) struct Engine<'a> {
    pub cfg: &'a ModelConfig,
    pub layout: &'a Layout,
    pub params: &'a [f64],
}

fn bias_rows(b: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * b.len());
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    out
}

/// Columns `h·dh..(h+1)·dh` of an `n × d` matrix as a contiguous `n × dh` one.
fn head_cols(x: &[f64], n: usize, d: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dh);
    for t in 0..n {
        out.extend_from_slice(&x[t * d + h * dh..t * d + (h + 1) * dh]);
    }
    out
}

/// Adds an `n × dh` head block into columns `h·dh..(h+1)·dh` of `x`.
fn scatter_head_cols(src: &[f64], x: &mut [f64], n: usize, d: usize, h: usize, dh: usize) {
    for t in 0..n {
        for (o, v) in x[t * d + h * dh..t * d + (h + 1) * dh].iter_mut().zip(&src[t * dh..(t + 1) * dh]) {
            *o += v;
        }
    }
}

fn col_sum_acc(x: &[f64], n: usize, d: usize, out: &mut [f64]) {
    for t in 0..n {
        for (o, v) in out.iter_mut().zip(&x[t * d..(t + 1) * d]) {
            *o += v;
        }
    }
}

fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    w: &[f64],
    n: usize,
    d: usize,
    dx: &mut [f64],
    grads: &mut [f64],
    w_off: usize,
    b_off: usize,
) {
    let mut dxhat = vec![0.0; d];
    for t in 0..n {
        let dyr = &dy[t * d..(t + 1) * d];
        let xh = &cache.xhat[t * d..(t + 1) * d];
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for c in 0..d {
            dxhat[c] = dyr[c] * w[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xh[c];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        let r = cache.rstd[t];
        for c in 0..d {
            dx[t * d + c] += r * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
    {
        let dw = &mut grads[w_off..w_off + d];
        for t in 0..n {
            for c in 0..d {
                dw[c] += dy[t * d + c] * cache.xhat[t * d + c];
            }
        }
    }
    col_sum_acc(dy, n, d, &mut grads[b_off..b_off + d]);
}

impl<'a> Engine<'a> {
    fn p(&self, off: usize, len: usize) -> &'a [f64] {
        &self.params[off..off + len]
    }

    /// `bias + x · W` for `x[n×din]`, `W[din×dout]`.
    fn affine(&self, x: &[f64], n: usize, din: usize, dout: usize, w: usize, b: usize) -> Vec<f64> {
        let mut out = bias_rows(self.p(b, dout), n);
        matmul_acc(x, self.p(w, din * dout), &mut out, n, din, dout);
        out
    }

    pub fn forward(&self, tokens: &[u32], ablate: &AblationMask, capture: bool) -> SeqCache {
        let cfg = self.cfg;
        let (n, d) = (tokens.len(), cfg.d_model);
        let (nh, dh) = (cfg.n_heads, cfg.d_head());
        let scale = 1.0 / (dh as f64).sqrt();
        let c = cfg.pos_scale;

        let wte = self.p(self.layout.wte, cfg.vocab_size * d);
        let wpe = self.p(self.layout.wpe, cfg.ctx_len * d);
        let mut x = vec![0.0; n * d];
        for (t, &tok) in tokens.iter().enumerate() {
            let e = &wte[tok as usize * d..(tok as usize + 1) * d];
            let p = &wpe[t * d..(t + 1) * d];
            for i in 0..d {
                x[t * d + i] = e[i] + c * p[i];
            }
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        let mut pre_all = capture.then(Vec::new);
        for (l, bl) in self.layout.blocks.iter().enumerate() {
            let mut h1 = vec![0.0; n * d];
            let ln1 = layer_norm(&x, self.p(bl.ln1_w, d), self.p(bl.ln1_b, d), n, d, &mut h1);
            let q = self.affine(&h1, n, d, d, bl.wq, bl.bq);
            let k = self.affine(&h1, n, d, d, bl.wk, bl.bk);
            let v = self.affine(&h1, n, d, d, bl.wv, bl.bv);

            let nn = n * n;
            let mut probs = vec![0.0; nh * nn];
            let mut pre = if capture { vec![0.0; nh * nn] } else { Vec::new() };
            let mut cat = vec![0.0; n * d];
            let mut scores = vec![0.0; nn];
            for h in 0..nh {
                let (qh, kh, vh) = (head_cols(&q, n, d, h, dh), head_cols(&k, n, d, h, dh), head_cols(&v, n, d, h, dh));
                scores.fill(0.0);
                matmul_a_bt_acc(&qh, &kh, &mut scores, n, dh, n);
                scores.iter_mut().for_each(|s| *s *= scale);
                if capture {
                    pre[h * nn..(h + 1) * nn].copy_from_slice(&scores);
                }
                if ablate.contains(l, h) {
                    continue;
                }
                let p = &mut probs[h * nn..(h + 1) * nn];
                for i in 0..n {
                    let row = &mut p[i * n..(i + 1) * n];
                    row[..=i].copy_from_slice(&scores[i * n..i * n + i + 1]);
                    softmax_prefix(row, i + 1);
                }
                let mut oh = vec![0.0; n * dh];
                matmul_acc(p, &vh, &mut oh, n, n, dh);
                scatter_head_cols(&oh, &mut cat, n, d, h, dh);
            }
            let attn_out = self.affine(&cat, n, d, d, bl.wo, bl.bo);
            for (xv, a) in x.iter_mut().zip(&attn_out) {
                *xv += a;
            }

            let mlp = bl.mlp.map(|m| {
                let dm = cfg.d_mlp;
                let mut h2 = vec![0.0; n * d];
                let ln2 = layer_norm(&x, self.p(m.ln2_w, d), self.p(m.ln2_b, d), n, d, &mut h2);
                let u = self.affine(&h2, n, d, dm, m.w_fc, m.b_fc);
                let g: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
                let out = self.affine(&g, n, dm, d, m.w_proj, m.b_proj);
                for (xv, o) in x.iter_mut().zip(&out) {
                    *xv += o;
                }
                MlpCache { ln2, h2, u, g }
            });

            if let Some(all) = pre_all.as_mut() {
                all.push(pre);
            }
            layers.push(LayerCache {
                ln1,
                h1,
                q,
                k,
                v,
                probs,
                cat,
                mlp,
            });
        }

        let mut xf = vec![0.0; n * d];
        let lnf = layer_norm(
            &x,
            self.p(self.layout.ln_f_w, d),
            self.p(self.layout.ln_f_b, d),
            n,
            d,
            &mut xf,
        );
        let vocab = cfg.vocab_size;
        let mut logits = vec![0.0; n * vocab];
        matmul_a_bt_acc(
            &xf,
            self.p(self.layout.unembed, vocab * d),
            &mut logits,
            n,
            d,
            vocab,
        );

        SeqCache {
            n,
            tokens: tokens.to_vec(),
            layers,
            lnf,
            xf,
            logits,
            pre_softmax: pre_all,
        }
    }

    /// Accumulates `∂loss/∂params` into `grads` given `∂loss/∂logits`.
    pub fn backward(&self, cache: &SeqCache, dlogits: &[f64], grads: &mut [f64]) {
        let cfg = self.cfg;
        let layout = self.layout;
        let (n, d, vocab) = (cache.n, cfg.d_model, cfg.vocab_size);
        let mut dxf = vec![0.0; n * d];
        matmul_acc(dlogits, self.p(layout.unembed, vocab * d), &mut dxf, n, vocab, d);
        matmul_at_b_acc(
            dlogits,
            &cache.xf,
            &mut grads[layout.unembed..layout.unembed + vocab * d],
            n,
            vocab,
            d,
        );

        let mut dx = vec![0.0; n * d];
        layer_norm_backward(
            &dxf,
            &cache.lnf,
            self.p(layout.ln_f_w, d),
            n,
            d,
            &mut dx,
            grads,
            layout.ln_f_w,
            layout.ln_f_b,
        );

        for (l, bl) in layout.blocks.iter().enumerate().rev() {
            let lc = &cache.layers[l];
            if let (Some(m), Some(mc)) = (bl.mlp, lc.mlp.as_ref()) {
                let dm = cfg.d_mlp;
                col_sum_acc(&dx, n, d, &mut grads[m.b_proj..m.b_proj + d]);
                matmul_at_b_acc(&mc.g, &dx, &mut grads[m.w_proj..m.w_proj + dm * d], n, dm, d);
                let mut dg = vec![0.0; n * dm];
                matmul_a_bt_acc(&dx, self.p(m.w_proj, dm * d), &mut dg, n, d, dm);
                let du: Vec<f64> = dg.iter().zip(&mc.u).map(|(g, &u)| g * gelu_grad(u)).collect();
                col_sum_acc(&du, n, dm, &mut grads[m.b_fc..m.b_fc + dm]);
                matmul_at_b_acc(&mc.h2, &du, &mut grads[m.w_fc..m.w_fc + d * dm], n, d, dm);
                let mut dh2 = vec![0.0; n * d];
                matmul_a_bt_acc(&du, self.p(m.w_fc, d * dm), &mut dh2, n, dm, d);
                layer_norm_backward(
                    &dh2,
                    &mc.ln2,
                    self.p(m.ln2_w, d),
                    n,
                    d,
                    &mut dx,
                    grads,
                    m.ln2_w,
                    m.ln2_b,
                );
            }
            self.attention_backward(bl, lc, &dx.clone(), &mut dx, grads);
        }

        let wpe_scale = cfg.pos_scale;
        for (t, &tok) in cache.tokens.iter().enumerate() {
            let src = &dx[t * d..(t + 1) * d];
            let e = &mut grads[layout.wte + tok as usize * d..layout.wte + (tok as usize + 1) * d];
            for (g, s) in e.iter_mut().zip(src) {
                *g += s;
            }
            if wpe_scale != 0.0 {
                let p = &mut grads[layout.wpe + t * d..layout.wpe + (t + 1) * d];
                for (g, s) in p.iter_mut().zip(src) {
                    *g += wpe_scale * s;
                }
            }
        }
    }

    /// Backward through `x + attn(ln_1(x))`; `dout` is the gradient at the
    /// block output and `dx` receives the gradient for the block input.
    fn attention_backward(
        &self,
        bl: &BlockLayout,
        lc: &LayerCache,
        dout: &[f64],
        dx: &mut [f64],
        grads: &mut [f64],
    ) {
        let cfg = self.cfg;
        let n = lc.h1.len() / cfg.d_model;
        let (d, nh, dh) = (cfg.d_model, cfg.n_heads, cfg.d_head());
        let scale = 1.0 / (dh as f64).sqrt();
        let nn = n * n;

        col_sum_acc(dout, n, d, &mut grads[bl.bo..bl.bo + d]);
        matmul_at_b_acc(&lc.cat, dout, &mut grads[bl.wo..bl.wo + d * d], n, d, d);
        let mut dcat = vec![0.0; n * d];
        matmul_a_bt_acc(dout, self.p(bl.wo, d * d), &mut dcat, n, d, d);

        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dp = vec![0.0; nn];
        for h in 0..nh {
            let probs = &lc.probs[h * nn..(h + 1) * nn];
            let doh = head_cols(&dcat, n, d, h, dh);
            let (qh, kh, vh) = (
                head_cols(&lc.q, n, d, h, dh),
                head_cols(&lc.k, n, d, h, dh),
                head_cols(&lc.v, n, d, h, dh),
            );
            let mut dvh = vec![0.0; n * dh];
            matmul_at_b_acc(probs, &doh, &mut dvh, n, n, dh);
            dp.fill(0.0);
            matmul_a_bt_acc(&doh, &vh, &mut dp, n, dh, n);
            // dp becomes the score gradient in place.
            for i in 0..n {
                let prow = &probs[i * n..(i + 1) * n];
                let drow = &mut dp[i * n..(i + 1) * n];
                let weighted = dot(&prow[..=i], &drow[..=i]);
                for (g, &pij) in drow.iter_mut().zip(prow) {
                    *g = pij * (*g - weighted) * scale;
                }
            }
            let mut dqh = vec![0.0; n * dh];
            matmul_acc(&dp, &kh, &mut dqh, n, n, dh);
            let mut dkh = vec![0.0; n * dh];
            matmul_at_b_acc(&dp, &qh, &mut dkh, n, n, dh);
            scatter_head_cols(&dqh, &mut dq, n, d, h, dh);
            scatter_head_cols(&dkh, &mut dk, n, d, h, dh);
            scatter_head_cols(&dvh, &mut dv, n, d, h, dh);
        }

        let mut dh1 = vec![0.0; n * d];
        for (dproj, w, b) in [(&dq, bl.wq, bl.bq), (&dk, bl.wk, bl.bk), (&dv, bl.wv, bl.bv)] {
            col_sum_acc(dproj, n, d, &mut grads[b..b + d]);
            matmul_at_b_acc(&lc.h1, dproj, &mut grads[w..w + d * d], n, d, d);
            matmul_a_bt_acc(dproj, self.p(w, d * d), &mut dh1, n, d, d);
        }
        layer_norm_backward(
            &dh1,
            &lc.ln1,
            self.p(bl.ln1_w, d),
            n,
            d,
            dx,
            grads,
            bl.ln1_w,
            bl.ln1_b,
        );
    }
}

/// Summed next-token cross-entropy over positions `0..n-1`, and its gradient
/// with respect to the logits multiplied by `grad_scale`.
pub(crate) fn next_token_loss(
    logits: &[f64],
    tokens: &[u32],
    vocab: usize,
    grad_scale: f64,
) -> (f64, Vec<f64>) {
    let n = tokens.len();
    let mut dl = vec![0.0; n * vocab];
    let mut loss = 0.0;
    for t in 0..n.saturating_sub(1) {
        let row = &logits[t * vocab..(t + 1) * vocab];
        let target = tokens[t + 1] as usize;
        let lse = log_sum_exp(row);
        loss += lse - row[target];
        let drow = &mut dl[t * vocab..(t + 1) * vocab];
        for (g, &z) in drow.iter_mut().zip(row) {
            *g = (z - lse).exp() * grad_scale;
        }
        drow[target] -= grad_scale;
    }
    (loss, dl)
}
