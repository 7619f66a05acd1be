//! Forward pass and exact reverse-mode gradients.
//!
//! Encoder: `x0 = tok + pos`, `x1 = x0 + attn(x0)`, `enc = x1 + ffn(x1)`.
//! Decoder: `y0 = tok + pos`, `y1 = y0 + causal_attn(y0)`,
//! `y2 = y1 + cross_attn(y1, enc)`, `y3 = y2 + ffn(y2)`,
//! `logits = y3 W_out + b_out`. Linear maps store weights `[in][out]`
//! row-major; the FFN nonlinearity is `tanh`.

#![allow(clippy::needless_range_loop)]

use std::ops::Range;

use crate::corpus::{Batch, SentencePair, PAD};
use crate::error::{Error, Result};

use super::{GradVector, Layout, ModelConfig, ParamStore, SectionId, Segment};

#[derive(Debug, Clone)]
struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn add_assign(&mut self, other: &Mat) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn add(&self, other: &Mat) -> Mat {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }
}

#[derive(Debug, Clone)]
struct Linear {
    w: Range<usize>,
    b: Range<usize>,
    out: usize,
}

impl Linear {
    fn forward(&self, p: &[f64], x: &Mat) -> Mat {
        let w = &p[self.w.clone()];
        let b = &p[self.b.clone()];
        let mut y = Mat::zeros(x.rows, self.out);
        for i in 0..x.rows {
            let yr = y.row_mut(i);
            yr.copy_from_slice(b);
            for (k, &xv) in x.row(i).iter().enumerate() {
                if xv != 0.0 {
                    let wr = &w[k * self.out..(k + 1) * self.out];
                    for (yo, wo) in yr.iter_mut().zip(wr) {
                        *yo += xv * wo;
                    }
                }
            }
        }
        y
    }

    /// Accumulates weight/bias gradients and returns `dy W^T`.
    fn backward(&self, p: &[f64], g: &mut [f64], x: &Mat, dy: &Mat) -> Mat {
        let w = &p[self.w.clone()];
        let mut dx = Mat::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            let dyr = dy.row(i);
            for (gb, d) in g[self.b.clone()].iter_mut().zip(dyr) {
                *gb += d;
            }
            let xr = x.row(i);
            for k in 0..x.cols {
                let off = self.w.start + k * self.out;
                let gw = &mut g[off..off + self.out];
                let wr = &w[k * self.out..(k + 1) * self.out];
                let mut acc = 0.0;
                for o in 0..self.out {
                    gw[o] += xr[k] * dyr[o];
                    acc += wr[o] * dyr[o];
                }
                dx.data[i * x.cols + k] = acc;
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

struct AttnCache {
    q: Mat,
    k: Mat,
    v: Mat,
    /// One `n x m` probability matrix per head.
    probs: Vec<Mat>,
    ctx: Mat,
}

impl Attention {
    fn forward(&self, p: &[f64], xq: &Mat, xkv: &Mat, heads: usize, causal: bool) -> (Mat, AttnCache) {
        let q = self.q.forward(p, xq);
        let k = self.k.forward(p, xkv);
        let v = self.v.forward(p, xkv);
        let (n, m, d) = (q.rows, k.rows, q.cols);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = Mat::zeros(n, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let mut pm = Mat::zeros(n, m);
            for i in 0..n {
                let visible = if causal { i + 1 } else { m };
                let qi = &q.row(i)[cols.clone()];
                let row = pm.row_mut(i);
                let mut max = f64::NEG_INFINITY;
                for j in 0..visible {
                    let s = dot(qi, &k.row(j)[cols.clone()]) * scale;
                    row[j] = s;
                    max = max.max(s);
                }
                let mut sum = 0.0;
                for r in row.iter_mut().take(visible) {
                    *r = (*r - max).exp();
                    sum += *r;
                }
                for r in row.iter_mut().take(visible) {
                    *r /= sum;
                }
                let ci = &mut ctx.data[i * d + cols.start..i * d + cols.end];
                for j in 0..visible {
                    let pij = pm.data[i * m + j];
                    for (c, vv) in ci.iter_mut().zip(&v.row(j)[cols.clone()]) {
                        *c += pij * vv;
                    }
                }
            }
            probs.push(pm);
        }
        let out = self.o.forward(p, &ctx);
        (out, AttnCache { q, k, v, probs, ctx })
    }

    /// Returns gradients with respect to the query input and the key/value
    /// input.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        xq: &Mat,
        xkv: &Mat,
        c: &AttnCache,
        dout: &Mat,
        heads: usize,
    ) -> (Mat, Mat) {
        let dctx = self.o.backward(p, g, &c.ctx, dout);
        let (n, m, d) = (c.q.rows, c.k.rows, c.q.cols);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Mat::zeros(n, d);
        let mut dk = Mat::zeros(m, d);
        let mut dv = Mat::zeros(m, d);
        for (h, pm) in c.probs.iter().enumerate() {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..n {
                let dci = &dctx.row(i)[cols.clone()];
                let prow = pm.row(i);
                let mut dp = vec![0.0; m];
                let mut weighted = 0.0;
                for j in 0..m {
                    if prow[j] == 0.0 {
                        continue;
                    }
                    dp[j] = dot(dci, &c.v.row(j)[cols.clone()]);
                    weighted += prow[j] * dp[j];
                    let dvj = &mut dv.data[j * d + cols.start..j * d + cols.end];
                    for (a, b) in dvj.iter_mut().zip(dci) {
                        *a += prow[j] * b;
                    }
                }
                for j in 0..m {
                    if prow[j] == 0.0 {
                        continue;
                    }
                    let ds = prow[j] * (dp[j] - weighted) * scale;
                    let kj = &c.k.row(j)[cols.clone()];
                    let qi = &c.q.row(i)[cols.clone()];
                    for (t, col) in cols.clone().enumerate() {
                        dq.data[i * d + col] += ds * kj[t];
                        dk.data[j * d + col] += ds * qi[t];
                    }
                }
            }
        }
        let dxq = self.q.backward(p, g, xq, &dq);
        let mut dxkv = self.k.backward(p, g, xkv, &dk);
        dxkv.add_assign(&self.v.backward(p, g, xkv, &dv));
        (dxq, dxkv)
    }
}

#[derive(Debug, Clone)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn forward(&self, p: &[f64], x: &Mat) -> (Mat, Mat) {
        let mut h = self.up.forward(p, x);
        h.data.iter_mut().for_each(|v| *v = v.tanh());
        let y = self.down.forward(p, &h);
        (y, h)
    }

    fn backward(&self, p: &[f64], g: &mut [f64], x: &Mat, h: &Mat, dy: &Mat) -> Mat {
        let mut dh = self.down.backward(p, g, h, dy);
        for (d, hv) in dh.data.iter_mut().zip(&h.data) {
            *d *= 1.0 - hv * hv;
        }
        self.up.backward(p, g, x, &dh)
    }
}

/// Named parameter ranges of the network.
#[derive(Debug, Clone)]
pub(crate) struct NetIndex {
    tok: Range<usize>,
    pos: Range<usize>,
    enc_attn: Attention,
    enc_ffn: FeedForward,
    dec_self: Attention,
    dec_cross: Attention,
    dec_ffn: FeedForward,
    out: Linear,
}

struct LayoutBuilder {
    segments: Vec<Segment>,
    next: usize,
}

impl LayoutBuilder {
    fn push(&mut self, section: SectionId, name: String, len: usize) -> Range<usize> {
        let r = self.next..self.next + len;
        self.segments.push(Segment {
            section,
            name,
            offset: self.next,
            len,
        });
        self.next += len;
        r
    }

    fn linear(&mut self, section: SectionId, prefix: &str, w: &str, b: &str, din: usize, dout: usize) -> Linear {
        Linear {
            w: self.push(section, format!("{prefix}.{w}"), din * dout),
            b: self.push(section, format!("{prefix}.{b}"), dout),
            out: dout,
        }
    }

    fn attention(&mut self, section: SectionId, prefix: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(section, prefix, "wq", "bq", d, d),
            k: self.linear(section, prefix, "wk", "bk", d, d),
            v: self.linear(section, prefix, "wv", "bv", d, d),
            o: self.linear(section, prefix, "wo", "bo", d, d),
        }
    }

    fn ffn(&mut self, section: SectionId, prefix: &str, d: usize, hidden: usize) -> FeedForward {
        FeedForward {
            up: self.linear(section, prefix, "w1", "b1", d, hidden),
            down: self.linear(section, prefix, "w2", "b2", hidden, d),
        }
    }
}

impl NetIndex {
    pub(crate) fn build(c: &ModelConfig) -> (NetIndex, Layout) {
        let (d, hid, v) = (c.embed_dim, c.hidden_dim, c.vocab_size);
        let mut b = LayoutBuilder {
            segments: Vec::new(),
            next: 0,
        };
        let tok = b.push(SectionId::Emb, "tok_emb".into(), v * d);
        let pos = b.push(SectionId::Emb, "pos_emb".into(), c.max_len * d);
        let enc_attn = b.attention(SectionId::EncAttn, "enc.self_attn", d);
        let enc_ffn = b.ffn(SectionId::EncFfn, "enc.ffn", d, hid);
        let dec_self = b.attention(SectionId::DecSelfAttn, "dec.self_attn", d);
        let dec_cross = b.attention(SectionId::DecCrossAttn, "dec.cross_attn", d);
        let dec_ffn = b.ffn(SectionId::DecFfn, "dec.ffn", d, hid);
        let out = b.linear(SectionId::Out, "out", "w", "b", d, v);
        let idx = NetIndex {
            tok,
            pos,
            enc_attn,
            enc_ffn,
            dec_self,
            dec_cross,
            dec_ffn,
            out,
        };
        (idx, Layout { segments: b.segments })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn embed(p: &[f64], idx: &NetIndex, ids: &[u32], d: usize) -> Mat {
    let mut x = Mat::zeros(ids.len(), d);
    for (t, &id) in ids.iter().enumerate() {
        let tok = &p[idx.tok.start + id as usize * d..][..d];
        let pos = &p[idx.pos.start + t * d..][..d];
        for ((o, a), b) in x.row_mut(t).iter_mut().zip(tok).zip(pos) {
            *o = a + b;
        }
    }
    x
}

fn embed_backward(g: &mut [f64], idx: &NetIndex, ids: &[u32], dx: &Mat, d: usize) {
    for (t, &id) in ids.iter().enumerate() {
        let row = dx.row(t);
        let start = idx.tok.start + id as usize * d;
        for (a, b) in g[start..start + d].iter_mut().zip(row) {
            *a += b;
        }
        let start = idx.pos.start + t * d;
        for (a, b) in g[start..start + d].iter_mut().zip(row) {
            *a += b;
        }
    }
}

/// Summed NLL of one example's non-PAD target tokens. With `grad`, also
/// accumulates `scale * d(sum NLL)/d(params)`.
fn example(p: &[f64], idx: &NetIndex, cfg: &ModelConfig, ex: &SentencePair, grad: Option<(&mut [f64], f64)>) -> f64 {
    let (d, heads, v) = (cfg.embed_dim, cfg.num_heads, cfg.vocab_size);
    let dec_in = &ex.tgt[..ex.tgt.len() - 1];
    let dec_out = &ex.tgt[1..];

    let x0 = embed(p, idx, &ex.src, d);
    let (a_enc, c_enc) = idx.enc_attn.forward(p, &x0, &x0, heads, false);
    let x1 = x0.add(&a_enc);
    let (f_enc, h_enc) = idx.enc_ffn.forward(p, &x1);
    let enc = x1.add(&f_enc);

    let y0 = embed(p, idx, dec_in, d);
    let (a_self, c_self) = idx.dec_self.forward(p, &y0, &y0, heads, true);
    let y1 = y0.add(&a_self);
    let (a_cross, c_cross) = idx.dec_cross.forward(p, &y1, &enc, heads, false);
    let y2 = y1.add(&a_cross);
    let (f_dec, h_dec) = idx.dec_ffn.forward(p, &y2);
    let y3 = y2.add(&f_dec);
    let logits = idx.out.forward(p, &y3);

    let n = dec_in.len();
    let mut nll = 0.0;
    let mut dlogits = Mat::zeros(n, v);
    for t in 0..n {
        let target = dec_out[t];
        if target == PAD {
            continue;
        }
        let row = logits.row(t);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        nll += lse - row[target as usize];
        if let Some((_, scale)) = &grad {
            let dr = dlogits.row_mut(t);
            for (dz, &z) in dr.iter_mut().zip(row) {
                *dz = (z - lse).exp() * scale;
            }
            dr[target as usize] -= scale;
        }
    }

    let Some((g, _)) = grad else {
        return nll;
    };

    let dy3 = idx.out.backward(p, g, &y3, &dlogits);
    let mut dy2 = idx.dec_ffn.backward(p, g, &y2, &h_dec, &dy3);
    dy2.add_assign(&dy3);
    let (dq, denc) = idx.dec_cross.backward(p, g, &y1, &enc, &c_cross, &dy2, heads);
    let mut dy1 = dq;
    dy1.add_assign(&dy2);
    let (dq, dkv) = idx.dec_self.backward(p, g, &y0, &y0, &c_self, &dy1, heads);
    let mut dy0 = dq;
    dy0.add_assign(&dkv);
    dy0.add_assign(&dy1);
    embed_backward(g, idx, dec_in, &dy0, d);

    let mut dx1 = idx.enc_ffn.backward(p, g, &x1, &h_enc, &denc);
    dx1.add_assign(&denc);
    let (dq, dkv) = idx.enc_attn.backward(p, g, &x0, &x0, &c_enc, &dx1, heads);
    let mut dx0 = dq;
    dx0.add_assign(&dkv);
    dx0.add_assign(&dx1);
    embed_backward(g, idx, &ex.src, &dx0, d);
    nll
}

/// Validates the batch against the model and returns the number of
/// predicted (non-PAD) target tokens.
fn check_batch(cfg: &ModelConfig, batch: &Batch) -> Result<usize> {
    if batch.is_empty() {
        return Err(Error::Empty("mini-batch".into()));
    }
    let mut count = 0;
    for ex in &batch.examples {
        if ex.src.is_empty() {
            return Err(Error::Invalid("empty source sequence".into()));
        }
        if ex.tgt.len() < 2 {
            return Err(Error::Invalid("target sequence shorter than 2 tokens".into()));
        }
        if ex.src.len() > cfg.max_len || ex.tgt.len() - 1 > cfg.max_len {
            return Err(Error::Invalid(format!(
                "sequence longer than max_len {} (source {}, target {})",
                cfg.max_len,
                ex.src.len(),
                ex.tgt.len()
            )));
        }
        if let Some(&id) = ex.src.iter().chain(&ex.tgt).find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
        count += ex.tgt[1..].iter().filter(|&&t| t != PAD).count();
    }
    if count == 0 {
        return Err(Error::Invalid("batch has no non-PAD target tokens".into()));
    }
    Ok(count)
}

/// Mean per-token negative log-likelihood of the batch targets under teacher
/// forcing.
pub fn forward_loss(params: &ParamStore, batch: &Batch) -> Result<f64> {
    let cfg = params.config();
    let count = check_batch(cfg, batch)?;
    let (idx, _) = NetIndex::build(cfg);
    let p = params.values();
    let total: f64 = batch.examples.iter().map(|ex| example(p, &idx, cfg, ex, None)).sum();
    Ok(total / count as f64)
}

/// Loss and its exact gradient. Examples are accumulated in batch order, so
/// the result is bit-reproducible.
pub fn loss_and_grad(params: &ParamStore, batch: &Batch) -> Result<(f64, GradVector)> {
    let cfg = params.config();
    let count = check_batch(cfg, batch)?;
    let (idx, _) = NetIndex::build(cfg);
    let p = params.values();
    let scale = 1.0 / count as f64;
    let mut g = vec![0.0; p.len()];
    let mut total = 0.0;
    for ex in &batch.examples {
        total += example(p, &idx, cfg, ex, Some((&mut g, scale)));
    }
    let loss = total / count as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss}")));
    }
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i}")));
    }
    Ok((loss, GradVector(g)))
}

pub fn backward(params: &ParamStore, batch: &Batch) -> Result<GradVector> {
    loss_and_grad(params, batch).map(|(_, g)| g)
}
