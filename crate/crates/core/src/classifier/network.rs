//! The encoder: summed embeddings, post-norm transformer layers, mean pooling and eight
//! logistic heads, with a hand-written backward pass.
//!
//! All parameters live in one flat `f64` buffer described by a [`Layout`]; matrices are
//! row-major `[in, out]`. Everything runs single-threaded in a fixed order, so a seed fully
//! determines the result.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encode::{EncodedSentence, POSITION_BUCKETS};
use super::EncoderConfig;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerOffsets {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

/// Names, shapes and offsets of every tensor in the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
    dims: Dims,
    tok: usize,
    seg: usize,
    pos: usize,
    sal: usize,
    emb_g: usize,
    emb_b: usize,
    layers: Vec<LayerOffsets>,
    sent_pos: usize,
    out_w: usize,
    out_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dims {
    vocab: usize,
    d: usize,
    heads: usize,
    ffn: usize,
    max_len: usize,
    buckets: usize,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let len = shape.iter().product();
        let offset = self.total;
        self.tensors.push(TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
            len,
        });
        self.total += len;
        offset
    }
}

impl Layout {
    pub fn new(enc: &EncoderConfig, saliency_buckets: usize) -> Layout {
        let dims = Dims {
            vocab: enc.vocab_size,
            d: enc.hidden,
            heads: enc.heads,
            ffn: enc.ffn,
            max_len: enc.max_len,
            buckets: saliency_buckets,
        };
        let d = dims.d;
        let mut b = Builder {
            tensors: Vec::new(),
            total: 0,
        };
        let tok = b.add("tok", &[dims.vocab, d]);
        let seg = b.add("seg", &[2, d]);
        let pos = b.add("pos", &[dims.max_len, d]);
        let sal = b.add("sal", &[dims.buckets, d]);
        let emb_g = b.add("emb_ln_g", &[d]);
        let emb_b = b.add("emb_ln_b", &[d]);
        let layers = (0..enc.layers)
            .map(|i| {
                let mut t = |n: &str, s: &[usize]| b.add(format!("layers.{i}.{n}"), s);
                LayerOffsets {
                    wq: t("wq", &[d, d]),
                    bq: t("bq", &[d]),
                    wk: t("wk", &[d, d]),
                    bk: t("bk", &[d]),
                    wv: t("wv", &[d, d]),
                    bv: t("bv", &[d]),
                    wo: t("wo", &[d, d]),
                    bo: t("bo", &[d]),
                    ln1_g: t("ln1_g", &[d]),
                    ln1_b: t("ln1_b", &[d]),
                    w1: t("w1", &[d, dims.ffn]),
                    b1: t("b1", &[dims.ffn]),
                    w2: t("w2", &[dims.ffn, d]),
                    b2: t("b2", &[d]),
                    ln2_g: t("ln2_g", &[d]),
                    ln2_b: t("ln2_b", &[d]),
                }
            })
            .collect();
        let sent_pos = b.add("sent_pos", &[POSITION_BUCKETS, d]);
        let out_w = b.add("out_w", &[d, 8]);
        let out_b = b.add("out_b", &[8]);
        Layout {
            tensors: b.tensors,
            total: b.total,
            dims,
            tok,
            seg,
            pos,
            sal,
            emb_g,
            emb_b,
            layers,
            sent_pos,
            out_w,
            out_b,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Offset ranges of the four embedding tables.
    pub fn embedding_ranges(&self) -> Vec<std::ops::Range<usize>> {
        ["tok", "seg", "pos", "sal"]
            .iter()
            .filter_map(|n| self.tensor(n))
            .map(|t| t.offset..t.offset + t.len)
            .collect()
    }

    /// Fresh parameters: uniform Xavier-style matrices, small uniform embeddings, unit
    /// layer-norm gains and zero biases.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        for t in &self.tensors {
            let slot = &mut p[t.offset..t.offset + t.len];
            let base = t.name.rsplit('.').next().unwrap_or(&t.name);
            if base.ends_with("_g") {
                slot.fill(1.0);
            } else if t.shape.len() == 1 {
                // biases and layer-norm shifts stay zero
            } else if matches!(base, "tok" | "seg" | "pos" | "sal" | "sent_pos") {
                for v in slot {
                    *v = rng.random_range(-0.1..0.1);
                }
            } else {
                let a = (6.0 / (t.shape[0] + t.shape[1]) as f64).sqrt();
                for v in slot {
                    *v = rng.random_range(-a..a);
                }
            }
        }
        p
    }
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

struct LayerCache {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    ctx: Vec<f64>,
    ln1: LnCache,
    h1: Vec<f64>,
    u: Vec<f64>,
    a: Vec<f64>,
    ln2: LnCache,
}

/// Intermediates kept from a forward pass for the backward pass.
pub struct Cache {
    n: usize,
    emb_ln: LnCache,
    layers: Vec<LayerCache>,
    pooled: Vec<f64>,
}

pub struct Forward {
    pub logits: [f64; 8],
    pub cache: Option<Cache>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `out[n, m] = a[n, k] · b[k, m] + bias[m]`
fn affine(a: &[f64], w: &[f64], bias: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        out.extend_from_slice(bias);
        let row = &mut out[i * m..(i + 1) * m];
        for (kk, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[kk * m..(kk + 1) * m]) {
                *o += x * wv;
            }
        }
    }
    out
}

/// Backward of [`affine`]: accumulates `dw += aᵀ·dout`, `db += Σ dout`, and `da += dout·wᵀ`.
#[allow(clippy::too_many_arguments)]
fn affine_back(
    a: &[f64],
    w: &[f64],
    dout: &[f64],
    n: usize,
    k: usize,
    m: usize,
    dw: &mut [f64],
    db: &mut [f64],
    da: &mut [f64],
) {
    for i in 0..n {
        let drow = &dout[i * m..(i + 1) * m];
        for (b, &g) in db.iter_mut().zip(drow) {
            *b += g;
        }
        for kk in 0..k {
            let x = a[i * k + kk];
            let wrow = &w[kk * m..(kk + 1) * m];
            let dwrow = &mut dw[kk * m..(kk + 1) * m];
            let mut acc = 0.0;
            for j in 0..m {
                dwrow[j] += x * drow[j];
                acc += drow[j] * wrow[j];
            }
            da[i * k + kk] += acc;
        }
    }
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], n: usize, d: usize) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut rstd = vec![0.0; n];
    for t in 0..n {
        let row = &x[t * d..(t + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[t] = r;
        for j in 0..d {
            let xh = (row[j] - mean) * r;
            xhat[t * d + j] = xh;
            y[t * d + j] = g[j] * xh + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_back(
    dy: &[f64],
    cache: &LnCache,
    g: &[f64],
    n: usize,
    d: usize,
    dg: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n * d];
    for t in 0..n {
        let mut sum_dxh = 0.0;
        let mut sum_dxh_xh = 0.0;
        for j in 0..d {
            let i = t * d + j;
            let dxh = dy[i] * g[j];
            dg[j] += dy[i] * cache.xhat[i];
            db[j] += dy[i];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * cache.xhat[i];
        }
        let r = cache.rstd[t];
        for j in 0..d {
            let i = t * d + j;
            let dxh = dy[i] * g[j];
            dx[i] = r / d as f64 * (d as f64 * dxh - sum_dxh - cache.xhat[i] * sum_dxh_xh);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

impl Layout {
    fn slice<'a>(&self, p: &'a [f64], offset: usize, len: usize) -> &'a [f64] {
        &p[offset..offset + len]
    }

    /// Runs the encoder; `keep_cache` retains what [`Layout::backward`] needs.
    pub fn forward(&self, p: &[f64], x: &EncodedSentence, keep_cache: bool) -> Forward {
        let Dims { d, heads, ffn, .. } = self.dims;
        let n = x.token_ids.len();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x0 = vec![0.0; n * d];
        for t in 0..n {
            let row = &mut x0[t * d..(t + 1) * d];
            add_assign(
                row,
                self.slice(p, self.tok + x.token_ids[t] as usize * d, d),
            );
            add_assign(
                row,
                self.slice(p, self.seg + x.segment_ids[t] as usize * d, d),
            );
            add_assign(
                row,
                self.slice(p, self.pos + x.position_ids[t] as usize * d, d),
            );
            add_assign(
                row,
                self.slice(p, self.sal + x.saliency_bucket_ids[t] as usize * d, d),
            );
        }
        let (mut h, emb_ln) = layer_norm(
            &x0,
            self.slice(p, self.emb_g, d),
            self.slice(p, self.emb_b, d),
            n,
            d,
        );

        let mut layer_caches = Vec::new();
        for lo in &self.layers {
            let q = affine(
                &h,
                self.slice(p, lo.wq, d * d),
                self.slice(p, lo.bq, d),
                n,
                d,
                d,
            );
            let k = affine(
                &h,
                self.slice(p, lo.wk, d * d),
                self.slice(p, lo.bk, d),
                n,
                d,
                d,
            );
            let v = affine(
                &h,
                self.slice(p, lo.wv, d * d),
                self.slice(p, lo.bv, d),
                n,
                d,
                d,
            );
            let mut attn = vec![0.0; heads * n * n];
            let mut ctx = vec![0.0; n * d];
            for hd in 0..heads {
                let off = hd * dh;
                for i in 0..n {
                    let row = &mut attn[(hd * n + i) * n..(hd * n + i + 1) * n];
                    let qi = &q[i * d + off..i * d + off + dh];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..n {
                        let kj = &k[j * d + off..j * d + off + dh];
                        let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        row[j] = s;
                        max = max.max(s);
                    }
                    let mut z = 0.0;
                    for s in row.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    for s in row.iter_mut() {
                        *s /= z;
                    }
                    let ci = &mut ctx[i * d + off..i * d + off + dh];
                    for j in 0..n {
                        let a = row[j];
                        for (c, &vv) in ci.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                            *c += a * vv;
                        }
                    }
                }
            }
            let o = affine(
                &ctx,
                self.slice(p, lo.wo, d * d),
                self.slice(p, lo.bo, d),
                n,
                d,
                d,
            );
            let mut r1 = h.clone();
            add_assign(&mut r1, &o);
            let (h1, ln1) = layer_norm(
                &r1,
                self.slice(p, lo.ln1_g, d),
                self.slice(p, lo.ln1_b, d),
                n,
                d,
            );
            let u = affine(
                &h1,
                self.slice(p, lo.w1, d * ffn),
                self.slice(p, lo.b1, ffn),
                n,
                d,
                ffn,
            );
            let a: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
            let f = affine(
                &a,
                self.slice(p, lo.w2, ffn * d),
                self.slice(p, lo.b2, d),
                n,
                ffn,
                d,
            );
            let mut r2 = h1.clone();
            add_assign(&mut r2, &f);
            let (h2, ln2) = layer_norm(
                &r2,
                self.slice(p, lo.ln2_g, d),
                self.slice(p, lo.ln2_b, d),
                n,
                d,
            );
            let input = std::mem::replace(&mut h, h2);
            if keep_cache {
                layer_caches.push(LayerCache {
                    input,
                    q,
                    k,
                    v,
                    attn,
                    ctx,
                    ln1,
                    h1,
                    u,
                    a,
                    ln2,
                });
            }
        }

        let mut pooled = vec![0.0; d];
        for t in 0..n {
            add_assign(&mut pooled, &h[t * d..(t + 1) * d]);
        }
        for v in pooled.iter_mut() {
            *v /= n as f64;
        }
        if let Some(bucket) = x.sentence_position {
            add_assign(
                &mut pooled,
                self.slice(p, self.sent_pos + bucket as usize * d, d),
            );
        }
        let out = affine(
            &pooled,
            self.slice(p, self.out_w, d * 8),
            self.slice(p, self.out_b, 8),
            1,
            d,
            8,
        );
        let mut logits = [0.0; 8];
        logits.copy_from_slice(&out);
        Forward {
            logits,
            cache: keep_cache.then_some(Cache {
                n,
                emb_ln,
                layers: layer_caches,
                pooled,
            }),
        }
    }

    /// Accumulates into `grad` the gradient of a loss whose derivative w.r.t. the logits is
    /// `dlogits`.
    pub fn backward(
        &self,
        p: &[f64],
        x: &EncodedSentence,
        cache: &Cache,
        dlogits: &[f64; 8],
        grad: &mut [f64],
    ) {
        let Dims { d, heads, ffn, .. } = self.dims;
        let n = cache.n;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut dpooled = vec![0.0; d];
        let mut dw = vec![0.0; d * 8];
        let mut db = vec![0.0; 8];
        affine_back(
            &cache.pooled,
            self.slice(p, self.out_w, d * 8),
            dlogits,
            1,
            d,
            8,
            &mut dw,
            &mut db,
            &mut dpooled,
        );
        add_assign(&mut grad[self.out_w..][..d * 8], &dw);
        add_assign(&mut grad[self.out_b..][..8], &db);
        if let Some(bucket) = x.sentence_position {
            add_assign(
                &mut grad[self.sent_pos + bucket as usize * d..][..d],
                &dpooled,
            );
        }
        let mut dh_cur = vec![0.0; n * d];
        for t in 0..n {
            for j in 0..d {
                dh_cur[t * d + j] = dpooled[j] / n as f64;
            }
        }

        for (lo, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let mut dg = vec![0.0; d];
            let mut db = vec![0.0; d];
            let dr2 = layer_norm_back(
                &dh_cur,
                &lc.ln2,
                self.slice(p, lo.ln2_g, d),
                n,
                d,
                &mut dg,
                &mut db,
            );
            add_assign(&mut grad[lo.ln2_g..][..d], &dg);
            add_assign(&mut grad[lo.ln2_b..][..d], &db);

            let mut dh1 = dr2.clone();
            let mut da = vec![0.0; n * ffn];
            let mut dw2 = vec![0.0; ffn * d];
            let mut db2 = vec![0.0; d];
            affine_back(
                &lc.a,
                self.slice(p, lo.w2, ffn * d),
                &dr2,
                n,
                ffn,
                d,
                &mut dw2,
                &mut db2,
                &mut da,
            );
            add_assign(&mut grad[lo.w2..][..ffn * d], &dw2);
            add_assign(&mut grad[lo.b2..][..d], &db2);
            let du: Vec<f64> = da
                .iter()
                .zip(&lc.u)
                .map(|(g, &z)| g * gelu_grad(z))
                .collect();
            let mut dw1 = vec![0.0; d * ffn];
            let mut db1 = vec![0.0; ffn];
            affine_back(
                &lc.h1,
                self.slice(p, lo.w1, d * ffn),
                &du,
                n,
                d,
                ffn,
                &mut dw1,
                &mut db1,
                &mut dh1,
            );
            add_assign(&mut grad[lo.w1..][..d * ffn], &dw1);
            add_assign(&mut grad[lo.b1..][..ffn], &db1);

            let mut dg = vec![0.0; d];
            let mut db = vec![0.0; d];
            let dr1 = layer_norm_back(
                &dh1,
                &lc.ln1,
                self.slice(p, lo.ln1_g, d),
                n,
                d,
                &mut dg,
                &mut db,
            );
            add_assign(&mut grad[lo.ln1_g..][..d], &dg);
            add_assign(&mut grad[lo.ln1_b..][..d], &db);

            let mut din = dr1.clone();
            let mut dctx = vec![0.0; n * d];
            let mut dw = vec![0.0; d * d];
            let mut dbv = vec![0.0; d];
            affine_back(
                &lc.ctx,
                self.slice(p, lo.wo, d * d),
                &dr1,
                n,
                d,
                d,
                &mut dw,
                &mut dbv,
                &mut dctx,
            );
            add_assign(&mut grad[lo.wo..][..d * d], &dw);
            add_assign(&mut grad[lo.bo..][..d], &dbv);

            let mut dq = vec![0.0; n * d];
            let mut dk = vec![0.0; n * d];
            let mut dv = vec![0.0; n * d];
            let mut da_row = vec![0.0; n];
            for hd in 0..heads {
                let off = hd * dh;
                for i in 0..n {
                    let arow = &lc.attn[(hd * n + i) * n..(hd * n + i + 1) * n];
                    let dci = &dctx[i * d + off..i * d + off + dh];
                    let mut dot = 0.0;
                    for j in 0..n {
                        let vj = &lc.v[j * d + off..j * d + off + dh];
                        let g: f64 = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                        da_row[j] = g;
                        dot += g * arow[j];
                        for (t, &c) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dci) {
                            *t += arow[j] * c;
                        }
                    }
                    for j in 0..n {
                        let ds = arow[j] * (da_row[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            dq[i * d + off + c] += ds * lc.k[j * d + off + c];
                            dk[j * d + off + c] += ds * lc.q[i * d + off + c];
                        }
                    }
                }
            }
            for (w, b, dproj) in [
                (lo.wq, lo.bq, &dq),
                (lo.wk, lo.bk, &dk),
                (lo.wv, lo.bv, &dv),
            ] {
                let mut dw = vec![0.0; d * d];
                let mut dbias = vec![0.0; d];
                affine_back(
                    &lc.input,
                    self.slice(p, w, d * d),
                    dproj,
                    n,
                    d,
                    d,
                    &mut dw,
                    &mut dbias,
                    &mut din,
                );
                add_assign(&mut grad[w..][..d * d], &dw);
                add_assign(&mut grad[b..][..d], &dbias);
            }
            dh_cur = din;
        }

        let mut dg = vec![0.0; d];
        let mut db = vec![0.0; d];
        let dx0 = layer_norm_back(
            &dh_cur,
            &cache.emb_ln,
            self.slice(p, self.emb_g, d),
            n,
            d,
            &mut dg,
            &mut db,
        );
        add_assign(&mut grad[self.emb_g..][..d], &dg);
        add_assign(&mut grad[self.emb_b..][..d], &db);
        for t in 0..n {
            let row = &dx0[t * d..(t + 1) * d];
            add_assign(
                &mut grad[self.tok + x.token_ids[t] as usize * d..][..d],
                row,
            );
            add_assign(
                &mut grad[self.seg + x.segment_ids[t] as usize * d..][..d],
                row,
            );
            add_assign(
                &mut grad[self.pos + x.position_ids[t] as usize * d..][..d],
                row,
            );
            add_assign(
                &mut grad[self.sal + x.saliency_bucket_ids[t] as usize * d..][..d],
                row,
            );
        }
    }
}
