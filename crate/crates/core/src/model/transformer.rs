//! Pre-norm transformer stack shared by the decoder, the full compressor and
//! the light encoder, with an explicit backward pass.
//!
//! Block: `x += Attn(LN1(x)); x += MLP(LN2(x))`, final `LN_f`, optional LM
//! head without bias. Learned absolute positions, tanh-GELU, eps = 1e-5.

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::float::{gemm, Float, MatRef};

use super::mixed::Item;
use super::params::{Group, Init, ParameterStore};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackDims {
    pub n_layers: usize,
    pub dim: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub max_len: usize,
    pub causal: bool,
    pub head: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    wqkv: usize,
    bqkv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Offsets of one stack's tensors inside a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct StackLayout {
    pub dims: StackDims,
    pub(crate) tok_emb: usize,
    pub(crate) pos_emb: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) lnf_g: usize,
    pub(crate) lnf_b: usize,
    pub(crate) head: Option<usize>,
}

impl StackLayout {
    pub fn register<T: Float>(
        store: &mut ParameterStore<T>,
        prefix: &str,
        dims: StackDims,
        group: Group,
    ) -> Self {
        let d = dims.dim;
        let f = dims.d_ff;
        let mut add = |name: &str, shape: &[usize], init: Init| {
            store.add(format!("{prefix}.{name}"), shape, group, init)
        };
        let tok_emb = add("tok_emb", &[dims.vocab, d], Init::Normal);
        let pos_emb = add("pos_emb", &[dims.max_len, d], Init::Normal);
        let layers = (0..dims.n_layers)
            .map(|l| LayerOffsets {
                ln1_g: add(&format!("l{l}.ln1.g"), &[d], Init::Ones),
                ln1_b: add(&format!("l{l}.ln1.b"), &[d], Init::Zeros),
                wqkv: add(&format!("l{l}.attn.wqkv"), &[d, 3 * d], Init::Normal),
                bqkv: add(&format!("l{l}.attn.bqkv"), &[3 * d], Init::Zeros),
                wo: add(&format!("l{l}.attn.wo"), &[d, d], Init::Normal),
                bo: add(&format!("l{l}.attn.bo"), &[d], Init::Zeros),
                ln2_g: add(&format!("l{l}.ln2.g"), &[d], Init::Ones),
                ln2_b: add(&format!("l{l}.ln2.b"), &[d], Init::Zeros),
                w1: add(&format!("l{l}.mlp.w1"), &[d, f], Init::Normal),
                b1: add(&format!("l{l}.mlp.b1"), &[f], Init::Zeros),
                w2: add(&format!("l{l}.mlp.w2"), &[f, d], Init::Normal),
                b2: add(&format!("l{l}.mlp.b2"), &[d], Init::Zeros),
            })
            .collect();
        let lnf_g = add("lnf.g", &[d], Init::Ones);
        let lnf_b = add("lnf.b", &[d], Init::Zeros);
        let head = dims
            .head
            .then(|| add("head.w", &[d, dims.vocab], Init::Normal));
        Self {
            dims,
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            head,
        }
    }
}

struct LayerCache<T> {
    x_in: Vec<T>,
    ln1: NormStats<T>,
    h1: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    att: Vec<T>,
    x_mid: Vec<T>,
    ln2: NormStats<T>,
    h2: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
}

struct NormStats<T> {
    mean: Vec<T>,
    rstd: Vec<T>,
}

/// Activations of one forward pass, kept for backward.
pub struct StackCache<T> {
    n: usize,
    tokens: Vec<Option<TokenId>>,
    layers: Vec<LayerCache<T>>,
    x_final: Vec<T>,
    lnf: NormStats<T>,
    /// Final normalized hidden states, `n x dim`.
    pub y: Vec<T>,
}

impl<T: Float> StackCache<T> {
    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    pub fn hidden(&self, pos: usize, dim: usize) -> &[T] {
        &self.y[pos * dim..(pos + 1) * dim]
    }
}

fn row<T>(p: &[T], off: usize, len: usize) -> &[T] {
    &p[off..off + len]
}

/// Input embeddings: table rows (or injected vectors) plus positions.
fn embed<T: Float>(lay: &StackLayout, p: &[T], items: &[Item<T>]) -> Result<(Vec<T>, Vec<Option<TokenId>>)> {
    let d = lay.dims.dim;
    if items.len() > lay.dims.max_len {
        return Err(Error::LengthOverflow {
            len: items.len(),
            max: lay.dims.max_len,
        });
    }
    let mut x = vec![T::zero(); items.len() * d];
    let mut toks = Vec::with_capacity(items.len());
    for (t, item) in items.iter().enumerate() {
        let dst = &mut x[t * d..(t + 1) * d];
        match item {
            Item::Token(id) => {
                if *id as usize >= lay.dims.vocab {
                    return Err(Error::Invalid(format!(
                        "token id {id} outside vocabulary of {}",
                        lay.dims.vocab
                    )));
                }
                dst.copy_from_slice(row(p, lay.tok_emb + *id as usize * d, d));
                toks.push(Some(*id));
            }
            Item::Vector(v) => {
                if v.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: v.len(),
                    });
                }
                dst.copy_from_slice(v);
                toks.push(None);
            }
        }
        for (o, &pe) in dst.iter_mut().zip(row(p, lay.pos_emb + t * d, d)) {
            *o += pe;
        }
    }
    Ok((x, toks))
}

fn layer_norm<T: Float>(x: &[T], n: usize, d: usize, g: &[T], b: &[T]) -> (Vec<T>, NormStats<T>) {
    let mut y = vec![T::zero(); n * d];
    let mut mean = Vec::with_capacity(n);
    let mut rstd = Vec::with_capacity(n);
    let inv_d = T::one() / T::of(d as f64);
    for i in 0..n {
        let xr = &x[i * d..(i + 1) * d];
        let mu = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
        let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
        for j in 0..d {
            y[i * d + j] = (xr[j] - mu) * rs * g[j] + b[j];
        }
        mean.push(mu);
        rstd.push(rs);
    }
    (y, NormStats { mean, rstd })
}

/// Returns dx and accumulates dgain/dbias.
fn layer_norm_back<T: Float>(
    x: &[T],
    st: &NormStats<T>,
    n: usize,
    d: usize,
    g: &[T],
    dy: &[T],
    dg: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); n * d];
    let inv_d = T::one() / T::of(d as f64);
    let mut xhat = vec![T::zero(); d];
    let mut dxhat = vec![T::zero(); d];
    for i in 0..n {
        let (mu, rs) = (st.mean[i], st.rstd[i]);
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for j in 0..d {
            xhat[j] = (x[i * d + j] - mu) * rs;
            let gy = dy[i * d + j];
            dg[j] += gy * xhat[j];
            db[j] += gy;
            dxhat[j] = gy * g[j];
            sum_dxhat += dxhat[j];
            sum_dxhat_xhat += dxhat[j] * xhat[j];
        }
        for j in 0..d {
            dx[i * d + j] = rs * (dxhat[j] - sum_dxhat * inv_d - xhat[j] * sum_dxhat_xhat * inv_d);
        }
    }
    dx
}

/// `x[n x din] * w[din x dout] + b`.
fn linear<T: Float>(x: &[T], n: usize, din: usize, w: &[T], b: &[T], dout: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(n * dout);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    gemm(n, dout, din, T::one(), MatRef::new(x, din), MatRef::new(w, dout), T::one(), &mut y, dout);
    y
}

/// Accumulates dW, db and returns dx.
#[allow(clippy::too_many_arguments)]
fn linear_back<T: Float>(
    x: &[T],
    n: usize,
    din: usize,
    w: &[T],
    dout: usize,
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    gemm(din, dout, n, T::one(), MatRef::t(x, din), MatRef::new(dy, dout), T::one(), dw, dout);
    for i in 0..n {
        for (acc, &v) in db.iter_mut().zip(&dy[i * dout..(i + 1) * dout]) {
            *acc += v;
        }
    }
    let mut dx = vec![T::zero(); n * din];
    gemm(n, din, dout, T::one(), MatRef::new(dy, dout), MatRef::t(w, dout), T::zero(), &mut dx, din);
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Float>(u: T) -> T {
    let t = (T::of(GELU_C) * (u + T::of(GELU_A) * u * u * u)).tanh();
    T::of(0.5) * u * (T::one() + t)
}

fn gelu_grad<T: Float>(u: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let t = (c * (u + a * u * u * u)).tanh();
    T::of(0.5) * (T::one() + t) + T::of(0.5) * u * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * u * u)
}

fn softmax_row<T: Float>(r: &mut [T]) {
    let m = r.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in r.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in r.iter_mut() {
        *v /= s;
    }
}

fn attention<T: Float>(qkv: &[T], n: usize, d: usize, heads: usize, causal: bool) -> (Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut probs = vec![T::zero(); heads * n * n];
    let mut att = vec![T::zero(); n * d];
    for h in 0..heads {
        let p = &mut probs[h * n * n..(h + 1) * n * n];
        let q = &qkv[h * dh..];
        let k = &qkv[d + h * dh..];
        let v = &qkv[2 * d + h * dh..];
        gemm(n, n, dh, scale, MatRef::new(q, 3 * d), MatRef::t(k, 3 * d), T::zero(), p, n);
        for i in 0..n {
            let r = &mut p[i * n..(i + 1) * n];
            if causal {
                for x in &mut r[i + 1..] {
                    *x = T::neg_infinity();
                }
            }
            softmax_row(r);
        }
        gemm(n, dh, n, T::one(), MatRef::new(p, n), MatRef::new(v, 3 * d), T::zero(), &mut att[h * dh..], d);
    }
    (probs, att)
}

fn attention_back<T: Float>(qkv: &[T], probs: &[T], datt: &[T], n: usize, d: usize, heads: usize) -> Vec<T> {
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut dqkv = vec![T::zero(); n * 3 * d];
    let mut dp = vec![T::zero(); n * n];
    for h in 0..heads {
        let p = &probs[h * n * n..(h + 1) * n * n];
        let q = &qkv[h * dh..];
        let k = &qkv[d + h * dh..];
        let v = &qkv[2 * d + h * dh..];
        let da = &datt[h * dh..];
        gemm(n, n, dh, T::one(), MatRef::new(da, d), MatRef::t(v, 3 * d), T::zero(), &mut dp, n);
        gemm(n, dh, n, T::one(), MatRef::t(p, n), MatRef::new(da, d), T::one(), &mut dqkv[2 * d + h * dh..], 3 * d);
        for i in 0..n {
            let pr = &p[i * n..(i + 1) * n];
            let dr = &mut dp[i * n..(i + 1) * n];
            let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
            for (x, &pv) in dr.iter_mut().zip(pr) {
                *x = pv * (*x - dot);
            }
        }
        gemm(n, dh, n, scale, MatRef::new(&dp, n), MatRef::new(k, 3 * d), T::one(), &mut dqkv[h * dh..], 3 * d);
        gemm(n, dh, n, scale, MatRef::t(&dp, n), MatRef::new(q, 3 * d), T::one(), &mut dqkv[d + h * dh..], 3 * d);
    }
    dqkv
}

/// Runs the stack over `items`, keeping every activation needed by
/// [`backward`].
pub fn forward<T: Float>(lay: &StackLayout, p: &[T], items: &[Item<T>]) -> Result<StackCache<T>> {
    let StackDims {
        dim: d,
        n_heads,
        d_ff,
        causal,
        ..
    } = lay.dims;
    let n = items.len();
    let (mut x, tokens) = embed(lay, p, items)?;
    let mut layers = Vec::with_capacity(lay.layers.len());
    for lo in &lay.layers {
        let x_in = x.clone();
        let (h1, ln1) = layer_norm(&x, n, d, row(p, lo.ln1_g, d), row(p, lo.ln1_b, d));
        let qkv = linear(&h1, n, d, row(p, lo.wqkv, d * 3 * d), row(p, lo.bqkv, 3 * d), 3 * d);
        let (probs, att) = attention(&qkv, n, d, n_heads, causal);
        let o = linear(&att, n, d, row(p, lo.wo, d * d), row(p, lo.bo, d), d);
        for (a, b) in x.iter_mut().zip(&o) {
            *a += *b;
        }
        let x_mid = x.clone();
        let (h2, ln2) = layer_norm(&x, n, d, row(p, lo.ln2_g, d), row(p, lo.ln2_b, d));
        let u = linear(&h2, n, d, row(p, lo.w1, d * d_ff), row(p, lo.b1, d_ff), d_ff);
        let g: Vec<T> = u.iter().map(|&v| gelu(v)).collect();
        let m = linear(&g, n, d_ff, row(p, lo.w2, d_ff * d), row(p, lo.b2, d), d);
        for (a, b) in x.iter_mut().zip(&m) {
            *a += *b;
        }
        layers.push(LayerCache {
            x_in,
            ln1,
            h1,
            qkv,
            probs,
            att,
            x_mid,
            ln2,
            h2,
            u,
            g,
        });
    }
    let (y, lnf) = layer_norm(&x, n, d, row(p, lay.lnf_g, d), row(p, lay.lnf_b, d));
    Ok(StackCache {
        n,
        tokens,
        layers,
        x_final: x,
        lnf,
        y,
    })
}

/// LM-head logits (`positions.len() x vocab`) at the given positions.
pub fn logits_at<T: Float>(lay: &StackLayout, p: &[T], cache: &StackCache<T>, positions: &[usize]) -> Vec<T> {
    let d = lay.dims.dim;
    let v = lay.dims.vocab;
    let head = lay.head.expect("stack has no LM head");
    let mut rows = Vec::with_capacity(positions.len() * d);
    for &t in positions {
        rows.extend_from_slice(cache.hidden(t, d));
    }
    let mut out = vec![T::zero(); positions.len() * v];
    gemm(positions.len(), v, d, T::one(), MatRef::new(&rows, d), MatRef::new(row(p, head, d * v), v), T::zero(), &mut out, v);
    out
}

/// Backpropagates LM-head gradients into `dy` (gradient w.r.t. the final
/// hidden states) and the head weight gradient.
pub fn head_backward<T: Float>(
    lay: &StackLayout,
    p: &[T],
    cache: &StackCache<T>,
    positions: &[usize],
    dlogits: &[T],
    dy: &mut [T],
    grads: &mut [T],
) {
    let d = lay.dims.dim;
    let v = lay.dims.vocab;
    let head = lay.head.expect("stack has no LM head");
    let mut rows = Vec::with_capacity(positions.len() * d);
    for &t in positions {
        rows.extend_from_slice(cache.hidden(t, d));
    }
    let np = positions.len();
    gemm(d, v, np, T::one(), MatRef::t(&rows, d), MatRef::new(dlogits, v), T::one(), &mut grads[head..head + d * v], v);
    let mut drows = vec![T::zero(); np * d];
    gemm(np, d, v, T::one(), MatRef::new(dlogits, v), MatRef::t(row(p, head, d * v), v), T::zero(), &mut drows, d);
    for (i, &t) in positions.iter().enumerate() {
        for (a, &b) in dy[t * d..(t + 1) * d].iter_mut().zip(&drows[i * d..(i + 1) * d]) {
            *a += b;
        }
    }
}

/// Backward from `dy` (gradient w.r.t. final hidden states, `n x dim`).
/// Accumulates parameter gradients into `grads` and returns the gradient
/// w.r.t. each input position's vector (meaningful for injected vectors).
pub fn backward<T: Float>(lay: &StackLayout, p: &[T], cache: &StackCache<T>, dy: &[T], grads: &mut [T]) -> Vec<T> {
    let StackDims {
        dim: d,
        n_heads,
        d_ff,
        ..
    } = lay.dims;
    let n = cache.n;

    let mut dx = {
        let (dg, db) = two_mut(grads, lay.lnf_g, lay.lnf_b, d);
        layer_norm_back(&cache.x_final, &cache.lnf, n, d, row(p, lay.lnf_g, d), dy, dg, db)
    };

    for (lo, lc) in lay.layers.iter().zip(&cache.layers).rev() {
        // MLP branch
        let dg_act = {
            let (dw, db) = two_mut(grads, lo.w2, lo.b2, 0);
            let (dw, db) = (&mut dw[..d_ff * d], &mut db[..d]);
            linear_back(&lc.g, n, d_ff, row(p, lo.w2, d_ff * d), d, &dx, dw, db)
        };
        let du: Vec<T> = dg_act.iter().zip(&lc.u).map(|(&g, &u)| g * gelu_grad(u)).collect();
        let dh2 = {
            let (dw, db) = two_mut(grads, lo.w1, lo.b1, 0);
            let (dw, db) = (&mut dw[..d * d_ff], &mut db[..d_ff]);
            linear_back(&lc.h2, n, d, row(p, lo.w1, d * d_ff), d_ff, &du, dw, db)
        };
        let dmid = {
            let (dg, db) = two_mut(grads, lo.ln2_g, lo.ln2_b, d);
            layer_norm_back(&lc.x_mid, &lc.ln2, n, d, row(p, lo.ln2_g, d), &dh2, dg, db)
        };
        for (a, b) in dx.iter_mut().zip(&dmid) {
            *a += *b;
        }

        // attention branch
        let datt = {
            let (dw, db) = two_mut(grads, lo.wo, lo.bo, 0);
            let (dw, db) = (&mut dw[..d * d], &mut db[..d]);
            linear_back(&lc.att, n, d, row(p, lo.wo, d * d), d, &dx, dw, db)
        };
        let dqkv = attention_back(&lc.qkv, &lc.probs, &datt, n, d, n_heads);
        let dh1 = {
            let (dw, db) = two_mut(grads, lo.wqkv, lo.bqkv, 0);
            let (dw, db) = (&mut dw[..d * 3 * d], &mut db[..3 * d]);
            linear_back(&lc.h1, n, d, row(p, lo.wqkv, d * 3 * d), 3 * d, &dqkv, dw, db)
        };
        let din = {
            let (dg, db) = two_mut(grads, lo.ln1_g, lo.ln1_b, d);
            layer_norm_back(&lc.x_in, &lc.ln1, n, d, row(p, lo.ln1_g, d), &dh1, dg, db)
        };
        for (a, b) in dx.iter_mut().zip(&din) {
            *a += *b;
        }
    }

    for t in 0..n {
        let g = &dx[t * d..(t + 1) * d];
        for (a, &b) in grads[lay.pos_emb + t * d..lay.pos_emb + (t + 1) * d].iter_mut().zip(g) {
            *a += b;
        }
        if let Some(id) = cache.tokens[t] {
            let off = lay.tok_emb + id as usize * d;
            for (a, &b) in grads[off..off + d].iter_mut().zip(g) {
                *a += b;
            }
        }
    }
    dx
}

/// Two disjoint mutable views starting at offsets `a < b`. With `len > 0`
/// both views are `len` long; with `len == 0` the first runs up to `b` and
/// the second to the end of the buffer.
fn two_mut<T>(buf: &mut [T], a: usize, b: usize, len: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b);
    let (lo, hi) = buf.split_at_mut(b);
    if len > 0 {
        (&mut lo[a..a + len], &mut hi[..len])
    } else {
        (&mut lo[a..], hi)
    }
}

/// Keys and values of every processed position, per layer.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    len: usize,
}

impl<T: Float> KvCache<T> {
    pub fn from_forward(lay: &StackLayout, cache: &StackCache<T>) -> Self {
        let d = lay.dims.dim;
        let n = cache.n;
        let mut k = Vec::with_capacity(lay.layers.len());
        let mut v = Vec::with_capacity(lay.layers.len());
        for lc in &cache.layers {
            let mut kl = Vec::with_capacity((n + 16) * d);
            let mut vl = Vec::with_capacity((n + 16) * d);
            for t in 0..n {
                let r = &lc.qkv[t * 3 * d..(t + 1) * 3 * d];
                kl.extend_from_slice(&r[d..2 * d]);
                vl.extend_from_slice(&r[2 * d..]);
            }
            k.push(kl);
            v.push(vl);
        }
        Self { k, v, len: n }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Processes one new position against the cache; returns its final hidden state.
pub fn decode_step<T: Float>(lay: &StackLayout, p: &[T], kv: &mut KvCache<T>, item: &Item<T>) -> Result<Vec<T>> {
    let StackDims {
        dim: d,
        n_heads,
        d_ff,
        causal,
        max_len,
        ..
    } = lay.dims;
    assert!(causal, "incremental decoding needs a causal stack");
    let t = kv.len;
    if t + 1 > max_len {
        return Err(Error::LengthOverflow { len: t + 1, max: max_len });
    }
    let mut x = match item {
        Item::Token(id) => {
            if *id as usize >= lay.dims.vocab {
                return Err(Error::Invalid(format!("token id {id} outside vocabulary")));
            }
            row(p, lay.tok_emb + *id as usize * d, d).to_vec()
        }
        Item::Vector(v) => {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: v.len() });
            }
            v.clone()
        }
    };
    for (o, &pe) in x.iter_mut().zip(row(p, lay.pos_emb + t * d, d)) {
        *o += pe;
    }
    let dh = d / n_heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut scores = vec![T::zero(); t + 1];
    for (l, lo) in lay.layers.iter().enumerate() {
        let (h1, _) = layer_norm(&x, 1, d, row(p, lo.ln1_g, d), row(p, lo.ln1_b, d));
        let qkv = linear(&h1, 1, d, row(p, lo.wqkv, d * 3 * d), row(p, lo.bqkv, 3 * d), 3 * d);
        kv.k[l].extend_from_slice(&qkv[d..2 * d]);
        kv.v[l].extend_from_slice(&qkv[2 * d..]);
        let (ks, vs) = (&kv.k[l], &kv.v[l]);
        let mut att = vec![T::zero(); d];
        for h in 0..n_heads {
            let q = &qkv[h * dh..(h + 1) * dh];
            for (j, s) in scores.iter_mut().enumerate() {
                let k = &ks[j * d + h * dh..j * d + (h + 1) * dh];
                *s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
            }
            softmax_row(&mut scores);
            let out = &mut att[h * dh..(h + 1) * dh];
            for (j, &pj) in scores.iter().enumerate() {
                let v = &vs[j * d + h * dh..j * d + (h + 1) * dh];
                for (o, &vv) in out.iter_mut().zip(v) {
                    *o += pj * vv;
                }
            }
        }
        let o = linear(&att, 1, d, row(p, lo.wo, d * d), row(p, lo.bo, d), d);
        for (a, b) in x.iter_mut().zip(&o) {
            *a += *b;
        }
        let (h2, _) = layer_norm(&x, 1, d, row(p, lo.ln2_g, d), row(p, lo.ln2_b, d));
        let u = linear(&h2, 1, d, row(p, lo.w1, d * d_ff), row(p, lo.b1, d_ff), d_ff);
        let g: Vec<T> = u.iter().map(|&v| gelu(v)).collect();
        let m = linear(&g, 1, d_ff, row(p, lo.w2, d_ff * d), row(p, lo.b2, d), d);
        for (a, b) in x.iter_mut().zip(&m) {
            *a += *b;
        }
    }
    kv.len += 1;
    let (y, _) = layer_norm(&x, 1, d, row(p, lay.lnf_g, d), row(p, lay.lnf_b, d));
    Ok(y)
}

/// Head logits for a single hidden state.
pub fn head_logits<T: Float>(lay: &StackLayout, p: &[T], y: &[T]) -> Vec<T> {
    let d = lay.dims.dim;
    let v = lay.dims.vocab;
    let head = lay.head.expect("stack has no LM head");
    let mut out = vec![T::zero(); v];
    gemm(1, v, d, T::one(), MatRef::new(y, d), MatRef::new(row(p, head, d * v), v), T::zero(), &mut out, v);
    out
}
