//! Attention, feed-forward, and the four thought layers.
//!
//! Every function records onto a [`Tape`] and works on batches of row
//! vectors, so one call scores or combines many thoughts at once.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Mat, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

/// Two affine maps with a GELU between them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FfParams {
    pub inner: Affine,
    pub outer: Affine,
}

/// Pre-normalized multi-head attention. `ln_kv` normalizes keys and values
/// when they come from a different sequence than the queries; without it
/// `ln_q` is used for both.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnParams {
    pub ln_q: Norm,
    pub ln_kv: Option<Norm>,
    pub q: Affine,
    pub k: Affine,
    pub v: Affine,
    pub o: Affine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MergeParams {
    pub attn: AttnParams,
    /// `ℓ` applied to the summed attention rows.
    pub ln: Norm,
    /// `W` and `b`.
    pub proj: Affine,
    pub ff: FfParams,
}

/// Scorer `σ(Attn(FF(θ), K) W + b)` shared by the infer and answer layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoreHead {
    pub ff: FfParams,
    pub attn: AttnParams,
    pub out: Affine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerParams {
    /// Indexed by [`crate::expr::MergeOp`] order: add, mul.
    pub merge: [MergeParams; 2],
    /// Indexed by [`crate::expr::TransformOp`] order: neg, inv.
    pub transform: [FfParams; 2],
    pub infer: ScoreHead,
    pub answer: ScoreHead,
}

/// Registers parameters with Xavier-normal weights, zero biases and unit
/// layer-norm gains.
pub struct Init<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
}

impl<R: Rng> Init<'_, R> {
    pub fn norm(&mut self, name: &str, h: usize) -> Norm {
        Norm { gamma: self.store.ones(format!("{name}.gamma"), 1, h), beta: self.store.zeros(format!("{name}.beta"), 1, h) }
    }

    pub fn affine(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Affine {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        Affine {
            w: self.store.normal(format!("{name}.w"), fan_in, fan_out, std, self.rng),
            b: self.store.zeros(format!("{name}.b"), 1, fan_out),
        }
    }

    pub fn ff(&mut self, name: &str, h: usize, inner: usize) -> FfParams {
        FfParams { inner: self.affine(&format!("{name}.inner"), h, inner), outer: self.affine(&format!("{name}.outer"), inner, h) }
    }

    pub fn attn(&mut self, name: &str, h: usize, cross: bool) -> AttnParams {
        AttnParams {
            ln_q: self.norm(&format!("{name}.ln_q"), h),
            ln_kv: cross.then(|| self.norm(&format!("{name}.ln_kv"), h)),
            q: self.affine(&format!("{name}.q"), h, h),
            k: self.affine(&format!("{name}.k"), h, h),
            v: self.affine(&format!("{name}.v"), h, h),
            o: self.affine(&format!("{name}.o"), h, h),
        }
    }

    pub fn embedding(&mut self, name: &str, rows: usize, h: usize, std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("finite std");
        let m = Mat::from_shape_fn((rows, h), |_| dist.sample(self.rng));
        self.store.insert(name, m)
    }

    pub fn merge(&mut self, name: &str, h: usize, inner: usize) -> MergeParams {
        MergeParams {
            attn: self.attn(&format!("{name}.attn"), h, false),
            ln: self.norm(&format!("{name}.ln"), h),
            proj: self.affine(&format!("{name}.proj"), h, h),
            ff: self.ff(&format!("{name}.ff"), h, inner),
        }
    }

    pub fn score_head(&mut self, name: &str, h: usize, inner: usize) -> ScoreHead {
        ScoreHead {
            ff: self.ff(&format!("{name}.ff"), h, inner),
            attn: self.attn(&format!("{name}.attn"), h, true),
            out: self.affine(&format!("{name}.out"), h, 1),
        }
    }

    pub fn layers(&mut self, h: usize, inner: usize) -> LayerParams {
        LayerParams {
            merge: [self.merge("merge.add", h, inner), self.merge("merge.mul", h, inner)],
            transform: [self.ff("transform.neg", h, inner), self.ff("transform.inv", h, inner)],
            infer: self.score_head("infer", h, inner),
            answer: self.score_head("answer", h, inner),
        }
    }
}

/// Shape and regularization settings shared by the layer functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerShape {
    pub hidden: usize,
    pub heads: usize,
    pub dropout: f64,
}

pub fn affine(t: &mut Tape<'_>, p: Affine, x: Var) -> Var {
    let w = t.param(p.w);
    let b = t.param(p.b);
    let y = t.matmul(x, w);
    t.add_row(y, b)
}

pub fn norm(t: &mut Tape<'_>, p: Norm, x: Var) -> Var {
    let g = t.param(p.gamma);
    let b = t.param(p.beta);
    t.layer_norm(x, g, b)
}

pub fn feed_forward(t: &mut Tape<'_>, p: FfParams, dropout: f64, x: Var) -> Var {
    let h = affine(t, p.inner, x);
    let h = t.gelu(h);
    let h = t.dropout(h, dropout);
    affine(t, p.outer, h)
}

fn check_width(t: &Tape<'_>, v: Var, h: usize, what: &str) -> Result<()> {
    if t.cols(v) != h {
        return Err(Error::DimensionMismatch(format!("{what} has width {}, expected {h}", t.cols(v))));
    }
    Ok(())
}

pub struct Attention {
    /// `m × H`
    pub output: Var,
    /// Per-head `m × k` attention weights before dropout.
    pub weights: Vec<Var>,
}

/// Multi-head attention of `queries` over `keys` (self-attention when
/// `keys` is `None`).
pub fn attention(t: &mut Tape<'_>, p: &AttnParams, shape: LayerShape, queries: Var, keys: Option<Var>) -> Result<Attention> {
    let h = shape.hidden;
    check_width(t, queries, h, "queries")?;
    if let Some(k) = keys {
        check_width(t, k, h, "keys")?;
        if t.rows(k) == 0 {
            return Err(Error::EmptyPremise);
        }
    }
    if t.rows(queries) == 0 {
        let output = t.constant(Mat::zeros((0, h)));
        return Ok(Attention { output, weights: Vec::new() });
    }
    let qn = norm(t, p.ln_q, queries);
    let kvn = match keys {
        None => qn,
        Some(k) => norm(t, p.ln_kv.unwrap_or(p.ln_q), k),
    };
    let q = affine(t, p.q, qn);
    let k = affine(t, p.k, kvn);
    let v = affine(t, p.v, kvn);
    let dh = h / shape.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(shape.heads);
    let mut weights = Vec::with_capacity(shape.heads);
    for i in 0..shape.heads {
        let qh = t.slice_cols(q, i * dh, dh);
        let kh = t.slice_cols(k, i * dh, dh);
        let vh = t.slice_cols(v, i * dh, dh);
        let s = t.matmul_t(qh, kh);
        let s = t.scale(s, scale);
        let a = t.softmax_rows(s);
        weights.push(a);
        let a = t.dropout(a, shape.dropout);
        heads.push(t.matmul(a, vh));
    }
    let o = t.concat_cols(&heads);
    Ok(Attention { output: affine(t, p.o, o), weights })
}

/// Batched merge: row `r` of the result combines row `r` of `a` and `b`.
///
/// The two-element self-attention is evaluated per row pair with the
/// softmax written as a sigmoid of score differences. Each output row is
/// computed by the same operation sequence whichever operand comes first,
/// and the two rows are added in an order-free way, so swapping `a` and `b`
/// reproduces the result bit for bit.
pub fn merge(t: &mut Tape<'_>, p: &MergeParams, shape: LayerShape, a: Var, b: Var) -> Result<Var> {
    check_width(t, a, shape.hidden, "left operand")?;
    check_width(t, b, shape.hidden, "right operand")?;
    if t.rows(a) != t.rows(b) {
        return Err(Error::DimensionMismatch(format!("{} left rows vs {} right rows", t.rows(a), t.rows(b))));
    }
    let heads = shape.heads;
    let la = norm(t, p.attn.ln_q, a);
    let lb = norm(t, p.attn.ln_q, b);
    let (qa, ka, va) = (affine(t, p.attn.q, la), affine(t, p.attn.k, la), affine(t, p.attn.v, la));
    let (qb, kb, vb) = (affine(t, p.attn.q, lb), affine(t, p.attn.k, lb), affine(t, p.attn.v, lb));
    let scale = 1.0 / ((shape.hidden / heads) as f64).sqrt();
    let mut score = |x: Var, y: Var| {
        let s = t.row_dot_heads(x, y, heads);
        t.scale(s, scale)
    };
    let (s_aa, s_ab, s_ba, s_bb) = (score(qa, ka), score(qa, kb), score(qb, ka), score(qb, kb));
    let mut pair_weight = |x: Var, y: Var| {
        let d = t.sub(x, y);
        let w = t.sigmoid(d);
        t.dropout(w, shape.dropout)
    };
    let (w_aa, w_ab) = (pair_weight(s_aa, s_ab), pair_weight(s_ab, s_aa));
    let (w_bb, w_ba) = (pair_weight(s_bb, s_ba), pair_weight(s_ba, s_bb));
    let row = |t: &mut Tape<'_>, w_self: Var, v_self: Var, w_other: Var, v_other: Var| {
        let x = t.head_scale(w_self, v_self, heads);
        let y = t.head_scale(w_other, v_other, heads);
        let o = t.add(x, y);
        affine(t, p.attn.o, o)
    };
    let out_a = row(t, w_aa, va, w_ab, vb);
    let out_b = row(t, w_bb, vb, w_ba, va);
    let summed = t.add(out_a, out_b);
    let l = norm(t, p.ln, summed);
    let l = affine(t, p.proj, l);
    let base = t.add(a, b);
    let pre = t.add(base, l);
    Ok(feed_forward(t, p.ff, shape.dropout, pre))
}

pub fn transform(t: &mut Tape<'_>, p: &FfParams, shape: LayerShape, a: Var) -> Result<Var> {
    check_width(t, a, shape.hidden, "operand")?;
    Ok(feed_forward(t, *p, shape.dropout, a))
}

pub struct Scores {
    /// `m × 1` pre-sigmoid logits.
    pub logits: Var,
    pub attention: Attention,
}

/// Pre-LN cross-attention sublayer with its residual: `q + Attn(LN q, LN k)`.
pub fn cross_attend(t: &mut Tape<'_>, p: &AttnParams, shape: LayerShape, queries: Var, keys: Var) -> Result<Attention> {
    let a = attention(t, p, shape, queries, Some(keys))?;
    if t.rows(queries) == 0 {
        return Ok(a);
    }
    let o = t.dropout(a.output, shape.dropout);
    let output = t.add(queries, o);
    Ok(Attention { output, weights: a.weights })
}

/// Logits of `σ(Attn(FF(θ), keys) W + b)` for every row of `thoughts`.
pub fn score(t: &mut Tape<'_>, p: &ScoreHead, shape: LayerShape, keys: Var, thoughts: Var) -> Result<Scores> {
    check_width(t, thoughts, shape.hidden, "thoughts")?;
    let f = feed_forward(t, p.ff, shape.dropout, thoughts);
    let attention = cross_attend(t, &p.attn, shape, f, keys)?;
    let logits = affine(t, p.out, attention.output);
    Ok(Scores { logits, attention })
}

/// `P ∥ Attn(FF(accepted), P)` with the infer layer's parameters.
pub fn premise_update(t: &mut Tape<'_>, infer: &ScoreHead, shape: LayerShape, premise: Var, accepted: Var) -> Result<Var> {
    check_width(t, accepted, shape.hidden, "accepted thoughts")?;
    if t.rows(accepted) == 0 {
        return Ok(premise);
    }
    let f = feed_forward(t, infer.ff, shape.dropout, accepted);
    let a = cross_attend(t, &infer.attn, shape, f, premise)?;
    Ok(t.concat_rows(&[premise, a.output]))
}
