//! Reverse-mode differentiation over 2-D `f64` matrices.
//!
//! A [`Tape`] records every operation eagerly together with its value.
//! [`Tape::backward`] walks the record in reverse and accumulates parameter
//! gradients into a [`Grads`]. Tapes are cheap to create; one tape per
//! problem per step is the intended usage.

use ndarray::{concatenate, s, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Grads, Mat, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Mat),
    Gelu(Var),
    Sigmoid(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    SoftmaxRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    RowDotHeads(Var, Var, usize),
    HeadScale(Var, Var, usize),
    BceLogitsSum(Var, Vec<f64>),
    SumAll(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

pub const LN_EPS: f64 = 1e-5;

pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
    rng: Option<ChaCha8Rng>,
}

impl<'a> Tape<'a> {
    /// Inference tape: dropout is the identity.
    pub fn new(store: &'a ParamStore) -> Self {
        Self { store, nodes: Vec::new(), params: vec![None; store.len()], rng: None }
    }

    /// Training tape: dropout draws masks from `rng`.
    pub fn training(store: &'a ParamStore, rng: ChaCha8Rng) -> Self {
        Self { rng: Some(rng), ..Self::new(store) }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn rows(&self, v: Var) -> usize {
        self.nodes[v.0].value.nrows()
    }

    pub fn cols(&self, v: Var) -> usize {
        self.nodes[v.0].value.ncols()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.params[id.0] {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param(id));
        self.params[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        self.push(value, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    /// Inverted dropout; identity on inference tapes or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if p <= 0.0 {
            return a;
        }
        let Some(rng) = self.rng.as_mut() else {
            return a;
        };
        let keep = 1.0 - p;
        let shape = self.nodes[a.0].value.dim();
        let mask = Mat::from_shape_simple_fn(shape, || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let value = self.value(a) * &mask;
        self.push(value, Op::MulConst(a, mask))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 × n`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        self.push(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("row counts agree");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("column counts agree");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), idx);
        self.push(value, Op::GatherRows(a, idx.to_vec()))
    }

    /// Per-head dot products of matching rows: `N × H, N × H -> N × heads`.
    pub fn row_dot_heads(&mut self, a: Var, b: Var, heads: usize) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, h) = av.dim();
        let dh = h / heads;
        let mut value = Mat::zeros((n, heads));
        for r in 0..n {
            for k in 0..heads {
                let mut acc = 0.0;
                for j in k * dh..(k + 1) * dh {
                    acc += av[[r, j]] * bv[[r, j]];
                }
                value[[r, k]] = acc;
            }
        }
        self.push(value, Op::RowDotHeads(a, b, heads))
    }

    /// Scales each head block of `v` (`N × H`) by the matching column of
    /// `w` (`N × heads`).
    pub fn head_scale(&mut self, w: Var, v: Var, heads: usize) -> Var {
        let (wv, vv) = (self.value(w), self.value(v));
        let (n, h) = vv.dim();
        let dh = h / heads;
        let mut value = Mat::zeros((n, h));
        for r in 0..n {
            for j in 0..h {
                value[[r, j]] = wv[[r, j / dh]] * vv[[r, j]];
            }
        }
        self.push(value, Op::HeadScale(w, v, heads))
    }

    /// Sum of binary cross-entropies of `sigmoid(logits)` against `targets`,
    /// as a `1 × 1` value. `logits` must be `n × 1`.
    pub fn bce_logits_sum(&mut self, logits: Var, targets: &[f64]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.len(), targets.len(), "one target per logit");
        let total: f64 = z.iter().zip(targets).map(|(&z, &t)| bce_with_logit(z, t)).sum();
        self.push(Mat::from_elem((1, 1), total), Op::BceLogitsSum(logits, targets.to_vec()))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Mat::from_elem((1, 1), total), Op::SumAll(a))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Back-propagates `seed · ∂out/∂θ` into `grads`. `out` must be `1 × 1`.
    pub fn backward(&self, out: Var, seed: f64, grads: &mut Grads) {
        let mut g: Vec<Option<Mat>> = (0..=out.0).map(|_| None).collect();
        g[out.0] = Some(Mat::from_elem(self.nodes[out.0].value.dim(), seed));
        for i in (0..=out.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => grads.accumulate(*id, &gi),
                Op::MatMul(a, b) => {
                    let ga = gi.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&gi);
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = gi.dot(self.value(*b));
                    let gb = gi.t().dot(self.value(*a));
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *b, gi.clone());
                    acc(&mut g, *a, gi);
                }
                Op::Sub(a, b) => {
                    acc(&mut g, *b, -&gi);
                    acc(&mut g, *a, gi);
                }
                Op::AddRow(a, r) => {
                    let gr = gi.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut g, *r, gr);
                    acc(&mut g, *a, gi);
                }
                Op::Scale(a, c) => acc(&mut g, *a, gi * *c),
                Op::MulConst(a, m) => acc(&mut g, *a, gi * m),
                Op::Gelu(a) => {
                    let d = self.value(*a).mapv(gelu_grad);
                    acc(&mut g, *a, gi * d);
                }
                Op::Sigmoid(a) => {
                    let d = node.value.mapv(|s| s * (1.0 - s));
                    acc(&mut g, *a, gi * d);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gamma_v = self.value(*gamma);
                    let gbeta = gi.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ggamma = (&gi * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &gi * gamma_v;
                    let n = xhat.ncols() as f64;
                    let mut gx = Mat::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dr = dxhat.row(r);
                        let xr = xhat.row(r);
                        let sum_d = dr.sum();
                        let sum_dx = dr.dot(&xr);
                        let k = inv_std[r] / n;
                        for c in 0..xhat.ncols() {
                            gx[[r, c]] = k * (n * dr[c] - sum_d - xr[c] * sum_dx);
                        }
                    }
                    acc(&mut g, *beta, gbeta);
                    acc(&mut g, *gamma, ggamma);
                    acc(&mut g, *x, gx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Mat::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot = gi.row(r).dot(&y.row(r));
                        for c in 0..y.ncols() {
                            ga[[r, c]] = y[[r, c]] * (gi[[r, c]] - dot);
                        }
                    }
                    acc(&mut g, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*start + gi.ncols()]).assign(&gi);
                    acc(&mut g, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.cols(p);
                        acc(&mut g, p, gi.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.rows(p);
                        acc(&mut g, p, gi.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Mat::zeros(self.value(*a).dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut row = ga.row_mut(src);
                        row += &gi.row(r);
                    }
                    acc(&mut g, *a, ga);
                }
                Op::RowDotHeads(a, b, heads) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, h) = av.dim();
                    let dh = h / heads;
                    let mut ga = Mat::zeros((n, h));
                    let mut gb = Mat::zeros((n, h));
                    for r in 0..n {
                        for j in 0..h {
                            let gk = gi[[r, j / dh]];
                            ga[[r, j]] = gk * bv[[r, j]];
                            gb[[r, j]] = gk * av[[r, j]];
                        }
                    }
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::HeadScale(w, v, heads) => {
                    let (wv, vv) = (self.value(*w), self.value(*v));
                    let (n, h) = vv.dim();
                    let dh = h / heads;
                    let mut gw = Mat::zeros((n, *heads));
                    let mut gv = Mat::zeros((n, h));
                    for r in 0..n {
                        for j in 0..h {
                            gw[[r, j / dh]] += gi[[r, j]] * vv[[r, j]];
                            gv[[r, j]] = gi[[r, j]] * wv[[r, j / dh]];
                        }
                    }
                    acc(&mut g, *w, gw);
                    acc(&mut g, *v, gv);
                }
                Op::BceLogitsSum(z, targets) => {
                    let seed = gi[[0, 0]];
                    let zv = self.value(*z);
                    let mut gz = Mat::zeros(zv.dim());
                    for (k, (&zk, &t)) in zv.iter().zip(targets).enumerate() {
                        gz[[k, 0]] = seed * (sigmoid(zk) - t);
                    }
                    acc(&mut g, *z, gz);
                }
                Op::SumAll(a) => {
                    let ga = Mat::from_elem(self.value(*a).dim(), gi[[0, 0]]);
                    acc(&mut g, *a, ga);
                }
            }
        }
    }
}

fn acc(g: &mut [Option<Mat>], v: Var, delta: Mat) {
    match &mut g[v.0] {
        Some(existing) => *existing += &delta,
        slot @ None => *slot = Some(delta),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `BCE(sigmoid(z), t)` computed without forming the probability.
pub fn bce_with_logit(z: f64, t: f64) -> f64 {
    // softplus(z) - t z, stable for large |z|
    z.max(0.0) - t * z + (-z.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Central differences of `f` w.r.t. every entry of every tensor.
    fn check(store: &ParamStore, f: impl Fn(&mut Tape) -> Var) -> f64 {
        let tape_store = store.clone();
        let mut tape = Tape::new(&tape_store);
        let out = f(&mut tape);
        let mut grads = Grads::new(store);
        tape.backward(out, 1.0, &mut grads);
        let mut worst: f64 = 0.0;
        for id in store.ids() {
            let mut num = Mat::zeros(store.get(id).dim());
            for idx in 0..num.len() {
                let eval = |delta: f64| {
                    let mut s = store.clone();
                    let m = s.get_mut(id);
                    let c = m.ncols();
                    m[[idx / c, idx % c]] += delta;
                    let mut t = Tape::new(&s);
                    let o = f(&mut t);
                    t.scalar(o)
                };
                let c = num.ncols();
                num[[idx / c, idx % c]] = (eval(1e-5) - eval(-1e-5)) / 2e-5;
            }
            let ana = grads.get(id).cloned().unwrap_or_else(|| Mat::zeros(num.dim()));
            let diff = (&ana - &num).mapv(|x| x * x).sum().sqrt();
            let scale = ana.mapv(|x| x * x).sum().sqrt().max(num.mapv(|x| x * x).sum().sqrt()).max(1e-12);
            worst = worst.max(diff / scale);
        }
        worst
    }

    fn store(seed: u64) -> (ParamStore, [ParamId; 6]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let a = s.normal("a", 3, 4, 1.0, &mut rng);
        let b = s.normal("b", 4, 4, 1.0, &mut rng);
        let g = s.normal("gamma", 1, 4, 1.0, &mut rng);
        let be = s.normal("beta", 1, 4, 1.0, &mut rng);
        let w = s.normal("w", 3, 2, 1.0, &mut rng);
        let z = s.normal("z", 3, 1, 1.0, &mut rng);
        (s, [a, b, g, be, w, z])
    }

    #[test]
    fn gradients_of_every_op() {
        let (s, [a, b, gamma, beta, w, z]) = store(3);
        let err = check(&s, |t| {
            let a = t.param(a);
            let b = t.param(b);
            let ab = t.matmul(a, b);
            let (gv, bv) = (t.param(gamma), t.param(beta));
            let ln = t.layer_norm(ab, gv, bv);
            let ge = t.gelu(ln);
            let sm = t.softmax_rows(ge);
            let mt = t.matmul_t(sm, a);
            let sl = t.slice_cols(sm, 1, 2);
            let wv = t.param(w);
            let hs = t.head_scale(wv, sm, 2);
            let rd = t.row_dot_heads(hs, a, 2);
            let cc = t.concat_cols(&[sl, rd, mt]);
            let g2 = t.gather_rows(cc, &[2, 0, 2]);
            let cr = t.concat_rows(&[g2, cc]);
            let sc = t.scale(cr, 0.7);
            let sg = t.sigmoid(sc);
            let sub = t.sub(sg, sc);
            let gv = t.param(gamma);
            let row = t.slice_cols(gv, 0, 1);
            let col = t.slice_cols(sub, 0, 1);
            let ar = t.add_row(col, row);
            let zz = t.param(z);
            let pair = t.concat_rows(&[ar, zz]);
            let bce = t.bce_logits_sum(pair, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
            let s2 = t.sum_all(sub);
            t.add(bce, s2)
        });
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn bce_logit_matches_probability_form() {
        for &(z, t) in &[(0.3, 1.0), (-2.0, 0.0), (5.0, 0.0), (-30.0, 1.0)] {
            let p: f64 = sigmoid(z);
            let direct = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
            assert!((bce_with_logit(z, t) - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn dropout_is_identity_at_inference() {
        let (s, [a, ..]) = store(1);
        let mut t = Tape::new(&s);
        let x = t.param(a);
        assert_eq!(t.dropout(x, 0.5), x);
        let mut tt = Tape::training(&s, ChaCha8Rng::seed_from_u64(0));
        let x = tt.param(a);
        let y = tt.dropout(x, 0.5);
        assert_ne!(x, y);
        assert!(tt.value(y).iter().zip(tt.value(x)).all(|(&d, &o)| d == 0.0 || (d - 2.0 * o).abs() < 1e-12));
    }
}
