use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, AttnParams, FfParams, ScoreHead};
use super::*;
use crate::expr::{Expr, MergeOp, TransformOp};
use crate::tensor::{gradient_check, sigmoid, worst, Mat, ParamId, Var, LN_EPS};

pub(crate) fn small_model(seed: u64) -> Model {
    let cfg = ModelConfig { hidden: 8, heads: 2, layers: 1, max_len: 64, dropout: 0.0, ..ModelConfig::default() };
    let mut m = Model::new(cfg, Vocab::specials(), ConstantVocabulary::new(), seed).unwrap();
    jitter(&mut m, seed);
    m
}

/// Perturbs every tensor so biases and norm parameters are not trivial.
pub(crate) fn jitter(m: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ids: Vec<ParamId> = m.store.ids().collect();
    for id in ids {
        m.store.get_mut(id).mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
}

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_shape_fn((r, c), |_| rng.random_range(-1.5..1.5))
}

// Reference forward pass written directly over matrices.

fn ref_ln(m: &Model, g: ParamId, b: ParamId, x: &Mat) -> Mat {
    let (g, b) = (m.store.get(g), m.store.get(b));
    let mut out = x.clone();
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        for j in 0..row.len() {
            out[[i, j]] = (row[j] - mean) / (var + LN_EPS).sqrt() * g[[0, j]] + b[[0, j]];
        }
    }
    out
}

fn ref_affine(m: &Model, p: layers::Affine, x: &Mat) -> Mat {
    let w = m.store.get(p.w);
    let b = m.store.get(p.b);
    let mut out = Mat::zeros((x.nrows(), w.ncols()));
    for i in 0..x.nrows() {
        for j in 0..w.ncols() {
            let mut acc = b[[0, j]];
            for k in 0..w.nrows() {
                acc += x[[i, k]] * w[[k, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

fn ref_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn ref_ff(m: &Model, p: FfParams, x: &Mat) -> Mat {
    let h = ref_affine(m, p.inner, x).mapv(ref_gelu);
    ref_affine(m, p.outer, &h)
}

fn ref_attention(m: &Model, p: &AttnParams, q: &Mat, kv: &Mat) -> Mat {
    let heads = m.config.heads;
    let h = m.config.hidden;
    let dh = h / heads;
    let qn = ref_ln(m, p.ln_q.gamma, p.ln_q.beta, q);
    let kn_params = p.ln_kv.unwrap_or(p.ln_q);
    let kvn = ref_ln(m, kn_params.gamma, kn_params.beta, kv);
    let (qq, kk, vv) = (ref_affine(m, p.q, &qn), ref_affine(m, p.k, &kvn), ref_affine(m, p.v, &kvn));
    let mut concat = Mat::zeros((q.nrows(), h));
    for hd in 0..heads {
        for i in 0..q.nrows() {
            let scores: Vec<f64> = (0..kv.nrows())
                .map(|j| (0..dh).map(|d| qq[[i, hd * dh + d]] * kk[[j, hd * dh + d]]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for d in 0..dh {
                concat[[i, hd * dh + d]] = (0..kv.nrows()).map(|j| e[j] / z * vv[[j, hd * dh + d]]).sum();
            }
        }
    }
    ref_affine(m, p.o, &concat)
}

fn ref_score(m: &Model, head: &ScoreHead, keys: &Mat, x: &Mat) -> Vec<f64> {
    let f = ref_ff(m, head.ff, x);
    let a = &f + &ref_attention(m, &head.attn, &f, keys);
    ref_affine(m, head.out, &a).iter().map(|&z| sigmoid(z)).collect()
}

fn ref_merge(m: &Model, p: &layers::MergeParams, a: &Mat, b: &Mat) -> Mat {
    let pair = ndarray::concatenate(Axis(0), &[a.view(), b.view()]).unwrap();
    let sa = ref_attention(m, &p.attn, &pair, &pair);
    let summed = &sa.row(0) + &sa.row(1);
    let summed = summed.insert_axis(Axis(0)).to_owned();
    let l = ref_affine(m, p.proj, &ref_ln(m, p.ln.gamma, p.ln.beta, &summed));
    ref_ff(m, p.ff, &(a + b + l))
}

fn assert_close(a: &Mat, b: &Mat, tol: f64) {
    assert_eq!(a.dim(), b.dim());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
}

#[test]
fn attention_matches_reference() {
    let m = small_model(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (q, kv) = (random_mat(&mut rng, 3, 8), random_mat(&mut rng, 5, 8));
    let mut t = m.tape();
    let (vq, vk) = (t.constant(q.clone()), t.constant(kv.clone()));
    let out = layers::attention(&mut t, &m.layers.infer.attn, m.shape(), vq, Some(vk)).unwrap();
    assert_close(t.value(out.output), &ref_attention(&m, &m.layers.infer.attn, &q, &kv), 1e-10);
}

#[test]
fn singleton_keys_get_full_weight_and_empty_queries_give_empty_output() {
    let m = small_model(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut t = m.tape();
    let q = t.constant(random_mat(&mut rng, 4, 8));
    let k = t.constant(random_mat(&mut rng, 1, 8));
    let out = layers::attention(&mut t, &m.layers.answer.attn, m.shape(), q, Some(k)).unwrap();
    for w in &out.weights {
        assert!(t.value(*w).iter().all(|&v| v == 1.0));
    }
    let empty = t.constant(Mat::zeros((0, 8)));
    let out = layers::attention(&mut t, &m.layers.answer.attn, m.shape(), empty, Some(k)).unwrap();
    assert_eq!(t.value(out.output).dim(), (0, 8));
    let no_keys = t.constant(Mat::zeros((0, 8)));
    assert!(matches!(layers::attention(&mut t, &m.layers.answer.attn, m.shape(), q, Some(no_keys)), Err(Error::EmptyPremise)));
    let narrow = t.constant(Mat::zeros((2, 7)));
    assert!(matches!(
        layers::attention(&mut t, &m.layers.answer.attn, m.shape(), narrow, Some(k)),
        Err(Error::DimensionMismatch(_))
    ));
}

#[test]
fn merge_matches_reference_and_commutes_bitwise() {
    for seed in 0..20 {
        let m = small_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let (a, b) = (random_mat(&mut rng, 1, 8), random_mat(&mut rng, 1, 8));
        for op in MergeOp::ALL {
            let ta = Thought::new(a.clone(), Expr::quantity(0), 0);
            let tb = Thought::new(b.clone(), Expr::quantity(1), 0);
            let ab = m.merge_thoughts(&ta, &tb, op, 2).unwrap();
            let ba = m.merge_thoughts(&tb, &ta, op, 2).unwrap();
            assert_eq!(ab.embedding, ba.embedding);
            assert_eq!(ab.expr, ba.expr);
            assert_close(&ab.embedding, &ref_merge(&m, &m.layers.merge[op as usize], &a, &b), 1e-10);
        }
    }
}

#[test]
fn batched_merge_rows_equal_single_merges() {
    let m = small_model(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (a, b) = (random_mat(&mut rng, 5, 8), random_mat(&mut rng, 5, 8));
    let mut t = m.tape();
    let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
    let out = layers::merge(&mut t, &m.layers.merge[1], m.shape(), va, vb).unwrap();
    for r in 0..5 {
        let single = ref_merge(&m, &m.layers.merge[1], &a.row(r).insert_axis(Axis(0)).to_owned(), &b.row(r).insert_axis(Axis(0)).to_owned());
        assert_close(&t.value(out).row(r).insert_axis(Axis(0)).to_owned(), &single, 1e-10);
    }
}

#[test]
fn expressions_follow_the_layers() {
    let m = small_model(5);
    let a = Thought::new(Mat::ones((1, 8)), Expr::quantity(0), 0);
    let sq = m.merge_thoughts(&a, &a, MergeOp::Mul, 2).unwrap();
    assert_eq!(sq.expr, Expr::mul(Expr::quantity(0), Expr::quantity(0)));
    let inv = m.transform_thought(&a, TransformOp::Inv, 1).unwrap();
    assert_eq!(inv.expr, Expr::inv(Expr::quantity(0)));
    let n1 = m.transform_thought(&a, TransformOp::Neg, 1).unwrap();
    let n2 = m.transform_thought(&n1, TransformOp::Neg, 3).unwrap();
    assert_eq!(n2.expr, a.expr);
    assert_close(&n1.embedding, &ref_ff(&m, m.layers.transform[0], &a.embedding), 1e-10);
}

#[test]
fn zero_heads_score_one_half_and_bias_saturates() {
    let mut m = small_model(9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let th = Thought::new(random_mat(&mut rng, 1, 8), Expr::quantity(0), 0);
    let premise = PremiseState { rows: random_mat(&mut rng, 3, 8), depth: 0 };
    let goal = random_mat(&mut rng, 1, 8);
    for head in [m.layers.infer, m.layers.answer] {
        m.store.get_mut(head.out.w).fill(0.0);
        m.store.get_mut(head.out.b).fill(0.0);
    }
    assert_eq!(m.infer_score(&premise, &th).unwrap(), 0.5);
    assert_eq!(m.answer_score(&goal, &th).unwrap(), 0.5);
    m.store.get_mut(m.layers.infer.out.b).fill(40.0);
    assert!(m.infer_score(&premise, &th).unwrap() > 1.0 - 1e-15);
}

#[test]
fn scores_match_reference() {
    let m = small_model(11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_mat(&mut rng, 1, 8);
    let th = Thought::new(x.clone(), Expr::quantity(0), 0);
    let premise = random_mat(&mut rng, 4, 8);
    let s = m.infer_score(&PremiseState { rows: premise.clone(), depth: 0 }, &th).unwrap();
    assert!((s - ref_score(&m, &m.layers.infer, &premise, &x)[0]).abs() < 1e-10);
    let goal = random_mat(&mut rng, 6, 8);
    let s = m.answer_score(&goal, &th).unwrap();
    assert!((s - ref_score(&m, &m.layers.answer, &goal, &x)[0]).abs() < 1e-10);
    assert!(s > 0.0 && s < 1.0);
}

#[test]
fn premise_update_appends_one_row_per_thought() {
    let m = small_model(13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let p = PremiseState { rows: random_mat(&mut rng, 1, 8), depth: 0 };
    let acc: Vec<Thought> = (0..3).map(|i| Thought::new(random_mat(&mut rng, 1, 8), Expr::quantity(i), 0)).collect();
    let next = m.premise_update(&p, &acc).unwrap();
    assert_eq!(next.len(), 4);
    assert_eq!(next.rows.row(0), p.rows.row(0));
    let f = ref_ff(&m, m.layers.infer.ff, &acc[1].embedding);
    let expect = &f + &ref_attention(&m, &m.layers.infer.attn, &f, &p.rows);
    assert_close(&next.rows.slice(ndarray::s![2..3, ..]).to_owned(), &expect, 1e-10);
    assert_eq!(m.premise_update(&p, &[]).unwrap(), p);
}

#[test]
fn infer_and_premise_update_share_storage() {
    let mut m = small_model(15);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let p = PremiseState { rows: random_mat(&mut rng, 2, 8), depth: 0 };
    let th = Thought::new(random_mat(&mut rng, 1, 8), Expr::quantity(0), 0);
    let before_update = m.premise_update(&p, std::slice::from_ref(&th)).unwrap();
    let before_score = m.infer_score(&before_update, &th).unwrap();
    let shared = m.layers.infer.ff.inner.w;
    m.store.get_mut(shared)[[0, 0]] += 0.5;
    let after_update = m.premise_update(&p, std::slice::from_ref(&th)).unwrap();
    assert_ne!(after_update.rows.row(2), before_update.rows.row(2));
    assert_ne!(m.infer_score(&before_update, &th).unwrap(), before_score);
}

fn probe(t: &mut crate::tensor::Tape<'_>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random_mat(&mut rng, t.cols(out), 1);
    let r = t.constant(r);
    let y = t.matmul(out, r);
    t.sum_all(y)
}

fn check(m: &Model, ids: &[ParamId], f: &dyn Fn(&mut crate::tensor::Tape<'_>) -> Var) {
    let checks = gradient_check(&m.store, Some(ids), 1e-5, f);
    let w = worst(&checks).unwrap();
    assert!(w.rel_error <= 1e-4, "{} rel error {}", w.name, w.rel_error);
    assert!(checks.iter().any(|c| c.analytic_norm > 0.0));
}

fn ids_with_prefix(m: &Model, prefix: &str) -> Vec<ParamId> {
    m.store.iter().filter(|(_, n, _)| n.starts_with(prefix)).map(|(i, _, _)| i).collect()
}

#[test]
fn merge_and_transform_gradients() {
    let m = small_model(17);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let (a, b) = (random_mat(&mut rng, 3, 8), random_mat(&mut rng, 3, 8));
    for (i, prefix) in ["merge.add", "merge.mul"].iter().enumerate() {
        check(&m, &ids_with_prefix(&m, prefix), &|t| {
            let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
            let out = layers::merge(t, &m.layers.merge[i], m.shape(), va, vb).unwrap();
            probe(t, out, 1)
        });
    }
    for (i, prefix) in ["transform.neg", "transform.inv"].iter().enumerate() {
        check(&m, &ids_with_prefix(&m, prefix), &|t| {
            let va = t.constant(a.clone());
            let out = layers::transform(t, &m.layers.transform[i], m.shape(), va).unwrap();
            probe(t, out, 2)
        });
    }
}

#[test]
fn score_and_premise_gradients() {
    let m = small_model(19);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (x, keys, acc) = (random_mat(&mut rng, 4, 8), random_mat(&mut rng, 3, 8), random_mat(&mut rng, 2, 8));
    check(&m, &ids_with_prefix(&m, "answer"), &|t| {
        let (vx, vk) = (t.constant(x.clone()), t.constant(keys.clone()));
        let s = layers::score(t, &m.layers.answer, m.shape(), vk, vx).unwrap();
        let p = t.sigmoid(s.logits);
        t.sum_all(p)
    });
    check(&m, &ids_with_prefix(&m, "infer"), &|t| {
        let (vx, vk, va) = (t.constant(x.clone()), t.constant(keys.clone()), t.constant(acc.clone()));
        let p = layers::premise_update(t, &m.layers.infer, m.shape(), vk, va).unwrap();
        let s = layers::score(t, &m.layers.infer, m.shape(), p, vx).unwrap();
        let p = t.sigmoid(s.logits);
        t.sum_all(p)
    });
}
