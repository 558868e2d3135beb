//! Acceptance report. Prints one PASS / FAIL / SKIP line per criterion and
//! exits non-zero when any criterion fails.
//!
//! Dataset-gated criteria look under `$MWP_DATA_DIR`:
//! `unbiasedmwp/{train,validation,test}.{jsonl,json}` and
//! `asdiv-a.{jsonl,json}`. `.json` files are read as SVAMP-style arrays and
//! then MAWPS-style arrays.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mwp_core::engine::{expand, solve_oracle, EngineConfig, OracleScorer};
use mwp_core::eval::{answer_accuracy, default_stop_grid, evaluate_dataset, evaluate_oracle, sweep_stop_criteria, EvalConfig};
use mwp_core::expr::{oracle_enumerate, ConstantVocabulary, Expr};
use mwp_core::model::{layers, Model, ModelConfig, Vocab};
use mwp_core::par::Exec;
use mwp_core::problem::{
    collect_constants, context_key, grouped_random_split, load_records, one_to_many_split, regroup_test_split, synth_generate,
    synth_records, Dialect, LoadReport, ProblemInstance, Record, SynthSpec,
};
use mwp_core::tensor::{bce_with_logit, gradient_check, worst, Mat, ParamId, Tape, Var};
use mwp_core::trainer::{compute_loss, fit, make_labels, problem_rng, teacher_loss, teacher_pass, training_step, AdamW, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn small_model(seed: u64, vocab: Vocab) -> Model {
    let cfg = ModelConfig { hidden: 8, heads: 2, layers: 1, max_len: 64, dropout: 0.0, ..ModelConfig::default() };
    let mut m = Model::new(cfg, vocab, ConstantVocabulary::new(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ids: Vec<ParamId> = m.store.ids().collect();
    for id in ids {
        m.store.get_mut(id).mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
    m
}

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_shape_fn((r, c), |_| rng.random_range(-1.5..1.5))
}

/// Random linear read-out so every output coordinate gets a distinct weight.
fn probe(t: &mut Tape<'_>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = t.constant(random_mat(&mut rng, t.cols(out), 1));
    let y = t.matmul(out, r);
    t.sum_all(y)
}

fn prefixed(m: &Model, prefix: &str) -> Vec<ParamId> {
    m.store.iter().filter(|(_, n, _)| n.starts_with(prefix)).map(|(i, _, _)| i).collect()
}

fn instance(context: &str, equation: &str) -> ProblemInstance {
    let r = Record { id: equation.into(), context: context.into(), question: "How many?".into(), equation: equation.into(), answer: None };
    ProblemInstance::from_record(&r, &ConstantVocabulary::new()).unwrap()
}

fn gradient_fidelity() -> Verdict {
    let started = Instant::now();
    let p = instance("Ann has 3 red and 5 blue boxes, and 7 pens.", "3+5");
    let m = small_model(12, Vocab::build([&p]));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (a, b) = (random_mat(&mut rng, 3, 8), random_mat(&mut rng, 3, 8));
    let (keys, acc) = (random_mat(&mut rng, 2, 8), random_mat(&mut rng, 2, 8));
    let engine = EngineConfig { max_depth: 2, ..EngineConfig::default() };

    let mut worst_seen: Vec<(String, f64)> = Vec::new();
    let mut run = |label: &str, ids: Option<&[ParamId]>, f: &dyn Fn(&mut Tape<'_>) -> Var| {
        let checks = gradient_check(&m.store, ids, 1e-5, f);
        let w = worst(&checks).unwrap();
        worst_seen.push((label.to_string(), w.rel_error));
    };
    for (i, prefix) in ["merge.add", "merge.mul"].iter().enumerate() {
        run(prefix, Some(&prefixed(&m, prefix)), &|t| {
            let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
            let out = layers::merge(t, &m.layers.merge[i], m.shape(), va, vb).unwrap();
            probe(t, out, 1)
        });
    }
    for (i, prefix) in ["transform.neg", "transform.inv"].iter().enumerate() {
        run(prefix, Some(&prefixed(&m, prefix)), &|t| {
            let va = t.constant(a.clone());
            let out = layers::transform(t, &m.layers.transform[i], m.shape(), va).unwrap();
            probe(t, out, 2)
        });
    }
    run("infer", Some(&prefixed(&m, "infer")), &|t| {
        let (x, k) = (t.constant(a.clone()), t.constant(keys.clone()));
        let s = layers::score(t, &m.layers.infer, m.shape(), k, x).unwrap();
        probe(t, s.logits, 3)
    });
    run("answer", Some(&prefixed(&m, "answer")), &|t| {
        let (x, k) = (t.constant(a.clone()), t.constant(keys.clone()));
        let s = layers::score(t, &m.layers.answer, m.shape(), k, x).unwrap();
        probe(t, s.logits, 4)
    });
    run("premise_update", Some(&prefixed(&m, "infer")), &|t| {
        let (k, v) = (t.constant(keys.clone()), t.constant(acc.clone()));
        let out = layers::premise_update(t, &m.layers.infer, m.shape(), k, v).unwrap();
        probe(t, out, 5)
    });
    run("teacher-forced loss", None, &|t| {
        let owned = std::mem::replace(t, Tape::new(t.store()));
        let pass = teacher_pass(&m, &p, &engine, owned).unwrap();
        *t = pass.tape;
        pass.loss
    });
    let elapsed = started.elapsed();
    let max = worst_seen.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail = worst_seen.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    check(max <= 1e-4 && elapsed < Duration::from_secs(60), format!("max rel error {max:.2e} in {:.1}s ({detail})", elapsed.as_secs_f64()))
}

fn merge_commutativity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for k in 0..1000u64 {
        let hidden = [8, 16, 32][k as usize % 3];
        let cfg = ModelConfig { hidden, heads: 2, layers: 1, dropout: 0.0, ..ModelConfig::default() };
        let mut m = Model::new(cfg, Vocab::specials(), ConstantVocabulary::new(), k).unwrap();
        let ids: Vec<ParamId> = m.store.ids().collect();
        for id in ids {
            let scale = rng.random_range(0.1..1.0);
            m.store.get_mut(id).mapv_inplace(|v| v + scale * rng.random_range(-1.0..1.0));
        }
        let rows = rng.random_range(1..5);
        let (a, b) = (random_mat(&mut rng, rows, hidden), random_mat(&mut rng, rows, hidden));
        let op = (k / 3 % 2) as usize;
        let mut t = m.tape();
        let (va, vb) = (t.constant(a), t.constant(b));
        let ab = layers::merge(&mut t, &m.layers.merge[op], m.shape(), va, vb).unwrap();
        let ba = layers::merge(&mut t, &m.layers.merge[op], m.shape(), vb, va).unwrap();
        if !t.value(ab).iter().zip(t.value(ba).iter()).all(|(x, y)| x.to_bits() == y.to_bits()) {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} of 1000 instances differ under operand swap"))
}

fn oracle_completeness() -> Verdict {
    let problems = match synth_generate(&SynthSpec::default(), 500, 3) {
        Ok(p) => p,
        Err(e) => return Verdict::Fail(format!("corpus generation failed: {e}")),
    };
    let cfg = EngineConfig::default();
    let (mut solved, mut sets_equal, mut too_deep) = (0, 0, 0);
    for p in &problems {
        if p.gold.required_depth() > 6 {
            too_deep += 1;
            continue;
        }
        let Ok(trace) = solve_oracle(p, &cfg) else { continue };
        if answer_accuracy(trace.final_expr(), &p.gold, &p.env).unwrap_or(false) {
            solved += 1;
        }
        let gold = p.gold.clone();
        let filter = move |e: &Expr| gold.contains_sub(e);
        let en = oracle_enumerate(p.num_quantities(), p.num_constants(), trace.final_depth(), Some(&filter));
        let same = en.levels.len() == trace.levels.len()
            && en.levels.iter().all(|l| {
                let got = trace.candidate_exprs(l.depth);
                let acc = trace.accepted_exprs(l.depth);
                got == l.candidates.iter().collect::<Vec<_>>() && acc == l.accepted.iter().collect::<Vec<_>>()
            });
        if same {
            sets_equal += 1;
        }
    }
    let n = problems.len();
    check(
        too_deep == 0 && solved == n && sets_equal == n,
        format!("{solved}/{n} value-equal, {sets_equal}/{n} per-depth sets equal, {too_deep} over depth 6"),
    )
}

fn enumeration_counts() -> Verdict {
    let initial = vec![Expr::quantity(0), Expr::quantity(1)];
    let cfg = EngineConfig { max_depth: 2, ..EngineConfig::default() };
    // The gold is unreachable so confidence never stops the expansion.
    let mut scorer = OracleScorer::new(initial.clone(), Expr::quantity(9), true);
    let trace = match expand(&mut scorer, &cfg, None) {
        Ok(t) => t,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let engine = (trace.levels[1].raw_count, trace.levels[2].raw_count);
    let en = oracle_enumerate(2, 0, 2, None);
    let symbolic = (en.levels[1].raw_count, en.levels[2].raw_count);
    // Brute force: two unary ops on each leaf, then both binary ops on every
    // unordered pair (with repetition) of the six accepted thoughts.
    let transforms = initial.len() * 2;
    let pool = initial.len() + transforms;
    let brute = (transforms, (0..pool).flat_map(|i| (i..pool).map(move |j| (i, j))).count() * 2);
    check(
        engine == (4, 42) && symbolic == engine && brute == engine,
        format!("engine {engine:?}, enumeration {symbolic:?}, brute force {brute:?}"),
    )
}

fn loss_sanity() -> Verdict {
    let p = instance("Ann has 3 red and 5 blue boxes, and 7 pens.", "3+5");
    let labels = make_labels(&p, 6).unwrap();
    let infer: Vec<Vec<f64>> = labels.levels.iter().map(|l| vec![0.5; l.candidates.len()]).collect();
    let answer = vec![0.5; labels.answers.len()];
    let prob_form = compute_loss(&labels, &infer, &answer).unwrap();
    let logit_form = bce_with_logit(0.0, 1.0);

    let mut zeroed = small_model(9, Vocab::build([&p]));
    for head in [zeroed.layers.infer, zeroed.layers.answer] {
        zeroed.store.get_mut(head.out.w).fill(0.0);
        zeroed.store.get_mut(head.out.b).fill(0.0);
    }
    let tape_form = teacher_loss(&zeroed, &p, &EngineConfig::default()).unwrap();
    let ln2 = std::f64::consts::LN_2;
    let ln2_ok = [prob_form, logit_form, tape_form].iter().all(|l| (l - ln2).abs() <= 1e-6);

    let mut model = small_model(14, Vocab::build([&p]));
    let engine = EngineConfig { max_depth: 2, ..EngineConfig::default() };
    let cfg = TrainConfig { lr: 3e-3, weight_decay: 0.0, batch_size: 1, ..TrainConfig::default() };
    let mut opt = AdamW::new(&model.store, &cfg);
    let mut losses = Vec::new();
    for step in 0..51 {
        let mut skipped = Vec::new();
        match training_step(&mut model, &mut opt, &[&p], vec![problem_rng(1, step, 0)], cfg.lr, &cfg, &engine, &mut skipped) {
            Ok(out) => losses.push(out.loss),
            Err(e) => return Verdict::Fail(format!("training step failed: {e}")),
        }
    }
    let decreasing = losses.windows(2).filter(|w| w[1] < w[0]).count();
    let frac = decreasing as f64 / 50.0;
    check(
        ln2_ok && frac >= 0.9,
        format!(
            "all-0.5 loss {prob_form:.9} / tape {tape_form:.9} (ln 2 = {ln2:.9}); overfit decreased in {decreasing}/50 steps, {:.4} -> {:.4}",
            losses[0],
            losses[50]
        ),
    )
}

struct Trained {
    model: Model,
    test: Vec<ProblemInstance>,
}

fn train_and_test(train: &[ProblemInstance], test: &[ProblemInstance], constants: ConstantVocabulary) -> mwp_core::Result<(Trained, f64)> {
    let cfg = TrainConfig { validate_every: 0, ..TrainConfig::default() };
    let model = Model::new(ModelConfig::default(), Vocab::build(train), constants, cfg.seed)?;
    let engine = EngineConfig::default();
    let out = fit(model, train, &[], &cfg, &engine, None, &mut |_, _| Ok(()))?;
    let model = out.best().clone();
    let acc = evaluate_dataset(&model, test, &EvalConfig::default())?.accuracy;
    Ok((Trained { model, test: test.to_vec() }, acc))
}

fn desk_scale_learning(trained: &mut Option<Trained>) -> Verdict {
    let started = Instant::now();
    let recs = match synth_records(&SynthSpec::default(), 2000, 0) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(format!("corpus generation failed: {e}")),
    };
    let constants = collect_constants(&recs);
    let all = LoadReport::build(&recs, &constants).problems;
    let key = |p: &ProblemInstance| context_key(&p.context);
    let grouped = grouped_random_split(all.clone(), &key, 0.8, 0.1, 0).unwrap();
    let (t, grouped_acc) = match train_and_test(&grouped.train, &grouped.test, constants.clone()) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(format!("grouped training failed: {e}")),
    };
    let grouped_time = started.elapsed();
    *trained = Some(t);

    let otm = one_to_many_split(all, &key, 0).unwrap();
    let (_, otm_acc) = match train_and_test(&otm.train, &otm.test, constants) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(format!("one-to-many training failed: {e}")),
    };
    let total = started.elapsed();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    check(
        grouped_acc >= 0.90 && otm_acc >= 0.70 && grouped_time <= Duration::from_secs(45 * 60),
        format!(
            "held-out in-template {grouped_acc:.4} ({} test), one-to-many unseen variants {otm_acc:.4} ({} test); grouped run {:.1} min, both {:.1} min on {threads} thread(s)",
            grouped.test.len(),
            otm.test.len(),
            grouped_time.as_secs_f64() / 60.0,
            total.as_secs_f64() / 60.0
        ),
    )
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os("MWP_DATA_DIR").map(PathBuf::from).filter(|p| p.is_dir())
}

fn find(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["jsonl", "json"].iter().map(|ext| dir.join(format!("{stem}.{ext}"))).find(|p| p.is_file())
}

fn read_any(path: &Path) -> mwp_core::Result<Vec<Record>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        return load_records(path, Dialect::Jsonl);
    }
    load_records(path, Dialect::Svamp).or_else(|_| load_records(path, Dialect::Mawps))
}

fn split_protocol() -> Verdict {
    let mut failures = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut all = Vec::new();
        let groups = rng.random_range(1..40);
        for g in 0..groups {
            for k in 0..rng.random_range(1..6) {
                let r = Record {
                    id: format!("{g}-{k}"),
                    context: format!("Shop {g} sells 3 and 4."),
                    question: "How many?".into(),
                    equation: "3+4".into(),
                    answer: None,
                };
                all.push(ProblemInstance::from_record(&r, &ConstantVocabulary::new()).unwrap());
            }
        }
        let s = one_to_many_split(all.clone(), &|p| p.context_key(), seed).unwrap();
        let group = |p: &ProblemInstance| p.id.split('-').next().unwrap().to_string();
        let size = |g: &str| all.iter().filter(|p| group(p) == g).count();
        let mut ids: Vec<&str> = s.train.iter().chain(&s.validation).chain(&s.test).map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        let mut train_groups: Vec<String> = s.train.iter().map(group).collect();
        train_groups.sort();
        let one_each = train_groups.windows(2).all(|w| w[0] != w[1]) && train_groups.iter().all(|g| size(g) > 1);
        let singles_valid = s.validation.iter().all(|p| size(&group(p)) == 1);
        let multi = (0..groups).filter(|g| size(&g.to_string()) > 1).count();
        let ok = ids.len() == all.len()
            && one_each
            && singles_valid
            && train_groups.len() == multi
            && s.test.iter().all(|p| size(&group(p)) > 1);
        if !ok {
            failures += 1;
        }
    }
    if failures > 0 {
        return Verdict::Fail(format!("partition property violated for {failures} of 100 seeds"));
    }
    let Some(dir) = data_dir().map(|d| d.join("unbiasedmwp")) else {
        return Verdict::Skip("partition property held for 100 seeds; UnbiasedMWP data not present".into());
    };
    let parts: Option<Vec<PathBuf>> = ["train", "validation", "test"].iter().map(|s| find(&dir, s)).collect();
    let Some(parts) = parts else {
        return Verdict::Skip("partition property held for 100 seeds; UnbiasedMWP data not present".into());
    };
    let mut loaded = Vec::new();
    for p in &parts {
        match read_any(p) {
            Ok(r) => loaded.push(r),
            Err(e) => return Verdict::Fail(format!("{}: {e}", p.display())),
        }
    }
    let constants = collect_constants(&loaded.concat());
    let mut sets = loaded.iter().map(|r| LoadReport::build(r, &constants));
    let (tr, va, te) = (sets.next().unwrap(), sets.next().unwrap(), sets.next().unwrap());
    let dropped = tr.skipped.len() + va.skipped.len() + te.skipped.len();
    let key = |p: &ProblemInstance| context_key(&p.context);
    match regroup_test_split(tr.problems, va.problems, te.problems, &key, 0) {
        Ok(s) => {
            let got = (s.meta.train, s.meta.validation, s.meta.test);
            check(got == (2661, 245, 486), format!("regrouped {got:?}, expected (2661, 245, 486); {dropped} records unreadable"))
        }
        Err(e) => Verdict::Fail(e.to_string()),
    }
}

fn thought_statistics() -> Verdict {
    let Some(path) = data_dir().and_then(|d| find(&d, "asdiv-a")) else {
        return Verdict::Skip("ASDiv-A data not present".into());
    };
    let recs = match read_any(&path) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(format!("{}: {e}", path.display())),
    };
    let problems = LoadReport::build(&recs, &collect_constants(&recs)).problems;
    let report = match evaluate_oracle(&problems, &EngineConfig::default(), false, Exec::Parallel) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let Some(stats) = report.stats else {
        return Verdict::Fail("no statistics".into());
    };
    let (total, depth) = (stats.candidates_total.mean, stats.path_depth.mean);
    check(
        (total - 26.86).abs() <= 0.05 * 26.86 && (depth - 3.46).abs() <= 0.1,
        format!("average total candidates {total:.2} (target 26.86 ± 5%), path depth {depth:.2} (target 3.46 ± 0.1) over {} problems", problems.len()),
    )
}

fn stop_criteria(trained: &Option<Trained>) -> Verdict {
    let Some(t) = trained else {
        return Verdict::Fail("no trained model".into());
    };
    match sweep_stop_criteria(&t.model, &t.test, &EvalConfig::default(), &default_stop_grid()) {
        Ok(cells) => {
            let accs: Vec<f64> = cells.iter().map(|c| c.accuracy).collect();
            let spread = accs.iter().copied().fold(f64::MIN, f64::max) - accs.iter().copied().fold(f64::MAX, f64::min);
            let detail = cells.iter().map(|c| format!("t_f {} D {}: {:.4}", c.confidence_threshold, c.max_depth, c.accuracy)).collect::<Vec<_>>().join(", ");
            check(spread <= 0.02, format!("spread {:.2} pp ({detail})", spread * 100.0))
        }
        Err(e) => Verdict::Fail(e.to_string()),
    }
}

type Criterion = Box<dyn FnOnce(&mut Option<Trained>) -> Verdict>;

fn main() {
    let mut trained = None;
    let criteria: Vec<(&str, Criterion)> = vec![
        ("gradient fidelity", Box::new(|_| gradient_fidelity())),
        ("merge commutativity", Box::new(|_| merge_commutativity())),
        ("oracle completeness and equivalence", Box::new(|_| oracle_completeness())),
        ("enumeration counts", Box::new(|_| enumeration_counts())),
        ("loss sanity", Box::new(|_| loss_sanity())),
        ("desk-scale learning", Box::new(desk_scale_learning)),
        ("split protocol", Box::new(|_| split_protocol())),
        ("thought statistics", Box::new(|_| thought_statistics())),
        ("stop-criteria robustness", Box::new(|t| stop_criteria(t))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let (tag, detail) = match run(&mut trained) {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {}: {name}: {detail}", i + 1);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
