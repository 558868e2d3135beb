//! Teacher-forced training.
//!
//! Each problem is expanded with the ideal reasonable sets (thoughts
//! contained in the gold expression) to the depth limit. Every candidate's
//! infer logit and every final reasonable thought's answer logit enter one
//! binary cross-entropy, normalized by the number of terms. Batches average
//! per-problem losses and take one AdamW step.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{expand, EngineConfig, ExpansionTrace, NeuralScorer};
use crate::error::{Error, Result};
use crate::eval::{evaluate_dataset, EvalConfig};
use crate::expr::{oracle_enumerate, Expr};
use crate::model::Model;
use crate::par::Exec;
use crate::problem::{ProblemInstance, Skipped};
use crate::tensor::{Grads, Mat, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs between learning-rate decays.
    pub lr_decay_every: usize,
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Number of final epochs averaged into the SWA parameters.
    pub swa_epochs: usize,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    /// Keep token-encoder parameters fixed.
    pub freeze_encoder: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Validate every this many epochs (0 disables).
    pub validate_every: usize,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 1e-3,
            lr_decay_every: 20,
            lr_decay: 0.5,
            weight_decay: 1e-5,
            epochs: 60,
            swa_epochs: 10,
            seed: 0,
            grad_clip: None,
            freeze_encoder: false,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            validate_every: 1,
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.lr_decay_every == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size, lr_decay_every and epochs must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay {} outside (0, 1]", self.lr_decay)));
        }
        if self.lr < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("lr and weight_decay must be non-negative".into()));
        }
        if self.swa_epochs > self.epochs {
            return Err(Error::Config(format!("swa_epochs {} exceeds epochs {}", self.swa_epochs, self.epochs)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("adaptive-moment betas must lie in [0, 1) and eps be positive".into()));
        }
        if self.grad_clip.is_some_and(|c| c <= 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }

    /// Step-decayed learning rate of epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }

    /// First epoch included in the SWA average.
    pub fn swa_start(&self) -> usize {
        self.epochs - self.swa_epochs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Labeled {
    pub expr: Expr,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelLevel {
    pub depth: usize,
    /// Candidates with infer targets.
    pub candidates: Vec<Labeled>,
    /// Ideal reasonable set after this depth.
    pub accepted: Vec<Expr>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthLabels {
    pub levels: Vec<LabelLevel>,
    /// Final reasonable set with answer targets.
    pub answers: Vec<Labeled>,
}

impl DepthLabels {
    pub fn num_terms(&self) -> usize {
        self.levels.iter().map(|l| l.candidates.len()).sum::<usize>() + self.answers.len()
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Ideal sets and targets for depths `0..=max_depth`.
pub fn make_labels(problem: &ProblemInstance, max_depth: usize) -> Result<DepthLabels> {
    let required = problem.gold.required_depth();
    if required > max_depth {
        return Err(Error::UnreachableGold { required, limit: max_depth });
    }
    let gold = &problem.gold;
    let contained = |e: &Expr| gold.contains_sub(e);
    let en = oracle_enumerate(problem.num_quantities(), problem.num_constants(), max_depth, Some(&contained));
    let levels: Vec<LabelLevel> = en
        .levels
        .iter()
        .map(|l| LabelLevel {
            depth: l.depth,
            candidates: l.candidates.iter().map(|e| Labeled { expr: e.clone(), target: indicator(contained(e)) }).collect(),
            accepted: l.accepted.clone(),
        })
        .collect();
    let answers = en.final_accepted().iter().map(|e| Labeled { expr: e.clone(), target: indicator(e == gold) }).collect();
    Ok(DepthLabels { levels, answers })
}

const PROB_EPS: f64 = 1e-7;

fn bce(p: f64, t: f64) -> f64 {
    let q = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if q != p {
        tracing::debug!(score = p, "score clamped for cross-entropy");
    }
    -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
}

/// Normalized cross-entropy from probability scores. `infer[d][i]` scores
/// `labels.levels[d].candidates[i]`; `answer[i]` scores `labels.answers[i]`.
pub fn compute_loss(labels: &DepthLabels, infer: &[Vec<f64>], answer: &[f64]) -> Result<f64> {
    let shape_ok = infer.len() == labels.levels.len()
        && infer.iter().zip(&labels.levels).all(|(s, l)| s.len() == l.candidates.len())
        && answer.len() == labels.answers.len();
    if !shape_ok {
        return Err(Error::DimensionMismatch("scores do not align with labels".into()));
    }
    let mut sum = 0.0;
    for (scores, level) in infer.iter().zip(&labels.levels) {
        for (&p, l) in scores.iter().zip(&level.candidates) {
            sum += bce(p, l.target);
        }
    }
    for (&p, l) in answer.iter().zip(&labels.answers) {
        sum += bce(p, l.target);
    }
    let n = labels.num_terms();
    if n == 0 {
        return Err(Error::EmptyInput("no labeled thoughts".into()));
    }
    Ok(sum / n as f64)
}

/// Teacher-forced expansion on `tape` and the normalized loss node.
pub struct TeacherPass<'t> {
    pub tape: Tape<'t>,
    pub loss: Var,
    pub terms: usize,
    pub trace: ExpansionTrace,
}

pub fn teacher_pass<'t>(model: &Model, problem: &ProblemInstance, engine: &EngineConfig, tape: Tape<'t>) -> Result<TeacherPass<'t>> {
    let required = problem.gold.required_depth();
    if required > engine.max_depth {
        return Err(Error::UnreachableGold { required, limit: engine.max_depth });
    }
    let mut scorer = NeuralScorer::new(model, problem, tape)?;
    let trace = expand(&mut scorer, engine, Some(&problem.gold))?;
    let gold = &problem.gold;
    let mut parts = Vec::new();
    let mut terms = 0;
    let infer_log = scorer.infer_log().to_vec();
    let answer_log = scorer.answer_log().to_vec();
    let tape = scorer.tape_mut();
    for (ids, logits) in &infer_log {
        let t: Vec<f64> = ids.iter().map(|&i| indicator(gold.contains_sub(&trace.thoughts[i].expr))).collect();
        terms += t.len();
        parts.push(tape.bce_logits_sum(*logits, &t));
    }
    for (ids, logits) in &answer_log {
        let t: Vec<f64> = ids.iter().map(|&i| indicator(&trace.thoughts[i].expr == gold)).collect();
        terms += t.len();
        parts.push(tape.bce_logits_sum(*logits, &t));
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = tape.add(total, p);
    }
    let loss = tape.scale(total, 1.0 / terms as f64);
    Ok(TeacherPass { tape: scorer.into_tape(), loss, terms, trace })
}

/// Loss of one problem without gradients (dropout off).
pub fn teacher_loss(model: &Model, problem: &ProblemInstance, engine: &EngineConfig) -> Result<f64> {
    let pass = teacher_pass(model, problem, engine, model.tape())?;
    Ok(pass.tape.scalar(pass.loss))
}

/// Loss and parameter gradients of one problem.
pub fn problem_gradients(model: &Model, problem: &ProblemInstance, engine: &EngineConfig, rng: ChaCha8Rng) -> Result<(f64, Grads)> {
    let tape = if model.config.dropout > 0.0 { Tape::training(&model.store, rng) } else { model.tape() };
    let pass = teacher_pass(model, problem, engine, tape)?;
    let loss = pass.tape.scalar(pass.loss);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(problem.id.clone()));
    }
    let mut grads = Grads::new(&model.store);
    pass.tape.backward(pass.loss, 1.0, &mut grads);
    if !grads.all_finite() {
        return Err(Error::NonFiniteLoss(problem.id.clone()));
    }
    Ok((loss, grads))
}

/// Decoupled-weight-decay adaptive-moment optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: &TrainConfig) -> Self {
        Self {
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: vec![None; store.len()],
            v: vec![None; store.len()],
        }
    }

    /// Updates every tensor that has a gradient and is not frozen.
    pub fn update(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64, frozen: &dyn Fn(&str) -> bool) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            if frozen(store.name(id)) {
                continue;
            }
            let m = self.m[id.0].get_or_insert_with(|| Mat::zeros(g.dim()));
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            let v = self.v[id.0].get_or_insert_with(|| Mat::zeros(g.dim()));
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let (m, v) = (self.m[id.0].as_ref().unwrap(), self.v[id.0].as_ref().unwrap());
            let p = store.get_mut(id);
            let decay = 1.0 - lr * self.weight_decay;
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                *p = *p * decay - lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
            });
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Dropout stream of problem `index` in `epoch`.
pub fn problem_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(((epoch as u64) << 32) ^ index as u64)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Mean loss over the problems that contributed.
    pub loss: f64,
    pub problems: usize,
    pub grad_norm: f64,
}

/// One optimizer step over `batch`. `rngs[i]` drives dropout for
/// `batch[i]`. Problems whose gold is out of reach are reported in
/// `skipped` and left out of the mean.
pub fn training_step(
    model: &mut Model,
    opt: &mut AdamW,
    batch: &[&ProblemInstance],
    rngs: Vec<ChaCha8Rng>,
    lr: f64,
    cfg: &TrainConfig,
    engine: &EngineConfig,
    skipped: &mut Vec<Skipped>,
) -> Result<StepOutcome> {
    let jobs: Vec<(&ProblemInstance, ChaCha8Rng)> = batch.iter().copied().zip(rngs).collect();
    let results = {
        let m: &Model = model;
        cfg.exec.map(&jobs, |_, (p, rng)| problem_gradients(m, p, engine, rng.clone()))
    };
    let mut total = Grads::new(&model.store);
    let mut loss = 0.0;
    let mut n = 0;
    for ((p, _), r) in jobs.iter().zip(results) {
        match r {
            Ok((l, g)) => {
                loss += l;
                n += 1;
                total.merge(g);
            }
            Err(e @ (Error::UnreachableGold { .. } | Error::CandidateCap { .. })) => {
                skipped.push(Skipped { id: p.id.clone(), reason: e.to_string() });
            }
            Err(e) => return Err(e),
        }
    }
    if n == 0 {
        return Ok(StepOutcome { loss: 0.0, problems: 0, grad_norm: 0.0 });
    }
    total.scale(1.0 / n as f64);
    let mut grad_norm = total.norm();
    if let Some(c) = cfg.grad_clip {
        if grad_norm > c {
            total.scale(c / grad_norm);
            grad_norm = c;
        }
    }
    let freeze = cfg.freeze_encoder;
    opt.update(&mut model.store, &total, lr, &|name| freeze && Model::is_encoder_param(name));
    Ok(StepOutcome { loss: loss / n as f64, problems: n, grad_norm })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub validation_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    /// Training problems left out, with the reason.
    pub skipped: Vec<Skipped>,
    pub train_size: usize,
    pub validation_size: usize,
    pub config: Option<TrainConfig>,
}

/// Running parameter average over the SWA window.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Swa {
    pub count: usize,
    pub mean: Vec<Mat>,
}

impl Swa {
    pub fn new(store: &ParamStore) -> Self {
        Self { count: 0, mean: store.iter().map(|(_, _, m)| m.clone()).collect() }
    }

    pub fn add(&mut self, store: &ParamStore) {
        self.count += 1;
        let k = self.count as f64;
        for (mean, (_, _, p)) in self.mean.iter_mut().zip(store.iter()) {
            mean.zip_mut_with(p, |a, &b| *a += (b - *a) / k);
        }
    }

    pub fn store(&self, like: &ParamStore) -> ParamStore {
        let mut out = like.clone();
        let ids: Vec<_> = like.ids().collect();
        for (id, m) in ids.into_iter().zip(&self.mean) {
            out.get_mut(id).assign(m);
        }
        out
    }
}

/// Everything needed to continue an interrupted run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub optimizer: AdamW,
    pub swa: Option<Swa>,
    pub report: TrainReport,
}

pub struct FitOutcome {
    /// Parameters after the last epoch.
    pub model: Model,
    /// Averaged parameters, when the SWA window is non-empty.
    pub swa: Option<Model>,
    pub state: TrainState,
}

impl FitOutcome {
    /// SWA parameters when present, else the last ones.
    pub fn best(&self) -> &Model {
        self.swa.as_ref().unwrap_or(&self.model)
    }
}

/// Full training loop. `resume` continues from a saved state; the model
/// must then carry the matching parameters. `on_epoch` sees every finished
/// epoch with the current parameters and state.
pub fn fit(
    mut model: Model,
    train: &[ProblemInstance],
    validation: &[ProblemInstance],
    cfg: &TrainConfig,
    engine: &EngineConfig,
    resume: Option<TrainState>,
    on_epoch: &mut dyn FnMut(&Model, &TrainState) -> Result<()>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    engine.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training split is empty".into()));
    }
    let mut state = match resume {
        Some(s) => s,
        None => TrainState {
            epoch: 0,
            optimizer: AdamW::new(&model.store, cfg),
            swa: None,
            report: TrainReport {
                train_size: train.len(),
                validation_size: validation.len(),
                config: Some(cfg.clone()),
                ..TrainReport::default()
            },
        },
    };
    let mut usable = Vec::with_capacity(train.len());
    let mut skipped = Vec::new();
    for (i, p) in train.iter().enumerate() {
        let required = p.gold.required_depth();
        if required > engine.max_depth {
            skipped.push(Skipped { id: p.id.clone(), reason: Error::UnreachableGold { required, limit: engine.max_depth }.to_string() });
        } else {
            usable.push(i);
        }
    }
    if state.epoch == 0 {
        state.report.skipped = skipped;
    }
    let eval_cfg = EvalConfig { engine: EngineConfig { scorer: crate::engine::ScorerKind::Neural, ..engine.clone() }, exec: cfg.exec };

    for epoch in state.epoch..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr_at(epoch);
        let mut order = usable.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ 0xe90c) ^ epoch as u64));
        let mut loss_sum = 0.0;
        let mut counted = 0;
        let mut step_skipped = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ProblemInstance> = chunk.iter().map(|&i| &train[i]).collect();
            let rngs = chunk.iter().map(|&i| problem_rng(cfg.seed, epoch, i)).collect();
            let out = training_step(&mut model, &mut state.optimizer, &batch, rngs, lr, cfg, engine, &mut step_skipped)?;
            loss_sum += out.loss * out.problems as f64;
            counted += out.problems;
        }
        if epoch == 0 {
            state.report.skipped.extend(step_skipped);
        }
        let loss = if counted > 0 { loss_sum / counted as f64 } else { 0.0 };
        if epoch >= cfg.swa_start() {
            state.swa.get_or_insert_with(|| Swa::new(&model.store)).add(&model.store);
        }
        let validation_accuracy = if cfg.validate_every > 0 && !validation.is_empty() && (epoch + 1) % cfg.validate_every == 0 {
            Some(evaluate_dataset(&model, validation, &eval_cfg)?.accuracy)
        } else {
            None
        };
        let report = EpochReport { epoch, lr, loss, validation_accuracy, seconds: started.elapsed().as_secs_f64() };
        tracing::info!(epoch, lr, loss, ?validation_accuracy, seconds = report.seconds, "epoch finished");
        state.report.epochs.push(report);
        state.epoch = epoch + 1;
        on_epoch(&model, &state)?;
    }
    let swa = match &state.swa {
        Some(s) if s.count > 0 => {
            let mut m = model.clone();
            m.store = s.store(&model.store);
            Some(m)
        }
        _ => None,
    };
    Ok(FitOutcome { model, swa, state })
}
