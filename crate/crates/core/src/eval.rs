//! Accuracy, thought statistics, stop-criteria sweeps and attention export.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::engine::{expand, solve, EngineConfig, ExpansionTrace, NeuralScorer, OracleScorer, ScorerKind, Termination};
use crate::error::{Error, Result};
use crate::expr::{Expr, QuantityEnv};
use crate::model::Model;
use crate::par::Exec;
use crate::problem::ProblemInstance;

pub const ANSWER_TOLERANCE: f64 = 1e-4;

/// Value agreement of `pred` with `gold` under relative tolerance 1e-4
/// (absolute below magnitude 1). Non-finite predictions are wrong.
pub fn answer_accuracy(pred: &Expr, gold: &Expr, env: &QuantityEnv) -> Result<bool> {
    let g = gold.evaluate(env)?.to_f64();
    let p = pred.evaluate(env)?.to_f64();
    Ok(values_agree(p, g))
}

pub fn values_agree(pred: f64, gold: f64) -> bool {
    pred.is_finite() && gold.is_finite() && (pred - gold).abs() <= ANSWER_TOLERANCE * gold.abs().max(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub engine: EngineConfig,
    pub exec: Exec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { engine: EngineConfig::default(), exec: Exec::Parallel }
    }
}

/// Per-problem thought counts taken from a trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThoughtCounts {
    /// Deduplicated candidates over all depths, initial thoughts included.
    pub candidates_total: usize,
    pub candidates_last: usize,
    /// Distinct sub-expressions of the final expression.
    pub path_length: usize,
    /// Depth at which expansion stopped.
    pub path_depth: usize,
}

impl ThoughtCounts {
    pub fn from_trace(trace: &ExpansionTrace) -> Self {
        let distinct: HashSet<&Expr> = trace.final_expr().subtrees().into_iter().collect();
        Self {
            candidates_total: trace.total_candidates(),
            candidates_last: trace.levels.last().map_or(0, |l| l.candidates.len()),
            path_length: distinct.len(),
            path_depth: trace.final_depth(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    /// Prefix serialization of the prediction.
    pub predicted: Option<String>,
    pub predicted_infix: Option<String>,
    pub gold: String,
    pub predicted_value: Option<f64>,
    pub gold_value: f64,
    pub correct: bool,
    pub termination: Option<Termination>,
    pub depth: usize,
    pub counts: Option<ThoughtCounts>,
    pub error: Option<String>,
}

/// min / mean ± standard error / max of one statistic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub se: f64,
    pub max: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Self { min, mean, se, max, n })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThoughtStats {
    pub candidates_total: Summary,
    pub path_length: Summary,
    pub candidates_last: Summary,
    pub path_depth: Summary,
}

impl ThoughtStats {
    pub fn of(counts: &[ThoughtCounts]) -> Option<Self> {
        let col = |f: fn(&ThoughtCounts) -> usize| counts.iter().map(|c| f(c) as f64).collect::<Vec<_>>();
        Some(Self {
            candidates_total: Summary::of(&col(|c| c.candidates_total))?,
            path_length: Summary::of(&col(|c| c.path_length))?,
            candidates_last: Summary::of(&col(|c| c.candidates_last))?,
            path_depth: Summary::of(&col(|c| c.path_depth))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub evaluated: usize,
    pub stats: Option<ThoughtStats>,
    pub examples: Vec<ExampleRecord>,
}

impl EvalReport {
    pub fn from_examples(examples: Vec<ExampleRecord>) -> Self {
        let evaluated = examples.len();
        let correct = examples.iter().filter(|e| e.correct).count();
        let counts: Vec<ThoughtCounts> = examples.iter().filter_map(|e| e.counts).collect();
        Self {
            accuracy: if evaluated == 0 { 0.0 } else { correct as f64 / evaluated as f64 },
            correct,
            evaluated,
            stats: ThoughtStats::of(&counts),
            examples,
        }
    }

    pub fn summary_line(&self) -> String {
        format!("accuracy {:.4} ({}/{})", self.accuracy, self.correct, self.evaluated)
    }
}

fn record(problem: &ProblemInstance, outcome: Result<ExpansionTrace>) -> Result<ExampleRecord> {
    let gold_value = problem.gold.evaluate(&problem.env)?.to_f64();
    let mut rec = ExampleRecord {
        id: problem.id.clone(),
        predicted: None,
        predicted_infix: None,
        gold: problem.gold.serialize(),
        predicted_value: None,
        gold_value,
        correct: false,
        termination: None,
        depth: 0,
        counts: None,
        error: None,
    };
    match outcome {
        Ok(trace) => {
            let pred = trace.final_expr();
            let value = pred.evaluate(&problem.env)?.to_f64();
            rec.predicted = Some(pred.serialize());
            rec.predicted_infix = Some(pred.to_infix(&|l| problem.env.leaf_label(l)));
            rec.predicted_value = Some(value);
            rec.correct = values_agree(value, gold_value);
            rec.termination = Some(trace.termination);
            rec.depth = trace.final_depth();
            rec.counts = Some(ThoughtCounts::from_trace(&trace));
        }
        Err(e @ (Error::CandidateCap { .. } | Error::NoThoughts | Error::DimensionMismatch(_) | Error::OutOfVocabulary(_))) => {
            rec.error = Some(e.to_string());
        }
        Err(e) => return Err(e),
    }
    Ok(rec)
}

/// Solves every problem and aggregates accuracy and thought statistics.
/// Problems the engine cannot run (candidate cap, over-long input) count
/// as wrong and carry the error.
pub fn evaluate_dataset(model: &Model, problems: &[ProblemInstance], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.engine.validate()?;
    if let Some(p) = problems.first() {
        if cfg.engine.scorer == ScorerKind::Neural && p.env.constants != model.constants {
            return Err(Error::Checkpoint(format!("model constants do not match the data (problem {})", p.id)));
        }
    }
    let records = cfg.exec.map(problems, |_, p| record(p, solve(p, model, &cfg.engine)));
    Ok(EvalReport::from_examples(records.into_iter().collect::<Result<_>>()?))
}

/// Scorer-free evaluation with the symbolic oracle.
pub fn evaluate_oracle(problems: &[ProblemInstance], engine: &EngineConfig, accept_all: bool, exec: Exec) -> Result<EvalReport> {
    engine.validate()?;
    let records = exec.map(problems, |_, p| {
        let mut scorer = if accept_all { OracleScorer::accept_all(p) } else { OracleScorer::containment(p) };
        record(p, expand(&mut scorer, engine, None))
    });
    Ok(EvalReport::from_examples(records.into_iter().collect::<Result<_>>()?))
}

/// Mean and standard error of accuracies from repeated runs.
pub fn aggregate_runs(accuracies: &[f64]) -> Option<Summary> {
    Summary::of(accuracies)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub confidence_threshold: f64,
    /// Added to the base depth limit.
    pub depth_offset: usize,
    pub max_depth: usize,
    pub accuracy: f64,
}

/// Default grid: (0.95, D), (0.5, D), (0.95, D+2), (0.95, D+4).
pub fn default_stop_grid() -> Vec<(f64, usize)> {
    vec![(0.95, 0), (0.5, 0), (0.95, 2), (0.95, 4)]
}

/// Accuracy for each (confidence threshold, depth offset) cell.
pub fn sweep_stop_criteria(model: &Model, problems: &[ProblemInstance], base: &EvalConfig, grid: &[(f64, usize)]) -> Result<Vec<SweepCell>> {
    grid.iter()
        .map(|&(tf, off)| {
            let cfg = EvalConfig {
                engine: EngineConfig { confidence_threshold: tf, max_depth: base.engine.max_depth + off, ..base.engine.clone() },
                exec: base.exec,
            };
            let r = evaluate_dataset(model, problems, &cfg)?;
            Ok(SweepCell { confidence_threshold: tf, depth_offset: off, max_depth: cfg.engine.max_depth, accuracy: r.accuracy })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub thought: String,
    /// Head-averaged weights over the problem tokens; sums to 1.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub id: String,
    pub tokens: Vec<String>,
    pub final_thought: String,
    pub rows: Vec<AttentionRow>,
}

/// Solves `problem` and scores every final reasonable thought against the
/// token embeddings with the answer layer.
pub fn export_attention(model: &Model, problem: &ProblemInstance, engine: &EngineConfig) -> Result<(ExpansionTrace, AttentionExport)> {
    let mut scorer = NeuralScorer::new(model, problem, model.tape())?;
    let trace = expand(&mut scorer, engine, None)?;
    let ids = trace.levels.last().map(|l| l.accepted.clone()).unwrap_or_default();
    let weights = scorer.token_attention(&ids)?;
    let rows = ids
        .iter()
        .zip(weights.rows())
        .map(|(&id, w)| AttentionRow { thought: trace.thoughts[id].expr.serialize(), weights: w.to_vec() })
        .collect();
    let export = AttentionExport {
        id: problem.id.clone(),
        tokens: problem.unmasked_tokens(),
        final_thought: trace.final_expr().serialize(),
        rows,
    };
    Ok((trace, export))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_equation, playground_gold, ConstantVocabulary};
    use crate::problem::tests::playground_record;

    fn playground() -> ProblemInstance {
        ProblemInstance::from_record(&playground_record(), &ConstantVocabulary::new()).unwrap()
    }

    #[test]
    fn accuracy_by_value() {
        let p = playground();
        let gold = playground_gold();
        assert!(answer_accuracy(&gold, &gold, &p.env).unwrap());
        let wrong = parse_equation("80*40", &p.env).unwrap();
        assert!(!answer_accuracy(&wrong, &gold, &p.env).unwrap());
        let a = parse_equation("(40+15)*(80+10)", &p.env).unwrap();
        let b = parse_equation("(80+10)*(40+15)", &p.env).unwrap();
        assert!(answer_accuracy(&a, &b, &p.env).unwrap());
        let inf = parse_equation("80/(40-40)", &p.env).unwrap();
        assert!(!answer_accuracy(&inf, &gold, &p.env).unwrap());
    }

    #[test]
    fn tolerance_is_relative_above_one() {
        assert!(values_agree(1000.05, 1000.0));
        assert!(!values_agree(1000.2, 1000.0));
        assert!(values_agree(0.00005, 0.0));
        assert!(!values_agree(f64::NAN, 1.0));
    }

    #[test]
    fn oracle_is_perfect_and_report_consistent() {
        let problems = crate::problem::synth_generate(&crate::problem::SynthSpec::default(), 60, 4).unwrap();
        let r = evaluate_oracle(&problems, &EngineConfig::default(), false, Exec::Parallel).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.correct, r.examples.iter().filter(|e| e.correct).count());
        let s = r.stats.unwrap();
        assert!(s.path_depth.max <= 6.0);
        let seq = evaluate_oracle(&problems, &EngineConfig::default(), false, Exec::Sequential).unwrap();
        assert_eq!(r, seq);
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((s.min, s.mean, s.max), (1.0, 2.5, 4.0));
        assert!((s.se - (1.666_666_666_666_666_7f64 / 4.0).sqrt()).abs() < 1e-12);
        assert!(Summary::of(&[]).is_none());
        assert_eq!(aggregate_runs(&[0.9; 5]).unwrap().se, 0.0);
    }

    #[test]
    fn sweep_grid_shape() {
        let m = crate::model::tests::small_model(1);
        let p = vec![playground()];
        let base = EvalConfig { engine: EngineConfig { max_depth: 2, ..EngineConfig::default() }, exec: Exec::Sequential };
        assert!(sweep_stop_criteria(&m, &p, &base, &[]).unwrap().is_empty());
        let cells = sweep_stop_criteria(&m, &p, &base, &default_stop_grid()[..2]).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[1].confidence_threshold, 0.5);
        assert_eq!(default_stop_grid().len(), 4);
    }

    #[test]
    fn attention_export_shape() {
        let m = crate::model::tests::small_model(6);
        let p = playground();
        let (trace, ex) = export_attention(&m, &p, &EngineConfig { max_depth: 1, ..EngineConfig::default() }).unwrap();
        assert_eq!(ex.rows.len(), trace.levels.last().unwrap().accepted.len());
        for r in &ex.rows {
            assert_eq!(r.weights.len(), p.tokens.len());
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
