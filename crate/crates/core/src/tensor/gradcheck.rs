//! Central finite-difference check of tape gradients.

use super::{Grads, ParamId, ParamStore, Tape, Var};

/// Denominator floor of the relative error. Tensors whose true gradient is
/// zero (key biases under softmax shift invariance) are then judged by an
/// absolute error of `1e-4 · GRAD_NORM_FLOOR`.
pub const GRAD_NORM_FLOOR: f64 = 1e-5;

/// Agreement between analytic and numeric gradients for one tensor.
#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-5)`
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

/// Compares `∂f/∂θ` from [`Tape::backward`] with central differences of
/// step `step` for every tensor in `params` (all tensors when `None`).
/// `f` must build a `1 × 1` output on an inference tape.
pub fn gradient_check(
    store: &ParamStore,
    params: Option<&[ParamId]>,
    step: f64,
    f: &dyn Fn(&mut Tape<'_>) -> Var,
) -> Vec<TensorCheck> {
    let mut tape = Tape::new(store);
    let out = f(&mut tape);
    let mut grads = Grads::new(store);
    tape.backward(out, 1.0, &mut grads);
    drop(tape);

    let eval = |s: &ParamStore| {
        let mut t = Tape::new(s);
        let v = f(&mut t);
        t.scalar(v)
    };
    let ids: Vec<ParamId> = params.map(<[ParamId]>::to_vec).unwrap_or_else(|| store.ids().collect());
    let mut work = store.clone();
    ids.into_iter()
        .map(|id| {
            let shape = store.get(id).dim();
            let zero = ndarray::Array2::zeros(shape);
            let analytic = grads.get(id).cloned().unwrap_or(zero);
            let mut numeric = ndarray::Array2::zeros(shape);
            for idx in 0..analytic.len() {
                let (r, c) = (idx / shape.1, idx % shape.1);
                let orig = store.get(id)[[r, c]];
                work.get_mut(id)[[r, c]] = orig + step;
                let plus = eval(&work);
                work.get_mut(id)[[r, c]] = orig - step;
                let minus = eval(&work);
                work.get_mut(id)[[r, c]] = orig;
                numeric[[r, c]] = (plus - minus) / (2.0 * step);
            }
            let norm = |m: &ndarray::Array2<f64>| m.iter().map(|x| x * x).sum::<f64>().sqrt();
            let (an, nn) = (norm(&analytic), norm(&numeric));
            TensorCheck {
                name: store.name(id).to_string(),
                rel_error: norm(&(&analytic - &numeric)) / an.max(nn).max(GRAD_NORM_FLOOR),
                analytic_norm: an,
                numeric_norm: nn,
            }
        })
        .collect()
}

/// Largest relative error of a check.
pub fn worst(checks: &[TensorCheck]) -> Option<&TensorCheck> {
    checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
}
