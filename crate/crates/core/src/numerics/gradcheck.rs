//! Central-difference gradient checking.

use std::collections::BTreeMap;

use super::{Graph, GraphOptions, NumericsError, ParamSet, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tol: f64,
    /// Evaluate straight-through nodes with their smooth surrogate, so the
    /// numeric oracle differentiates the function the analytic pass assumes.
    pub surrogate: bool,
    /// Hold every `stop_gradient` output at its unperturbed value.
    pub freeze_stop_gradients: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tol: 1e-4,
            surrogate: false,
            freeze_stop_gradients: true,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` per parameter, in norm.
    pub per_param: BTreeMap<String, f64>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
    pub surrogate: bool,
    pub note: String,
}

fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = analytic.norm().max(numeric.norm());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` must build the same graph on every call. Two unperturbed evaluations
/// that disagree are reported as [`NumericsError::NonDeterministic`].
pub fn finite_diff_check<F>(
    params: &ParamSet,
    options: GradCheckOptions,
    f: F,
) -> Result<GradCheckReport, NumericsError>
where
    F: for<'g> Fn(&'g Graph, &ParamSet) -> Result<Var<'g>, NumericsError>,
{
    let base_options = GraphOptions {
        surrogate: options.surrogate,
        frozen_stop_gradients: None,
    };
    let graph = Graph::with_options(base_options.clone());
    let loss = f(&graph, params)?;
    let base_value = loss.item();
    let grads = graph.backward(loss)?;
    let frozen = options.freeze_stop_gradients.then(|| graph.stop_gradient_values());

    let again = Graph::with_options(base_options);
    let repeat = f(&again, params)?.item();
    if repeat.to_bits() != base_value.to_bits() {
        return Err(NumericsError::NonDeterministic {
            first: base_value,
            second: repeat,
        });
    }

    let eval = |ps: &ParamSet| -> Result<f64, NumericsError> {
        let g = Graph::with_options(GraphOptions {
            surrogate: options.surrogate,
            frozen_stop_gradients: frozen.clone(),
        });
        Ok(f(&g, ps)?.item())
    };

    let mut per_param = BTreeMap::new();
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let analytic = grads.param(name).unwrap_or_else(|| Tensor::zeros(value.shape()));
        let mut numeric = Tensor::zeros(value.shape());
        for i in 0..value.len() {
            let original = value.data()[i];
            probe.get_mut(name).expect("param").data_mut()[i] = original + options.step;
            let plus = eval(&probe)?;
            probe.get_mut(name).expect("param").data_mut()[i] = original - options.step;
            let minus = eval(&probe)?;
            probe.get_mut(name).expect("param").data_mut()[i] = original;
            numeric.data_mut()[i] = (plus - minus) / (2.0 * options.step);
        }
        per_param.insert(name.to_string(), relative_error(&analytic, &numeric));
    }
    let max_rel_error = per_param.values().copied().fold(0.0, f64::max);
    let passed = max_rel_error < options.tol;
    let note = if options.surrogate {
        "straight-through nodes evaluated with their surrogate in the numeric pass".to_string()
    } else {
        "hard forward values used in the numeric pass".to_string()
    };
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        tol: options.tol,
        passed,
        surrogate: options.surrogate,
        note,
    })
}
