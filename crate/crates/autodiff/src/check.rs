//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{AutodiffError, Result};
use crate::params::{Graph, ParameterStore};
use crate::tape::NodeId;

/// Magnitude below which the absolute difference is reported instead of
/// the relative one.
pub const ABS_FALLBACK: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct FdOptions {
    pub eps: f64,
    /// Parameters excluded from comparison, matched by exact name or by
    /// a `prefix/` ending in a slash.
    pub exclude: Vec<String>,
    /// Probe at most this many evenly spaced elements per tensor.
    pub max_elements_per_param: Option<usize>,
    /// Hold stop-gradient outputs at their unperturbed values while
    /// probing, so only unblocked paths contribute to the numeric
    /// derivative.
    pub pin_stop_gradients: bool,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            exclude: Vec::new(),
            max_elements_per_param: None,
            pin_stop_gradients: false,
        }
    }
}

impl FdOptions {
    pub fn with_eps(eps: f64) -> Self {
        Self {
            eps,
            ..Self::default()
        }
    }

    fn excludes(&self, name: &str) -> bool {
        self.exclude
            .iter()
            .any(|e| e == name || (e.ends_with('/') && name.starts_with(e.as_str())))
    }
}

/// Worst disagreement found by a check.
#[derive(Clone, Debug, PartialEq)]
pub struct FdWorst {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: Option<FdWorst>,
}

/// Relative error with an absolute fallback for tiny magnitudes.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale < ABS_FALLBACK {
        diff
    } else {
        diff / scale
    }
}

/// Compares reverse-mode gradients of `f` with `(f(θ+ε) − f(θ−ε)) / 2ε`
/// for every parameter element and returns the worst relative error.
pub fn finite_difference_check<F>(f: F, params: &ParameterStore, eps: f64) -> Result<FdReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    finite_difference_check_with(f, params, &FdOptions::with_eps(eps))
}

pub fn finite_difference_check_with<F>(
    f: F,
    params: &ParameterStore,
    opts: &FdOptions,
) -> Result<FdReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    if !(opts.eps > 0.0 && opts.eps <= 1e-2) {
        return Err(AutodiffError::Check(format!(
            "eps must lie in (0, 1e-2], got {}",
            opts.eps
        )));
    }
    let mut pinned = None;
    let eval = |store: &ParameterStore, pinned: &Option<Vec<crate::Tensor>>| -> Result<f64> {
        let mut g = match pinned {
            Some(values) => Graph::with_pinned_stop_gradients(store, values.clone()),
            None => Graph::new(store),
        };
        let loss = f(&mut g)?;
        let v = g.value(loss);
        if !v.shape().is_scalar() {
            return Err(AutodiffError::NonScalarLoss(v.shape()));
        }
        Ok(v.item())
    };

    let (base, analytic) = {
        let mut g = Graph::new(params);
        let loss = f(&mut g)?;
        let grads = g.backward(loss)?;
        if opts.pin_stop_gradients {
            pinned = Some(g.stop_gradient_values());
        }
        (g.value(loss).item(), g.param_grads(&grads))
    };
    let again = eval(params, &pinned)?;
    if base.to_bits() != again.to_bits() {
        return Err(AutodiffError::Check(format!(
            "closure is not deterministic ({base} vs {again})"
        )));
    }

    let mut probe = params.clone();
    let mut report = FdReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    let names: Vec<String> = params.trainable_names().map(str::to_string).collect();
    for name in names {
        if opts.excludes(&name) {
            continue;
        }
        let len = params.get(&name)?.len();
        let zero;
        let grad = match analytic.get(&name) {
            Some(g) => g,
            // Never bound: the function does not depend on it.
            None => {
                zero = crate::Tensor::zeros(1, len);
                &zero
            }
        };
        let picks: Vec<usize> = match opts.max_elements_per_param {
            Some(max) if max < len => (0..max).map(|i| i * len / max).collect(),
            _ => (0..len).collect(),
        };
        for idx in picks {
            let orig = probe.get(&name)?.data()[idx];
            probe.get_mut(&name)?.data_mut()[idx] = orig + opts.eps;
            let plus = eval(&probe, &pinned)?;
            probe.get_mut(&name)?.data_mut()[idx] = orig - opts.eps;
            let minus = eval(&probe, &pinned)?;
            probe.get_mut(&name)?.data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = grad.data()[idx];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some(FdWorst {
                        param: name.clone(),
                        index: idx,
                        analytic: a,
                        numeric,
                    });
                }
            }
        }
    }
    Ok(report)
}
