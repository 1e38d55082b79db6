//! Finite-difference gradient checking against an independent oracle.
//!
//! Used by the test suites to validate every analytic gradient: the loss is
//! recomputed from scratch with each parameter element nudged by `±h` and the
//! central difference is compared to the backward pass.

use std::collections::BTreeMap;

use crate::autodiff::ParamSet;

/// Central-difference gradients of `loss` w.r.t. every element of every
/// parameter, at step size `h`. `loss` must be a pure function of `params`.
pub fn central_differences(
    params: &ParamSet<f64>,
    h: f64,
    loss: &dyn Fn(&ParamSet<f64>) -> f64,
) -> BTreeMap<String, Vec<f64>> {
    let mut work = params.clone();
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let mut out = BTreeMap::new();
    for name in names {
        let n = params.get(&name).numel();
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            let orig = params.get(&name).data()[i];
            work.get_mut(&name).data_mut()[i] = orig + h;
            let up = loss(&work);
            work.get_mut(&name).data_mut()[i] = orig - h;
            let dn = loss(&work);
            work.get_mut(&name).data_mut()[i] = orig;
            grads.push((up - dn) / (2.0 * h));
        }
        out.insert(name, grads);
    }
    out
}

/// Relative error with a floor: `|a-b| / max(|a|, |b|, floor)`. The floor
/// turns the comparison absolute for near-zero gradients, where central
/// differences bottom out in rounding noise.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst relative error across all parameters, with its location.
pub fn max_rel_err(
    analytic: &BTreeMap<String, Vec<f64>>,
    numeric: &BTreeMap<String, Vec<f64>>,
    floor: f64,
) -> (f64, String) {
    let mut worst = (0.0f64, String::from("-"));
    for (name, av) in analytic {
        let nv = &numeric[name];
        assert_eq!(av.len(), nv.len(), "gradient length for {name}");
        for (i, (&a, &b)) in av.iter().zip(nv).enumerate() {
            let e = rel_err(a, b, floor);
            if e > worst.0 {
                worst = (e, format!("{name}[{i}] analytic={a} numeric={b}"));
            }
        }
    }
    worst
}
