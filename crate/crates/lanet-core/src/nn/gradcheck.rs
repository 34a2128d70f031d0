//! Central finite-difference verification of reverse-mode gradients.

use ndarray::Array2;
use std::collections::BTreeMap;

use crate::nn::ParamStore;

/// One entry whose analytic and numeric gradients disagreed beyond tolerance.
#[derive(Debug, Clone)]
pub struct GradCheckFailure {
    pub param: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a [`grad_check`] sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Number of scalar entries compared.
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: Option<String>,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Relative error with a small floor so near-zero gradients compare on an
/// absolute scale without drowning in finite-difference noise.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Compare reverse-mode gradients against central finite differences for
/// every entry of every registered parameter.
///
/// `loss` evaluates the (deterministic) scalar objective from a store;
/// `analytic` runs the same computation once and returns its gradients.
/// Parameters absent from the analytic map are treated as zero gradient,
/// which is correct for parameters the loss never touches.
///
/// Rectifier kinks make a central difference ill-posed when a
/// pre-activation lies within `step` of zero: the estimate blends the two
/// one-sided slopes. When the central probe disagrees, the two one-sided
/// differences are consulted; the analytic value is accepted if it matches
/// either side, which is exactly the subgradient contract reverse mode
/// implements. A genuinely wrong gradient matches neither side.
pub fn grad_check(
    store: &ParamStore,
    loss: &dyn Fn(&ParamStore) -> f64,
    analytic: &dyn Fn(&ParamStore) -> BTreeMap<String, Array2<f64>>,
    step: f64,
    tol: f64,
) -> GradCheckReport {
    let grads = analytic(store);
    let f0 = loss(store);
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut work = store.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst_param: None,
        failures: Vec::new(),
    };
    for name in &names {
        let shape = store.value(name).raw_dim();
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                work.perturb(name, (i, j), step);
                let fp = loss(&work);
                work.perturb(name, (i, j), -2.0 * step);
                let fm = loss(&work);
                work.perturb(name, (i, j), step);
                let a = grads.get(name).map_or(0.0, |g| g[(i, j)]);
                let central = (fp - fm) / (2.0 * step);
                let mut numeric = central;
                let mut err = rel_err(a, central);
                if err > tol {
                    // Possible kink inside the probe interval: check the
                    // one-sided slopes.
                    for oneside in [(fp - f0) / step, (f0 - fm) / step] {
                        let e = rel_err(a, oneside);
                        if e < err {
                            err = e;
                            numeric = oneside;
                        }
                    }
                }
                report.checked += 1;
                if err > report.max_rel_err {
                    report.max_rel_err = err;
                    report.worst_param = Some(name.clone());
                }
                if err > tol {
                    report.failures.push(GradCheckFailure {
                        param: name.clone(),
                        index: (i, j),
                        analytic: a,
                        numeric,
                        rel_err: err,
                    });
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, Session};

    #[test]
    fn linear_function_has_unit_gradient() {
        let mut store = ParamStore::new(0);
        store.register("p", 2, 3, Init::UniformFanIn { scale: 1.0 });
        let loss = |s: &ParamStore| s.value("p").sum();
        let analytic = |s: &ParamStore| {
            let mut sess = Session::new(s);
            let p = sess.p("p");
            let l = sess.g.sum_all(p);
            sess.grads(l).1
        };
        let report = grad_check(&store, &loss, &analytic, 1e-5, 1e-6);
        assert!(report.passed(), "{:?}", report.failures);
        assert_eq!(report.checked, 6);
        let g = analytic(&store);
        assert!(g["p"].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sum_of_squares_is_stationary_at_zero() {
        let mut store = ParamStore::new(0);
        store.register("p", 2, 2, Init::Zeros);
        let loss = |s: &ParamStore| s.value("p").mapv(|v| v * v).sum();
        let analytic = |s: &ParamStore| {
            let mut sess = Session::new(s);
            let p = sess.p("p");
            let sq = sess.g.mul(p, p);
            let l = sess.g.sum_all(sq);
            sess.grads(l).1
        };
        let report = grad_check(&store, &loss, &analytic, 1e-5, 1e-6);
        assert!(report.passed());
        let g = analytic(&store);
        assert!(g["p"].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut store = ParamStore::new(0);
        store.register("p", 1, 2, Init::Value(0.7));
        let loss = |s: &ParamStore| s.value("p").mapv(|v| v * v).sum();
        // Deliberately wrong analytic gradient (factor 3 instead of 2).
        let analytic = |s: &ParamStore| {
            let mut out = BTreeMap::new();
            out.insert("p".to_string(), s.value("p").mapv(|v| 3.0 * v));
            out
        };
        let report = grad_check(&store, &loss, &analytic, 1e-5, 1e-4);
        assert!(!report.passed());
    }
}
