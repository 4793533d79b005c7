use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Below this magnitude the comparison degrades to absolute error.
pub const GRAD_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// `(analytic, numeric)` gradient of the worst entry.
    pub worst_values: (f64, f64),
    pub entries_checked: usize,
    pub groups_checked: usize,
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `per_param` caps the number of entries probed in each parameter tensor
/// (evenly spaced); `None` probes all of them. The error of one entry is
/// `|analytic - numeric| / max(|analytic|, |numeric|, GRAD_FLOOR)`.
pub fn grad_check<F>(params: &ParamStore, h: f64, per_param: Option<usize>, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::Input(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut store = params.values_only();
    store.zero_grad();
    let mut g = Graph::new();
    let out = f(&mut g, &store)?;
    g.backward_into(out, &mut store, 1.0)?;
    let analytic = store.clone();

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        Ok(g.value(out).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        entries_checked: 0,
        groups_checked: 0,
    };
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let n = store.get(&name)?.len();
        let indices: Vec<usize> = match per_param {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        report.groups_checked += 1;
        for idx in indices {
            let orig = store.get(&name)?.data()[idx];
            store.get_mut(&name)?.data_mut()[idx] = orig + h;
            let fp = eval(&store)?;
            store.get_mut(&name)?.data_mut()[idx] = orig - h;
            let fm = eval(&store)?;
            store.get_mut(&name)?.data_mut()[idx] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::Probe { param: name, index: idx });
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.grad(&name).map(|t| t.data()[idx]).unwrap_or(0.0);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            report.entries_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), idx));
                report.worst_values = (a, numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::row(vec![0.3, -1.2, 2.5]));
        s.insert("b", Tensor::matrix(2, 2, vec![1.0, -0.5, 0.25, 4.0]).unwrap());
        s
    }

    #[test]
    fn quadratic_is_exact() {
        let r = grad_check(&store(), 1e-5, None, |g, s| {
            let mut total = None;
            for name in ["a", "b"] {
                let p = g.param(s, name)?;
                let sq = g.mul(p, p)?;
                let sum = g.sum_all(sq);
                total = Some(match total {
                    None => sum,
                    Some(t) => g.add(t, sum)?,
                });
            }
            Ok(total.unwrap())
        })
        .unwrap();
        assert_eq!(r.entries_checked, 7);
        assert!(r.max_rel_error <= 1e-7, "{r:?}");
    }

    #[test]
    fn constant_objective_has_zero_error() {
        let r = grad_check(&store(), 1e-5, None, |g, _| Ok(g.constant(Tensor::scalar(3.0)))).unwrap();
        assert!(r.max_rel_error <= 1e-9);
    }

    #[test]
    fn non_finite_probe_is_reported() {
        let err = grad_check(&store(), 1e-5, Some(1), |g, s| {
            let p = g.param(s, "a")?;
            let v = g.value(p).data()[0];
            Ok(g.constant(Tensor::scalar(if v > 0.3 { f64::NAN } else { 0.0 })))
        })
        .unwrap_err();
        assert!(matches!(err, Error::Probe { .. }));
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(grad_check(&store(), 0.0, None, |g, _| Ok(g.constant(Tensor::scalar(0.0)))).is_err());
    }
}
