//! Finite-difference verification of analytic gradients.

/// Central differences over every parameter. `f` must be a deterministic
/// function of the flat parameter vector. Returns the maximum relative error
/// `|a - n| / max(1e-8, |a| + |n|)` over all coordinates.
pub fn finite_diff_gradcheck(
    f: &mut dyn FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len(), "gradcheck dims");
    let mut work = params.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let fp = f(&work);
        work[i] = orig - eps;
        let fm = f(&work);
        work[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / 1e-8f64.max(analytic[i].abs() + numeric.abs());
        max_rel = max_rel.max(rel);
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_checks_out() {
        // f(p) = sum p_i^2, grad = 2p
        let params = vec![0.3, -1.2, 2.0];
        let analytic: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
        let mut f = |p: &[f64]| p.iter().map(|x| x * x).sum();
        let err = finite_diff_gradcheck(&mut f, &params, &analytic, 1e-5);
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let params = vec![0.5, 1.5];
        let mut analytic = vec![1.0, 3.0];
        analytic[0] *= 1.5; // corrupt
        let mut f = |p: &[f64]| p.iter().map(|x| x * x).sum();
        let err = finite_diff_gradcheck(&mut f, &params, &analytic, 1e-5);
        assert!(err > 1e-2, "corruption not detected: {err}");
    }
}
