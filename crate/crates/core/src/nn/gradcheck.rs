/// Denominator floor for [`relative_error`]: gradients smaller than this are compared in
/// absolute terms.
const SCALE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central-difference check of every parameter. `eval` returns the loss and its analytic
/// gradient at the given parameters; it must be deterministic.
pub fn grad_check(
    params: &[f64],
    eps: f64,
    mut eval: impl FnMut(&[f64]) -> (f64, Vec<f64>),
) -> GradCheckReport {
    let (_, analytic) = eval(params);
    assert_eq!(analytic.len(), params.len(), "gradient length must match parameters");
    let mut probe = params.to_vec();
    let mut report =
        GradCheckReport { max_relative_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    for i in 0..params.len() {
        probe[i] = params[i] + eps;
        let (plus, _) = eval(&probe);
        probe[i] = params[i] - eps;
        let (minus, _) = eval(&probe);
        probe[i] = params[i];
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_relative_error || !err.is_finite() {
            report = GradCheckReport {
                max_relative_error: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    report
}
