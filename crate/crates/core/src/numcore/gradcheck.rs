use crate::error::{Result, SanasError};

/// Compares an analytic gradient against central finite differences.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(mut f: F, analytic: &[f64], theta0: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != theta0.len() {
        return Err(SanasError::Input(format!(
            "grad_check: {} analytic entries for {} coordinates",
            analytic.len(),
            theta0.len()
        )));
    }
    let mut theta = theta0.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let up = f(&theta);
        theta[i] = orig - h;
        let down = f(&theta);
        theta[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(SanasError::Numeric(format!(
                "grad_check: objective is non-finite around coordinate {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * h);
        let scale = 1f64.max(analytic[i].abs()).max(numeric.abs());
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{linear, relu, Tensor};

    #[test]
    fn quadratic_is_exact() {
        let theta = [0.3, -1.2, 2.5];
        let f = |v: &[f64]| 3.0 * v[0] * v[0] + v[1] * v[1] - 0.5 * v[2] * v[2] + v[0] * v[1];
        let g = [6.0 * 0.3 - 1.2, 2.0 * -1.2 + 0.3, -2.5];
        assert!(grad_check(f, &g, &theta, 1e-5).unwrap() <= 1e-9);
    }

    #[test]
    fn linear_of_relu_with_positive_preactivations() {
        let w = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap();
        let theta = [0.4, 1.1, 0.7];
        let f = |v: &[f64]| {
            let h = relu(&Tensor::vector(v.to_vec()));
            linear(&h, &w, None).unwrap().sum()
        };
        // all coordinates > h, so the relu is the identity locally
        let g: Vec<f64> = (0..3).map(|i| w.data()[i] + w.data()[3 + i]).collect();
        assert!(grad_check(f, &g, &theta, 1e-5).unwrap() <= 1e-6);
    }

    #[test]
    fn detects_a_one_percent_corruption() {
        let theta = [0.3, -1.2, 2.5];
        let f = |v: &[f64]| v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        let g: Vec<f64> = theta.iter().map(|t| 2.0 * t * 1.01).collect();
        assert!(grad_check(f, &g, &theta, 1e-5).unwrap() >= 9e-3);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let f = |v: &[f64]| (v[0]).ln();
        assert!(grad_check(f, &[1.0], &[0.0], 1e-5).is_err());
    }
}
