use statrs::function::gamma::ln_gamma;

use super::InferenceError;

/// Lower clamp for probabilities entering a log.
pub const PROB_EPS: f64 = 1e-12;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binomial log-likelihood without the `ln C(n, k)` term, which does not depend on `p`.
pub fn binomial_loglik(k: u64, n: u64, p: f64) -> Result<f64, InferenceError> {
    if k > n {
        return Err(InferenceError::Domain(format!("binomial k={k} exceeds n={n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(InferenceError::Domain(format!("binomial p={p} outside [0, 1]")));
    }
    Ok(binomial_loglik_unchecked(k as f64, n as f64, p))
}

#[inline]
pub(crate) fn binomial_loglik_unchecked(k: f64, n: f64, p: f64) -> f64 {
    let p = clamp_prob(p);
    k * p.ln() + (n - k) * (1.0 - p).ln()
}

/// [`binomial_loglik`] parameterized by the logit of `p`.
#[inline]
pub fn binomial_loglik_logit(k: f64, n: f64, eta: f64) -> f64 {
    binomial_loglik_unchecked(k, n, logistic(eta))
}

/// Gamma log-density with shape/rate parameterization.
pub fn gamma_loglik(x: f64, shape: f64, rate: f64) -> Result<f64, InferenceError> {
    if !(x > 0.0 && shape > 0.0 && rate > 0.0) || !(x.is_finite() && shape.is_finite() && rate.is_finite()) {
        return Err(InferenceError::Domain(format!(
            "gamma density needs positive finite arguments (x={x}, shape={shape}, rate={rate})"
        )));
    }
    // Γ(1) = Γ(2) = 1; the series approximation is off by an ulp there
    let ln_gamma_shape = if shape == 1.0 || shape == 2.0 { 0.0 } else { ln_gamma(shape) };
    Ok(shape * rate.ln() - ln_gamma_shape + (shape - 1.0) * x.ln() - rate * x)
}

pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn binomial_examples() {
        assert_abs_diff_eq!(binomial_loglik(1, 1, 0.5).unwrap(), -std::f64::consts::LN_2, epsilon = 1e-12);
        let near_zero = binomial_loglik(0, 10, 1e-15).unwrap();
        assert!(near_zero <= 0.0 && near_zero > -1e-9);
        assert!(matches!(binomial_loglik(3, 2, 0.5), Err(InferenceError::Domain(_))));
    }

    #[test]
    fn binomial_peaks_at_the_mle() {
        // brute-force grid over p: the maximizer for k=3, n=10 is 0.3
        let grid: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
        let best = grid
            .iter()
            .copied()
            .max_by(|a, b| binomial_loglik(3, 10, *a).unwrap().total_cmp(&binomial_loglik(3, 10, *b).unwrap()))
            .unwrap();
        assert_abs_diff_eq!(best, 0.3, epsilon = 1e-9);
        assert!(binomial_loglik(3, 10, 0.3).unwrap() > binomial_loglik(3, 10, 0.29).unwrap());
    }

    #[test]
    fn binomial_normalizes_with_combinatorial_term() {
        // Adding back ln C(n,k) and summing over k must give total mass 1.
        for &(n, p) in &[(1u64, 0.5), (10, 0.3), (37, 0.91), (200, 0.02)] {
            let total: f64 = (0..=n)
                .map(|k| {
                    let ln_choose = ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0);
                    (ln_choose + binomial_loglik(k, n, p).unwrap()).exp()
                })
                .sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn logit_form_matches() {
        for eta in [-30.0, -3.0, 0.0, 0.7, 40.0] {
            let p = logistic(eta);
            assert_abs_diff_eq!(binomial_loglik_logit(3.0, 10.0, eta), binomial_loglik(3, 10, p).unwrap(), epsilon = 1e-12);
        }
        assert!(binomial_loglik_logit(3.0, 10.0, 800.0).is_finite());
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_loglik(1.0, 1.0, 1.0).unwrap(), -1.0);
        assert!(gamma_loglik(0.0, 1.0, 1.0).is_err());
        assert!(gamma_loglik(1.0, -1.0, 1.0).is_err());
        assert!(gamma_loglik(1.0, 1.0, 0.0).is_err());
    }

    /// Composite Simpson rule on [a, b] with `n` (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn gamma_density_integrates_to_one() {
        for &(shape, rate) in &[(3.0, 1.5), (100.0, 2.0), (1.0, 1.0), (50.0, 0.05), (7.5, 0.3)] {
            let mean = shape / rate;
            let sd: f64 = (shape as f64).sqrt() / rate;
            let lo = (mean - 40.0 * sd).max(0.0);
            let hi = mean + 40.0 * sd;
            let at_zero = if shape == 1.0 { rate } else { 0.0 };
            let f = |x: f64| if x <= 0.0 { at_zero } else { gamma_loglik(x, shape, rate).unwrap().exp() };
            let mass = simpson(f, lo, hi, 200_000);
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-8);
            let m1 = simpson(|x| x * f(x), lo, hi, 200_000);
            assert_abs_diff_eq!(m1 / mean, 1.0, epsilon = 1e-8);
        }
        // the specific point value used in docs: x=2, shape=3, rate=1.5
        let direct = 1.5f64.powi(3) / 2.0 * 4.0 * (-3.0f64).exp();
        assert_abs_diff_eq!(gamma_loglik(2.0, 3.0, 1.5).unwrap().exp(), direct, epsilon = 1e-12);
    }
}
