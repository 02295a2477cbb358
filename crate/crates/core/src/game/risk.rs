use super::GameError;

/// Entropic risk `(1/θ) log mean(exp(θ Ψ))` via log-sum-exp; the sample
/// mean when `θ = 0`.
pub fn entropic_risk(theta: f64, samples: &[f64]) -> Result<f64, GameError> {
    if samples.is_empty() {
        return Err(GameError::EmptySamples);
    }
    if samples.iter().any(|x| !x.is_finite()) || !theta.is_finite() {
        return Err(GameError::NonFinite("cost samples".into()));
    }
    let n = samples.len() as f64;
    if theta == 0.0 {
        return Ok(samples.iter().sum::<f64>() / n);
    }
    let scaled: Vec<f64> = samples.iter().map(|x| theta * x).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(GameError::RiskOverflow { theta });
    }
    let sum: f64 = scaled.iter().map(|s| (s - max).exp()).sum();
    let value = (max + (sum / n).ln()) / theta;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(GameError::RiskOverflow { theta })
    }
}

/// Closed form for `Ψ ~ N(μ, σ²)`: `μ + θσ²/2`.
pub fn gaussian_entropic_risk(theta: f64, mean: f64, variance: f64) -> f64 {
    mean + theta * variance / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn constant_samples() {
        for theta in [-5.0, -0.1, 0.0, 0.3, 5.0] {
            let r = entropic_risk(theta, &[2.5; 7]).unwrap();
            assert!((r - 2.5).abs() < 1e-12, "{theta}: {r}");
        }
    }

    #[test]
    fn small_theta_limits_to_mean() {
        let s = [1.0, 1.5, 2.0, 2.5];
        let mean = 7.0 / 4.0;
        assert!((entropic_risk(1e-6, &s).unwrap() - mean).abs() < 1e-6);
        assert!((entropic_risk(-1e-6, &s).unwrap() - mean).abs() < 1e-6);
        assert_eq!(entropic_risk(0.0, &s).unwrap(), mean);
    }

    #[test]
    fn gaussian_monte_carlo_converges() {
        let (mu, sigma) = (3.0, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = Normal::new(mu, sigma).unwrap();
        let samples: Vec<f64> = (0..200_000).map(|_| dist.sample(&mut rng)).collect();
        for theta in [-1.0, 0.5, 1.0] {
            let est = entropic_risk(theta, &samples).unwrap();
            let exact = gaussian_entropic_risk(theta, mu, sigma * sigma);
            // Delta-method standard error of the log-MGF estimator.
            let se = ((theta * theta * sigma * sigma).exp_m1() / samples.len() as f64).sqrt() / theta.abs();
            assert!((est - exact).abs() < 5.0 * se, "theta {theta}: {est} vs {exact} (se {se})");
        }
    }

    #[test]
    fn large_costs_stay_finite_with_stabilization() {
        let r = entropic_risk(5.0, &[1e3, 1e3 + 1.0]).unwrap();
        assert!(r > 1e3 && r < 1e3 + 1.0);
    }

    #[test]
    fn overflow_reports_breakdown() {
        assert_eq!(entropic_risk(10.0, &[1e308, 0.0]), Err(GameError::RiskOverflow { theta: 10.0 }));
        assert_eq!(entropic_risk(1.0, &[]), Err(GameError::EmptySamples));
    }

    proptest! {
        #[test]
        fn risk_is_monotone_in_theta(
            samples in proptest::collection::vec(-20.0..20.0f64, 2..30),
            t1 in -5.0..5.0f64, dt in 0.0..3.0f64,
        ) {
            let lo = entropic_risk(t1, &samples).unwrap();
            let hi = entropic_risk(t1 + dt, &samples).unwrap();
            prop_assert!(lo <= hi + 1e-9 * hi.abs().max(1.0));
            let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
            let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo >= min - 1e-9 && lo <= max + 1e-9);
        }
    }
}
