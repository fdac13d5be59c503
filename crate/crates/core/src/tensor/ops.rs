use rand::Rng;

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x·Φ(x)` with `Φ` the standard normal CDF.
#[inline]
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// `d/dx [x·Φ(x)] = Φ(x) + x·φ(x)`.
#[inline]
pub fn gelu_derivative(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

#[inline]
pub(crate) fn normal_cdf(x: f64) -> f64 {
    // erfc keeps full relative precision in the left tail, where 1 + erf cancels.
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

#[inline]
pub(crate) fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Inverted-dropout mask: 0 with probability `rate`, else `1/(1−rate)`.
pub(crate) fn dropout_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Inverted dropout. Identity in eval mode or when `rate == 0`.
pub fn dropout<R: Rng + ?Sized>(z: &[f64], rate: f64, rng: &mut R, training: bool) -> Result<Vec<f64>> {
    check_dropout_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(z.to_vec());
    }
    let mask = dropout_mask(z.len(), rate, rng);
    Ok(z.iter().zip(&mask).map(|(v, m)| v * m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Maclaurin series of erf; converges quickly for |x| ≤ 3.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -x * x / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn gelu_at_zero() {
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn gelu_at_one_matches_series_oracle() {
        let want = 0.5 * (1.0 + erf_series(1.0 / 2f64.sqrt()));
        assert!((gelu(1.0) - want).abs() < 1e-15);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
    }

    #[test]
    fn gelu_vanishes_far_left() {
        let y = gelu(-10.0);
        assert!(y < 0.0 && y.abs() < 1e-20, "gelu(-10) = {y:e}");
        // -10·Φ(-10) ≈ -7.62e-23
        assert!((y / -7.619_853_024_160_527e-23 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gelu_derivative_at_zero_is_half() {
        assert_eq!(gelu_derivative(0.0), 0.5);
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.2, 1.5, 4.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_derivative(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = vec![1.0, -2.0, 3.5];
        assert_eq!(dropout(&z, 0.0, &mut rng, true).unwrap(), z);
    }

    #[test]
    fn dropout_eval_mode_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = vec![1.0, -2.0, 3.5];
        assert_eq!(dropout(&z, 0.5, &mut rng, false).unwrap(), z);
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            dropout(&[1.0], 1.0, &mut rng, true),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dropout_is_unbiased_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 100_000;
        let z = vec![2.5; draws];
        let out = dropout(&z, 0.5, &mut rng, true).unwrap();
        let mean = out.iter().sum::<f64>() / draws as f64;
        assert!((mean / 2.5 - 1.0).abs() < 0.01, "mean = {mean}");
        assert!(out.iter().all(|&v| v == 0.0 || v == 5.0));
    }
}
