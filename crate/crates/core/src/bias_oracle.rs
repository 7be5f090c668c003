//! Asymptotic-bias oracle for 2SLS under an endogenous error scale.
//!
//! When the structural error is `g(D) e` with `e` correlated with the
//! first-stage error, the probability limit of the 2SLS slope is
//!
//! ```text
//! alpha1 + cross_moment / sigma_h,
//!   cross_moment = pi1 E[(Z - E Z) g(D) e],
//!   sigma_h      = pi1^2 Var(Z)
//! ```
//!
//! (scalar instrument, constant exogenous block, as in the simulated design).
//! Both expectations are evaluated by Monte Carlo integration over the exact
//! design distributions, in deterministic chunked substreams, with a
//! delta-method standard error for the ratio.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{substream, DOMAIN_ORACLE};
use crate::simulation::McConfig;

/// Draws per substream chunk.
const CHUNK: usize = 1 << 16;

/// Below this estimated `sigma_h` the bias ratio is considered undefined.
pub const SIGMA_H_FLOOR: f64 = 1e-12;

/// Minimum draw count accepted by the oracle.
pub const MIN_DRAWS: usize = 100_000;

/// Monte Carlo estimate of the asymptotic 2SLS bias.
#[derive(Debug, Clone, Copy)]
pub struct BiasOracleResult {
    /// Estimated asymptotic bias `cross_moment / sigma_h`.
    pub bias: f64,
    /// Estimated instrument signal `pi1^2 Var(Z)`.
    pub sigma_h: f64,
    /// Estimated cross moment `pi1 E[(Z - E Z) g(D) e]`.
    pub cross_moment: f64,
    /// Draws used.
    pub mc_draws: usize,
    /// Delta-method standard error of the bias ratio.
    pub mc_standard_error: f64,
}

/// One draw of `(z, g(d) e)` from the design in `config`.
#[inline]
fn draw(config: &McConfig, rng: &mut impl Rng) -> (f64, f64) {
    let z: f64 = rng.sample::<f64, _>(StandardNormal).abs();
    let u: f64 = rng.sample(StandardNormal);
    let v: f64 = rng.sample(StandardNormal);
    let h = (config.gamma1 * z + config.gamma2).max(0.0).sqrt();
    let d = config.pi1 * z + config.pi2 + h * v;
    let e = u + config.lambda * v;
    let g = config.delta1 * d + config.delta2 * d * d + config.delta3;
    (z, g * e)
}

/// Evaluates the asymptotic 2SLS bias for the design in `config` by
/// simulation. Deterministic in `(seed, draws)` and independent of worker
/// count.
pub fn bias_oracle_2sls(config: &McConfig, draws: usize, seed: u64) -> Result<BiasOracleResult> {
    if draws < MIN_DRAWS {
        return Err(Error::InvalidConfig(format!(
            "bias oracle needs at least {MIN_DRAWS} draws, got {draws}"
        )));
    }
    let mut probe = *config;
    probe.n = probe.n.max(50);
    probe.replications = probe.replications.max(1);
    probe.validate()?;

    let chunks: Vec<(u64, usize)> = (0..draws)
        .step_by(CHUNK)
        .enumerate()
        .map(|(c, start)| (c as u64, CHUNK.min(draws - start)))
        .collect();

    // Pass 1: first moments of z and g e.
    let partials: Vec<(f64, f64)> = chunks
        .par_iter()
        .map(|&(chunk, len)| {
            let mut rng = substream(seed, DOMAIN_ORACLE, chunk);
            let mut sum_z = 0.0;
            let mut sum_ge = 0.0;
            for _ in 0..len {
                let (z, ge) = draw(config, &mut rng);
                sum_z += z;
                sum_ge += ge;
            }
            (sum_z, sum_ge)
        })
        .collect();
    let nf = draws as f64;
    let mean_z = partials.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_ge = partials.iter().map(|p| p.1).sum::<f64>() / nf;

    // Pass 2 regenerates the same draws and accumulates the centered products
    //   a = pi1 (z - Ez)(ge - E ge)   (numerator terms)
    //   b = pi1^2 (z - Ez)^2          (denominator terms)
    // plus their second moments for the delta-method variance of a/b.
    let partials: Vec<[f64; 5]> = chunks
        .par_iter()
        .map(|&(chunk, len)| {
            let mut rng = substream(seed, DOMAIN_ORACLE, chunk);
            let mut acc = [0.0; 5];
            for _ in 0..len {
                let (z, ge) = draw(config, &mut rng);
                let zc = z - mean_z;
                let a = config.pi1 * zc * (ge - mean_ge);
                let b = config.pi1 * config.pi1 * zc * zc;
                acc[0] += a;
                acc[1] += b;
                acc[2] += a * a;
                acc[3] += b * b;
                acc[4] += a * b;
            }
            acc
        })
        .collect();
    let mut totals = [0.0; 5];
    for p in &partials {
        for (t, v) in totals.iter_mut().zip(p.iter()) {
            *t += v;
        }
    }
    let cross_moment = totals[0] / nf;
    let sigma_h = totals[1] / nf;
    if sigma_h < SIGMA_H_FLOOR {
        return Err(Error::DegenerateInstrument { sigma_h });
    }
    let bias = cross_moment / sigma_h;

    let var_a = totals[2] / nf - cross_moment * cross_moment;
    let var_b = totals[3] / nf - sigma_h * sigma_h;
    let cov_ab = totals[4] / nf - cross_moment * sigma_h;
    let ratio_variance = (var_a / (sigma_h * sigma_h)
        + cross_moment * cross_moment * var_b / sigma_h.powi(4)
        - 2.0 * cross_moment * cov_ab / sigma_h.powi(3))
        / nf;
    let mc_standard_error = ratio_variance.max(0.0).sqrt();

    Ok(BiasOracleResult {
        bias,
        sigma_h,
        cross_moment,
        mc_draws: draws,
        mc_standard_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_error_scale_means_no_bias() {
        // delta1 = delta2 = 0 and delta3 = 1 gives g identically 1, so the
        // cross moment E[(Z - EZ) e] vanishes.
        let mut config = McConfig::new(1000, 1.0, 1.0, 0.0, 0.0, 0);
        config.delta3 = 1.0;
        let result = bias_oracle_2sls(&config, 400_000, 3).unwrap();
        assert!(result.bias.abs() < 3.0 * result.mc_standard_error);
        assert!(result.sigma_h > 0.0);
    }

    #[test]
    fn exogenous_errors_mean_no_bias_for_any_scale() {
        // lambda = 0 makes e = U independent of everything, so the bias is
        // zero regardless of (delta1, delta2, gamma1).
        let config = McConfig::new(1000, 0.0, 1.0, 1.0, 0.2, 0);
        let result = bias_oracle_2sls(&config, 400_000, 4).unwrap();
        assert!(result.bias.abs() < 3.0 * result.mc_standard_error);
    }

    #[test]
    fn ratio_identity_holds() {
        let config = McConfig::new(1000, 1.0, 0.0, 0.0, 0.2, 0);
        let result = bias_oracle_2sls(&config, 200_000, 5).unwrap();
        assert_relative_eq!(
            result.bias,
            result.cross_moment / result.sigma_h,
            epsilon = 1e-12
        );
    }

    #[test]
    fn oracle_is_deterministic() {
        let config = McConfig::new(1000, 1.0, 1.0, 1.0, 0.0, 0);
        let a = bias_oracle_2sls(&config, 200_000, 6).unwrap();
        let b = bias_oracle_2sls(&config, 200_000, 6).unwrap();
        assert_eq!(a.bias, b.bias);
        assert_eq!(a.mc_standard_error, b.mc_standard_error);
    }

    #[test]
    fn tiny_draw_counts_are_rejected() {
        let config = McConfig::new(1000, 1.0, 0.0, 0.0, 0.2, 0);
        assert!(matches!(
            bias_oracle_2sls(&config, 1000, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn zero_pi1_is_degenerate() {
        let mut config = McConfig::new(1000, 1.0, 0.0, 0.0, 0.2, 0);
        config.pi1 = 0.0;
        assert!(matches!(
            bias_oracle_2sls(&config, MIN_DRAWS, 0),
            Err(Error::DegenerateInstrument { .. })
        ));
    }
}
