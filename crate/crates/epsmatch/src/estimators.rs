//! Monte Carlo estimators for the probability that the diagonal matching
//! is eps-stable and for the expected number of eps-stable matchings.
//!
//! Three independent routes estimate the same target:
//!
//! * `estimate_p_indicator` draws whole markets and averages the 0/1
//!   indicator of diagonal stability.
//! * `estimate_p_integrand` averages the conditional stability probability
//!   given the diagonal entries; this is the Rao-Blackwellised version of
//!   the indicator and never has larger variance.
//! * `estimate_s_empirical` enumerates exact counts on random markets and
//!   averages them, estimating the expected count directly.
//!
//! The expected count equals the number of injections times the diagonal
//! probability, so the P-estimators convert to count scale through
//! `log_falling_factorial`. Counts explode super-polynomially in the
//! large-eps regime, hence the log-scale reporting.

use crate::enumeration;
use crate::error::{Error, Result};
use crate::market::{EpsParams, Market, Matching};
use crate::numerics::{parallel_moments, MomentSums};
use crate::rng::Seed;
use crate::stability::is_eps_stable;
use num_traits::ToPrimitive;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Estimator identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Indicator,
    Integrand,
    EmpiricalCount,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Indicator => "indicator",
            Method::Integrand => "integrand",
            Method::EmpiricalCount => "empirical-count",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Method> {
        match s {
            "indicator" => Ok(Method::Indicator),
            "integrand" => Ok(Method::Integrand),
            "empirical-count" => Ok(Method::EmpiricalCount),
            other => Err(Error::InvalidParameter(format!(
                "unknown method '{other}' (expected indicator | integrand | empirical-count)"
            ))),
        }
    }
}

/// A Monte Carlo estimate with its sampling error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MCEstimate {
    /// Point estimate; the natural log of the target when `log_scale`.
    pub mean: f64,
    /// Standard error of `mean`. On log scale this is the delta-method
    /// value stderr/mean of the underlying probability estimate.
    pub stderr: f64,
    pub samples: u64,
    pub method: Method,
    pub log_scale: bool,
    /// Direct log-scale confidence interval ln(mean -+ 2 stderr), reported
    /// instead of trusting the delta method when stderr/mean >= 0.5.
    pub log_ci: Option<(f64, f64)>,
}

impl MCEstimate {
    fn probability_scale(mean: f64, stderr: f64, samples: u64, method: Method) -> MCEstimate {
        MCEstimate {
            mean,
            stderr,
            samples,
            method,
            log_scale: false,
            log_ci: None,
        }
    }
}

/// Conditional probability that the diagonal matching is eps-stable given
/// its own entries `x`, `y`: the product of per-pair survival factors
/// (1 - p x_i y_j) over i != j times (1 - q x_i)^k for the k unmatched
/// workers. Evaluated as exp of a log1p sum so that n^2 factors lose no
/// relative accuracy; a factor that is exactly zero short-circuits to 0.
pub fn integrand(x: &[f64], y: &[f64], k: usize, params: &EpsParams) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let p = params.p();
    let q = params.q();
    let mut log_sum = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        for (j, &yj) in y.iter().enumerate() {
            if i == j {
                continue;
            }
            let a = p * xi * yj;
            if a >= 1.0 {
                return 0.0;
            }
            log_sum += (-a).ln_1p();
        }
    }
    if k > 0 {
        for &xi in x {
            let a = q * xi;
            if a >= 1.0 {
                return 0.0;
            }
            log_sum += k as f64 * (-a).ln_1p();
        }
    }
    log_sum.exp()
}

fn validate_mc(n: usize, samples: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if samples < 2 {
        return Err(Error::InvalidParameter(
            "at least 2 samples needed for a standard error".into(),
        ));
    }
    Ok(())
}

/// Unbiased estimate of the diagonal stability probability by averaging
/// the integrand over uniform (x, y) draws.
pub fn estimate_p_integrand(
    n: usize,
    k: usize,
    params: &EpsParams,
    samples: u64,
    seed: Seed,
) -> Result<MCEstimate> {
    validate_mc(n, samples)?;
    let ms = parallel_moments(samples, |r| {
        let mut rng = seed.substream(r).rng();
        let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        integrand(&x, &y, k, params)
    });
    Ok(MCEstimate::probability_scale(
        ms.mean(),
        ms.stderr(),
        samples,
        Method::Integrand,
    ))
}

/// Unbiased estimate of the diagonal stability probability by generating
/// whole markets and testing the diagonal matching.
pub fn estimate_p_indicator(
    n: usize,
    k: usize,
    params: &EpsParams,
    samples: u64,
    seed: Seed,
) -> Result<MCEstimate> {
    validate_mc(n, samples)?;
    let ms = parallel_moments(samples, |r| {
        let market = Market::generate(n, k, seed.substream(r)).expect("n validated");
        let diagonal = Matching::diagonal_into(n, n + k);
        if is_eps_stable(&market, &diagonal, params).expect("diagonal fits market") {
            1.0
        } else {
            0.0
        }
    });
    Ok(MCEstimate::probability_scale(
        ms.mean(),
        ms.stderr(),
        samples,
        Method::Indicator,
    ))
}

/// Mean exact count of eps-stable matchings over random markets: an
/// unbiased estimate of the expected count, on count scale.
pub fn estimate_s_empirical(
    n: usize,
    k: usize,
    params: &EpsParams,
    markets: u64,
    seed: Seed,
) -> Result<MCEstimate> {
    estimate_s_empirical_with_limit(
        n,
        k,
        params,
        markets,
        seed,
        enumeration::DEFAULT_ENUMERATION_LIMIT,
    )
}

/// `estimate_s_empirical` with an explicit enumeration size limit.
pub fn estimate_s_empirical_with_limit(
    n: usize,
    k: usize,
    params: &EpsParams,
    markets: u64,
    seed: Seed,
    limit: usize,
) -> Result<MCEstimate> {
    validate_mc(n, markets)?;
    if n > limit {
        return Err(Error::InstanceTooLarge { n, limit });
    }
    let opts = enumeration::EnumerateOptions {
        collect: false,
        cap: 0,
        limit,
    };
    let ms = parallel_moments(markets, |r| {
        let market = Market::generate(n, k, seed.substream(r)).expect("n validated");
        let res = enumeration::count_eps_stable(&market, params, &opts).expect("limit checked");
        res.count.to_f64().expect("desk-scale counts fit in f64")
    });
    Ok(MCEstimate::probability_scale(
        ms.mean(),
        ms.stderr(),
        markets,
        Method::EmpiricalCount,
    ))
}

/// ln((n+k)! / k!), the log count of injections, by summing ln terms.
pub fn log_falling_factorial(n: usize, k: usize) -> f64 {
    let mut s = 0.0;
    for i in (k + 1)..=(n + k) {
        s += (i as f64).ln();
    }
    s
}

fn to_log_scale(p_est: MCEstimate, offset: f64, what: &str) -> Result<MCEstimate> {
    if !(p_est.mean > 0.0) {
        return Err(Error::DegenerateEstimate(format!(
            "{what} estimate is zero after {} samples; raise the sample count",
            p_est.samples
        )));
    }
    let ratio = p_est.stderr / p_est.mean;
    let mean_log = offset + p_est.mean.ln();
    let log_ci = if ratio < 0.5 {
        None
    } else {
        let lo = p_est.mean - 2.0 * p_est.stderr;
        let lo_log = if lo > 0.0 {
            offset + lo.ln()
        } else {
            f64::NEG_INFINITY
        };
        let hi_log = offset + (p_est.mean + 2.0 * p_est.stderr).ln();
        Some((lo_log, hi_log))
    };
    Ok(MCEstimate {
        mean: mean_log,
        stderr: ratio,
        samples: p_est.samples,
        method: p_est.method,
        log_scale: true,
        log_ci,
    })
}

/// Natural log of the expected number of eps-stable matchings, estimated
/// through a diagonal-probability estimator and the injection count.
pub fn expected_count_log(
    n: usize,
    k: usize,
    params: &EpsParams,
    method: Method,
    samples: u64,
    seed: Seed,
) -> Result<MCEstimate> {
    let p_est = match method {
        Method::Indicator => estimate_p_indicator(n, k, params, samples, seed)?,
        Method::Integrand => estimate_p_integrand(n, k, params, samples, seed)?,
        Method::EmpiricalCount => {
            return Err(Error::InvalidParameter(
                "expected_count_log rescales a probability estimate; use empirical_count_log for direct counts"
                    .into(),
            ))
        }
    };
    to_log_scale(p_est, log_falling_factorial(n, k), "probability")
}

/// Natural log of the expected count via the direct empirical-count route.
pub fn empirical_count_log(
    n: usize,
    k: usize,
    params: &EpsParams,
    markets: u64,
    seed: Seed,
    limit: usize,
) -> Result<MCEstimate> {
    let s_est = estimate_s_empirical_with_limit(n, k, params, markets, seed, limit)?;
    to_log_scale(s_est, 0.0, "count")
}

/// Raw moments of the integrand and indicator samples at one
/// configuration; used to compare estimator variances directly.
pub fn sample_variances(
    n: usize,
    k: usize,
    params: &EpsParams,
    samples: u64,
    seed: Seed,
) -> Result<(f64, f64)> {
    let var = |ms: MomentSums| {
        let count = ms.count as f64;
        ((ms.sum_sq - ms.sum * ms.sum / count) / (count - 1.0)).max(0.0)
    };
    validate_mc(n, samples)?;
    let integrand_ms = parallel_moments(samples, |r| {
        let mut rng = seed.substream(r).rng();
        let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        integrand(&x, &y, k, params)
    });
    let indicator_ms = parallel_moments(samples, |r| {
        let market =
            Market::generate(n, k, seed.substream(r ^ 0x9E37_79B9_7F4A_7C15)).expect("n valid");
        let diagonal = Matching::diagonal_into(n, n + k);
        if is_eps_stable(&market, &diagonal, params).expect("diagonal fits") {
            1.0
        } else {
            0.0
        }
    });
    Ok((var(integrand_ms), var(indicator_ms)))
}

/// Exact big-integer cross-check value of `log_falling_factorial`,
/// available while (n+k)! fits comfortably in f64 conversions.
pub fn log_falling_factorial_exact(n: usize, k: usize) -> Option<f64> {
    if n + k > 20 {
        return None;
    }
    enumeration::falling_factorial(n, k).to_f64().map(f64::ln)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn params(eps_lambda: f64) -> EpsParams {
        EpsParams::new(eps_lambda, 1.0).unwrap()
    }

    #[test]
    fn integrand_trivial_values() {
        let pr = params(0.0);
        assert_eq!(integrand(&[0.0, 0.0], &[0.7, 0.3], 0, &pr), 1.0);
        assert_eq!(integrand(&[1.0, 1.0], &[1.0, 1.0], 0, &pr), 0.0);
        // n=1, k=1: single factor 1 - q x
        let pr = params(0.5);
        let q = pr.q();
        let x = 0.37;
        assert_relative_eq!(
            integrand(&[x], &[0.9], 1, &pr),
            1.0 - q * x,
            epsilon = 1e-14
        );
        assert_eq!(integrand(&[1.0], &[0.5], 1, &params(0.0)), 0.0);
    }

    #[test]
    fn integrand_matches_direct_product_at_eps_zero() {
        // k = 0, eps = 0 reduces to prod (1 - x_i y_j) over i != j
        let pr = params(0.0);
        let mut rng = Seed::new(40).rng();
        for _ in 0..200 {
            let n = 1 + (rng.random::<u64>() % 6) as usize;
            let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let mut direct = 1.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        direct *= 1.0 - x[i] * y[j];
                    }
                }
            }
            assert_abs_diff_eq!(integrand(&x, &y, 0, &pr), direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_single_agent_estimates() {
        // n=1, k=0: the only matching is stable, both estimators return 1
        let pr = params(0.3);
        let a = estimate_p_integrand(1, 0, &pr, 100, Seed::new(1)).unwrap();
        assert_eq!((a.mean, a.stderr), (1.0, 0.0));
        let b = estimate_p_indicator(1, 0, &pr, 100, Seed::new(2)).unwrap();
        assert_eq!((b.mean, b.stderr), (1.0, 0.0));
        let c = estimate_s_empirical(1, 0, &pr, 100, Seed::new(3)).unwrap();
        assert_eq!((c.mean, c.stderr), (1.0, 0.0));
    }

    #[test]
    fn closed_form_small_imbalanced() {
        // n=1, k=1 at eps*lambda = 0.5: P = 1 - q/2
        let pr = params(0.5);
        let truth = 1.0 - (-0.5f64).exp() / 2.0;
        let a = estimate_p_integrand(1, 1, &pr, 100_000, Seed::new(5)).unwrap();
        assert!((a.mean - truth).abs() <= 3.0 * a.stderr, "{} vs {truth}", a.mean);
        let b = estimate_p_indicator(1, 1, &pr, 100_000, Seed::new(6)).unwrap();
        assert!((b.mean - truth).abs() <= 3.0 * b.stderr);
        // S = 2 - q on count scale
        let c = estimate_s_empirical(1, 1, &pr, 50_000, Seed::new(7)).unwrap();
        let s_truth = 2.0 - (-0.5f64).exp();
        assert!((c.mean - s_truth).abs() <= 3.0 * c.stderr);
    }

    #[test]
    fn closed_form_balanced_two() {
        // n=2, k=0 at eps=0: P = 9/16
        let pr = params(0.0);
        let a = estimate_p_integrand(2, 0, &pr, 100_000, Seed::new(8)).unwrap();
        assert!((a.mean - 0.5625).abs() <= 3.0 * a.stderr);
        let b = estimate_p_indicator(2, 0, &pr, 100_000, Seed::new(9)).unwrap();
        assert!((b.mean - 0.5625).abs() <= 3.0 * b.stderr);
        let c = estimate_s_empirical(2, 0, &pr, 50_000, Seed::new(10)).unwrap();
        assert!((c.mean - 1.125).abs() <= 3.0 * c.stderr);
    }

    #[test]
    fn log_falling_factorial_values() {
        assert_eq!(log_falling_factorial(1, 0), 0.0);
        assert_relative_eq!(log_falling_factorial(2, 1), 6f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(
            log_falling_factorial(10, 0),
            3_628_800f64.ln(),
            epsilon = 1e-12
        );
        // exact big-integer path agrees while it exists
        for (n, k) in [(1, 0), (2, 1), (10, 0), (12, 8), (5, 15)] {
            let exact = log_falling_factorial_exact(n, k).unwrap();
            assert_relative_eq!(log_falling_factorial(n, k), exact, epsilon = 1e-12);
        }
        assert!(log_falling_factorial_exact(15, 15).is_none());
    }

    #[test]
    fn expected_count_log_values() {
        let zero = expected_count_log(1, 0, &params(0.4), Method::Integrand, 100, Seed::new(11))
            .unwrap();
        assert_eq!(zero.mean, 0.0);
        assert!(zero.log_scale);

        let est = expected_count_log(2, 0, &params(0.0), Method::Integrand, 200_000, Seed::new(12))
            .unwrap();
        let truth = (9f64 / 8.0).ln();
        assert!((est.mean - truth).abs() <= 3.0 * est.stderr);
        assert!(est.log_ci.is_none(), "tight estimate keeps delta stderr");
    }

    #[test]
    fn degenerate_estimate_reported() {
        // n large enough that no diagonal is ever stable in 2 samples
        let err = expected_count_log(20, 0, &params(0.0), Method::Indicator, 2, Seed::new(13));
        assert!(matches!(err, Err(Error::DegenerateEstimate(_))));
    }

    #[test]
    fn integrand_never_noisier_than_indicator() {
        // Rao-Blackwell ordering with a 10% statistical margin
        let pr = params(0.1);
        let (vi, vind) = sample_variances(3, 1, &pr, 100_000, Seed::new(14)).unwrap();
        assert!(vi <= 1.1 * vind, "integrand {vi} vs indicator {vind}");
    }

    #[test]
    fn estimates_monotone_in_eps_within_ci() {
        let mut prev: Option<MCEstimate> = None;
        for el in [0.0, 0.2, 0.6] {
            let est =
                estimate_p_integrand(3, 1, &params(el), 50_000, Seed::new(15)).unwrap();
            if let Some(p) = prev {
                let slack = 3.0 * (p.stderr.hypot(est.stderr));
                assert!(est.mean >= p.mean - slack);
            }
            prev = Some(est);
        }
    }

    #[test]
    fn estimator_is_thread_count_invariant() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                estimate_p_integrand(4, 1, &params(0.25), 30_000, Seed::new(16)).unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn method_parsing_round_trips() {
        for m in [Method::Indicator, Method::Integrand, Method::EmpiricalCount] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }
}
