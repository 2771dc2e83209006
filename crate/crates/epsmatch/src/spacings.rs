//! Uniform spacings and the bound machinery built on them.
//!
//! Dropping ell-1 uniform points into [0,1] cuts it into ell spacings
//! L_1..L_ell. The module samples them through normalized exponentials
//! (same joint law, O(ell) instead of sorting), evaluates the classical
//! inclusion-exclusion CDF of the maximum spacing, composes it into the
//! density of a sum of ell independent uniforms, and verifies the
//! envelope inequalities around F(z) = (1 - e^-z)/z used to bound
//! products of F values by a power of a single F.

use crate::error::{Error, Result};
use crate::numerics::{
    adaptive_simpson, ln_factorial, moments_of, pairwise_sum, parallel_values, DoubleDouble,
};
use crate::rng::Seed;
use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

/// A random partition of [0,1] into `ell` spacings.
#[derive(Debug, Clone)]
pub struct SpacingSample {
    lengths: Vec<f64>,
}

impl SpacingSample {
    pub fn ell(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// Largest spacing.
    pub fn max_spacing(&self) -> f64 {
        self.lengths.iter().copied().fold(0.0, f64::max)
    }

    /// Sum of squared spacings.
    pub fn sum_squares(&self) -> f64 {
        let sq: Vec<f64> = self.lengths.iter().map(|l| l * l).collect();
        pairwise_sum(&sq)
    }
}

/// Draw one spacing sample: `ell` unit exponentials normalized by their
/// sum, which has the same joint distribution as sorted-uniform gaps.
pub fn sample_spacings(ell: usize, seed: Seed) -> Result<SpacingSample> {
    if ell == 0 {
        return Err(Error::InvalidParameter("ell must be at least 1".into()));
    }
    let mut rng = seed.rng();
    let w: Vec<f64> = (0..ell).map(|_| rng.sample(Exp1)).collect();
    let total = pairwise_sum(&w);
    Ok(SpacingSample {
        lengths: w.into_iter().map(|v| v / total).collect(),
    })
}

/// (1 - j a)_+ ^ e with the boundary convention 0^0 = 0 inherited from the
/// underlying event probabilities.
#[inline]
fn pow_plus(base: f64, exponent: usize) -> f64 {
    if base > 0.0 {
        if exponent == 0 {
            1.0
        } else {
            base.powi(exponent as i32)
        }
    } else {
        0.0
    }
}

/// P(max spacing <= a) via the classical inclusion-exclusion sum
/// sum_j (-1)^j C(ell, j) (1 - j a)_+^(ell-1)
/// (see Feller, An Introduction to Probability Theory, Vol. II).
///
/// The signed terms can dwarf the result, so for ell > 60 terms are formed
/// in log space and accumulated in double-double precision; when even that
/// cannot resolve the sum (deep left tail, true value below ~1e-6 of the
/// largest term times 1e-11) the function returns 0. Validation against
/// simulated spacings is what certifies this evaluation, not the formula's
/// pedigree.
pub fn max_spacing_cdf(ell: usize, a: f64) -> Result<f64> {
    if ell == 0 {
        return Err(Error::InvalidParameter("ell must be at least 1".into()));
    }
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold a = {a} must be positive"
        )));
    }
    if a > 1.0 {
        return Err(Error::InvalidParameter(format!(
            "threshold a = {a} exceeds 1, the total length"
        )));
    }
    if ell == 1 {
        // the single spacing is the whole interval
        return Ok(if a < 1.0 { 0.0 } else { 1.0 });
    }
    // ell spacings summing to 1 force max >= 1/ell
    if a * ell as f64 <= 1.0 {
        return Ok(0.0);
    }
    let jmax = ((1.0 / a).floor() as usize).min(ell);
    let value = if ell <= 60 {
        let mut acc = 0.0f64;
        let mut binom = 1.0f64;
        for j in 0..=jmax {
            if j > 0 {
                binom *= (ell - j + 1) as f64 / j as f64;
            }
            let term = binom * pow_plus(1.0 - j as f64 * a, ell - 1);
            acc += if j % 2 == 0 { term } else { -term };
        }
        acc
    } else {
        let mut acc = DoubleDouble::zero();
        let mut ln_binom = 0.0f64;
        let mut max_term = 0.0f64;
        for j in 0..=jmax {
            if j > 0 {
                ln_binom += ((ell - j + 1) as f64 / j as f64).ln();
            }
            let base = 1.0 - j as f64 * a;
            if base <= 0.0 {
                continue;
            }
            let term = (ln_binom + (ell - 1) as f64 * base.ln()).exp();
            max_term = max_term.max(term);
            acc.add(if j % 2 == 0 { term } else { -term });
        }
        let sum = acc.value();
        // noise floor: term-level rounding is ~1e-13 relative to max_term
        if sum.abs() <= max_term * 1e-11 {
            0.0
        } else {
            sum
        }
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Density of the sum of `ell` independent uniforms at `s`:
/// s^(ell-1)/(ell-1)! times the max-spacing CDF at 1/s. Zero outside
/// (0, ell). The power-over-factorial factor is evaluated in log space.
pub fn uniform_sum_density(ell: usize, s: f64) -> Result<f64> {
    if ell == 0 {
        return Err(Error::InvalidParameter("ell must be at least 1".into()));
    }
    if !s.is_finite() {
        return Err(Error::InvalidParameter(format!("s = {s} must be finite")));
    }
    if s <= 0.0 || s >= ell as f64 {
        return Ok(0.0);
    }
    let cdf = if s <= 1.0 {
        1.0
    } else {
        max_spacing_cdf(ell, 1.0 / s)?
    };
    let log_coeff = (ell as f64 - 1.0) * s.ln() - ln_factorial(ell - 1);
    Ok(log_coeff.exp() * cdf)
}

/// Numerically integrate `uniform_sum_density` over its support. The
/// density is polynomial between consecutive integers, so integrating
/// unit intervals separately keeps the quadrature fast and sharp.
pub fn integrate_uniform_sum_density(ell: usize, tol: f64) -> Result<f64> {
    if ell == 0 {
        return Err(Error::InvalidParameter("ell must be at least 1".into()));
    }
    let f = |s: f64| uniform_sum_density(ell, s).unwrap_or(0.0);
    let mut total = 0.0;
    for piece in 0..ell {
        let a = piece as f64;
        let b = (piece + 1) as f64;
        total += adaptive_simpson(&f, a, b, tol / ell as f64);
    }
    Ok(total)
}

/// One grid point that broke a tested inequality.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub at: String,
    pub lhs: f64,
    pub rhs: f64,
}

/// Result of a bound check: the governing constant, the grid it was
/// checked on, and any violations (expected empty).
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub a_constant: f64,
    pub grid: String,
    pub violations: Vec<Violation>,
}

/// Verify the domination inequality: the sum density never exceeds its
/// polynomial envelope s^(ell-1)/(ell-1)! (the CDF factor is at most 1).
/// Checks a regular grid of `trials` points plus `trials` random points.
pub fn check_domination(ell: usize, seed: Seed, trials: usize) -> Result<BoundsReport> {
    if ell < 2 {
        return Err(Error::InvalidParameter(
            "domination check needs ell >= 2".into(),
        ));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let mut rng = seed.rng();
    let span = ell as f64;
    let mut points: Vec<f64> = (0..trials)
        .map(|i| span * (i as f64 + 0.5) / trials as f64)
        .collect();
    points.extend((0..trials).map(|_| rng.random::<f64>() * span));
    let ln_fact = ln_factorial(ell - 1);
    let mut violations = Vec::new();
    let mut max_ratio = 0.0f64;
    for &s in &points {
        let lhs = uniform_sum_density(ell, s)?;
        let rhs = ((ell as f64 - 1.0) * s.ln() - ln_fact).exp();
        if rhs > 0.0 {
            max_ratio = max_ratio.max(lhs / rhs);
        }
        if lhs > rhs * (1.0 + 1e-12) {
            violations.push(Violation {
                at: format!("s = {s}"),
                lhs,
                rhs,
            });
        }
    }
    Ok(BoundsReport {
        a_constant: max_ratio,
        grid: format!("{trials} regular + {trials} random points on (0, {ell})"),
        violations,
    })
}

/// Monte Carlo summary of one normalized spacing statistic.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentSummary {
    pub mean: f64,
    pub stderr: f64,
}

/// First-order statistics of the spacing extremes: ell * U_ell
/// concentrates at 2 and max spacing * ell / ln(ell) at 1.
#[derive(Debug, Clone, Serialize)]
pub struct SpacingMoments {
    pub ell: usize,
    pub samples: u64,
    /// ell times the sum of squared spacings.
    pub scaled_sum_squares: MomentSummary,
    /// Max spacing times ell / ln(ell).
    pub scaled_max: MomentSummary,
}

/// Sample means with standard errors for the two normalized statistics.
pub fn spacing_moments(ell: usize, samples: u64, seed: Seed) -> Result<SpacingMoments> {
    if ell < 2 {
        return Err(Error::InvalidParameter(
            "scaled max spacing needs ell >= 2 (ln 1 = 0)".into(),
        ));
    }
    if samples < 100 {
        return Err(Error::InvalidParameter(
            "at least 100 samples required".into(),
        ));
    }
    let lf = ell as f64;
    let log_ell = lf.ln();
    let pairs: Vec<(f64, f64)> = parallel_values(samples, |r| {
        let sample = sample_spacings(ell, seed.substream(r)).expect("ell validated");
        (
            lf * sample.sum_squares(),
            sample.max_spacing() * lf / log_ell,
        )
    });
    let u: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let m: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mu = moments_of(&u);
    let mm = moments_of(&m);
    Ok(SpacingMoments {
        ell,
        samples,
        scaled_sum_squares: MomentSummary {
            mean: mu.mean(),
            stderr: mu.stderr(),
        },
        scaled_max: MomentSummary {
            mean: mm.mean(),
            stderr: mm.stderr(),
        },
    })
}

/// F(z) = (1 - e^-z)/z, the mean of e^(-zU) for U uniform on [0,1].
/// Strictly decreasing from 1 at 0+ to 0 at infinity.
pub fn f_ratio(z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::InvalidParameter(format!("z = {z} must be positive")));
    }
    Ok(f_ratio_raw(z))
}

/// F extended by continuity with F(0) = 1; assumes z >= 0.
#[inline]
pub(crate) fn f_ratio_raw(z: f64) -> f64 {
    if z < 1e-4 {
        // 4-term series; cancellation in 1 - e^-z makes the direct form
        // lossy at this scale
        1.0 + z * (-0.5 + z * (1.0 / 6.0 - z / 24.0))
    } else {
        -(-z).exp_m1() / z
    }
}

/// (ln F)'(z) = 1/(e^z - 1) - 1/z, negative everywhere, tending to -1/2
/// as z -> 0+ and to -1/z as z -> infinity.
pub fn log_f_prime(z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::InvalidParameter(format!("z = {z} must be positive")));
    }
    if z < 1e-4 {
        // the two reciprocals are each ~1/z; expand their difference
        Ok(-0.5 + z / 12.0 - z.powi(3) / 720.0 + z.powi(5) / 30240.0)
    } else {
        Ok(1.0 / z.exp_m1() - 1.0 / z)
    }
}

/// Log-spaced evaluation grid.
#[derive(Debug, Clone, Serialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            min: 1e-6,
            max: 1e6,
            points: 200_001,
        }
    }
}

impl GridSpec {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        let ln_min = self.min.ln();
        let step = (self.max.ln() - ln_min) / (self.points - 1) as f64;
        (0..self.points).map(move |i| (ln_min + step * i as f64).exp())
    }
}

/// Grid supremum of (z+1)|{ln F}'(z)|, together with the analytic limits
/// 1/2 (z -> 0) and 1 (z -> infinity) as extra candidates. This is the
/// constant that makes |{ln F}'(z)| <= A/(z+1) usable as an envelope.
pub fn envelope_constant(grid: &GridSpec) -> Result<BoundsReport> {
    if !(grid.min > 0.0) || !(grid.max > grid.min) || grid.points < 2 {
        return Err(Error::InvalidParameter(
            "grid needs 0 < min < max and at least 2 points".into(),
        ));
    }
    let mut sup = 0.5f64.max(1.0);
    for z in grid.values() {
        let g = (z + 1.0) * log_f_prime(z)?.abs();
        if g > sup {
            sup = g;
        }
    }
    Ok(BoundsReport {
        a_constant: sup,
        grid: format!(
            "log-spaced [{:e}, {:e}], {} points, plus the limits 1/2 and 1",
            grid.min, grid.max, grid.points
        ),
        violations: Vec::new(),
    })
}

/// Check prod_j F(s_j p) <= e^A F^n(s p) on random draws x in [0,1]^n with
/// s = sum x_i and s_j = s - x_j, using the grid-estimated envelope
/// constant A.
pub fn check_product_bound(n: usize, p: f64, trials: u64, seed: Seed) -> Result<BoundsReport> {
    if n < 2 {
        return Err(Error::InvalidParameter(
            "product bound needs n >= 2".into(),
        ));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "p = {p} outside (0, 1]"
        )));
    }
    let a = envelope_constant(&GridSpec::default())?.a_constant;
    let checks: Vec<Option<Violation>> = parallel_values(trials, |r| {
        let mut rng = seed.substream(r).rng();
        let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let s: f64 = x.iter().sum();
        let lhs: f64 = x.iter().map(|xi| f_ratio_raw((s - xi) * p).ln()).sum();
        let rhs = a + n as f64 * f_ratio_raw(s * p).ln();
        if lhs > rhs + 1e-9 {
            Some(Violation {
                at: format!("draw {r}: s = {s}"),
                lhs,
                rhs,
            })
        } else {
            None
        }
    });
    Ok(BoundsReport {
        a_constant: a,
        grid: format!("{trials} uniform draws in [0,1]^{n}, p = {p}"),
        violations: checks.into_iter().flatten().collect(),
    })
}
