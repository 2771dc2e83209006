//! Numerical plumbing shared across modules: order-fixed summation,
//! deterministic parallel Monte Carlo accumulation, compensated
//! accumulators and a small adaptive quadrature.

use rayon::prelude::*;

/// Pairwise (cascade) summation with a fixed association tree.
///
/// The result depends only on the order of `xs`, never on thread count.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        s
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Raw first and second moment sums over replicates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MomentSums {
    pub sum: f64,
    pub sum_sq: f64,
    pub count: u64,
}

impl MomentSums {
    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Standard error of the mean. The raw-moment variance is clamped at
    /// zero: cancellation can push it slightly negative when the spread is
    /// far below the mean.
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let var = ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Replicates per work unit. Fixed so that chunk partials, and therefore the
/// final reduction, are identical for every thread count.
const CHUNK: u64 = 4096;

/// Evaluate `eval(replicate)` for replicates `0..samples` and accumulate
/// moments. Work is split over fixed-size chunks; chunk partials are
/// combined in index order by pairwise summation, so the result is
/// bit-identical no matter how many rayon threads run the map.
pub(crate) fn parallel_moments<F>(samples: u64, eval: F) -> MomentSums
where
    F: Fn(u64) -> f64 + Sync,
{
    let nchunks = samples.div_ceil(CHUNK);
    let partials: Vec<(f64, f64)> = (0..nchunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(samples);
            let vals: Vec<f64> = (lo..hi).map(&eval).collect();
            let sqs: Vec<f64> = vals.iter().map(|v| v * v).collect();
            (pairwise_sum(&vals), pairwise_sum(&sqs))
        })
        .collect();
    let sums: Vec<f64> = partials.iter().map(|p| p.0).collect();
    let sq: Vec<f64> = partials.iter().map(|p| p.1).collect();
    MomentSums {
        sum: pairwise_sum(&sums),
        sum_sq: pairwise_sum(&sq),
        count: samples,
    }
}

/// Per-replicate values in replicate order, computed in parallel.
pub(crate) fn parallel_values<T, F>(samples: u64, eval: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..samples).into_par_iter().map(eval).collect()
}

/// Mean and standard error of a slice, pairwise-summed.
pub(crate) fn moments_of(values: &[f64]) -> MomentSums {
    let sqs: Vec<f64> = values.iter().map(|v| v * v).collect();
    MomentSums {
        sum: pairwise_sum(values),
        sum_sq: pairwise_sum(&sqs),
        count: values.len() as u64,
    }
}

/// ln(m!) by direct summation; exact to rounding at desk scale.
pub(crate) fn ln_factorial(m: usize) -> f64 {
    let mut s = 0.0;
    for i in 2..=m {
        s += (i as f64).ln();
    }
    s
}

/// Error-free transformation: `a + b = s + e` exactly.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Double-double accumulator for alternating series whose intermediate
/// terms exceed the final sum by many orders of magnitude.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    pub fn zero() -> Self {
        DoubleDouble { hi: 0.0, lo: 0.0 }
    }

    pub fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        let (hi, lo) = two_sum(s, self.lo + e);
        self.hi = hi;
        self.lo = lo;
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// Adaptive Simpson quadrature on [a, b] to absolute tolerance `tol`.
pub(crate) fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}
