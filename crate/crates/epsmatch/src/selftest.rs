//! Self-verification suite: closed-form oracles, cross-estimator
//! agreement, enumeration ground truth and the spacings/bound checks.
//!
//! Every tolerance is pinned here. The CLI `selftest` subcommand and the
//! acceptance test target both run these checks, so a fresh checkout can
//! prove itself with one command.

use crate::enumeration::{
    brute_force_enumerate, count_eps_stable, falling_factorial, EnumerateOptions,
};
use crate::estimators::{
    estimate_p_indicator, estimate_p_integrand, estimate_s_empirical, expected_count_log, Method,
};
use crate::market::{EpsParams, Market};
use crate::numerics::parallel_values;
use crate::rng::Seed;
use crate::spacings::{
    check_domination, check_product_bound, envelope_constant, integrate_uniform_sum_density,
    log_f_prime, max_spacing_cdf, sample_spacings, spacing_moments, GridSpec,
};
use crate::stability::deferred_acceptance;
use num_traits::ToPrimitive;
use rand::Rng;
use std::collections::BTreeSet;
use std::fmt::Write as _;

/// Result of one named check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn from_failures(name: &'static str, failures: Vec<String>, ok_detail: String) -> Self {
        if failures.is_empty() {
            CheckOutcome {
                name,
                passed: true,
                detail: ok_detail,
            }
        } else {
            CheckOutcome {
                name,
                passed: false,
                detail: failures.join("; "),
            }
        }
    }
}

/// Suite configuration. `quick` trades statistical headroom for speed and
/// is meant for development loops, not acceptance.
#[derive(Debug, Clone, Copy)]
pub struct SelftestOptions {
    pub seed: u64,
    pub quick: bool,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions {
            seed: 20_240_601,
            quick: false,
        }
    }
}

impl SelftestOptions {
    fn scaled(&self, full: u64) -> u64 {
        if self.quick {
            (full / 20).max(2000)
        } else {
            full
        }
    }
}

/// 99.9% Dvoretzky-Kiefer-Wolfowitz band half-width for m samples.
fn dkw_band(m: usize) -> f64 {
    ((2.0f64 / 0.001).ln() / (2.0 * m as f64)).sqrt()
}

/// Closed-form check: with one firm, two workers and eps*lambda = 0.5 the
/// diagonal stability probability is 1 - e^(-1/2)/2 by direct integration.
pub fn check_closed_form_p(opts: &SelftestOptions) -> CheckOutcome {
    let samples = opts.scaled(1_000_000);
    let params = EpsParams::new(0.5, 1.0).expect("valid params");
    let truth = 1.0 - (-0.5f64).exp() / 2.0;
    let mut failures = Vec::new();
    let mut detail = String::new();
    for (label, est) in [
        (
            "integrand",
            estimate_p_integrand(1, 1, &params, samples, Seed::with_stream(opts.seed, 1 << 40)),
        ),
        (
            "indicator",
            estimate_p_indicator(1, 1, &params, samples, Seed::with_stream(opts.seed, 2 << 40)),
        ),
    ] {
        match est {
            Ok(e) => {
                let _ = write!(detail, "{label}: {:.6}+-{:.6} ", e.mean, e.stderr);
                if (e.mean - truth).abs() > 3.0 * e.stderr {
                    failures.push(format!(
                        "{label} {:.6} misses {truth:.6} by more than 3 stderr ({:.2e})",
                        e.mean, e.stderr
                    ));
                }
            }
            Err(e) => failures.push(format!("{label}: {e}")),
        }
    }
    let _ = write!(detail, "target {truth:.6}, {samples} samples");
    CheckOutcome::from_failures("closed-form-p-n1k1", failures, detail)
}

/// Closed-form check: n = 2 balanced at eps = 0 has expected count 9/8;
/// n = 1, k = 1 at eps*lambda = 0.5 has expected count 2 - e^(-1/2).
pub fn check_closed_form_s(opts: &SelftestOptions) -> CheckOutcome {
    let p_samples = opts.scaled(1_000_000);
    let markets = opts.scaled(100_000);
    let zero = EpsParams::new(0.0, 1.0).expect("valid params");
    let truth = 9.0 / 8.0;
    let mut failures = Vec::new();
    let mut detail = String::new();

    let scale = 2.0; // 2! injections
    match estimate_p_integrand(2, 0, &zero, p_samples, Seed::with_stream(opts.seed, 3 << 40)) {
        Ok(e) => {
            let (s, se) = (scale * e.mean, scale * e.stderr);
            let _ = write!(detail, "integrand S {s:.4}+-{se:.4} ");
            if (s - truth).abs() > 3.0 * se {
                failures.push(format!("integrand S {s:.4} misses 9/8 beyond 3 stderr"));
            }
        }
        Err(e) => failures.push(format!("integrand: {e}")),
    }
    match estimate_p_indicator(2, 0, &zero, p_samples, Seed::with_stream(opts.seed, 4 << 40)) {
        Ok(e) => {
            let (s, se) = (scale * e.mean, scale * e.stderr);
            let _ = write!(detail, "indicator S {s:.4}+-{se:.4} ");
            if (s - truth).abs() > 3.0 * se {
                failures.push(format!("indicator S {s:.4} misses 9/8 beyond 3 stderr"));
            }
        }
        Err(e) => failures.push(format!("indicator: {e}")),
    }
    match estimate_s_empirical(2, 0, &zero, markets, Seed::with_stream(opts.seed, 5 << 40)) {
        Ok(e) => {
            let _ = write!(detail, "empirical S {:.4}+-{:.4} ", e.mean, e.stderr);
            if (e.mean - truth).abs() > 3.0 * e.stderr {
                failures.push(format!("empirical S {:.4} misses 9/8 beyond 3 stderr", e.mean));
            }
        }
        Err(e) => failures.push(format!("empirical: {e}")),
    }

    // second closed form: S(1, 2) = 2 - q at eps*lambda = 0.5
    let half = EpsParams::new(0.5, 1.0).expect("valid params");
    let s_truth = 2.0 - (-0.5f64).exp();
    match estimate_s_empirical(1, 1, &half, markets, Seed::with_stream(opts.seed, 6 << 40)) {
        Ok(e) => {
            let _ = write!(detail, "| S(1,2) {:.4}+-{:.4} target {s_truth:.4}", e.mean, e.stderr);
            if (e.mean - s_truth).abs() > 3.0 * e.stderr {
                failures.push(format!(
                    "empirical S(1,2) {:.4} misses {s_truth:.4} beyond 3 stderr",
                    e.mean
                ));
            }
        }
        Err(e) => failures.push(format!("empirical(1,2): {e}")),
    }
    CheckOutcome::from_failures("closed-form-s", failures, detail)
}

/// All three estimator routes agree pairwise within 4 combined standard
/// errors on the full (n, k, eps*lambda) matrix.
pub fn check_cross_estimator_agreement(opts: &SelftestOptions) -> CheckOutcome {
    let p_samples = opts.scaled(400_000);
    let markets = opts.scaled(10_000);
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let mut idx = 0u64;
    for n in [2usize, 4, 6] {
        for k in [0usize, 1, 3] {
            for el in [0.0, 0.1, 0.5] {
                let params = EpsParams::new(el, 1.0).expect("valid params");
                let ff = falling_factorial(n, k).to_f64().expect("small");
                let base = Seed::with_stream(opts.seed, (100 + idx) << 40);
                idx += 1;
                let run = || -> crate::error::Result<[(f64, f64); 3]> {
                    let a = estimate_p_indicator(n, k, &params, p_samples, base)?;
                    let b =
                        estimate_p_integrand(n, k, &params, p_samples, base.substream(1 << 36))?;
                    let c =
                        estimate_s_empirical(n, k, &params, markets, base.substream(2 << 36))?;
                    Ok([
                        (ff * a.mean, ff * a.stderr),
                        (ff * b.mean, ff * b.stderr),
                        (c.mean, c.stderr),
                    ])
                };
                match run() {
                    Ok(ests) => {
                        let names = ["indicator", "integrand", "empirical"];
                        for i in 0..3 {
                            for j in (i + 1)..3 {
                                let (ma, sa) = ests[i];
                                let (mb, sb) = ests[j];
                                let combined = sa.hypot(sb);
                                let gap = (ma - mb).abs();
                                if combined > 0.0 {
                                    worst = worst.max(gap / combined);
                                }
                                if gap > 4.0 * combined {
                                    failures.push(format!(
                                        "n={n} k={k} el={el}: {} {ma:.4} vs {} {mb:.4} gap {gap:.4} > 4x{combined:.4}",
                                        names[i], names[j]
                                    ));
                                }
                            }
                        }
                    }
                    Err(e) => failures.push(format!("n={n} k={k} el={el}: {e}")),
                }
            }
        }
    }
    CheckOutcome::from_failures(
        "cross-estimator-agreement",
        failures,
        format!("27 configurations, worst pairwise gap {worst:.2} combined stderr"),
    )
}

/// Enumeration ground truth: pruned counts match the unpruned oracle on
/// random instances, the deferred-acceptance matching is in every stable
/// set, and stable sets nest as eps grows.
pub fn check_enumeration_oracle(opts: &SelftestOptions) -> CheckOutcome {
    let instances = if opts.quick { 50 } else { 200 };
    let eps_grid = [0.0, 0.05, 0.1, 0.3, 0.7];
    let mut failures = Vec::new();
    let mut rng = Seed::with_stream(opts.seed, 7 << 40).rng();
    let collect = EnumerateOptions {
        collect: true,
        cap: 100_000,
        ..Default::default()
    };
    for inst in 0..instances {
        let n = rng.random_range(1..=5usize);
        let k = rng.random_range(0..=2usize);
        let market = match Market::generate(n, k, Seed::with_stream(opts.seed, (8 << 40) + inst)) {
            Ok(m) => m,
            Err(e) => {
                failures.push(format!("instance {inst}: {e}"));
                continue;
            }
        };
        let da = deferred_acceptance(&market).assignment().to_vec();
        let mut prev: Option<BTreeSet<Vec<usize>>> = None;
        for eps in eps_grid {
            let params = EpsParams::new(eps, 1.0).expect("valid params");
            let pruned = count_eps_stable(&market, &params, &collect);
            let brute = brute_force_enumerate(&market, &params, 100_000);
            let (pruned, brute) = match (pruned, brute) {
                (Ok(p), Ok(b)) => (p, b),
                (p, b) => {
                    failures.push(format!("instance {inst} eps={eps}: {p:?} vs {b:?}"));
                    continue;
                }
            };
            if pruned.count != brute.count {
                failures.push(format!(
                    "instance {inst} (n={n} k={k}) eps={eps}: pruned {} != brute {}",
                    pruned.count, brute.count
                ));
            }
            let set: BTreeSet<Vec<usize>> = pruned
                .matchings
                .as_ref()
                .expect("collected")
                .iter()
                .map(|m| m.assignment().to_vec())
                .collect();
            let brute_set: BTreeSet<Vec<usize>> = brute
                .matchings
                .as_ref()
                .expect("collected")
                .iter()
                .map(|m| m.assignment().to_vec())
                .collect();
            if set != brute_set {
                failures.push(format!(
                    "instance {inst} eps={eps}: pruned and brute leaf sets differ"
                ));
            }
            if !set.contains(&da) {
                failures.push(format!(
                    "instance {inst} eps={eps}: deferred-acceptance matching missing"
                ));
            }
            if let Some(p) = &prev {
                if !p.is_subset(&set) {
                    failures.push(format!("instance {inst} eps={eps}: nesting violated"));
                }
            }
            prev = Some(set);
        }
    }
    CheckOutcome::from_failures(
        "enumeration-oracle",
        failures,
        format!("{instances} instances x 5 eps points: counts, leaf sets, membership, nesting"),
    )
}

/// Once q drops below (min entry)/(max entry) every injection is stable,
/// so the exact count must equal (n+k)_n.
pub fn check_saturation(opts: &SelftestOptions) -> CheckOutcome {
    let mut failures = Vec::new();
    for inst in 0..50u64 {
        let k = (inst % 3) as usize;
        let market = match Market::generate(4, k, Seed::with_stream(opts.seed, (9 << 40) + inst)) {
            Ok(m) => m,
            Err(e) => {
                failures.push(format!("instance {inst}: {e}"));
                continue;
            }
        };
        let (lo, hi) = market.entry_range();
        let eps = -(0.999 * lo / hi).ln();
        let params = EpsParams::new(eps, 1.0).expect("valid params");
        match count_eps_stable(&market, &params, &EnumerateOptions::default()) {
            Ok(res) => {
                let expected = falling_factorial(4, k);
                if res.count != expected {
                    failures.push(format!(
                        "instance {inst} (k={k}): count {} != ({})_4 = {expected}",
                        res.count,
                        4 + k
                    ));
                }
            }
            Err(e) => failures.push(format!("instance {inst}: {e}")),
        }
    }
    CheckOutcome::from_failures(
        "saturation",
        failures,
        "50 instances at n=4, k in {0,1,2}: saturated count equals the injection total".into(),
    )
}

/// Explosion direction at desk scale: at n = 10 the log expected count on
/// the 5x ray exceeds the 1x ray by at least ln(10^3), with disjoint
/// 2-stderr intervals.
pub fn check_explosion_direction(opts: &SelftestOptions) -> CheckOutcome {
    let samples = opts.scaled(1_000_000);
    let n = 10usize;
    let ray = |mult: f64| mult * (n as f64).ln() / n as f64;
    let need = 1000f64.ln();
    let mut failures = Vec::new();
    let mut detail = String::new();
    for (i, k) in [0usize, 1].into_iter().enumerate() {
        let lo_params = EpsParams::new(ray(1.0), 1.0).expect("valid params");
        let hi_params = EpsParams::new(ray(5.0), 1.0).expect("valid params");
        let lo = expected_count_log(
            n,
            k,
            &lo_params,
            Method::Integrand,
            samples,
            Seed::with_stream(opts.seed, (20 + 2 * i as u64) << 40),
        );
        let hi = expected_count_log(
            n,
            k,
            &hi_params,
            Method::Integrand,
            samples,
            Seed::with_stream(opts.seed, (21 + 2 * i as u64) << 40),
        );
        match (lo, hi) {
            (Ok(lo), Ok(hi)) => {
                let gap = hi.mean - lo.mean;
                let _ = write!(
                    detail,
                    "k={k}: log S {:.2} -> {:.2} (gap {gap:.2}) ",
                    lo.mean, hi.mean
                );
                if gap < need {
                    failures.push(format!("k={k}: gap {gap:.2} below ln(1000) = {need:.2}"));
                }
                if hi.mean - 2.0 * hi.stderr <= lo.mean + 2.0 * lo.stderr {
                    failures.push(format!("k={k}: confidence intervals overlap"));
                }
            }
            (lo, hi) => failures.push(format!("k={k}: {lo:?} / {hi:?}")),
        }
    }
    CheckOutcome::from_failures("explosion-direction", failures, detail)
}

/// Spacing statistics concentrate where they should, and the empirical
/// CDF of the max spacing tracks the inclusion-exclusion formula within
/// the 99.9% DKW band.
pub fn check_spacings(opts: &SelftestOptions) -> CheckOutcome {
    let mut failures = Vec::new();
    let mut detail = String::new();
    let moment_samples = if opts.quick { 500 } else { 2000 };
    match spacing_moments(4096, moment_samples, Seed::with_stream(opts.seed, 30 << 40)) {
        Ok(m) => {
            let _ = write!(
                detail,
                "ell*U {:.4}, max*ell/ln {:.4} ",
                m.scaled_sum_squares.mean, m.scaled_max.mean
            );
            if !(1.9..=2.1).contains(&m.scaled_sum_squares.mean) {
                failures.push(format!(
                    "mean ell*U {:.4} outside [1.9, 2.1]",
                    m.scaled_sum_squares.mean
                ));
            }
            if !(0.85..=1.15).contains(&m.scaled_max.mean) {
                failures.push(format!(
                    "mean scaled max {:.4} outside [0.85, 1.15]",
                    m.scaled_max.mean
                ));
            }
        }
        Err(e) => failures.push(format!("moments: {e}")),
    }

    let dkw_samples = if opts.quick { 2000 } else { 10_000 };
    let band = dkw_band(dkw_samples);
    for (i, ell) in [5usize, 50, 500].into_iter().enumerate() {
        let mut maxima: Vec<f64> = parallel_values(dkw_samples as u64, |r| {
            sample_spacings(ell, Seed::with_stream(opts.seed, ((31 + i as u64) << 40) + r))
                .expect("ell valid")
                .max_spacing()
        });
        maxima.sort_by(f64::total_cmp);
        let m = maxima.len() as f64;
        let mut sup: f64 = 0.0;
        for (rank, value) in maxima.iter().enumerate() {
            let cdf = max_spacing_cdf(ell, value.min(1.0)).expect("valid threshold");
            sup = sup.max((cdf - rank as f64 / m).abs());
            sup = sup.max((cdf - (rank as f64 + 1.0) / m).abs());
        }
        let _ = write!(detail, "ell={ell}: sup {sup:.4} ");
        if sup > band {
            failures.push(format!(
                "ell={ell}: sup deviation {sup:.4} exceeds DKW band {band:.4}"
            ));
        }
    }
    let _ = write!(detail, "(band {band:.4})");
    CheckOutcome::from_failures("spacing-moments-and-dkw", failures, detail)
}

/// The sum density normalizes to 1 and never exceeds its polynomial
/// envelope.
pub fn check_density_and_domination(opts: &SelftestOptions) -> CheckOutcome {
    let mut failures = Vec::new();
    let mut detail = String::new();
    for ell in [2usize, 3, 5, 10] {
        match integrate_uniform_sum_density(ell, 1e-9) {
            Ok(total) => {
                let _ = write!(detail, "ell={ell}: integral {total:.9} ");
                if (total - 1.0).abs() > 1e-6 {
                    failures.push(format!("ell={ell}: integral {total:.9} off by > 1e-6"));
                }
            }
            Err(e) => failures.push(format!("ell={ell}: {e}")),
        }
        match check_domination(ell, Seed::with_stream(opts.seed, 40 << 40), 500) {
            Ok(report) => {
                if !report.violations.is_empty() {
                    failures.push(format!(
                        "ell={ell}: {} domination violations",
                        report.violations.len()
                    ));
                }
            }
            Err(e) => failures.push(format!("ell={ell} domination: {e}")),
        }
    }
    CheckOutcome::from_failures("density-and-domination", failures, detail)
}

/// Envelope machinery: the grid respects the estimated constant, the
/// product bound holds on random draws, and (ln F)' has the right limit
/// at zero.
pub fn check_envelope_machinery(opts: &SelftestOptions) -> CheckOutcome {
    let mut failures = Vec::new();
    let mut detail = String::new();
    let grid = GridSpec::default();
    let a = match envelope_constant(&grid) {
        Ok(report) => {
            let _ = write!(detail, "A = {:.6} ", report.a_constant);
            report.a_constant
        }
        Err(e) => {
            failures.push(format!("envelope: {e}"));
            return CheckOutcome::from_failures("envelope-machinery", failures, detail);
        }
    };
    for z in grid.values() {
        let g = (z + 1.0) * log_f_prime(z).expect("z > 0").abs();
        if g > a {
            failures.push(format!("grid point z={z:.3e} exceeds A: {g:.9} > {a:.9}"));
            break;
        }
    }
    let trials = opts.scaled(10_000);
    for p in [0.5, 1.0] {
        match check_product_bound(5, p, trials, Seed::with_stream(opts.seed, 41 << 40)) {
            Ok(report) => {
                if !report.violations.is_empty() {
                    failures.push(format!(
                        "product bound p={p}: {} violations",
                        report.violations.len()
                    ));
                }
            }
            Err(e) => failures.push(format!("product bound p={p}: {e}")),
        }
    }
    match log_f_prime(1e-8) {
        Ok(v) => {
            let _ = write!(detail, "(ln F)'(1e-8) = {v:.9} ");
            if (v + 0.5).abs() > 1e-6 {
                failures.push(format!("(ln F)'(1e-8) = {v:.9} not within 1e-6 of -1/2"));
            }
        }
        Err(e) => failures.push(format!("log_f_prime: {e}")),
    }
    CheckOutcome::from_failures("envelope-machinery", failures, detail)
}

/// Negative control: a parameter struct with corrupted derived discounts
/// must fail validation.
pub fn check_params_invariant() -> CheckOutcome {
    let good = EpsParams::new(0.25, 2.0).expect("valid params");
    let corrupted = EpsParams::from_raw_parts(0.25, 2.0, good.p(), good.q() * 1.001);
    let mut failures = Vec::new();
    if good.validate().is_err() {
        failures.push("well-formed params rejected".into());
    }
    if corrupted.validate().is_ok() {
        failures.push("corrupted q != sqrt(p) accepted".into());
    }
    CheckOutcome::from_failures(
        "params-invariant",
        failures,
        "q = sqrt(p) invariant enforced".into(),
    )
}

/// Run every check in order.
pub fn run_all(opts: &SelftestOptions) -> Vec<CheckOutcome> {
    vec![
        check_closed_form_p(opts),
        check_closed_form_s(opts),
        check_cross_estimator_agreement(opts),
        check_enumeration_oracle(opts),
        check_saturation(opts),
        check_explosion_direction(opts),
        check_spacings(opts),
        check_density_and_domination(opts),
        check_envelope_machinery(opts),
        check_params_invariant(),
    ]
}
