//! Regime sweeps over market size: estimate the log expected count of
//! eps-stable matchings along eps*lambda = c * ln(n) / n rays and emit a
//! schema-stable CSV.
//!
//! Lambda is pinned to 1 in sweeps; blocking decisions depend on eps and
//! lambda only through their product, so the ray coefficient carries all
//! the information. Rows stream to the writer as they finish. By default
//! the `seconds` column is zero so that identical configs and seeds
//! produce byte-identical files on any machine and thread count; pass
//! `timing: true` to record wall-clock times instead (per-row timing is
//! always logged to stderr).

use crate::error::{Error, Result};
use crate::estimators::{empirical_count_log, expected_count_log, MCEstimate, Method};
use crate::market::EpsParams;
use crate::rng::Seed;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

/// How the eps*lambda ray scales with n. Both regimes use c * ln(n) / n;
/// the label records whether the coefficient is meant as a bounded
/// constant or as a large multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "c-critical")]
    CCritical,
    #[serde(rename = "omega")]
    Omega,
}

impl Regime {
    fn label(&self) -> &'static str {
        match self {
            Regime::CCritical => "c-critical",
            Regime::Omega => "omega",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Regime> {
        match s {
            "c-critical" => Ok(Regime::CCritical),
            "omega" => Ok(Regime::Omega),
            other => Err(Error::InvalidParameter(format!(
                "unknown regime '{other}' (expected c-critical | omega)"
            ))),
        }
    }
}

/// Sweep plan: the cartesian product of sizes, imbalances, ray
/// coefficients and methods.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_list: Vec<usize>,
    pub k_list: Vec<usize>,
    pub regime: Regime,
    pub coefficients: Vec<f64>,
    pub methods: Vec<Method>,
    pub samples: u64,
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Record wall-clock seconds per row; breaks byte-reproducibility.
    #[serde(default)]
    pub timing: bool,
    #[serde(default = "default_enum_limit")]
    pub enumeration_limit: usize,
}

fn default_enum_limit() -> usize {
    crate::enumeration::DEFAULT_ENUMERATION_LIMIT
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() {
            return Err(Error::InvalidParameter("n_list must not be empty".into()));
        }
        if self.k_list.is_empty() {
            return Err(Error::InvalidParameter("k_list must not be empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("methods must not be empty".into()));
        }
        if self.coefficients.is_empty() {
            return Err(Error::InvalidParameter(
                "coefficients must not be empty".into(),
            ));
        }
        if let Some(c) = self.coefficients.iter().find(|c| !(**c > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "coefficient {c} must be positive"
            )));
        }
        if self.samples < 2 {
            return Err(Error::InvalidParameter("samples must be at least 2".into()));
        }
        Ok(())
    }
}

/// One emitted sweep point.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub k: usize,
    pub eps: f64,
    pub lambda: f64,
    pub regime: String,
    pub method: Method,
    pub samples: u64,
    pub mean_log: f64,
    pub stderr_log: f64,
    pub seconds: f64,
}

pub const SWEEP_CSV_HEADER: &str = "n,k,eps,lambda,regime,method,samples,mean_log,stderr_log,seconds";

impl SweepRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.k,
            self.eps,
            self.lambda,
            self.regime,
            self.method,
            self.samples,
            self.mean_log,
            self.stderr_log,
            self.seconds
        )
    }
}

/// Least-squares slope of mean_log against n within one (k, coefficient,
/// method) group.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub k: usize,
    pub coefficient: f64,
    pub method: Method,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub slopes: Vec<SlopeFit>,
}

fn ols_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Run the sweep, streaming CSV rows to `writer` as they complete.
/// Degenerate estimates become NaN rows and the sweep continues.
pub fn run_sweep<W: Write>(config: &SweepConfig, writer: &mut W) -> Result<SweepSummary> {
    config.validate()?;
    writeln!(writer, "{SWEEP_CSV_HEADER}")?;
    writer.flush()?;
    let mut rows = Vec::new();
    let mut row_index = 0u64;
    for &n in &config.n_list {
        for &k in &config.k_list {
            for &coeff in &config.coefficients {
                let lambda = 1.0;
                let eps = coeff * (n as f64).ln() / n as f64;
                let params = EpsParams::new(eps, lambda)?;
                for &method in &config.methods {
                    // one non-overlapping stream block per row
                    let seed = Seed::with_stream(config.seed, row_index << 33);
                    row_index += 1;
                    let started = Instant::now();
                    let est: Result<MCEstimate> = match method {
                        Method::Indicator | Method::Integrand => {
                            expected_count_log(n, k, &params, method, config.samples, seed)
                        }
                        Method::EmpiricalCount => empirical_count_log(
                            n,
                            k,
                            &params,
                            config.samples,
                            seed,
                            config.enumeration_limit,
                        ),
                    };
                    let elapsed = started.elapsed().as_secs_f64();
                    let (mean_log, stderr_log) = match est {
                        Ok(e) => (e.mean, e.stderr),
                        Err(Error::DegenerateEstimate(msg)) => {
                            eprintln!("sweep: n={n} k={k} c={coeff} {method}: {msg}");
                            (f64::NAN, f64::NAN)
                        }
                        Err(e) => return Err(e),
                    };
                    eprintln!("sweep: n={n} k={k} c={coeff} {method} took {elapsed:.3}s");
                    let row = SweepRow {
                        n,
                        k,
                        eps,
                        lambda,
                        regime: format!("{}:{}", config.regime.label(), coeff),
                        method,
                        samples: config.samples,
                        mean_log,
                        stderr_log,
                        seconds: if config.timing { elapsed } else { 0.0 },
                    };
                    writeln!(writer, "{}", row.to_csv())?;
                    writer.flush()?;
                    rows.push(row);
                }
            }
        }
    }

    let mut slopes = Vec::new();
    for &k in &config.k_list {
        for &coeff in &config.coefficients {
            for &method in &config.methods {
                let points: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| {
                        r.k == k
                            && r.method == method
                            && r.regime == format!("{}:{}", config.regime.label(), coeff)
                            && r.mean_log.is_finite()
                    })
                    .map(|r| (r.n as f64, r.mean_log))
                    .collect();
                let slope = ols_slope(&points);
                if let Some(s) = slope {
                    eprintln!(
                        "sweep summary: k={k} {}={coeff} method={method} slope d(log S)/dn = {s:.4}",
                        config.regime.label()
                    );
                }
                slopes.push(SlopeFit {
                    k,
                    coefficient: coeff,
                    method,
                    slope,
                });
            }
        }
    }
    Ok(SweepSummary { rows, slopes })
}
