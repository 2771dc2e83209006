//! Command-line front end: generate markets, check matchings, count and
//! estimate stable matchings, probe the spacings machinery, run regime
//! sweeps and the self-verification suite.

use clap::{Args, Parser, Subcommand};
use epsmatch::enumeration::{self, EnumerateOptions};
use epsmatch::estimators::{
    empirical_count_log, estimate_p_indicator, estimate_p_integrand,
    estimate_s_empirical_with_limit, expected_count_log, Method,
};
use epsmatch::market::{EpsParams, Market, Matching};
use epsmatch::selftest::{run_all, SelftestOptions};
use epsmatch::spacings::{check_domination, check_product_bound, envelope_constant, GridSpec};
use epsmatch::stability::{blocking_pairs, is_eps_stable};
use epsmatch::sweep::{run_sweep, SweepConfig};
use epsmatch::{Error, Seed};
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "epsmatch",
    about = "Stable matchings with switching costs: simulation and verification lab",
    version
)]
struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Base seed for all randomness (default 0; selftest has its own)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Stream offset under the base seed
    #[arg(long, global = true, default_value_t = 0)]
    stream: u64,

    /// Output file (default: stdout)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Emit JSON (the default for single-shot commands)
    #[arg(long, global = true)]
    json: bool,

    /// Emit CSV where supported (estimate batch rows; sweep is always CSV)
    #[arg(long, global = true, conflicts_with = "json")]
    csv: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random market and write it as JSON
    Gen(GenArgs),
    /// Check a matching for eps-stability and list blocking pairs
    Check(CheckArgs),
    /// Exactly count the eps-stable matchings of a market
    Count(CountArgs),
    /// Monte Carlo estimate of the diagonal stability probability or the
    /// expected number of eps-stable matchings
    Estimate(EstimateArgs),
    /// Sample uniform spacings and report normalized moments
    Spacings(SpacingsArgs),
    /// Envelope constant, product bound and density domination checks
    Bounds(BoundsArgs),
    /// Sweep log expected counts along eps*lambda = c ln(n)/n rays
    Sweep(SweepArgs),
    /// Run the full self-verification suite
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    k: usize,
}

#[derive(Args)]
struct CheckArgs {
    /// Market JSON file produced by `gen`
    #[arg(long)]
    market: PathBuf,
    /// Comma-separated 1-based worker indices, one per firm
    #[arg(long)]
    matching: String,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long)]
    market: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Also list the stable matchings (1-based), up to --cap
    #[arg(long)]
    list: bool,
    #[arg(long, default_value_t = 10_000)]
    cap: usize,
    /// Size guard: refuse instances with n above this
    #[arg(long, default_value_t = enumeration::DEFAULT_ENUMERATION_LIMIT)]
    limit: usize,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    k: usize,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// indicator | integrand | empirical-count
    #[arg(long)]
    method: Method,
    /// Replicates (markets for empirical-count)
    #[arg(long)]
    samples: Option<u64>,
    /// Report the natural log of the expected count instead of the
    /// probability-scale estimate
    #[arg(long)]
    log: bool,
    #[arg(long, default_value_t = enumeration::DEFAULT_ENUMERATION_LIMIT)]
    limit: usize,
}

#[derive(Args)]
struct SpacingsArgs {
    #[arg(long)]
    ell: usize,
    #[arg(long, default_value_t = 2000)]
    samples: u64,
}

#[derive(Args)]
struct BoundsArgs {
    /// Dimension for the product-bound check
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// Discount factor in (0, 1]
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    /// Also run the density domination check at this ell
    #[arg(long)]
    ell: Option<usize>,
    #[arg(long, default_value_t = 200_001)]
    grid_points: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON file mirroring the sweep configuration; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    k_list: Option<Vec<usize>>,
    /// c-critical | omega
    #[arg(long)]
    regime: Option<epsmatch::sweep::Regime>,
    #[arg(long, value_delimiter = ',')]
    coefficients: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    samples: Option<u64>,
    /// Record wall-clock seconds per row (breaks byte-reproducibility)
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SelftestArgs {
    /// Scale sample counts down for a fast development pass
    #[arg(long)]
    quick: bool,
}

fn write_output(out: &Option<PathBuf>, contents: &str) -> Result<(), Error> {
    match out {
        Some(path) => {
            fs::write(path, contents)?;
            Ok(())
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(contents.as_bytes())?;
            if !contents.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn json_pretty<T: Serialize>(value: &T) -> Result<String, Error> {
    Ok(serde_json::to_string_pretty(value)?)
}

#[derive(Serialize)]
struct CheckReport {
    stable: bool,
    eps: f64,
    lambda: f64,
    q: f64,
    blocking_pairs: Vec<BlockingPairReport>,
}

#[derive(Serialize)]
struct BlockingPairReport {
    firm: usize,
    worker: usize,
    kind: epsmatch::stability::BlockKind,
}

#[derive(Serialize)]
struct CountReport {
    count: String,
    nodes_visited: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    matchings: Option<Vec<Vec<usize>>>,
}

#[derive(Serialize)]
struct EstimateReport {
    n: usize,
    k: usize,
    eps: f64,
    lambda: f64,
    #[serde(flatten)]
    estimate: epsmatch::estimators::MCEstimate,
    seconds: f64,
}

fn parse_matching(spec: &str, num_workers: usize) -> Result<Matching, Error> {
    let assignment: Result<Vec<usize>, Error> = spec
        .split(',')
        .map(|tok| {
            let v: usize = tok.trim().parse().map_err(|_| {
                Error::InvalidParameter(format!("matching entry '{tok}' is not an integer"))
            })?;
            if v == 0 {
                return Err(Error::InvalidParameter(
                    "matching uses 1-based worker indices".into(),
                ));
            }
            Ok(v - 1)
        })
        .collect();
    Matching::new(assignment?, num_workers)
}

fn run(cli: &Cli) -> Result<i32, Error> {
    let seed_value = cli.seed.unwrap_or(0);
    let seed = Seed::with_stream(seed_value, cli.stream);
    match &cli.command {
        Command::Gen(args) => {
            let market = Market::generate(args.n, args.k, seed)?;
            let path = cli.out.as_ref().ok_or_else(|| {
                Error::InvalidParameter("gen requires --out FILE for the market JSON".into())
            })?;
            fs::write(path, market.to_json_string() + "\n")?;
            eprintln!(
                "wrote market n={} k={} (seed {}, stream {}) to {}",
                args.n,
                args.k,
                seed_value,
                cli.stream,
                path.display()
            );
            Ok(0)
        }
        Command::Check(args) => {
            let market = Market::from_json_str(&fs::read_to_string(&args.market)?)?;
            let matching = parse_matching(&args.matching, market.num_workers())?;
            let params = EpsParams::new(args.eps, args.lambda)?;
            let stable = is_eps_stable(&market, &matching, &params)?;
            let pairs = blocking_pairs(&market, &matching, &params)?;
            let report = CheckReport {
                stable,
                eps: args.eps,
                lambda: args.lambda,
                q: params.q(),
                blocking_pairs: pairs
                    .into_iter()
                    .map(|p| BlockingPairReport {
                        firm: p.firm + 1,
                        worker: p.worker + 1,
                        kind: p.kind,
                    })
                    .collect(),
            };
            write_output(&cli.out, &json_pretty(&report)?)?;
            Ok(0)
        }
        Command::Count(args) => {
            let market = Market::from_json_str(&fs::read_to_string(&args.market)?)?;
            let params = EpsParams::new(args.eps, args.lambda)?;
            let opts = EnumerateOptions {
                collect: args.list,
                cap: args.cap,
                limit: args.limit,
            };
            let result = enumeration::count_eps_stable(&market, &params, &opts)?;
            let report = CountReport {
                count: result.count.to_string(),
                nodes_visited: result.nodes_visited,
                matchings: result.matchings.map(|ms| {
                    ms.iter()
                        .map(|m| m.assignment().iter().map(|w| w + 1).collect())
                        .collect()
                }),
            };
            write_output(&cli.out, &json_pretty(&report)?)?;
            Ok(0)
        }
        Command::Estimate(args) => {
            let params = EpsParams::new(args.eps, args.lambda)?;
            let samples = args.samples.unwrap_or(match args.method {
                Method::EmpiricalCount => 10_000,
                _ => 1_000_000,
            });
            let started = Instant::now();
            let estimate = match (args.method, args.log) {
                (Method::EmpiricalCount, false) => estimate_s_empirical_with_limit(
                    args.n, args.k, &params, samples, seed, args.limit,
                )?,
                (Method::EmpiricalCount, true) => {
                    empirical_count_log(args.n, args.k, &params, samples, seed, args.limit)?
                }
                (Method::Indicator, false) => {
                    estimate_p_indicator(args.n, args.k, &params, samples, seed)?
                }
                (Method::Integrand, false) => {
                    estimate_p_integrand(args.n, args.k, &params, samples, seed)?
                }
                (method, true) => {
                    expected_count_log(args.n, args.k, &params, method, samples, seed)?
                }
            };
            let seconds = started.elapsed().as_secs_f64();
            if cli.csv {
                let line = format!(
                    "n,k,eps,lambda,method,samples,mean,stderr,log_scale,seconds\n{},{},{},{},{},{},{},{},{},{:.3}",
                    args.n,
                    args.k,
                    args.eps,
                    args.lambda,
                    estimate.method,
                    estimate.samples,
                    estimate.mean,
                    estimate.stderr,
                    estimate.log_scale,
                    seconds
                );
                write_output(&cli.out, &line)?;
            } else {
                let report = EstimateReport {
                    n: args.n,
                    k: args.k,
                    eps: args.eps,
                    lambda: args.lambda,
                    estimate,
                    seconds,
                };
                write_output(&cli.out, &json_pretty(&report)?)?;
            }
            Ok(0)
        }
        Command::Spacings(args) => {
            let report = epsmatch::spacings::spacing_moments(args.ell, args.samples, seed)?;
            write_output(&cli.out, &json_pretty(&report)?)?;
            Ok(0)
        }
        Command::Bounds(args) => {
            #[derive(Serialize)]
            struct BoundsOut {
                envelope: epsmatch::spacings::BoundsReport,
                product_bound: epsmatch::spacings::BoundsReport,
                #[serde(skip_serializing_if = "Option::is_none")]
                domination: Option<epsmatch::spacings::BoundsReport>,
            }
            let grid = GridSpec {
                points: args.grid_points,
                ..Default::default()
            };
            let out = BoundsOut {
                envelope: envelope_constant(&grid)?,
                product_bound: check_product_bound(args.n, args.p, args.trials, seed)?,
                domination: args
                    .ell
                    .map(|ell| check_domination(ell, seed.substream(1 << 32), 500))
                    .transpose()?,
            };
            write_output(&cli.out, &json_pretty(&out)?)?;
            Ok(0)
        }
        Command::Sweep(args) => {
            let mut config: SweepConfig = match &args.config {
                Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
                None => SweepConfig {
                    n_list: vec![],
                    k_list: vec![0],
                    regime: epsmatch::sweep::Regime::CCritical,
                    coefficients: vec![1.0],
                    methods: vec![Method::Integrand],
                    samples: 1_000_000,
                    seed: seed_value,
                    out: None,
                    timing: false,
                    enumeration_limit: enumeration::DEFAULT_ENUMERATION_LIMIT,
                },
            };
            if let Some(v) = &args.n_list {
                config.n_list = v.clone();
            }
            if let Some(v) = &args.k_list {
                config.k_list = v.clone();
            }
            if let Some(v) = args.regime {
                config.regime = v;
            }
            if let Some(v) = &args.coefficients {
                config.coefficients = v.clone();
            }
            if let Some(v) = &args.methods {
                config.methods = v.clone();
            }
            if let Some(v) = args.samples {
                config.samples = v;
            }
            if args.timing {
                config.timing = true;
            }
            if let Some(s) = cli.seed {
                config.seed = s;
            }
            let out_path = cli.out.clone().or_else(|| config.out.clone());
            match out_path {
                Some(path) => {
                    let file = fs::File::create(&path)?;
                    let mut writer = std::io::BufWriter::new(file);
                    run_sweep(&config, &mut writer)?;
                    writer.flush()?;
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    run_sweep(&config, &mut lock)?;
                }
            }
            Ok(0)
        }
        Command::Selftest(args) => {
            let opts = SelftestOptions {
                seed: cli.seed.unwrap_or(SelftestOptions::default().seed),
                quick: args.quick,
            };
            let outcomes = run_all(&opts);
            let total = outcomes.len();
            let mut failed = 0;
            for (i, outcome) in outcomes.iter().enumerate() {
                let status = if outcome.passed { "PASS" } else { "FAIL" };
                println!(
                    "[{:>2}/{total}] {:<28} {status}  {}",
                    i + 1,
                    outcome.name,
                    outcome.detail
                );
                if !outcome.passed {
                    failed += 1;
                }
            }
            if failed > 0 {
                println!("{failed}/{total} checks failed");
                Ok(2)
            } else {
                println!("all {total} checks passed");
                Ok(0)
            }
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are not errors
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("could not configure {threads} threads: {e}");
            std::process::exit(1);
        }
    }
    match run(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
