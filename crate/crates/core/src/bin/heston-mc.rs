//! Command-line front end for the Monte Carlo engine: option pricing,
//! moment diagnostics, table auditing/regeneration, and a quick self-test.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use heston_mc::bridge::X2Mode;
use heston_mc::engine::{self, named_case, HestonParams, PricingReport, Scheme};
use heston_mc::oracle::{self, OracleConfig};
use heston_mc::sampling::RngStream;
use heston_mc::tables::{TableId, TableSet};
use heston_mc::{Error, Result};

#[derive(Parser)]
#[command(
    name = "heston-mc",
    about = "Monte Carlo engine for a stochastic-volatility model with exact \
             transition sampling",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Price an option by Monte Carlo.
    Price {
        #[command(subcommand)]
        product: Product,
    },
    /// Compare sampled conditional-integral moments against the analytic oracle.
    Moments {
        #[command(flatten)]
        common: CommonArgs,
        /// Conditioning horizon (defaults to the model horizon t).
        #[arg(long)]
        horizon: Option<f64>,
        /// Comma-separated terminal variances to condition on.
        #[arg(long, value_delimiter = ',', default_value = "0.04")]
        vt: Vec<f64>,
        /// Comma-separated truncation levels.
        #[arg(long = "k-list", value_delimiter = ',', default_value = "1,5")]
        k_list: Vec<u32>,
    },
    /// Audit or regenerate the inverse-CDF tables.
    Tables {
        #[command(subcommand)]
        action: TablesAction,
    },
    /// Run a quick internal consistency check.
    Selftest,
}

#[derive(Subcommand)]
enum Product {
    /// European call, single terminal fixing.
    European {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 100.0)]
        strike: f64,
    },
    /// Arithmetic-average Asian call with equally spaced fixings.
    Asian {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 100.0)]
        strike: f64,
        /// Number of fixings (defaults to one per year of horizon).
        #[arg(long)]
        fixings: Option<u32>,
    },
    /// Double no-touch: pays 1 iff the price stays strictly inside the
    /// barriers at every monitored date.
    Barrier {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 90.0)]
        lower: f64,
        #[arg(long, default_value_t = 110.0)]
        upper: f64,
        /// Monitoring frequency (monitor dates per year).
        #[arg(long, default_value_t = 1.0)]
        steps_per_year: f64,
    },
}

#[derive(Subcommand)]
enum TablesAction {
    /// Check shipped (or external) tables against the slow oracle and
    /// structural invariants.
    Validate {
        /// Directory with .tbl files (defaults to the embedded tables).
        #[arg(long)]
        tables_dir: Option<PathBuf>,
        /// Audit-grid points per table for oracle comparison.
        #[arg(long, default_value_t = 60)]
        points: usize,
    },
    /// Refit a table's Chebyshev coefficients from the oracle and write the
    /// result next to the output path.
    Regen {
        /// Table identifier, e.g. s_1, h_5, z_prime.
        #[arg(long)]
        table: String,
        /// Output file path.
        #[arg(long)]
        output: PathBuf,
        /// Directory with source .tbl files (defaults to embedded).
        #[arg(long)]
        tables_dir: Option<PathBuf>,
    },
}

/// Flags shared by simulation subcommands. Any flag left unset falls back to
/// the config file, then to the named case / built-in default.
#[derive(Args, Clone)]
struct CommonArgs {
    /// Structured key-value config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in parameter set: case1..case4, asian, barrier.
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Horizon in years.
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    v0: Option<f64>,
    #[arg(long)]
    s0: Option<f64>,
    /// Risk-free rate (drift under the pricing measure).
    #[arg(long)]
    r: Option<f64>,
    /// Simulation scheme: exact-direct, exact-gamma-baseline, euler-ft.
    #[arg(long)]
    scheme: Option<String>,
    /// Series truncation level.
    #[arg(long = "truncation", short = 'K')]
    k: Option<u32>,
    #[arg(long)]
    n_paths: Option<u64>,
    /// Euler step count override.
    #[arg(long)]
    steps: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory with .tbl files (defaults to the embedded tables).
    #[arg(long)]
    tables_dir: Option<PathBuf>,
    /// CSV output path (appended).
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Config-file schema: same keys as the flags.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    case: Option<String>,
    kappa: Option<f64>,
    theta: Option<f64>,
    sigma: Option<f64>,
    rho: Option<f64>,
    t: Option<f64>,
    v0: Option<f64>,
    s0: Option<f64>,
    r: Option<f64>,
    scheme: Option<String>,
    #[serde(rename = "K")]
    k: Option<u32>,
    n_paths: Option<u64>,
    steps: Option<u32>,
    seed: Option<u64>,
    tables_dir: Option<PathBuf>,
    output: Option<PathBuf>,
}

/// Fully resolved run settings.
struct Settings {
    params: HestonParams,
    case_label: String,
    scheme: Scheme,
    big_k: u32,
    n_paths: u64,
    seed: u64,
    steps: Option<u32>,
    tables: TableSet,
    output: Option<PathBuf>,
}

fn resolve(common: &CommonArgs) -> Result<Settings> {
    let file: FileConfig = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => FileConfig::default(),
    };
    let case_name = common.case.clone().or(file.case);
    let mut params = match &case_name {
        Some(name) => named_case(name)?,
        None => named_case("case1")?,
    };
    let pick =
        |flag: Option<f64>, file: Option<f64>, current: f64| flag.or(file).unwrap_or(current);
    params.kappa = pick(common.kappa, file.kappa, params.kappa);
    params.theta = pick(common.theta, file.theta, params.theta);
    params.sigma = pick(common.sigma, file.sigma, params.sigma);
    params.rho = pick(common.rho, file.rho, params.rho);
    params.t = pick(common.t, file.t, params.t);
    params.v0 = pick(common.v0, file.v0, params.v0);
    params.s0 = pick(common.s0, file.s0, params.s0);
    params.mu = pick(common.r, file.r, params.mu);
    params.validate()?;
    let scheme = Scheme::parse(
        common
            .scheme
            .as_deref()
            .or(file.scheme.as_deref())
            .unwrap_or("exact-direct"),
    )?;
    let tables_dir = common.tables_dir.clone().or(file.tables_dir);
    let tables = match tables_dir {
        Some(dir) => TableSet::load_dir(&dir)?,
        None => TableSet::embedded()?,
    };
    Ok(Settings {
        params,
        case_label: case_name.unwrap_or_else(|| "custom".to_string()),
        scheme,
        big_k: common.k.or(file.k).unwrap_or(1),
        n_paths: common.n_paths.or(file.n_paths).unwrap_or(100_000),
        seed: common.seed.or(file.seed).unwrap_or(1),
        steps: common.steps.or(file.steps),
        tables,
        output: common.output.clone().or(file.output),
    })
}

fn print_report(
    label: &str,
    strike: f64,
    report: &PricingReport,
    out: Option<&Path>,
) -> Result<()> {
    println!(
        "{label}: estimate {:.6} +/- {:.6} (SE), {} paths, scheme {}, K {}, \
         mean proposals {:.4}, {:.2}s",
        report.estimate,
        report.standard_error,
        report.n_paths,
        report.scheme.as_str(),
        report.big_k,
        report.proposals_mean,
        report.seconds
    );
    if let Some(path) = out {
        engine::write_csv_reports(path, &[(label.to_string(), strike, report)])?;
        println!("appended to {}", path.display());
    }
    Ok(())
}

fn run_price(product: &Product) -> Result<()> {
    match product {
        Product::European { common, strike } => {
            let s = resolve(common)?;
            let report = engine::price_european_call(
                &s.params, *strike, s.n_paths, s.scheme, s.big_k, s.seed, &s.tables, s.steps,
            )?;
            print_report(&s.case_label, *strike, &report, s.output.as_deref())
        }
        Product::Asian {
            common,
            strike,
            fixings,
        } => {
            let s = resolve(common)?;
            let n_fixings = fixings.unwrap_or_else(|| s.params.t.round().max(1.0) as u32);
            let report = engine::price_asian_call(
                &s.params, *strike, n_fixings, s.n_paths, s.scheme, s.big_k, s.seed, &s.tables,
                s.steps,
            )?;
            print_report(&s.case_label, *strike, &report, s.output.as_deref())
        }
        Product::Barrier {
            common,
            lower,
            upper,
            steps_per_year,
        } => {
            let s = resolve(common)?;
            let report = engine::price_double_no_touch(
                &s.params,
                *lower,
                *upper,
                *steps_per_year,
                s.n_paths,
                s.scheme,
                s.big_k,
                s.seed,
                &s.tables,
                s.steps,
            )?;
            print_report(&s.case_label, 0.0, &report, s.output.as_deref())
        }
    }
}

fn run_moments(
    common: &CommonArgs,
    horizon: Option<f64>,
    vt: &[f64],
    k_list: &[u32],
) -> Result<()> {
    let s = resolve(common)?;
    let t = horizon.unwrap_or(s.params.t);
    let mode = match s.scheme {
        Scheme::ExactGammaBaseline => X2Mode::TruncationBaseline,
        _ => X2Mode::DirectInversion,
    };
    let rows =
        engine::moment_error_report(&s.params, t, vt, k_list, s.n_paths, s.seed, mode, &s.tables)?;
    println!("v_t        K  order  |error|       3*SE          within");
    for row in rows {
        for order in 1..=4 {
            println!(
                "{:<9.4} {:>2}  {:>5}  {:<12.6e} {:<12.6e} {}",
                row.v_t,
                row.big_k,
                order,
                row.error[order - 1],
                row.threshold[order - 1],
                if row.within(order) { "yes" } else { "NO" }
            );
        }
    }
    Ok(())
}

// Tables with a usable slow oracle: small orders and all fractional weights.
fn oracle_order(id: TableId) -> Option<f64> {
    match id {
        TableId::S(1) => Some(1.0),
        TableId::ZPrime => Some(2.0),
        TableId::H(k) => Some(1.0 / k as f64),
        _ => None,
    }
}

fn run_tables_validate(dir: Option<&Path>, points: usize) -> Result<()> {
    let tables = match dir {
        Some(d) => TableSet::load_dir(d)?,
        None => TableSet::embedded()?,
    };
    let cfg = OracleConfig::default();
    let mut failures = 0;
    for table in tables.iter() {
        table.validate()?;
        match oracle_order(table.id) {
            Some(p) => {
                let mut worst = 0.0f64;
                for i in 0..points {
                    let u = 1e-10 + (1.0 - 2e-10) * (i as f64 + 0.5) / points as f64;
                    let approx = table.inverse_cdf(u)?;
                    let x = if table.standardized {
                        p / 3.0 + approx * (2.0 * p / 45.0).sqrt()
                    } else {
                        approx
                    };
                    let truth = oracle::invert_cdf(p, u, &cfg)?;
                    worst = worst.max((x - truth).abs());
                }
                let ok = worst <= 1e-9;
                if !ok {
                    failures += 1;
                }
                println!(
                    "{:<12} {} regimes, oracle audit over {} points: max quantile error {:.3e} [{}]",
                    format!("{:?}", table.id),
                    table.regimes.len(),
                    points,
                    worst,
                    if ok { "ok" } else { "FAIL" }
                );
            }
            None => {
                // Large orders: statistical validation of standardized draws.
                let p = table.param;
                let parent = RngStream::from_seed(42);
                let mut stream = parent.split(table.param as u64);
                let n = 200_000;
                let (mut sum, mut sum_sq) = (0.0, 0.0);
                for _ in 0..n {
                    let v = table.inverse_cdf(stream.next_uniform())?;
                    sum += v;
                    sum_sq += v * v;
                }
                let mean = sum / n as f64;
                let var = sum_sq / n as f64 - mean * mean;
                let mean_tol = 3.0 / (n as f64).sqrt() * 1.5;
                let var_tol = 3.0 * (2.0 / n as f64).sqrt() * 2.0;
                let ok = mean.abs() < mean_tol && (var - 1.0).abs() < var_tol;
                if !ok {
                    failures += 1;
                }
                println!(
                    "{:<12} {} regimes, statistical audit (P = {p}): mean {mean:.4e}, \
                     variance {var:.6} [{}]",
                    format!("{:?}", table.id),
                    table.regimes.len(),
                    if ok { "ok" } else { "FAIL" }
                );
            }
        }
    }
    if failures > 0 {
        return Err(Error::Table(format!(
            "{failures} table(s) failed the audit"
        )));
    }
    println!("all tables pass");
    Ok(())
}

fn parse_table_id(name: &str) -> Result<TableId> {
    if name == "z_prime" {
        return Ok(TableId::ZPrime);
    }
    if let Some(rest) = name.strip_prefix("s_") {
        return Ok(TableId::S(
            rest.parse()
                .map_err(|_| Error::Config(format!("bad table name {name:?}")))?,
        ));
    }
    if let Some(rest) = name.strip_prefix("h_") {
        return Ok(TableId::H(
            rest.parse()
                .map_err(|_| Error::Config(format!("bad table name {name:?}")))?,
        ));
    }
    Err(Error::Config(format!(
        "bad table name {name:?}; expected s_<order>, h_<denominator> or z_prime"
    )))
}

fn run_tables_regen(table: &str, output: &Path, dir: Option<&Path>) -> Result<()> {
    let tables = match dir {
        Some(d) => TableSet::load_dir(d)?,
        None => TableSet::embedded()?,
    };
    let id = parse_table_id(table)?;
    let source = tables.get(id)?;
    if oracle_order(id).is_none() {
        return Err(Error::Config(format!(
            "{table}: no slow oracle for large orders; only small-order tables can be refit"
        )));
    }
    let cfg = OracleConfig::default();
    let p = oracle_order(id).expect("checked above");
    println!("refitting {table} (order {p}) against the slow oracle...");
    let regen = oracle::regenerate_table(source, &cfg)?;
    // Audit the refit against the shipped coefficients on a 200-point grid.
    let mut worst = 0.0f64;
    for i in 0..200 {
        let u = 1e-10 + (1.0 - 2e-10) * (i as f64 + 0.5) / 200.0;
        worst = worst.max((regen.inverse_cdf(u)? - source.inverse_cdf(u)?).abs());
    }
    std::fs::write(output, regen.to_file_string())?;
    println!(
        "wrote {} (max quantile deviation vs shipped: {worst:.3e})",
        output.display()
    );
    Ok(())
}

fn run_selftest() -> Result<()> {
    let tables = TableSet::embedded()?;
    for table in tables.iter() {
        table.validate()?;
    }
    println!("tables: 17 embedded tables parse and validate");

    let params = named_case("case1")?;
    let report = engine::price_european_call(
        &params,
        0.0,
        20_000,
        Scheme::ExactDirect,
        1,
        1,
        &tables,
        None,
    )?;
    let err = (report.estimate - params.s0).abs();
    let band = 3.0 * report.standard_error + 1.0;
    println!(
        "martingale: discounted strike-0 call {:.4} vs s0 {} (band {:.4}) [{}]",
        report.estimate,
        params.s0,
        band,
        if err < band { "ok" } else { "FAIL" }
    );
    if err >= band {
        return Err(Error::NoConvergence(
            "selftest martingale check failed".into(),
        ));
    }

    let cfg = heston_mc::bridge::BridgeConfig::from_cir(
        6.21,
        0.019,
        0.61,
        1.0,
        0.010201,
        0.010201,
        1,
        X2Mode::DirectInversion,
    )?;
    let l = heston_mc::bridge::acceptance_factor(&cfg)?;
    println!(
        "acceptance factor (stiff case, t = 1): L = {l:.6} [{}]",
        if (l - 2.847130248604048).abs() < 1e-9 {
            "ok"
        } else {
            "FAIL"
        }
    );
    println!("selftest passed");
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Price { product } => run_price(product),
        Command::Moments {
            common,
            horizon,
            vt,
            k_list,
        } => run_moments(common, *horizon, vt, k_list),
        Command::Tables { action } => match action {
            TablesAction::Validate { tables_dir, points } => {
                run_tables_validate(tables_dir.as_deref(), *points)
            }
            TablesAction::Regen {
                table,
                output,
                tables_dir,
            } => run_tables_regen(table, output, tables_dir.as_deref()),
        },
        Command::Selftest => run_selftest(),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
