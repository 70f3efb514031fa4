//! The `pspin` command line: argument parsing, worker pool set-up, dispatch
//! to the laboratory modules and report emission.

use clap::{Args, Parser, Subcommand, ValueEnum};
use pspin_core::critical_points::{find_all, window_select, SearchConfig};
use pspin_core::hamiltonian::DisorderTensor;
use pspin_core::kac_rice::{DensityMethod, KacRiceDensity};
use pspin_core::perturbation::{run_extremal, run_perturbation};
use pspin_core::random_matrix::rmt_table;
use pspin_core::{solve_constants, Error, ModelParams};
use serde::Serialize;
use serde_json::Value;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

pub const THREADS_ENV: &str = "PSPIN_THREADS";

#[derive(Debug, Parser, Serialize)]
#[command(name = "pspin", version, about = "Critical points and extremal statistics of the spherical pure p-spin model")]
pub struct Cli {
    /// Worker threads (overridden by PSPIN_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Report file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Limiting constants E_0, c_p, C_0, K_0 and the centring m_N.
    Constants(ConstantsArgs),
    /// Kac-Rice density of critical values near the bottom.
    Kacrice(KacriceArgs),
    /// Expected GOE characteristic polynomial against E|det|.
    Rmt(RmtArgs),
    /// Multistart enumeration of critical points of one disorder.
    Enumerate(EnumerateArgs),
    /// Poisson and Gumbel statistics of the extremal process.
    Extremal(ExtremalArgs),
    /// Matching of critical points under the perturbation H + H'/sqrt(N).
    Perturb(PerturbArgs),
    /// Headline statistics of existing JSON reports.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long)]
    pub p: u32,
    #[arg(long = "N")]
    #[serde(rename = "N")]
    pub n: u32,
}

#[derive(Debug, Args, Serialize)]
pub struct ConstantsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Hermite,
    Mc,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct KacriceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Centred window `lo,hi` for x = N u - m_N.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-3.0, 3.0])]
    pub window: Vec<f64>,
    /// Number of grid points across the window.
    #[arg(long, default_value_t = 13)]
    pub grid: usize,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = MethodArg::Hermite)]
    pub method: MethodArg,
}

#[derive(Debug, Args, Serialize)]
pub struct RmtArgs {
    /// Matrix dimensions, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dim: Vec<usize>,
    /// Shifts v, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub shift: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct EnumerateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 20_000)]
    pub restarts: usize,
    /// Seed of the disorder; ignored when --disorder-file exists.
    #[arg(long)]
    pub disorder_seed: u64,
    /// Seed of the starting points.
    #[arg(long)]
    pub seed: u64,
    /// Keep only values within L of m_N.
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub l: Option<f64>,
    /// Disorder file: read when it exists, otherwise written after sampling.
    #[arg(long)]
    pub disorder_file: Option<PathBuf>,
    /// Include point locations in the report.
    #[arg(long)]
    pub locations: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtremalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long = "L", default_value_t = 3.0)]
    #[serde(rename = "L")]
    pub l: f64,
    /// Descents from uniform starts per disorder.
    #[arg(long, default_value_t = 200)]
    pub restarts: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct PerturbArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub extremal: ExtremalArgs,
    #[arg(long, default_value_t = 0.45)]
    pub alpha: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// JSON reports written by the other subcommands.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Meta<'a> {
    version: &'static str,
    command: &'static str,
    seed: Option<u64>,
    threads: usize,
    wall_time_s: f64,
    residual_threshold: Option<f64>,
    config: &'a Cli,
}

/// A finished report: its top-level JSON sections and CSV projection.
pub struct Body {
    pub sections: Vec<(&'static str, String)>,
    pub csv: Vec<u8>,
    pub residual_threshold: Option<f64>,
}

fn csv_rows<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

fn json<T: Serialize>(v: &T) -> Result<String, Error> {
    Ok(serde_json::to_string_pretty(v)?)
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Constants(_) => "constants",
            Command::Kacrice(_) => "kacrice",
            Command::Rmt(_) => "rmt",
            Command::Enumerate(_) => "enumerate",
            Command::Extremal(_) => "extremal",
            Command::Perturb(_) => "perturb",
            Command::Report(_) => "report",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Constants(_) | Command::Report(_) => None,
            Command::Kacrice(a) => Some(a.seed),
            Command::Rmt(a) => Some(a.seed),
            Command::Enumerate(a) => Some(a.seed),
            Command::Extremal(a) => Some(a.seed),
            Command::Perturb(a) => Some(a.extremal.seed),
        }
    }
}

fn params(m: &ModelArgs) -> Result<ModelParams, Error> {
    ModelParams::new(m.p, m.n)
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

fn constants(a: &ConstantsArgs) -> Result<Body, Error> {
    let k = solve_constants(params(&a.model)?)?;
    #[derive(Serialize)]
    struct Row {
        p: u32,
        #[serde(rename = "N")]
        n: u32,
        gamma_p: f64,
        iota_p: f64,
        #[serde(rename = "E_inf")]
        e_inf: f64,
        #[serde(rename = "E_0")]
        e_0: f64,
        c_p: f64,
        #[serde(rename = "C_0")]
        c_0: f64,
        #[serde(rename = "K_0")]
        k_0: f64,
        #[serde(rename = "m_N")]
        m_n: f64,
    }
    let row = Row {
        p: k.p,
        n: k.n,
        gamma_p: k.gamma_p,
        iota_p: k.iota_p,
        e_inf: k.e_inf,
        e_0: k.e_0,
        c_p: k.c_p,
        c_0: k.c_0,
        k_0: k.k_0,
        m_n: k.m_n,
    };
    Ok(Body { sections: vec![("constants", json(&k)?)], csv: csv_rows([row])?, residual_threshold: None })
}

#[derive(Serialize)]
struct KacricePoint {
    method: &'static str,
    x: f64,
    u: f64,
    log_rho: f64,
    nu: f64,
    nu_over_limit: f64,
    se: f64,
}

fn kacrice(a: &KacriceArgs) -> Result<Body, Error> {
    let params = params(&a.model)?;
    if a.window.len() != 2 || !(a.window[0] < a.window[1]) {
        return Err(invalid("--window expects lo,hi with lo < hi"));
    }
    if a.grid < 2 {
        return Err(invalid("--grid must be at least 2"));
    }
    let methods: &[(DensityMethod, &'static str)] = match a.method {
        MethodArg::Hermite => &[(DensityMethod::HermiteExact, "hermite")],
        MethodArg::Mc => &[(DensityMethod::GoeMonteCarlo, "mc")],
        MethodArg::Both => &[(DensityMethod::HermiteExact, "hermite"), (DensityMethod::GoeMonteCarlo, "mc")],
    };
    let (lo, hi) = (a.window[0], a.window[1]);
    let mut points = Vec::new();
    for &(method, label) in methods {
        let density = KacRiceDensity::new(params, method)?.with_monte_carlo(a.samples, a.seed)?;
        for i in 0..a.grid {
            let x = lo + (hi - lo) * i as f64 / (a.grid - 1) as f64;
            let p = density.intensity_nu(x)?;
            points.push(KacricePoint {
                method: label,
                x: p.x,
                u: p.u,
                log_rho: p.log_rho,
                nu: p.nu,
                nu_over_limit: p.nu_over_limit,
                se: p.se,
            });
        }
    }
    Ok(Body { sections: vec![("kacrice", json(&points)?)], csv: csv_rows(&points)?, residual_threshold: None })
}

fn rmt(a: &RmtArgs) -> Result<Body, Error> {
    let rows = rmt_table(&a.dim, &a.shift, a.samples, a.seed)?;
    Ok(Body { sections: vec![("rmt", json(&rows)?)], csv: csv_rows(&rows)?, residual_threshold: None })
}

#[derive(Serialize)]
struct PointRecord {
    value: f64,
    grad_residual: f64,
    morse_index: usize,
    min_eig: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    location: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct PointRow {
    value: f64,
    grad_residual: f64,
    morse_index: usize,
    min_eig: f64,
}

fn enumerate(a: &EnumerateArgs) -> Result<Body, Error> {
    let params = params(&a.model)?;
    let j = match &a.disorder_file {
        Some(path) if path.exists() => {
            let j = DisorderTensor::load(path)?;
            if j.params() != params {
                return Err(invalid(format!(
                    "disorder file holds p = {}, N = {}, not the requested p = {}, N = {}",
                    j.params().p,
                    j.params().n,
                    params.p,
                    params.n
                )));
            }
            j
        }
        Some(path) => {
            let j = DisorderTensor::sample(params, a.disorder_seed)?;
            j.save(path)?;
            j
        }
        None => DisorderTensor::sample(params, a.disorder_seed)?,
    };
    let mut cs = find_all(&j, a.restarts, a.seed)?;
    if let Some(l) = a.l {
        if !(l >= 0.0) {
            return Err(invalid("--L must be non-negative"));
        }
        cs = window_select(&cs, l, &solve_constants(params)?);
    }
    let records: Vec<PointRecord> = cs
        .points
        .iter()
        .map(|c| PointRecord {
            value: c.value,
            grad_residual: c.grad_residual,
            morse_index: c.morse_index,
            min_eig: c.min_eig,
            location: a.locations.then(|| c.location_vec()),
        })
        .collect();
    let rows = cs.points.iter().map(|c| PointRow {
        value: c.value,
        grad_residual: c.grad_residual,
        morse_index: c.morse_index,
        min_eig: c.min_eig,
    });
    let threshold = 1e-10 * (params.n as f64).sqrt();
    #[derive(Serialize)]
    struct Enumeration {
        disorder_seed: u64,
        restarts_used: usize,
        converged_runs: usize,
        window: Option<(f64, f64)>,
        count: usize,
    }
    let details = Enumeration {
        disorder_seed: j.seed(),
        restarts_used: cs.restarts_used,
        converged_runs: cs.converged_runs,
        window: cs.window,
        count: records.len(),
    };
    Ok(Body {
        sections: vec![("enumeration", json(&details)?), ("critical_points", json(&records)?)],
        csv: csv_rows(rows)?,
        residual_threshold: Some(threshold),
    })
}

fn search_config(a: &ExtremalArgs) -> Result<SearchConfig, Error> {
    if a.restarts == 0 {
        return Err(invalid("--restarts must be at least 1"));
    }
    Ok(SearchConfig { descents: a.restarts, ..SearchConfig::default() })
}

#[derive(Serialize)]
struct AtomRow {
    sample: usize,
    disorder_seed: u64,
    centered_value: f64,
}

fn extremal(a: &ExtremalArgs) -> Result<Body, Error> {
    let params = params(&a.model)?;
    let k = solve_constants(params)?;
    let run = run_extremal(params, a.samples, a.l, a.seed, &search_config(a)?, &k)?;
    let rows: Vec<AtomRow> = run
        .samples
        .iter()
        .zip(&run.disorder_seeds)
        .enumerate()
        .flat_map(|(i, (s, &seed))| {
            s.centered_values.iter().map(move |&x| AtomRow { sample: i, disorder_seed: seed, centered_value: x })
        })
        .collect();
    Ok(Body {
        sections: vec![("extremal", json(&run)?)],
        csv: csv_rows(rows)?,
        residual_threshold: Some(1e-10 * (params.n as f64).sqrt()),
    })
}

#[derive(Serialize)]
struct MatchRow {
    instance: usize,
    original_value: f64,
    original_index: usize,
    matched_value: f64,
    overlap: f64,
    predicted_shift: f64,
    actual_shift: f64,
    residual: f64,
}

fn perturb(a: &PerturbArgs) -> Result<Body, Error> {
    let e = &a.extremal;
    let params = params(&e.model)?;
    let k = solve_constants(params)?;
    let run = run_perturbation(params, e.samples, e.l, a.alpha, e.seed, &search_config(e)?, &k)?;
    let rows: Vec<MatchRow> = run
        .instances
        .iter()
        .flat_map(|r| {
            r.matches.iter().map(move |m| MatchRow {
                instance: r.instance,
                original_value: m.original.value,
                original_index: m.original.morse_index,
                matched_value: m.matched.value,
                overlap: m.overlap,
                predicted_shift: m.predicted_shift,
                actual_shift: m.actual_shift,
                residual: m.residual,
            })
        })
        .collect();
    Ok(Body {
        sections: vec![("perturb", json(&run)?)],
        csv: csv_rows(rows)?,
        residual_threshold: Some(1e-10 * (params.n as f64).sqrt()),
    })
}

#[derive(Serialize)]
struct Headline {
    file: String,
    command: String,
    seed: Option<u64>,
    statistic: String,
    value: Value,
}

// Paths of the statistics summarised for each report key.
const HEADLINES: &[(&str, &[&str])] = &[
    ("constants", &["E_0", "c_p", "C_0", "K_0", "m_N"]),
    ("extremal", &["poisson/window/mean", "poisson/window/dispersion", "poisson/window/second_moment_ratio", "gumbel/ks_distance", "gumbel/median", "median_max_overlap", "minima_fraction"]),
    ("perturb", &["match_rate", "shifts/mean", "shifts/variance", "shifts/median_abs_residual", "shifts/cross_correlation", "shifts/slope"]),
    ("enumeration", &["count", "restarts_used"]),
];

fn report(a: &ReportArgs) -> Result<Body, Error> {
    let mut rows = Vec::new();
    for path in &a.inputs {
        let text = std::fs::read_to_string(path)?;
        let v: Value = serde_json::from_str(&text)?;
        let meta = v.get("meta").ok_or_else(|| Error::Format(format!("{}: no meta block", path.display())))?;
        let command = meta.get("command").and_then(Value::as_str).unwrap_or("").to_string();
        let seed = meta.get("seed").and_then(Value::as_u64);
        let mut found = false;
        for (key, stats) in HEADLINES {
            let Some(body) = v.get(*key) else { continue };
            found = true;
            for stat in *stats {
                let value = stat.split('/').try_fold(body, |b, k| b.get(k)).cloned().unwrap_or(Value::Null);
                rows.push(Headline {
                    file: path.display().to_string(),
                    command: command.clone(),
                    seed,
                    statistic: stat.to_string(),
                    value,
                });
            }
        }
        if !found {
            // Array reports (kacrice, rmt): record their length.
            for key in ["kacrice", "rmt"] {
                if let Some(arr) = v.get(key).and_then(Value::as_array) {
                    found = true;
                    rows.push(Headline {
                        file: path.display().to_string(),
                        command: command.clone(),
                        seed,
                        statistic: "rows".into(),
                        value: Value::from(arr.len()),
                    });
                }
            }
        }
        if !found {
            return Err(Error::Format(format!("{}: no known report key", path.display())));
        }
    }
    let csv = {
        let flat = rows.iter().map(|r| (&r.file, &r.command, r.seed, &r.statistic, r.value.to_string()));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["file", "command", "seed", "statistic", "value"]).map_err(|e| Error::Format(e.to_string()))?;
        for (f, c, s, st, v) in flat {
            let seed = s.map(|s| s.to_string()).unwrap_or_default();
            w.write_record([f.as_str(), c.as_str(), seed.as_str(), st.as_str(), v.as_str()])
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.into_inner().map_err(|e| Error::Format(e.to_string()))?
    };
    Ok(Body { sections: vec![("report", json(&rows)?)], csv, residual_threshold: None })
}

/// Effective worker count: PSPIN_THREADS, then --threads, then the number
/// of available cores.
pub fn thread_count(flag: Option<usize>) -> Result<usize, Error> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| invalid(format!("{THREADS_ENV}={v} is not a thread count")))?,
        Err(_) => match flag {
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(invalid("thread count must be at least 1"));
    }
    Ok(n)
}

fn dispatch(cli: &Cli) -> Result<Body, Error> {
    match &cli.command {
        Command::Constants(a) => constants(a),
        Command::Kacrice(a) => kacrice(a),
        Command::Rmt(a) => rmt(a),
        Command::Enumerate(a) => enumerate(a),
        Command::Extremal(a) => extremal(a),
        Command::Perturb(a) => perturb(a),
        Command::Report(a) => report(a),
    }
}

/// Runs a parsed command and returns the report text.
pub fn execute(cli: &mut Cli) -> Result<Vec<u8>, Error> {
    let threads = thread_count(cli.threads)?;
    cli.threads = Some(threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
    let start = Instant::now();
    let body = pool.install(|| dispatch(cli))?;
    if cli.format == Format::Csv {
        return Ok(body.csv);
    }
    let meta = Meta {
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name(),
        seed: cli.command.seed(),
        threads,
        wall_time_s: start.elapsed().as_secs_f64(),
        residual_threshold: body.residual_threshold,
        config: cli,
    };
    let meta = serde_json::to_string_pretty(&meta)?;
    let mut out = format!("{{\n\"meta\": {meta}");
    for (key, text) in &body.sections {
        out.push_str(&format!(",\n\"{key}\": {text}"));
    }
    out.push_str("\n}\n");
    Ok(out.into_bytes())
}

/// Entry point shared by the binary and the tests: parses `args`, runs the
/// command, writes the report and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let mut cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = execute(&mut cli).and_then(|bytes| {
        match &cli.out {
            Some(path) => std::fs::write(path, &bytes)?,
            None => std::io::stdout().write_all(&bytes)?,
        }
        Ok(())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pspin: {e}");
            e.exit_code()
        }
    }
}
