//! `lacunary`: command-line front end for the experiment library.

mod output;
mod selftest;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::BigInt;

use lacunary::diophantine::{
    count_solutions, describe, condition_profile, DiophQuery, DiophantineError, COUNT_CONVENTION,
};
use lacunary::discrepancy::{prefix_discrepancies, PointSet};
use lacunary::lil_lab::{
    checkpoint_grid, default_checkpoint_ratio, Experiment, ExperimentConfig, LilError,
};
use lacunary::numerics::{sample_unit_with_budget, unit_real_from_top, PrecisionBudget, DEFAULT_GUARD_BITS};
use lacunary::periodic::{
    centered_indicator, format_rational, parse_rational, sigma_identity, CorrelationCache, PeriodicFunction,
    TrigPolynomial,
};
use lacunary::permutations::{validate, PermutationError};
use lacunary::sequences::{
    gap_report, gen_power, gen_power_minus_one, gen_superlacunary, load_sequence_file, write_sequence_text,
    IntegerSequence,
};

use output::{Format, Output};

#[derive(Parser, Debug)]
#[command(name = "lacunary", version, about = "Experiments on permuted lacunary sequences")]
struct Cli {
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "LACUNARY_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    format: Format,
    /// Config override `key=value` with a dotted key, repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a sequence and report its gap ratios.
    Sequence(SequenceArgs),
    /// Count solutions of a n_k + b n_l = c, or profile all coefficients up to a degree.
    Diophantine(DiophantineArgs),
    /// Truncated sigma for theta^k: sup over indicators on a grid, or one function.
    Sigma(SigmaArgs),
    /// Star and extreme discrepancy of a point file or of {n_k x} for a sampled x.
    Discrepancy(DiscrepancyArgs),
    /// Run an LIL experiment from a config file.
    Lil(LilArgs),
    /// Build the pair-interleaving permutation and run its LIL comparison.
    Counterexample(CounterexampleArgs),
    /// Run the discrepancy and Diophantine oracle suites.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SeqKind {
    Power,
    PowerMinusOne,
    Superlacunary,
    File,
}

impl SeqKind {
    fn config_name(self) -> &'static str {
        match self {
            SeqKind::Power => "power",
            SeqKind::PowerMinusOne => "power_minus_one",
            SeqKind::Superlacunary => "superlacunary",
            SeqKind::File => "file",
        }
    }
}

#[derive(Args, Debug)]
struct SequenceSource {
    #[arg(long, value_enum, default_value_t = SeqKind::Power)]
    kind: SeqKind,
    #[arg(long, default_value_t = 2)]
    base: u32,
    /// Number of terms.
    #[arg(short = 'n', long = "len", default_value_t = 100)]
    len: usize,
    /// Term file for `--kind file`.
    #[arg(long)]
    path: Option<PathBuf>,
}

impl SequenceSource {
    fn build(&self) -> Result<IntegerSequence, CliError> {
        let seq = match self.kind {
            SeqKind::Power => gen_power(self.base, self.len),
            SeqKind::PowerMinusOne => gen_power_minus_one(self.base, self.len),
            SeqKind::Superlacunary => gen_superlacunary(self.len),
            SeqKind::File => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| CliError::Usage("--kind file needs --path".into()))?;
                load_sequence_file(path).and_then(|s| s.prefix(self.len.min(s.len())))
            }
        };
        seq.map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Args, Debug)]
struct SequenceArgs {
    #[command(flatten)]
    source: SequenceSource,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct DiophantineArgs {
    #[command(flatten)]
    source: SequenceSource,
    #[arg(long, required_unless_present = "degree")]
    a: Option<i64>,
    #[arg(long, required_unless_present = "degree")]
    b: Option<i64>,
    #[arg(long, default_value = "0")]
    c: BigInt,
    /// Profile every nonzero (a, b) with |a|, |b| <= degree instead of one query.
    #[arg(long, conflicts_with_all = ["a", "b"])]
    degree: Option<i64>,
    /// Prefix lengths for the profile, comma separated; defaults to N/8, N/4, N/2, N.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<usize>,
}

#[derive(Args, Debug)]
struct SigmaArgs {
    #[arg(long, default_value_t = 2)]
    theta: u64,
    #[arg(long = "K", default_value_t = 24)]
    truncation: u32,
    /// Grid denominator D for interval endpoints.
    #[arg(long, default_value_t = 1024)]
    step: u64,
    /// Evaluate the centered indicator of [a, b) instead of the grid search, as `a,b`.
    #[arg(long, conflicts_with = "cos")]
    interval: Option<String>,
    /// Evaluate a cosine polynomial with these integer coefficients.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    cos: Vec<i64>,
    /// Correlation cache file, read if present and rewritten.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DiscrepancyArgs {
    /// Points in [0, 1), one per line.
    #[arg(long, conflicts_with = "kind")]
    points: Option<PathBuf>,
    #[command(flatten)]
    source: SequenceSource,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Sample index of x under the seed.
    #[arg(long, default_value_t = 0)]
    index: u64,
}

#[derive(Args, Debug)]
struct LilArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct CounterexampleArgs {
    /// Full experiment config; the flags below are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SeqKind::PowerMinusOne)]
    kind: SeqKind,
    #[arg(long, default_value_t = 2)]
    base: u32,
    #[arg(long, default_value_t = 1)]
    a: i64,
    #[arg(long, default_value_t = 2)]
    b: i64,
    #[arg(long, default_value_t = 1, allow_negative_numbers = true)]
    c: i64,
    #[arg(long = "n-max", default_value_t = 8192)]
    n_max: usize,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, default_value_t = 1000)]
    sets: usize,
    #[arg(long, default_value_t = 60)]
    queries: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<LilError> for CliError {
    fn from(e: LilError) -> Self {
        match e {
            LilError::Permutation(PermutationError::InsufficientPairs {
                found,
                required,
                searched,
            }) => CliError::Runtime(format!(
                "{found} pairs found within the first {searched} terms; the permutation needs {required}"
            )),
            e if e.is_usage() => CliError::Usage(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn read_config(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("lacunary: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime)?;
    }
    let takes_overrides = matches!(cli.command, Command::Lil(_) | Command::Counterexample(_));
    if !cli.overrides.is_empty() && !takes_overrides {
        return Err(CliError::Usage("--override applies to lil and counterexample only".into()));
    }
    let mut out = Output::new(&cli.out, cli.format)?;
    let code = match &cli.command {
        Command::Sequence(args) => sequence(args, &mut out)?,
        Command::Diophantine(args) => diophantine(args, &mut out)?,
        Command::Sigma(args) => sigma(args, &mut out)?,
        Command::Discrepancy(args) => discrepancy(args, &mut out)?,
        Command::Lil(args) => {
            let text = read_config(&args.config)?;
            let cfg = ExperimentConfig::from_toml_with_overrides(&text, &cli.overrides)?;
            lil(&cfg, "lil", &mut out)?
        }
        Command::Counterexample(args) => counterexample(args, &cli.overrides, &mut out)?,
        Command::Selftest(args) => selftest::run(args, &mut out)?,
    };
    out.finish()?;
    Ok(code)
}

fn sequence(args: &SequenceArgs, out: &mut Output) -> Result<u8, CliError> {
    let seq = args.source.build()?;
    let gaps = gap_report(&seq).map_err(runtime)?;
    let mut csv = String::from("k,bit_length\n");
    for k in 1..=seq.len() {
        writeln!(csv, "{k},{}", seq.bit_length(k).map_err(runtime)?).unwrap();
    }
    let summary = format!(
        "generator = \"{}\"\nN = {}\nmin_ratio = \"{}\"\nmin_ratio_index = {}\nhadamard = {}\nratio_trend_increasing = {}\n",
        seq.generator(),
        seq.len(),
        format_rational(&gaps.min_ratio),
        gaps.min_ratio_index,
        gaps.is_hadamard,
        gaps.trend_increasing()
    );
    out.manifest("sequence", &format!("{args:?}"), None);
    out.csv("sequence.csv", csv)?;
    out.file("terms.txt", write_sequence_text(&seq))?;
    out.summary("summary.toml", summary)?;
    Ok(0)
}

fn diophantine(args: &DiophantineArgs, out: &mut Output) -> Result<u8, CliError> {
    let seq = args.source.build()?;
    let classify = |e: DiophantineError| match e {
        DiophantineError::BudgetExceeded { .. } => runtime(e),
        e => CliError::Usage(e.to_string()),
    };
    out.manifest("diophantine", &format!("{args:?}"), None);
    if let Some(degree) = args.degree {
        let n = seq.len();
        let grid = if args.grid.is_empty() {
            let mut g: Vec<usize> = [n / 8, n / 4, n / 2, n].into_iter().filter(|&v| v > 0).collect();
            g.dedup();
            g
        } else {
            args.grid.clone()
        };
        let profile = condition_profile(&seq, degree, &grid).map_err(classify)?;
        let summary = format!(
            "degree = {degree}\ngrid = {:?}\nall_bounded = {}\nnote = \"growth verdicts compare the last two grid points only\"\n",
            profile.grid,
            profile.all_bounded()
        );
        out.csv("diophantine.csv", profile.to_csv())?;
        out.summary("summary.toml", summary)?;
        return Ok(0);
    }
    let (a, b) = (args.a.expect("required by clap"), args.b.expect("required by clap"));
    let q = DiophQuery::new(a, b, args.c.clone(), seq.len()).map_err(classify)?;
    let count = count_solutions(&seq, &q).map_err(classify)?;
    let csv = format!(
        "a,b,c,N,count,ordered,diagonal\n{a},{b},{},{},{},{},{}\n",
        args.c,
        seq.len(),
        count.headline(),
        count.ordered,
        count.diagonal
    );
    let summary = format!(
        "equation = \"{}\"\nsequence = \"{}\"\nN = {}\ncount = {}\nconvention = \"{COUNT_CONVENTION}\"\n",
        describe(a, b, &args.c),
        seq.generator(),
        seq.len(),
        count.headline()
    );
    out.csv("diophantine.csv", csv)?;
    out.summary("summary.toml", summary)?;
    Ok(0)
}

fn sigma(args: &SigmaArgs, out: &mut Output) -> Result<u8, CliError> {
    let mut cache = match &args.cache {
        Some(path) if path.exists() => CorrelationCache::load(path).map_err(|e| CliError::Usage(e.to_string()))?,
        _ => CorrelationCache::new(),
    };
    out.manifest("sigma", &format!("{args:?}"), None);
    let header = format!("theta = {}\nK = {}\n", args.theta, args.truncation);
    let function: Option<PeriodicFunction> = if let Some(interval) = &args.interval {
        let (a, b) = interval
            .split_once(',')
            .and_then(|(a, b)| Some((parse_rational(a)?, parse_rational(b)?)))
            .ok_or_else(|| CliError::Usage(format!("--interval expects a,b with rationals, got {interval:?}")))?;
        let f = centered_indicator(&a, &b).map_err(|e| CliError::Usage(e.to_string()))?;
        cache
            .indicator_gammas(args.theta, &a, &b, args.truncation)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Some(f.into())
    } else if !args.cos.is_empty() {
        Some(TrigPolynomial::cosines(&args.cos).into())
    } else {
        None
    };
    match function {
        Some(f) => {
            let s = sigma_identity(&f, args.theta, args.truncation).map_err(runtime)?;
            let mut csv = String::from("k,gamma,gamma_real\n");
            for (k, g) in s.gammas.iter().enumerate() {
                writeln!(csv, "{},{g},{}", k + 1, g.to_f64()).unwrap();
            }
            let summary = format!(
                "{header}sigma2 = \"{}\"\nsigma = {}\nbracket = [{}, {}]\n",
                s.sigma2, s.sigma, s.bracket.0, s.bracket.1
            );
            out.csv("gammas.csv", csv)?;
            out.summary("summary.toml", summary)?;
        }
        None => {
            let sup = cache
                .sup_sigma(args.theta, args.truncation, args.step)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let csv = format!(
                "theta,K,D,a,b,sigma2,sigma\n{},{},{},{},{},{},{}\n",
                sup.theta,
                sup.truncation,
                sup.grid_denominator,
                format_rational(&sup.a),
                format_rational(&sup.b),
                format_rational(&sup.sigma2),
                sup.sigma
            );
            let mut summary = format!(
                "{header}D = {}\na = \"{}\"\nb = \"{}\"\nsigma2_max = \"{}\"\nsigma_max = {:.6}\n",
                sup.grid_denominator,
                format_rational(&sup.a),
                format_rational(&sup.b),
                format_rational(&sup.sigma2),
                sup.sigma
            );
            if args.theta == 2 {
                let target = 42f64.sqrt() / 9.0;
                write!(
                    summary,
                    "target = {target:.6}\nrelative_gap = {:.6}\n",
                    (sup.sigma - target).abs() / target
                )
                .unwrap();
            }
            out.csv("sigma.csv", csv)?;
            out.summary("summary.toml", summary)?;
        }
    }
    if let Some(path) = &args.cache {
        cache.save(path).map_err(runtime)?;
    }
    Ok(0)
}

fn discrepancy(args: &DiscrepancyArgs, out: &mut Output) -> Result<u8, CliError> {
    let (points, seed) = match &args.points {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let mut points = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let v: f64 = line
                    .parse()
                    .map_err(|_| CliError::Usage(format!("line {}: not a number: {line:?}", i + 1)))?;
                points.push(v);
            }
            (points, None)
        }
        None => {
            let seq = args.source.build()?;
            let max_bits = (1..=seq.len())
                .map(|k| seq.bit_length(k))
                .try_fold(0, |m, b| b.map(|b| m.max(b)))
                .map_err(runtime)?;
            let budget = PrecisionBudget::for_operand_bits(max_bits, DEFAULT_GUARD_BITS);
            let x = sample_unit_with_budget(args.seed, args.index, budget).map_err(runtime)?;
            let mut points = Vec::with_capacity(seq.len());
            for k in 1..=seq.len() {
                let term = seq.frac_term(k).map_err(runtime)?;
                points.push(unit_real_from_top(term.top_bits(&x).map_err(runtime)?));
            }
            (points, Some(args.seed))
        }
    };
    let set = PointSet::new(points.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let total = set.discrepancy();
    let checkpoints = checkpoint_grid(points.len(), default_checkpoint_ratio(), 1)?;
    let mut csv = String::from("N,star,extreme\n");
    for (n, d) in prefix_discrepancies(points.iter().copied(), &checkpoints) {
        writeln!(csv, "{n},{},{}", d.star, d.extreme).unwrap();
    }
    let summary = format!("N = {}\nstar = {}\nextreme = {}\n", points.len(), total.star, total.extreme);
    out.manifest("discrepancy", &format!("{args:?}"), seed);
    out.csv("discrepancy.csv", csv)?;
    out.summary("summary.toml", summary)?;
    Ok(0)
}

fn lil(cfg: &ExperimentConfig, name: &str, out: &mut Output) -> Result<u8, CliError> {
    let exp = Experiment::resolve(cfg)?;
    let est = exp.run()?;
    out.manifest(name, &cfg.to_toml(), Some(cfg.lil.seed));
    out.file("config.toml", cfg.to_toml())?;
    out.csv("lil.csv", est.to_csv())?;
    out.summary("summary.toml", est.summary())?;
    if name == "counterexample" {
        let report = validate(&exp.plan, exp.n_max());
        out.file("permutation.txt", exp.plan.to_text())?;
        out.file("validation.txt", format!("{report}\n"))?;
        println!("{report}");
    }
    println!(
        "median running max {:.4} over {} samples, N_max = {}",
        est.runmax.median,
        est.records.len(),
        est.n_max
    );
    if let Some(c) = &est.comparison {
        match c.spearman {
            Some(s) => println!("spearman vs prediction {s:.4}, cv {:.4}", c.cv),
            None => println!("prediction constant, cv {:.4}", c.cv),
        }
    }
    Ok(0)
}

fn counterexample(args: &CounterexampleArgs, overrides: &[String], out: &mut Output) -> Result<u8, CliError> {
    let text = match &args.config {
        Some(path) => read_config(path)?,
        None => format!(
            "[sequence]\nkind = \"{}\"\nbase = {}\n\
             [function]\nkind = \"pair\"\n\
             [permutation]\nkind = \"counterexample\"\nquery = {{ a = {}, b = {}, c = {} }}\n\
             [lil]\nN_max = {}\nsamples = {}\nseed = {}\n\
             [prediction]\nkind = \"pointwise\"\n",
            args.kind.config_name(),
            args.base,
            args.a,
            args.b,
            args.c,
            args.n_max,
            args.samples,
            args.seed
        ),
    };
    let cfg = ExperimentConfig::from_toml_with_overrides(&text, overrides)?;
    lil(&cfg, "counterexample", out)
}
